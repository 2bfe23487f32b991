"""Command line: ``mam2 {pretrain, probe, ablate, dump-mask, gradcheck, make-corpus}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from .errors import MAM2Error, UsageError

log = logging.getLogger("mam2")


def _base_config(args):
    from .training.config import TrainConfig, build_config, load_config, overrides_from_args, toy_config

    base = toy_config() if getattr(args, "preset", None) == "toy" else TrainConfig()
    if getattr(args, "config", None):
        base = load_config(args.config, base)
    return build_config(overrides_from_args(args), base)


def cmd_pretrain(args) -> int:
    from .training.pretrain import read_metrics, run_pretrain

    cfg = _base_config(args)
    result = run_pretrain(cfg, resume=args.resume or False, figures=not args.no_figures)
    m = read_metrics(result.metrics_path)
    n = min(10, len(m["L_total"]))
    print(f"steps: {len(m['step'])}  time: {result.seconds:.1f}s")
    print(f"total loss: first {n} mean {m['L_total'][:n].mean():.4f}, last {n} mean {m['L_total'][-n:].mean():.4f}")
    print(f"metrics: {result.metrics_path}")
    print(f"checkpoint: {result.checkpoint}")
    return 0


def cmd_probe(args) -> int:
    from .model import MAM2
    from .training.checkpoint import load_checkpoint
    from .training.config import TrainConfig
    from .training.probe import linear_probe, load_probe_data

    model, _, step, train_cfg = load_checkpoint(args.ckpt)
    train_cfg = train_cfg or TrainConfig(model=model.config)
    train, val = load_probe_data(args.data, model.config, args.n_train or train_cfg.probe_train,
                                 args.n_val or train_cfg.probe_val, train_cfg.stride, train_cfg.probe_seed)
    baseline = MAM2(model.config, seed=args.baseline_seed if args.baseline_seed is not None else train_cfg.seed)
    report = linear_probe(model, train, val, baseline=baseline, steps=args.steps or train_cfg.probe_steps,
                          lr=train_cfg.probe_lr, seed=train_cfg.seed)
    row = {"checkpoint": str(args.ckpt), "step": step, **report.as_dict()}
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(row))
            writer.writeheader()
            writer.writerow(row)
    print(f"probe val acc {report.val_acc:.4f} (train {report.train_acc:.4f}); "
          f"random-init baseline val {report.baseline_val_acc:.4f}; gain {100 * report.gain:+.1f} points")
    return 0


def cmd_ablate(args) -> int:
    from .training.ablate import run_ablation

    path = run_ablation(args.grid, _base_config(args), args.ablation_dir, data=args.data,
                        figures=not args.no_figures)
    print(path.read_text(), end="")
    return 0


def cmd_dump_mask(args) -> int:
    from .masking import make_mask, render_mask, write_ppm

    grid = tuple(int(v) for v in args.grid.lower().split("x"))
    if len(grid) != 2:
        raise UsageError(f"--grid wants HxW, got {args.grid!r}")
    N = grid[0] * grid[1]
    mask = make_mask(args.kind, N, args.frames, args.ratio, args.seed, grid, args.block)
    image = render_mask(mask, cell=args.cell)
    write_ppm(args.out, image)
    print(f"{args.kind} mask: {mask.num_masked_per_frame}/{N} masked per frame, "
          f"{args.frames} frames -> {args.out}")
    if args.png:
        from .plotting import plot_mask
        plot_mask(image, args.png, title=f"{args.kind}, ratio {args.ratio}")
        print(f"figure: {args.png}")
    return 0


def cmd_gradcheck(args) -> int:
    from .model import ModelConfig, model_gradcheck

    targets = [args.motion_target] if args.motion_target else ["rgb-diff", "clip-order", "flow", "none"]
    # at T=4, N=4 a cube mask only leaves visible tokens at rho 0.5 with 1x1 blocks,
    # and cube masks need the joint decoder
    extra = {} if args.mask_kind == "tube" else dict(rho=0.5, cube_block=1, decoder_attention="joint")
    worst, failed, n = 0.0, 0, 0
    for target in targets:
        cfg = ModelConfig.tiny(motion_target=target, mask_kind=args.mask_kind, **extra)
        for res in model_gradcheck(cfg, seed=args.seed, h=args.step, max_entries=args.max_entries):
            n += 1
            if not res.vanishing:
                worst = max(worst, res.error)
            failed += not res.ok(args.tol)
            if args.verbose or not res.ok(args.tol):
                note = " (below round-off)" if res.vanishing else ""
                print(f"{target:10s} {res.name:40s} {res.checked:5d} {res.error:.2e}{note}")
    print(f"{n} parameter tensors checked, worst relative error {worst:.2e}, {failed} failing "
          f"({'PASS' if not failed else 'FAIL'} at tol {args.tol:g})")
    ok = not failed
    return 0 if ok else 1


def cmd_make_corpus(args) -> int:
    from .data import make_corpus

    root = make_corpus(args.out, n_train=args.n_train, n_val=args.n_val, T=args.frames, size=args.size,
                       stride=args.stride, seed=args.seed)
    print(f"corpus written to {root}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    from .training.config import add_override_flags

    parser = argparse.ArgumentParser(prog="mam2", description="Masked appearance-motion video pre-training.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", type=Path, help="flat key = value config file")
        p.add_argument("--preset", choices=["toy", "default"], default="toy",
                       help="base settings the config file and flags apply on top of (default: toy)")
        add_override_flags(p)

    p = sub.add_parser("pretrain", help="pre-train and write metrics.csv, loss_curve.png and checkpoints")
    with_config(p)
    p.add_argument("--resume", nargs="?", const=True, default=None,
                   help="resume from the latest checkpoint in out_dir, or from the given one")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("probe", help="linear probe of a checkpoint against a random-init encoder")
    p.add_argument("--ckpt", type=Path, required=True, help="checkpoint dir or run dir")
    p.add_argument("--data", default="synthetic", help="corpus directory or 'synthetic'")
    p.add_argument("--n-train", type=int, default=0)
    p.add_argument("--n-val", type=int, default=0)
    p.add_argument("--steps", type=int, default=0)
    p.add_argument("--baseline-seed", type=int, default=None)
    p.add_argument("--out", type=Path, help="write the report as a one-row CSV")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("ablate", help="pre-train and probe every cell of a grid file")
    with_config(p)
    p.add_argument("--grid", type=Path, required=True)
    p.add_argument("--ablation-dir", type=Path, default=Path("runs/ablation"),
                   help="where per-cell runs, ablation.csv and ablation.png go")
    p.add_argument("--data", default="synthetic")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("dump-mask", help="render a sampled mask as a PPM image")
    p.add_argument("--kind", choices=["tube", "cube"], default="tube")
    p.add_argument("--ratio", type=float, default=0.75)
    p.add_argument("--grid", default="14x14", help="patch grid HxW (default 14x14)")
    p.add_argument("--frames", type=int, default=4)
    p.add_argument("--block", type=int, default=4, help="max block side for cube masks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cell", type=int, default=8, help="pixels per grid cell")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--png", type=Path, help="also save a matplotlib figure")
    p.set_defaults(func=cmd_dump_mask)

    p = sub.add_parser("gradcheck", help="finite-difference check of the tiny end-to-end model")
    p.add_argument("--motion-target", choices=["rgb-diff", "clip-order", "flow", "none"])
    p.add_argument("--mask-kind", choices=["tube", "cube"], default="tube")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--step", type=float, default=3e-5, help="finite-difference step h")
    p.add_argument("--max-entries", type=int, default=None)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("make-corpus", help="write a labelled moving-shapes corpus to disk")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n-train", type=int, default=256)
    p.add_argument("--n-val", type=int, default=128)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--stride", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_corpus)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except MAM2Error as exc:
        print(f"mam2 {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
