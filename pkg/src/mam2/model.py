"""Encoder, latent regressor, alignment targets and the two decoders.

Data flow for a batch of ``B`` clips (shapes for the ViT-B preset)::

    clips     B x 16 x 3 x 224 x 224
    patches   B x 16 x 196 x 768          patchify
    tokens    B x 16 x 196 x 768          embed + e^t + e^s
    visible   B x 16 x 49 x 768           tube mask, rho = 0.75
    latents   B x 16 x 49 x 768           12 factorized blocks
    r         B x (16*147) x 768          4 cross-attention blocks, queries = q + e^t + e^s
    r_hat     B x (16*147) x 768          encoder on the masked ground truth, no gradient
    logits    B x 16 x 147 x 16384        appearance decoder + W_m
    motion    B x 15 x 147 x 768          motion decoder + head, last frame dropped
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import blocks
from . import numerics as nx
from .errors import DimensionError, StructureError, UsageError
from .losses import LossBundle, alignment_loss, appearance_loss, hybrid_loss, motion_loss
from .masking import MaskSpec, batch_indices, gather_tokens, make_mask
from .numerics import Tensor
from .patch_embed import PosEmbeds, add_pos, embed, patchify, position_table
from .targets import flow_patches, get_tokenizer, half_swap_order, rgb_diff_patches

# Fixed input normalisation applied before the patch embedding; targets use raw pixels.
PIXEL_MEAN = 0.5
PIXEL_STD = 0.25

MOTION_TARGETS = ("rgb-diff", "clip-order", "flow", "none")


@dataclass
class ModelConfig:
    D: int = 768
    encoder_depth: int = 12
    regressor_depth: int = 4
    appearance_decoder_depth: int = 4
    motion_decoder_depth: int = 2
    heads: int = 12
    K: int = 16384
    P: int = 16
    T: int = 16
    H: int = 224
    W: int = 224
    C: int = 3
    rho: float = 0.75
    mask_kind: str = "tube"
    cube_block: int = 4
    motion_target: str = "rgb-diff"
    alpha: float = 2.0
    tokenizer: str = "grid16384"
    mse_reduction: str = "patch"
    decoder_attention: str = "factorized"
    regressor_width: int = 0  # 0: same as D
    mlp_ratio: int = 4
    ln_eps: float = 1e-6
    init_std: float = 0.02
    encoder_norm: bool = True  # final LayerNorm on encoder outputs
    decoder_norm: bool = False  # LayerNorm between each decoder and its head

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("encoder_depth", "regressor_depth", "appearance_decoder_depth", "motion_decoder_depth"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be >= 1")
        if self.alpha < 0:
            raise UsageError("alpha must be >= 0")
        if self.D % self.heads or self.D_reg % self.heads:
            raise UsageError(f"width {self.D}/{self.D_reg} not divisible by {self.heads} heads")
        if self.H % self.P or self.W % self.P:
            raise UsageError(f"{self.H}x{self.W} frames are not divisible by patch size {self.P}")
        if self.motion_target not in MOTION_TARGETS:
            raise UsageError(f"motion_target must be one of {MOTION_TARGETS}")
        if self.decoder_attention not in ("factorized", "joint"):
            raise UsageError("decoder_attention must be 'factorized' or 'joint'")
        if self.mask_kind not in ("tube", "cube"):
            raise UsageError("mask_kind must be 'tube' or 'cube'")

    @property
    def N(self) -> int:
        return (self.H // self.P) * (self.W // self.P)

    @property
    def grid(self) -> tuple[int, int]:
        return self.H // self.P, self.W // self.P

    @property
    def D_reg(self) -> int:
        return self.regressor_width or self.D

    @property
    def patch_dim(self) -> int:
        return self.C * self.P * self.P

    @property
    def motion_dim(self) -> int:
        return (2 if self.motion_target == "flow" else self.C) * self.P * self.P

    @property
    def hidden(self) -> int:
        return self.mlp_ratio * self.D

    @classmethod
    def vit_b(cls, **kw) -> "ModelConfig":
        return cls(**kw)

    @classmethod
    def vit_l(cls, **kw) -> "ModelConfig":
        base = dict(D=1024, encoder_depth=24, heads=16)
        return cls(**{**base, **kw})

    @classmethod
    def toy(cls, **kw) -> "ModelConfig":
        base = dict(D=64, encoder_depth=4, regressor_depth=2, appearance_decoder_depth=2,
                    motion_decoder_depth=1, heads=1, K=16384, P=8, T=8, H=32, W=32)
        return cls(**{**base, **kw})

    @classmethod
    def tiny(cls, **kw) -> "ModelConfig":
        """Finite-difference sized model: D=8, T=4, N=4, K=8."""
        base = dict(D=8, encoder_depth=1, regressor_depth=1, appearance_decoder_depth=1,
                    motion_decoder_depth=1, heads=2, K=8, P=2, T=4, H=4, W=4, tokenizer="luma")
        return cls(**{**base, **kw})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class LatentBatch:
    visible: Tensor  # B x T x N_v x D
    r: Tensor  # B x |M| x D_reg
    r_hat: Tensor  # B x |M| x D_reg, gradient-isolated


@dataclass
class PretrainOutput:
    losses: LossBundle
    total: Tensor
    latents: LatentBatch
    masks: list
    shapes: dict = field(default_factory=dict)
    clip_order_labels: np.ndarray | None = None


def init_params(config: ModelConfig, seed: int = 0) -> dict:
    """Fresh parameters as an ordered ``{name: Tensor}`` dict."""
    rng = np.random.default_rng(seed)
    D, Dr, hid, std = config.D, config.D_reg, config.hidden, config.init_std
    p = {}
    p.update(blocks.init_linear(rng, config.patch_dim, D, "patch_embed."))
    pe = PosEmbeds.init(config.T, config.N, D, rng, std)
    p["pos.temporal"], p["pos.spatial"] = pe.temporal, pe.spatial
    for i in range(config.encoder_depth):
        p.update(blocks.init_factorized_block(rng, D, hid, f"encoder.{i}."))
    if config.encoder_norm:
        p.update(blocks.init_layer_norm(D, "encoder_norm."))
    if Dr != D:
        p.update(blocks.init_linear(rng, D, Dr, "enc_proj."))
        pd = PosEmbeds.init(config.T, config.N, Dr, rng, std)
        p["pos_dec.temporal"], p["pos_dec.spatial"] = pd.temporal, pd.spatial
    p["mask_query"] = Tensor(rng.normal(0.0, std, size=Dr), requires_grad=True, name="mask_query")
    hid_r = config.mlp_ratio * Dr
    for i in range(config.regressor_depth):
        p.update(blocks.init_cross_block(rng, Dr, hid_r, f"regressor.{i}."))
    dec_init = blocks.init_factorized_block if config.decoder_attention == "factorized" else blocks.init_joint_block
    for i in range(config.appearance_decoder_depth):
        p.update(dec_init(rng, Dr, hid_r, f"appearance_decoder.{i}."))
    p.update(blocks.init_linear(rng, Dr, config.K, "appearance_head.", bias=False))
    if config.motion_target != "none":
        for i in range(config.motion_decoder_depth):
            p.update(dec_init(rng, Dr, hid_r, f"motion_decoder.{i}."))
    if config.motion_target in ("rgb-diff", "flow"):
        p.update(blocks.init_linear(rng, Dr, config.motion_dim, "motion_head."))
    elif config.motion_target == "clip-order":
        p["clip_order.cls"] = Tensor(rng.normal(0.0, std, size=Dr), requires_grad=True, name="clip_order.cls")
        p.update(blocks.init_linear(rng, Dr, 2, "clip_order.head."))
    if config.decoder_norm:
        p.update(blocks.init_layer_norm(Dr, "appearance_norm."))
        if config.motion_target != "none":
            p.update(blocks.init_layer_norm(Dr, "motion_norm."))
    return p


def _require_tube_indices(idx: np.ndarray, what: str) -> None:
    if idx.ndim != 3 or not np.all(idx == idx[:, :1, :]):
        raise StructureError(f"{what} needs tube-structured masks (same spatial set in every frame)")


class MAM2:
    """Masked appearance-motion model: parameters plus the forward computations."""

    def __init__(self, config: ModelConfig, params: dict | None = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_params(config, seed)
        self.tokenizer = get_tokenizer(config.tokenizer, config.K)

    # -- bookkeeping ------------------------------------------------------
    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_parameters(self):
        return self.params.items()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def astype(self, dtype) -> "MAM2":
        params = {k: Tensor(v.data.astype(dtype), requires_grad=True, name=k) for k, v in self.params.items()}
        return MAM2(self.config, params)

    def frozen_copy(self) -> dict:
        return {k: Tensor(v.data.copy(), dtype=v.dtype, name=k) for k, v in self.params.items()}

    def pos(self, params=None) -> PosEmbeds:
        p = self.params if params is None else params
        return PosEmbeds(p["pos.temporal"], p["pos.spatial"])

    def dec_pos(self, params=None) -> PosEmbeds:
        p = self.params if params is None else params
        if "pos_dec.temporal" in p:
            return PosEmbeds(p["pos_dec.temporal"], p["pos_dec.spatial"])
        return self.pos(p)

    # -- pipeline stages --------------------------------------------------
    def embed_clips(self, clips: np.ndarray, params=None) -> tuple[np.ndarray, Tensor]:
        """Return ``(patches B x T x N x F, tokens-with-position B x T x N x D)``."""
        p = self.params if params is None else params
        cfg = self.config
        clips = np.asarray(clips)
        if clips.ndim == 4:
            clips = clips[None]
        if clips.shape[1:] != (cfg.T, cfg.C, cfg.H, cfg.W):
            raise DimensionError(f"clips {clips.shape[1:]} do not match config "
                                 f"{(cfg.T, cfg.C, cfg.H, cfg.W)}")
        patches = patchify(clips, cfg.P)
        grid = embed((patches - PIXEL_MEAN) / PIXEL_STD, p["patch_embed.weight"], p["patch_embed.bias"], cfg.P)
        return patches, add_pos(grid.tokens, self.pos(p))

    def encode(self, x: Tensor, params=None, depth: int | None = None) -> Tensor:
        """Apply the encoder's factorized blocks; ``depth=0`` is the identity."""
        p = self.params if params is None else params
        depth = self.config.encoder_depth if depth is None else depth
        for i in range(depth):
            x = blocks.factorized_block(x, p, f"encoder.{i}.", self.config.heads, self.config.ln_eps)
        return x

    def encoder_output(self, x: Tensor, params=None) -> Tensor:
        """Encoder blocks followed by the final norm when the config has one."""
        p = self.params if params is None else params
        x = self.encode(x, p)
        if self.config.encoder_norm:
            x = blocks.norm(x, p, "encoder_norm.", self.config.ln_eps)
        return x

    def project(self, latents: Tensor, params=None) -> Tensor:
        p = self.params if params is None else params
        return blocks.linear(latents, p, "enc_proj.") if "enc_proj.weight" in p else latents

    def query_positions(self, mask_idx: np.ndarray, params=None) -> Tensor:
        """``e^t_t + e^s_j`` for every masked ``(t, j)``: ``B x T x N_m x D_reg``."""
        B, T, n = mask_idx.shape
        t_idx = np.broadcast_to(np.arange(T)[None, :, None], (B, T, n))
        return position_table(self.dec_pos(params), t_idx, mask_idx)

    def mask_queries(self, mask_idx: np.ndarray, params=None) -> Tensor:
        p = self.params if params is None else params
        return nx.add(self.query_positions(mask_idx, p), p["mask_query"])

    def regress(self, latents: Tensor, mask_idx: np.ndarray, params=None) -> Tensor:
        """Cross-attend positioned mask queries to all visible latents; ``B x |M| x D_reg``."""
        p = self.params if params is None else params
        B, T, n = mask_idx.shape
        if n == 0:
            raise UsageError("regress needs at least one masked position")
        if latents.shape[-2] == 0:
            raise UsageError("regress needs at least one visible token")
        kv = latents.reshape(B, -1, latents.shape[-1])
        q = self.mask_queries(mask_idx, p).reshape(B, T * n, self.config.D_reg)
        for i in range(self.config.regressor_depth):
            q = blocks.cross_attn_block(q, kv, p, f"regressor.{i}.", self.config.heads, self.config.ln_eps)
        return q

    def encode_alignment_targets(self, tokens: Tensor, mask_idx: np.ndarray, params=None) -> Tensor:
        """Encoder output on the ground-truth masked tokens, per tube, without gradient."""
        _require_tube_indices(mask_idx, "alignment targets")
        p = self.params if params is None else params
        with nx.no_grad():
            gt = gather_tokens(tokens.detach(), mask_idx)
            out = self.project(self.encoder_output(gt, p), p)
        B, T, n, D = out.shape
        return out.detach().reshape(B, T * n, D)

    def _decoder(self, x: Tensor, name: str, depth: int, skip_first: bool = False, params=None) -> Tensor:
        p = self.params if params is None else params
        cfg = self.config
        if cfg.decoder_attention == "joint":
            B, T, n, D = x.shape
            h = x.reshape(B, T * n, D)
            for i in range(depth):
                h = blocks.joint_block(h, p, f"{name}.{i}.", cfg.heads, cfg.ln_eps)
            return h.reshape(B, T, n, D)
        for i in range(depth):
            x = blocks.factorized_block(x, p, f"{name}.{i}.", cfg.heads, cfg.ln_eps, skip_first)
        return x

    def _head(self, h: Tensor, norm: str, head: str, params) -> Tensor:
        if self.config.decoder_norm:
            h = blocks.norm(h, params, norm, self.config.ln_eps)
        return blocks.linear(h, params, head)

    def _decoder_input(self, r: Tensor, mask_idx: np.ndarray, params=None) -> Tensor:
        B, T, n = mask_idx.shape
        if self.config.decoder_attention == "factorized":
            _require_tube_indices(mask_idx, "factorized decoders")
        grid = r.reshape(B, T, n, r.shape[-1])
        return nx.add(grid, self.query_positions(mask_idx, params))

    def decode_appearance(self, r: Tensor, mask_idx: np.ndarray, params=None) -> Tensor:
        p = self.params if params is None else params
        h = self._decoder(self._decoder_input(r, mask_idx, p), "appearance_decoder",
                          self.config.appearance_decoder_depth, params=p)
        return self._head(h, "appearance_norm.", "appearance_head.", p)

    def decode_motion(self, r: Tensor, mask_idx: np.ndarray, params=None) -> Tensor:
        """Per-patch motion predictions for frames ``0..T-2``: ``B x (T-1) x N_m x F``."""
        p = self.params if params is None else params
        if mask_idx.shape[1] < 2:
            raise UsageError("motion decoding needs T >= 2")
        h = self._decoder(self._decoder_input(r, mask_idx, p), "motion_decoder",
                          self.config.motion_decoder_depth, params=p)
        return self._head(h, "motion_norm.", "motion_head.", p)[:, :-1]

    def decode_clip_order(self, r: Tensor, mask_idx: np.ndarray, labels: np.ndarray, params=None) -> Tensor:
        """Shuffle each masked tube's halves per ``labels`` (B x N_m) and classify the order.

        Returns ``B x N_m x 2`` logits read from a [CLS] slot prepended on
        the temporal axis.
        """
        p = self.params if params is None else params
        cfg = self.config
        B, T, n = mask_idx.shape
        if T % 2:
            raise UsageError(f"clip-order prediction needs an even T, got {T}")
        if cfg.decoder_attention == "factorized":
            _require_tube_indices(mask_idx, "clip-order decoder")
        Dr = r.shape[-1]
        grid = r.reshape(B, T, n, Dr)
        order = np.stack([np.stack([half_swap_order(T, int(lab)) for lab in row], axis=1) for row in labels])
        shuffled = nx.select(grid, order[..., None], axis=1)
        x = nx.add(shuffled, self.query_positions(mask_idx, p))
        cls = nx.broadcast_to(p["clip_order.cls"].reshape(1, 1, 1, Dr), (B, 1, n, Dr))
        if cfg.decoder_attention == "joint":
            x = nx.concat([cls, x], axis=1)
            h = x.reshape(B, (T + 1) * n, Dr)
            for i in range(cfg.motion_decoder_depth):
                h = blocks.joint_block(h, p, f"motion_decoder.{i}.", cfg.heads, cfg.ln_eps)
            h = h.reshape(B, T + 1, n, Dr)
        else:
            h = self._decoder(nx.concat([cls, x], axis=1), "motion_decoder", cfg.motion_decoder_depth,
                              skip_first=True, params=p)
        return self._head(h[:, 0], "motion_norm.", "clip_order.head.", p)

    def encode_full(self, clips: np.ndarray, params=None) -> Tensor:
        """Encoder latents of unmasked clips: ``B x T x N x D``."""
        _, x = self.embed_clips(clips, params)
        return self.encoder_output(x, params)

    # -- full pre-training pass -------------------------------------------
    def sample_masks(self, batch: int, seed) -> tuple[list[MaskSpec], np.ndarray]:
        """Per sample, draw a mask seed then a shuffle seed from one stream."""
        cfg = self.config
        rng = np.random.default_rng(seed)
        masks, labels = [], []
        for _ in range(batch):
            mask_seed = int(rng.integers(2**63))
            shuffle_seed = int(rng.integers(2**63))
            mask = make_mask(cfg.mask_kind, cfg.N, cfg.T, cfg.rho, mask_seed, cfg.grid, cfg.cube_block)
            masks.append(mask)
            labels.append(np.random.default_rng(shuffle_seed).integers(0, 2, size=mask.num_masked_per_frame))
        return masks, np.stack(labels)

    def forward_pretrain(self, clips: np.ndarray, seed, flow: np.ndarray | None = None,
                         target_params: dict | None = None, masks: list | None = None) -> PretrainOutput:
        cfg = self.config
        p = self.params
        clips = np.asarray(clips)
        if clips.ndim == 4:
            clips = clips[None]
        B = clips.shape[0]
        drawn, labels = self.sample_masks(B, seed)
        masks = drawn if masks is None else masks
        if cfg.decoder_attention == "factorized" and any(m.kind != "tube" for m in masks):
            raise StructureError("factorized decoders need tube masks; use decoder_attention = joint "
                                 "for cube masks")
        patches, tokens = self.embed_clips(clips)
        vis_idx = batch_indices(masks, "visible")
        mask_idx = batch_indices(masks, "masked")

        visible = gather_tokens(tokens, vis_idx)
        latents = self.project(self.encoder_output(visible))
        r = self.regress(latents, mask_idx)

        if target_params is None:
            r_hat = self.encode_alignment_targets(tokens, mask_idx)
        else:
            _, t_tokens = self.embed_clips(clips, target_params)
            r_hat = self.encode_alignment_targets(t_tokens, mask_idx, target_params)
        l_align = alignment_loss(r, r_hat)

        logits = self.decode_appearance(r, mask_idx)
        token_ids = self.tokenizer(np.take_along_axis(patches, mask_idx[..., None], axis=2), cfg.P, cfg.C)
        l_app = appearance_loss(logits, token_ids)
        shapes = {"patches": patches.shape, "tokens": tokens.shape, "visible": visible.shape,
                  "latents": latents.shape, "r": (B, cfg.T, mask_idx.shape[2], r.shape[-1]),
                  "r_hat": r_hat.shape, "appearance_logits": logits.shape}

        spatial = mask_idx[:, 0, :]
        if cfg.motion_target == "rgb-diff":
            pred = self.decode_motion(r, mask_idx)
            l_mot = motion_loss(pred, rgb_diff_patches(patches, spatial), cfg.mse_reduction)
            shapes["motion"] = pred.shape
        elif cfg.motion_target == "flow":
            if flow is None:
                raise UsageError("motion_target 'flow' needs precomputed flow (B x (T-1) x 2 x H x W)")
            flow = np.asarray(flow, dtype=nx.default_dtype())
            if flow.ndim == 4:
                flow = flow[None]
            if flow.shape != (B, cfg.T - 1, 2, cfg.H, cfg.W):
                raise DimensionError(f"flow {flow.shape} != {(B, cfg.T - 1, 2, cfg.H, cfg.W)}")
            pred = self.decode_motion(r, mask_idx)
            l_mot = motion_loss(pred, flow_patches(flow, spatial, cfg.P), cfg.mse_reduction)
            shapes["motion"] = pred.shape
        elif cfg.motion_target == "clip-order":
            order_logits = self.decode_clip_order(r, mask_idx, labels)
            l_mot = nx.cross_entropy(order_logits, labels)
            shapes["clip_order_logits"] = order_logits.shape
        else:
            l_mot = Tensor(0.0, dtype=l_app.dtype)

        total = hybrid_loss(l_app, l_mot, l_align, cfg.alpha)
        bundle = LossBundle.from_parts(l_app.item(), l_mot.item(), l_align.item(), cfg.alpha)
        return PretrainOutput(bundle, total, LatentBatch(visible=latents, r=r, r_hat=r_hat), masks,
                              shapes, labels if cfg.motion_target == "clip-order" else None)


def forward_pretrain(model: MAM2, clips, seed, **kw) -> PretrainOutput:
    return model.forward_pretrain(clips, seed, **kw)



def model_gradcheck(config: ModelConfig | None = None, seed: int = 0, batch: int = 2,
                    h: float = 3e-5, max_entries: int | None = None, flow: np.ndarray | None = None):
    """Finite-difference check of every parameter of an end-to-end pre-training loss, in 64-bit.

    The clips, masks and targets are fixed by ``seed`` so the loss is a
    deterministic function of the parameters. Alignment targets come from
    a frozen copy of the initial parameters: the tape treats them as
    constants, so the difference quotient must too.

    The default step balances round-off (which grows as 1/h and dominates
    small gradients at h=1e-5) against truncation (which grows as h^2 and
    dominates the clip-order [CLS] vector at h=1e-4).
    """
    from .data import synthetic_clip
    from .numerics import check_gradients

    config = config or ModelConfig.tiny()
    with nx.precision("float64"):
        model = MAM2(config, seed=seed).astype(np.float64)
        clips = np.stack([synthetic_clip(seed + i, i % 4, config.T, max(config.H, 16), 1).frames
                          for i in range(batch)])
        clips = clips[..., :config.H, :config.W].astype(np.float64)
        if config.motion_target == "flow" and flow is None:
            flow = np.random.default_rng(seed).normal(size=(batch, config.T - 1, 2, config.H, config.W))
        frozen = model.frozen_copy()
        return check_gradients(lambda: model.forward_pretrain(clips, seed, flow=flow, target_params=frozen).total,
                               model.params, h=h, max_entries=max_entries, seed=seed)
