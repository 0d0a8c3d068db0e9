"""Curve-query transformer: backbone, deformable encoder, curve decoder and head."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .geometry import FIXED_Y_POSITIONS, CameraModel, Range3D

EPS = 1e-6
HEAD_TYPES = ("curve", "points")
OFFSET_MODES = ("none", "so", "cso")


@dataclass(frozen=True)
class AttentionConfig:
    embed_dim: int = 32
    num_heads: int = 4
    num_levels: int = 3
    num_points: int = 4
    num_layers: int = 4

    def __post_init__(self):
        if self.embed_dim % self.num_heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        if self.num_points < 1 or self.num_levels < 1 or self.num_layers < 1:
            raise ValueError("num_points, num_levels and num_layers must be >= 1")


@dataclass
class ModelConfig:
    embed_dim: int = 32
    num_heads: int = 4
    num_levels: int = 3
    num_points: int = 4
    num_layers: int = 4
    num_queries: int = 12
    encoder_layers: int = 1
    ffn_dim: int = 64
    backbone_channels: tuple[int, ...] = (8, 16, 24, 32)
    image_size: tuple[int, int] = (128, 160)
    ys: tuple[float, ...] = FIXED_Y_POSITIONS
    order: int = 3
    head_type: str = "curve"
    offset_mode: str = "cso"
    aux_seg: bool = True
    delta_clamp: float = 5.0
    pe_temperature: float = 10000.0
    x_range: tuple[float, float] = (-30.0, 30.0)
    y_range: tuple[float, float] = (3.0, 103.0)
    z_range: tuple[float, float] = (-10.0, 10.0)

    def __post_init__(self):
        for name in ("backbone_channels", "image_size", "ys", "x_range", "y_range", "z_range"):
            setattr(self, name, tuple(getattr(self, name)))
        self.attention  # validates
        if self.num_levels > len(self.backbone_channels):
            raise ValueError(f"num_levels {self.num_levels} exceeds backbone stages {len(self.backbone_channels)}")
        if self.head_type not in HEAD_TYPES:
            raise ValueError(f"head_type must be one of {HEAD_TYPES}, got {self.head_type!r}")
        if self.offset_mode not in OFFSET_MODES:
            raise ValueError(f"offset_mode must be one of {OFFSET_MODES}, got {self.offset_mode!r}")
        if len(self.ys) < self.order + 1:
            raise ValueError("need at least order + 1 anchor points")
        if np.any(np.diff(self.ys) <= 0):
            raise ValueError("ys must be strictly increasing")

    @property
    def attention(self) -> AttentionConfig:
        return AttentionConfig(self.embed_dim, self.num_heads, self.num_levels, self.num_points, self.num_layers)

    @property
    def num_anchor_points(self) -> int:
        return len(self.ys)

    @property
    def range3d(self) -> Range3D:
        return Range3D(*self.x_range, *self.y_range, *self.z_range)


@dataclass
class CameraBatch:
    intrinsics: torch.Tensor
    rotation: torch.Tensor
    translation: torch.Tensor
    image_size: tuple[int, int]

    @classmethod
    def from_cameras(cls, cams: list[CameraModel], dtype=torch.float32) -> "CameraBatch":
        sizes = {c.image_size for c in cams}
        if len(sizes) != 1:
            raise ValueError(f"cameras in a batch must share one image size, got {sizes}")
        return cls(torch.tensor(np.stack([c.intrinsics for c in cams]), dtype=dtype),
                   torch.tensor(np.stack([c.rotation for c in cams]), dtype=dtype),
                   torch.tensor(np.stack([c.translation for c in cams]), dtype=dtype),
                   sizes.pop())

    def to(self, dtype) -> "CameraBatch":
        return CameraBatch(self.intrinsics.to(dtype), self.rotation.to(dtype), self.translation.to(dtype),
                           self.image_size)


@dataclass
class LayerPrediction:
    """One decoder layer's output for every query. Shapes use B images and Q queries."""

    anchors: torch.Tensor      # (B, Q, N, 3) refined anchor points
    logits: torch.Tensor       # (B, Q) foreground logit
    y_start: torch.Tensor      # (B, Q)
    y_end: torch.Tensor        # (B, Q)
    coef_a: torch.Tensor       # (B, Q, R+1) ascending powers of y, meters
    coef_b: torch.Tensor       # (B, Q, R+1)
    points: torch.Tensor       # (B, Q, N, 3) lane points at the fixed y-positions
    deltas: torch.Tensor | None = None  # (B, Q, N, 2) this layer's (dx, dz)

    @property
    def confidence(self) -> torch.Tensor:
        return torch.sigmoid(self.logits)


@dataclass
class ModelOutput:
    layers: list[LayerPrediction]
    seg_logits: torch.Tensor | None = None
    memory: list[torch.Tensor] = field(default_factory=list)

    @property
    def final(self) -> LayerPrediction:
        return self.layers[-1]


# ---------------------------------------------------------------------------
# shared pieces

def sine_encode(values: torch.Tensor, dim: int, temperature: float = 10000.0) -> torch.Tensor:
    """Sinusoidal features of scalar ``values`` (...,) -> (..., dim); even slots sin, odd slots cos."""
    j = torch.arange(dim, dtype=values.dtype, device=values.device)
    freq = temperature ** (2.0 * torch.div(j, 2, rounding_mode="floor") / dim)
    angle = 2.0 * math.pi * values[..., None] / freq
    return torch.where(j % 2 == 0, torch.sin(angle), torch.cos(angle))


def axis_dims(embed_dim: int) -> tuple[int, int, int]:
    """Per-axis (x, y, z) widths of the anchor encoding; y takes the remainder."""
    base = embed_dim // 3
    return base, embed_dim - 2 * base, base


def _group_norm(channels: int) -> nn.GroupNorm:
    groups = max(g for g in (1, 2, 4, 8) if channels % g == 0 and g <= channels)
    return nn.GroupNorm(groups, channels)


def ms_deform_sample(values: list[torch.Tensor], locs: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """Weighted multi-scale bilinear sampling.

    values: per level (B*M, C, H_l, W_l); locs: (B, Q, M, L, P, 2) normalized (u, v);
    weights: (B, Q, M, L, P). Returns (B, Q, M*C). Out-of-map locations clamp to the edge.
    """
    b, q, m, nl, p, _ = locs.shape
    c = values[0].shape[1]
    out = None
    for lvl in range(nl):
        grid = (2.0 * locs[:, :, :, lvl] - 1.0).permute(0, 2, 1, 3, 4).reshape(b * m, q, p, 2)
        s = F.grid_sample(values[lvl], grid, mode="bilinear", padding_mode="border", align_corners=False)
        w = weights[:, :, :, lvl].permute(0, 2, 1, 3).reshape(b * m, 1, q, p)
        term = (s * w).sum(-1)
        out = term if out is None else out + term
    return out.view(b, m, c, q).permute(0, 3, 1, 2).reshape(b, q, m * c)


def sample_levels(fmaps: list[torch.Tensor], locs: torch.Tensor) -> torch.Tensor:
    """Bilinear lookup of every level at shared locations: (B, P, 2) -> (B, L, P, C)."""
    grid = (2.0 * locs - 1.0)[:, :, None, :]
    out = [F.grid_sample(f, grid, mode="bilinear", padding_mode="border", align_corners=False)[..., 0]
           for f in fmaps]
    return torch.stack(out, dim=1).transpose(2, 3)


def project_anchors(anchors: torch.Tensor, cams: CameraBatch) -> tuple[torch.Tensor, torch.Tensor]:
    """Project (B, Q, N, 3) anchors; returns normalized (u, v) and front-and-inside flags.

    Behind-camera points take the (-1, -1) pixel sentinel before normalization.
    """
    b = anchors.shape[0]
    pts = anchors.reshape(b, -1, 3)
    cam_pts = pts @ cams.rotation.transpose(1, 2) + cams.translation[:, None, :]
    depth = cam_pts[..., 2]
    front = depth > 1e-6
    pix = cam_pts @ cams.intrinsics.transpose(1, 2)
    uv = pix[..., :2] / torch.where(front, depth, torch.ones_like(depth))[..., None]
    uv = torch.where(front[..., None], uv, torch.full_like(uv, -1.0))
    h, w = cams.image_size
    uvn = uv / torch.tensor([w, h], dtype=uv.dtype, device=uv.device)
    inside = (uvn[..., 0] >= 0) & (uvn[..., 0] < 1) & (uvn[..., 1] >= 0) & (uvn[..., 1] < 1)
    shape = anchors.shape[:-1]
    return uvn.reshape(*shape, 2), (front & inside).reshape(shape)


def context_sample_feature(anchor_uv: torch.Tensor, valid: torch.Tensor, fmaps: list[torch.Tensor],
                           eps: float = EPS) -> torch.Tensor:
    """Masked mean of bilinear features over every level and anchor point.

    anchor_uv: (B, Q, N, 2) normalized, valid: (B, Q, N). Returns (B, Q, C).
    """
    b, q, n, _ = anchor_uv.shape
    feats = sample_levels(fmaps, anchor_uv.reshape(b, q * n, 2))          # (B, L, QN, C)
    feats = feats.reshape(b, len(fmaps), q, n, -1)
    sigma = valid.to(feats.dtype)[:, None, :, :, None].expand(-1, len(fmaps), -1, -1, 1)
    num = (feats * sigma).sum(dim=(1, 3))
    den = sigma.sum(dim=(1, 3)) + eps
    return num / den


# ---------------------------------------------------------------------------
# backbone + encoder

class Backbone(nn.Module):
    """Plain conv stack: stride-2 stem then stride-2 stages, one feature level per stage."""

    def __init__(self, channels: tuple[int, ...], num_levels: int, embed_dim: int, aux_seg: bool):
        super().__init__()

        def block(cin, cout, stride):
            return nn.Sequential(
                nn.Conv2d(cin, cout, 3, stride, 1, bias=False), _group_norm(cout), nn.ReLU(inplace=True),
                nn.Conv2d(cout, cout, 3, 1, 1, bias=False), _group_norm(cout), nn.ReLU(inplace=True))

        self.stem = block(3, channels[0], 2)
        cin = channels[0]
        stages = []
        for c in channels[:num_levels]:
            stages.append(block(cin, c, 2))
            cin = c
        self.stages = nn.ModuleList(stages)
        self.proj = nn.ModuleList(nn.Sequential(nn.Conv2d(c, embed_dim, 1), _group_norm(embed_dim))
                                  for c in channels[:num_levels])
        self.seg_head = nn.Conv2d(embed_dim, 1, 1) if aux_seg else None

    def forward(self, image: torch.Tensor) -> tuple[list[torch.Tensor], torch.Tensor | None]:
        x = self.stem(image)
        levels = []
        for stage, proj in zip(self.stages, self.proj):
            x = stage(x)
            levels.append(proj(x))
        seg = self.seg_head(levels[0]) if self.seg_head is not None else None
        return levels, seg


def _offset_pattern(num_heads: int, num_levels: int, num_points: int) -> torch.Tensor:
    """Fixed starting offsets in cells: head m looks along direction 2*pi*m/M, point k at radius k."""
    theta = torch.arange(num_heads, dtype=torch.float32) * (2.0 * math.pi / num_heads)
    dirs = torch.stack([theta.cos(), theta.sin()], -1)
    radius = torch.arange(num_points, dtype=torch.float32)
    pat = dirs[:, None, None, :] * radius[None, None, :, None]
    return pat.expand(num_heads, num_levels, num_points, 2).contiguous()


class DeformableEncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d, m, nl, k = cfg.embed_dim, cfg.num_heads, cfg.num_levels, cfg.num_points
        self.m, self.nl, self.k = m, nl, k
        self.offsets = nn.Linear(d, m * nl * k * 2)
        self.attn = nn.Linear(d, m * nl * k)
        self.value = nn.Linear(d, d)
        self.out = nn.Linear(d, d)
        self.norm1 = nn.LayerNorm(d)
        self.ffn = nn.Sequential(nn.Linear(d, cfg.ffn_dim), nn.ReLU(inplace=True), nn.Linear(cfg.ffn_dim, d))
        self.norm2 = nn.LayerNorm(d)
        nn.init.zeros_(self.offsets.weight)
        with torch.no_grad():
            self.offsets.bias.copy_(_offset_pattern(m, nl, k).flatten())
        nn.init.zeros_(self.attn.weight)
        nn.init.zeros_(self.attn.bias)
        self.last_attention = None

    def forward(self, src, pos, ref, shapes):
        b, s, d = src.shape
        q = src + pos
        cells = torch.tensor([[w, h] for h, w in shapes], dtype=src.dtype, device=src.device)
        off = self.offsets(q).view(b, s, self.m, self.nl, self.k, 2) / cells[None, None, None, :, None, :]
        locs = ref[None, :, None, None, None, :] + off
        weights = F.softmax(self.attn(q).view(b, s, self.m, self.nl * self.k), -1)
        self.last_attention = weights.detach()
        weights = weights.view(b, s, self.m, self.nl, self.k)
        value = self.value(src)
        maps, start = [], 0
        for h, w in shapes:
            v = value[:, start:start + h * w].view(b, h, w, self.m, d // self.m)
            maps.append(v.permute(0, 3, 4, 1, 2).reshape(b * self.m, d // self.m, h, w))
            start += h * w
        src = self.norm1(src + self.out(ms_deform_sample(maps, locs, weights)))
        return self.norm2(src + self.ffn(src))


class DeformableEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.level_embed = nn.Parameter(torch.randn(cfg.num_levels, cfg.embed_dim) * 0.1)
        self.layers = nn.ModuleList(DeformableEncoderLayer(cfg) for _ in range(cfg.encoder_layers))

    def forward(self, levels: list[torch.Tensor]) -> list[torch.Tensor]:
        b, d = levels[0].shape[:2]
        shapes = [tuple(f.shape[-2:]) for f in levels]
        src = torch.cat([f.flatten(2).transpose(1, 2) for f in levels], 1)
        refs, poss = [], []
        for lvl, (h, w) in enumerate(shapes):
            ys, xs = torch.meshgrid((torch.arange(h, dtype=src.dtype) + 0.5) / h,
                                    (torch.arange(w, dtype=src.dtype) + 0.5) / w, indexing="ij")
            ref = torch.stack([xs.flatten(), ys.flatten()], -1)
            refs.append(ref)
            half = d // 2
            pe = torch.cat([sine_encode(ref[:, 0], half), sine_encode(ref[:, 1], d - half)], -1)
            poss.append(pe + self.level_embed[lvl])
        ref = torch.cat(refs)
        pos = torch.cat(poss)[None]
        for layer in self.layers:
            src = layer(src, pos, ref, shapes)
        out, start = [], 0
        for h, w in shapes:
            out.append(src[:, start:start + h * w].transpose(1, 2).reshape(b, d, h, w))
            start += h * w
        return out


# ---------------------------------------------------------------------------
# decoder

class AnchorEmbedding(nn.Module):
    """Anchor point set -> positional query: per-axis sinusoids, concatenated, then a 2-layer MLP."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.dims = axis_dims(cfg.embed_dim)
        self.temperature = cfg.pe_temperature
        rng = cfg.range3d
        self.register_buffer("lo", torch.tensor([rng.x_min, rng.y_min, rng.z_min]), persistent=False)
        self.register_buffer("span", torch.tensor([rng.x_max - rng.x_min, rng.y_span, rng.z_max - rng.z_min]),
                             persistent=False)
        n = cfg.num_anchor_points
        self.mlp = nn.Sequential(nn.Linear(n * cfg.embed_dim, cfg.embed_dim), nn.ReLU(inplace=True),
                                 nn.Linear(cfg.embed_dim, cfg.embed_dim))

    def encode(self, anchors: torch.Tensor) -> torch.Tensor:
        norm = (anchors - self.lo.to(anchors.dtype)) / self.span.to(anchors.dtype)
        parts = [sine_encode(norm[..., a], dim, self.temperature).flatten(-2) for a, dim in enumerate(self.dims)]
        return torch.cat(parts, -1)

    def forward(self, anchors: torch.Tensor) -> torch.Tensor:
        return self.mlp(self.encode(anchors))


class ContextSampling(nn.Module):
    """Image-conditioned offsets: linear layer over [context feature, query content]."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.n, self.k = cfg.num_anchor_points, cfg.num_points
        self.linear = nn.Linear(2 * cfg.embed_dim, self.n * self.k * 2)
        nn.init.zeros_(self.linear.weight)
        nn.init.zeros_(self.linear.bias)

    def forward(self, context: torch.Tensor, content: torch.Tensor) -> torch.Tensor:
        b, q = content.shape[:2]
        return self.linear(torch.cat([context, content], -1)).view(b, q, self.n, self.k, 2)


class CurveCrossAttention(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d, m, nl, n, k = cfg.embed_dim, cfg.num_heads, cfg.num_levels, cfg.num_anchor_points, cfg.num_points
        self.m, self.nl, self.n, self.k = m, nl, n, k
        self.mode = cfg.offset_mode
        self.offsets = nn.Linear(d, m * nl * n * k * 2) if self.mode != "none" else None
        self.attn = nn.Linear(d, m * nl * n * k)
        self.value = nn.Linear(d, d)
        self.out = nn.Linear(d, d)
        if self.offsets is not None:
            nn.init.zeros_(self.offsets.weight)
            with torch.no_grad():
                pat = _offset_pattern(m, nl, k)[:, :, None].expand(m, nl, n, k, 2)
                self.offsets.bias.copy_(pat.flatten())
        nn.init.zeros_(self.attn.weight)
        nn.init.zeros_(self.attn.bias)
        self.last_attention = None

    def sampling_locations(self, anchor_uv, query, fmaps, context_offsets=None):
        """Normalized (B, Q, M, L, N*K, 2) sample positions around the projected anchors."""
        b, q = query.shape[:2]
        cells = torch.tensor([[f.shape[-1], f.shape[-2]] for f in fmaps], dtype=query.dtype, device=query.device)
        off = torch.zeros(b, q, self.m, self.nl, self.n, self.k, 2, dtype=query.dtype, device=query.device)
        if self.offsets is not None:
            off = self.offsets(query).view(b, q, self.m, self.nl, self.n, self.k, 2)
        if self.mode == "cso" and context_offsets is not None:
            off = off + context_offsets[:, :, None, None]
        locs = anchor_uv[:, :, None, None, :, None, :] + off / cells[None, None, None, :, None, None, :]
        return locs.reshape(b, q, self.m, self.nl, self.n * self.k, 2)

    def forward(self, query, anchor_uv, fmaps, context_offsets=None):
        b, q, d = query.shape
        locs = self.sampling_locations(anchor_uv, query, fmaps, context_offsets)
        weights = F.softmax(self.attn(query).view(b, q, self.m, -1), -1)
        self.last_attention = weights.detach()
        weights = weights.view(b, q, self.m, self.nl, self.n * self.k)
        maps = []
        for f in fmaps:
            h, w = f.shape[-2:]
            v = self.value(f.flatten(2).transpose(1, 2)).view(b, h * w, self.m, d // self.m)
            maps.append(v.permute(0, 2, 3, 1).reshape(b * self.m, d // self.m, h, w))
        return self.out(ms_deform_sample(maps, locs, weights))


class PredictionHead(nn.Module):
    """Query content -> (logit, y-extent, polynomial coefficients).

    For the curve head the coefficients are a least-squares fit through the
    query's refined anchors plus a learned residual, both in the basis
    ``(y / y_max)^r``; the point-set head reports the anchors themselves.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d, r = cfg.embed_dim, cfg.order
        self.order = r
        self.head_type = cfg.head_type
        self.y_min, self.y_max = cfg.y_range
        self.mlp = nn.Sequential(nn.Linear(d, d), nn.ReLU(inplace=True), nn.Linear(d, 3 + 2 * (r + 1)))
        with torch.no_grad():
            self.mlp[-1].weight[3:].zero_()
            self.mlp[-1].bias[3:].zero_()
        t = np.asarray(cfg.ys, dtype=np.float64) / self.y_max
        vand = np.vander(t, r + 1, increasing=True)
        self.register_buffer("vand", torch.tensor(vand, dtype=torch.float32), persistent=False)
        self.register_buffer("fit", torch.tensor(np.linalg.pinv(vand), dtype=torch.float32), persistent=False)
        self.register_buffer("power_scale", torch.tensor(self.y_max ** -np.arange(r + 1.0), dtype=torch.float32),
                             persistent=False)

    def forward(self, content: torch.Tensor, anchors: torch.Tensor) -> dict:
        raw = self.mlp(content)
        dtype = content.dtype
        span = self.y_max - self.y_min
        y_start = self.y_min + span * torch.sigmoid(raw[..., 1])
        y_end = y_start + (self.y_max - y_start) * torch.sigmoid(raw[..., 2])
        fit = self.fit.to(dtype)
        xz = anchors[..., [0, 2]]                                        # (B, Q, N, 2)
        coefs = torch.einsum("rn,bqnc->bqrc", fit, xz)
        if self.head_type == "curve":
            r1 = self.order + 1
            coefs = coefs + torch.stack([raw[..., 3:3 + r1], raw[..., 3 + r1:]], -1)
            lat = torch.einsum("nr,bqrc->bqnc", self.vand.to(dtype), coefs)
            points = torch.stack([lat[..., 0], anchors[..., 1], lat[..., 1]], -1)
        else:
            points = anchors
        scale = self.power_scale.to(dtype)[:, None]
        coefs = coefs * scale
        return {"logits": raw[..., 0], "y_start": y_start, "y_end": y_end,
                "coef_a": coefs[..., 0], "coef_b": coefs[..., 1], "points": points}


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.embed_dim
        self.self_attn = nn.MultiheadAttention(d, cfg.num_heads, batch_first=True)
        self.norm1 = nn.LayerNorm(d)
        self.context = ContextSampling(cfg) if cfg.offset_mode == "cso" else None
        self.cross_attn = CurveCrossAttention(cfg)
        self.norm2 = nn.LayerNorm(d)
        self.ffn = nn.Sequential(nn.Linear(d, cfg.ffn_dim), nn.ReLU(inplace=True), nn.Linear(cfg.ffn_dim, d))
        self.norm3 = nn.LayerNorm(d)
        self.last_self_attention = None

    def forward(self, content, pos, anchors, fmaps, cams):
        q = content + pos
        sa, w = self.self_attn(q, q, content, need_weights=True)
        self.last_self_attention = w.detach()
        content = self.norm1(content + sa)
        uv, valid = project_anchors(anchors, cams)
        ctx_off = None
        if self.context is not None:
            ctx_off = self.context(context_sample_feature(uv, valid, fmaps), content)
        content = self.norm2(content + self.cross_attn(content + pos, uv, fmaps, ctx_off))
        return self.norm3(content + self.ffn(content))


class CurveFormer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d, n = cfg.embed_dim, cfg.num_anchor_points
        self.backbone = Backbone(cfg.backbone_channels, cfg.num_levels, d, cfg.aux_seg)
        self.encoder = DeformableEncoder(cfg)
        self.content = nn.Parameter(torch.randn(cfg.num_queries, d) * 0.1)
        self.anchor_embed = AnchorEmbedding(cfg)
        self.layers = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.num_layers))
        self.refine = nn.Linear(d, 2 * n)
        nn.init.zeros_(self.refine.weight)
        nn.init.zeros_(self.refine.bias)
        self.head = PredictionHead(cfg)
        xs = torch.linspace(cfg.x_range[0], cfg.x_range[1], cfg.num_queries)
        init = torch.zeros(cfg.num_queries, n, 3)
        init[..., 0] = xs[:, None]
        init[..., 1] = torch.tensor(cfg.ys, dtype=torch.float32)
        self.register_buffer("init_anchors", init)

    def extract_features(self, image: torch.Tensor) -> tuple[list[torch.Tensor], torch.Tensor | None]:
        h, w = self.cfg.image_size
        if image.dim() != 4 or image.shape[1] != 3 or tuple(image.shape[-2:]) != (h, w):
            raise ValueError(f"expected image batch (B, 3, {h}, {w}), got {tuple(image.shape)}")
        return self.backbone(image)

    def _refine(self, content: torch.Tensor, anchors: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        b, q, n, _ = anchors.shape
        lim = self.cfg.delta_clamp
        deltas = self.refine(content).view(b, q, n, 2).clamp(-lim, lim)
        x = (anchors[..., 0] + deltas[..., 0]).clamp(*self.cfg.x_range)
        z = (anchors[..., 2] + deltas[..., 1]).clamp(*self.cfg.z_range)
        return torch.stack([x, anchors[..., 1], z], -1), deltas

    def decode(self, fmaps, cams: CameraBatch, content=None, anchors=None) -> list[LayerPrediction]:
        b = fmaps[0].shape[0]
        dtype = fmaps[0].dtype
        content = (self.content if content is None else content).to(dtype)
        anchors = (self.init_anchors if anchors is None else anchors).to(dtype)
        content = content.expand(b, -1, -1) if content.dim() == 2 else content
        anchors = anchors.expand(b, -1, -1, -1) if anchors.dim() == 3 else anchors
        out = []
        for layer in self.layers:
            pos = self.anchor_embed(anchors)
            content = layer(content, pos, anchors, fmaps, cams)
            refined, deltas = self._refine(content, anchors)
            head = self.head(content, refined)
            out.append(LayerPrediction(anchors=refined, deltas=deltas, **head))
            anchors = refined
        return out

    def forward(self, image: torch.Tensor, cams: CameraBatch, content=None, anchors=None) -> ModelOutput:
        levels, seg = self.extract_features(image)
        memory = self.encoder(levels)
        layers = self.decode(memory, cams.to(memory[0].dtype), content, anchors)
        return ModelOutput(layers, seg, memory)
