"""
Per-modality encoders: rendering encoder with CBAM, dual-stream fusion of
the view pair, depth encoder, bounding-box MLP and a deterministic text
feature stub.
"""

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import InvalidArgumentError, ShapeError
from .layers import MLP, Conv2d, Linear, Module, per_site
from .tensor import Tensor

logger = logging.getLogger(__name__)

# Gesture vocabulary of the hand-image dataset the priors stand in for.
GESTURES = (
    "call", "dislike", "fist", "four", "like", "mute", "ok", "one", "palm",
    "peace", "peace_inverted", "rock", "stop", "stop_inverted", "three",
    "three2", "two_up", "two_up_inverted",
)


@dataclass
class EncoderConfig:
    """Widths shared by the image, depth and bbox encoders"""

    out_channels: int = 64
    grid: int = 16
    backbone_channels: tuple = (32, 64, 64, 64)
    cbam_reduction: int = 4
    text_dim: int = 768
    bbox_dim: int = 64
    bbox_hidden: int = 64

    PRESETS = {
        "toy": {},
        "full": {"out_channels": 1280, "backbone_channels": (64, 128, 256, 512)},
        "tiny": {"out_channels": 8, "backbone_channels": (4, 8, 8, 8), "cbam_reduction": 2,
                 "text_dim": 16, "bbox_dim": 8, "bbox_hidden": 8},
    }

    def __post_init__(self):
        self.backbone_channels = tuple(int(c) for c in self.backbone_channels)

    @classmethod
    def preset(cls, name, **overrides):
        if name not in cls.PRESETS:
            raise InvalidArgumentError(f"unknown encoder preset '{name}', expected one of {sorted(cls.PRESETS)}")
        return cls(**{**cls.PRESETS[name], **overrides})

    def validate(self):
        violations = []
        if self.out_channels < 8:
            violations.append(f"out_channels must be >= 8, got {self.out_channels}")
        if self.grid < 4:
            violations.append(f"grid must be >= 4, got {self.grid}")
        if len(self.backbone_channels) != 4 or min(self.backbone_channels) < 2:
            violations.append(f"backbone_channels needs 4 stage widths >= 2, got {self.backbone_channels}")
        for name in ("cbam_reduction", "text_dim", "bbox_dim", "bbox_hidden"):
            if getattr(self, name) < 1:
                violations.append(f"{name} must be positive")
        return violations

    def ensure_valid(self):
        violations = self.validate()
        if violations:
            raise InvalidArgumentError("; ".join(violations))
        return self


@dataclass
class FeatureBundle:
    """Per-modality features; a missing modality is None"""

    mesh_feat: Tensor = None
    depth_feat: Tensor = None
    text_feat: Tensor = None
    bbox_feat: Tensor = None
    fused: Tensor = None
    extras: dict = field(default_factory=dict)

    def present(self):
        return [name for name in ("mesh", "depth", "text", "bbox") if getattr(self, f"{name}_feat") is not None]


class CBAM(Module):
    """Channel gate from pooled statistics, then a 7x7 spatial gate"""

    def __init__(self, channels, rng, reduction=4, kernel_size=7):
        if channels < 2:
            raise InvalidArgumentError(f"CBAM needs at least 2 channels, got {channels}")
        hidden = max(channels // reduction, 1)
        self.channels = channels
        self.fc1 = Linear(channels, hidden, rng)
        self.fc2 = Linear(hidden, channels, rng)
        self.spatial = Conv2d(2, 1, kernel_size, rng, padding=kernel_size // 2)

    def _shared_mlp(self, pooled):
        return self.fc2(T.relu(self.fc1(pooled)))

    def forward_with_gates(self, x):
        """Returns (output, channel_gate (N,C,1,1), spatial_gate (N,1,H,W))"""
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError("cbam", x.shape, (None, self.channels, None, None))
        n, c = x.shape[:2]
        avg = T.mean(x, axis=(2, 3))
        peak = T.max_(x, axis=(2, 3))
        channel_gate = T.reshape(T.sigmoid(self._shared_mlp(avg) + self._shared_mlp(peak)), (n, c, 1, 1))
        x = x * channel_gate
        pooled = T.concat([T.mean(x, axis=1, keepdims=True), T.max_(x, axis=1, keepdims=True)], axis=1)
        spatial_gate = T.sigmoid(self.spatial(pooled))
        return x * spatial_gate, channel_gate, spatial_gate

    def forward(self, x):
        return self.forward_with_gates(x)[0]


class RenderingEncoder(Module):
    """Strided conv backbone onto the feature grid, CBAM, then a 1x1 channel reduction.

    Two stride-2 stages bring the image to a quarter of its size, a bilinear
    resample lands it on the grid, and two stride-1 stages refine it there.
    """

    MIN_SIZE = 64

    def __init__(self, in_channels, cfg, rng):
        cfg.ensure_valid()
        c1, c2, c3, c4 = cfg.backbone_channels
        self.in_channels = in_channels
        self.grid = cfg.grid
        self.stage1 = Conv2d(in_channels, c1, 3, rng, stride=2, padding=1)
        self.stage2 = Conv2d(c1, c2, 3, rng, stride=2, padding=1)
        self.stage3 = Conv2d(c2, c3, 3, rng, padding=1)
        self.stage4 = Conv2d(c3, c4, 3, rng, padding=1)
        self.cbam = CBAM(c4, rng, reduction=cfg.cbam_reduction)
        self.reduce = Conv2d(c4, cfg.out_channels, 1, rng)

    def check_input(self, image):
        if image.ndim != 4 or image.shape[1] != self.in_channels:
            raise ShapeError("rendering_encoder", image.shape, (None, self.in_channels, None, None))
        h, w = image.shape[2:]
        if h < self.MIN_SIZE or w < self.MIN_SIZE or h % 4 or w % 4:
            raise ShapeError("rendering_encoder", image.shape, None,
                             f"spatial size must be >= {self.MIN_SIZE} and divisible by 4")

    def forward(self, image):
        self.check_input(image)
        x = T.relu(self.stage1(image))
        x = T.relu(self.stage2(x))
        # a quarter-size map for every accepted input size; resampled onto the fixed grid
        x = T.bilinear_resize(x, (self.grid, self.grid))
        x = T.relu(self.stage3(x))
        x = T.relu(self.stage4(x))
        return self.reduce(self.cbam(x))


class DepthEncoder(RenderingEncoder):
    """Rendering encoder over a single depth channel"""

    def __init__(self, cfg, rng):
        super().__init__(1, cfg, rng)


class MultiViewFusion(Module):
    """Per-site FC-ReLU-FC over the stacked view features plus their mean as residual"""

    OP = "multi_view"

    def __init__(self, channels, rng, n_views=2, hidden=None):
        if n_views < 2:
            raise InvalidArgumentError(f"view fusion needs at least 2 views, got {n_views}")
        hidden = hidden or channels
        self.n_views = n_views
        self.fc1 = Linear(n_views * channels, hidden, rng)
        self.fc2 = Linear(hidden, channels, rng)

    def forward(self, *feats):
        if len(feats) != self.n_views:
            raise ShapeError(self.OP, (len(feats),), (self.n_views,), "one feature map per view")
        for feat in feats[1:]:
            if feat.shape != feats[0].shape:
                raise ShapeError(self.OP, feats[0].shape, feat.shape)
        stacked = T.concat(list(feats), axis=1)
        fused = per_site(lambda t: self.fc2(T.relu(self.fc1(t))), stacked)
        return fused + sum(feats[1:], feats[0]) * (1.0 / self.n_views)


class DualStreamFusion(MultiViewFusion):
    OP = "dual_stream"

    def __init__(self, channels, rng, hidden=None):
        super().__init__(channels, rng, n_views=2, hidden=hidden)


class DualStreamEncoder(Module):
    """Separate rendering encoders for the two views of the selected pair, then fusion"""

    def __init__(self, cfg, rng):
        self.encoder_a = RenderingEncoder(3, cfg, rng)
        self.encoder_b = RenderingEncoder(3, cfg, rng)
        self.fusion = DualStreamFusion(cfg.out_channels, rng)

    def forward(self, rgb_a, rgb_b):
        return self.fusion(self.encoder_a(rgb_a), self.encoder_b(rgb_b))


class MultiViewEncoder(Module):
    """One rendering encoder per view of a fixed view set, fused like the dual stream"""

    def __init__(self, cfg, rng, n_views):
        self.encoders = [RenderingEncoder(3, cfg, rng) for _ in range(n_views)]
        self.fusion = MultiViewFusion(cfg.out_channels, rng, n_views=n_views)

    def forward(self, views):
        if len(views) != len(self.encoders):
            raise ShapeError(MultiViewFusion.OP, (len(views),), (len(self.encoders),), "one image per view")
        return self.fusion(*[encoder(view) for encoder, view in zip(self.encoders, views)])


def validate_bbox(bbox):
    """Violations for one (x0, y0, x1, y1) box in normalized coordinates"""
    x0, y0, x1, y1 = (float(v) for v in bbox)
    violations = []
    if not x0 < x1:
        violations.append(f"x0 ({x0}) must be < x1 ({x1})")
    if not y0 < y1:
        violations.append(f"y0 ({y0}) must be < y1 ({y1})")
    if min(x0, y0, x1, y1) < 0.0 or max(x0, y0, x1, y1) > 1.0:
        violations.append(f"corners must lie in [0, 1], got {(x0, y0, x1, y1)}")
    return violations


class BBoxEncoder(Module):
    """MLP 4 -> hidden -> bbox_dim over normalized corners"""

    def __init__(self, cfg, rng):
        self.mlp = MLP((4, cfg.bbox_hidden, cfg.bbox_dim), rng)

    def forward(self, bbox):
        bbox = T.as_tensor(bbox)
        if bbox.ndim != 2 or bbox.shape[1] != 4:
            raise ShapeError("bbox_encoder", bbox.shape, (None, 4))
        for row in bbox.data:
            violations = validate_bbox(row)
            if violations:
                raise InvalidArgumentError("invalid bbox: " + "; ".join(violations))
        return self.mlp(bbox)


def text_encoder_stub(label, dim=768, seed=0):
    """Fixed pseudorandom unit vector per label"""
    if not isinstance(label, str) or not label.strip():
        raise InvalidArgumentError("text label must be a non-empty string")
    digest = hashlib.sha256(f"{seed}:{label}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def load_text_feature(path, dim=768):
    """External text embedding stored as a rank-1 MUFT tensor"""
    v = T.load_tensor(path).astype(np.float64)
    if v.shape != (dim,):
        raise ShapeError("text_feature", v.shape, (dim,))
    return v
