"""
Bounding-box guided fusion, multi-modal concatenation and the multi-modal
UNet that decodes the fused grid into a hand image.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .encoders import BBoxEncoder, DepthEncoder, DualStreamEncoder, EncoderConfig, FeatureBundle, MultiViewEncoder
from .errors import ConfigError, InvalidArgumentError, MissingModalityError, ShapeError
from .layers import Attention, Conv2d, Identity, Linear, Module, grid_to_tokens, tokens_to_grid, zeros_parameter
from .tensor import Tensor
from .viewselect import VIEW_SETS

logger = logging.getLogger(__name__)

MODALITIES = ("mesh", "depth", "text", "bbox")


@dataclass
class TokenizedFeature:
    """Tokens (B, N, D): N=256 for a 16x16 grid, N=1 for a vector"""

    tokens: Tensor

    @classmethod
    def from_grid(cls, grid):
        return cls(grid_to_tokens(grid))

    @classmethod
    def from_vector(cls, vector):
        vector = T.as_tensor(vector)
        if vector.ndim != 2:
            raise ShapeError("from_vector", vector.shape, None, "expected (batch, width)")
        return cls(T.reshape(vector, (vector.shape[0], 1, vector.shape[1])))

    @property
    def n_tokens(self):
        return self.tokens.shape[1]

    @property
    def width(self):
        return self.tokens.shape[2]


@dataclass
class FusionTrace:
    out: TokenizedFeature
    alpha: Tensor
    gate: Tensor


class BBoxFusion(Module):
    """The bbox embedding queries the modality tokens; a sigmoid gate meters the context added back"""

    def __init__(self, width, bbox_dim, rng):
        self.width = width
        self.bbox_dim = bbox_dim
        self.transform = Linear(bbox_dim, width, rng)
        self.key = Linear(width, width, rng)
        self.value = Linear(width, width, rng)
        self.gate = Linear(2 * width, width, rng)
        self.gate.bias = zeros_parameter((width,))
        self.proj = Linear(width, width, rng)

    def fuse_trace(self, modality, bbox_feat):
        tokens = modality.tokens
        if tokens.ndim != 3 or tokens.shape[2] != self.width:
            raise ShapeError("bbox_fuse", tokens.shape, (None, None, self.width), "modality width")
        if bbox_feat.ndim != 2 or bbox_feat.shape[1] != self.bbox_dim or bbox_feat.shape[0] != tokens.shape[0]:
            raise ShapeError("bbox_fuse", bbox_feat.shape, (tokens.shape[0], self.bbox_dim), "bbox feature")
        b, n, d = tokens.shape
        query = T.reshape(self.transform(bbox_feat), (b, 1, d))
        keys = self.key(tokens)
        values = self.value(tokens)
        alpha = T.softmax(T.matmul(query, T.transpose(keys, (0, 2, 1))) / math.sqrt(d), axis=-1)
        context = T.broadcast_to(T.matmul(alpha, values), (b, n, d))
        gate = T.sigmoid(self.gate(T.concat([tokens, context], axis=-1)))
        out = self.proj(tokens + gate * context)
        return FusionTrace(TokenizedFeature(out), alpha, gate)

    def forward(self, modality, bbox_feat):
        return self.fuse_trace(modality, bbox_feat).out


class MultiModalConcat(Module):
    """Broadcast vector tokens onto the grid, concatenate widths, per-site MLP to C channels"""

    def __init__(self, widths, out_channels, rng, grid=16, hidden=None):
        self.widths = dict(widths)
        self.grid = grid
        total = sum(self.widths.values())
        hidden = hidden or out_channels
        self.fc1 = Linear(total, hidden, rng)
        self.fc2 = Linear(hidden, out_channels, rng)

    def forward(self, features):
        n_sites = self.grid * self.grid
        parts = []
        for name, width in self.widths.items():
            feature = features.get(name)
            if feature is None:
                raise MissingModalityError(name)
            tokens = feature.tokens
            if tokens.shape[2] != width:
                raise ShapeError(f"mm_concat[{name}]", tokens.shape, (None, None, width))
            if tokens.shape[1] == 1:
                tokens = T.broadcast_to(tokens, (tokens.shape[0], n_sites, width))
            elif tokens.shape[1] != n_sites:
                raise ShapeError(f"mm_concat[{name}]", tokens.shape, (None, n_sites, width), "token count")
            parts.append(tokens)
        unified = self.fc2(T.relu(self.fc1(T.concat(parts, axis=-1))))
        return tokens_to_grid(unified, self.grid, self.grid)


class MultiModalUNet(Module):
    """16x16 grid -> attention down block at 8x8 -> bottleneck attention -> cross-attended
    up block back at 16x16 -> bilinear resize to the output size -> RGB in (0, 1)."""

    GRID = 16

    def __init__(self, channels, rng, out_size=225):
        if channels < 8:
            raise InvalidArgumentError(f"MultiModalUNet needs at least 8 channels, got {channels}")
        self.channels = channels
        self.out_size = out_size
        self.identity = Identity()
        self.down = Conv2d(channels, channels, 3, rng, stride=2, padding=1)
        self.down_attn = Attention(channels, rng)
        self.mid_attn = Attention(channels, rng)
        self.up = Conv2d(channels, channels, 3, rng, padding=1)
        self.cross_attn = Attention(channels, rng)
        self.head = Conv2d(channels, 3, 3, rng, padding=1)

    def forward_with_attention(self, unified):
        if unified.ndim != 4 or unified.shape[1:] != (self.channels, self.GRID, self.GRID):
            raise ShapeError("mm_unet", unified.shape, (None, self.channels, self.GRID, self.GRID))
        half = self.GRID // 2
        skip = self.identity(unified)

        x = grid_to_tokens(T.relu(self.down(skip)))
        attended, down_w = self.down_attn(x, x)
        x = x + attended
        attended, mid_w = self.mid_attn(x, x)
        x = tokens_to_grid(x + attended, half, half)

        x = T.relu(self.up(T.bilinear_resize(x, (self.GRID, self.GRID))))
        up_tokens = grid_to_tokens(x)
        attended, cross_w = self.cross_attn(up_tokens, grid_to_tokens(skip))
        x = tokens_to_grid(up_tokens + attended, self.GRID, self.GRID)

        x = T.bilinear_resize(x, (self.out_size, self.out_size))
        rgb = T.sigmoid(self.head(x))
        return rgb, {"down": down_w, "bottleneck": mid_w, "cross": cross_w}

    def forward(self, unified):
        return self.forward_with_attention(unified)[0]


@dataclass
class MufenConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    fused_channels: int = 64
    modalities: tuple = MODALITIES
    use_bbox_fusion: bool = True
    out_size: int = 225
    # a fixed view set (FBLR, FBTB, LRTB, all6) replaces the selected pair on the mesh stream
    view_set: str = None

    def __post_init__(self):
        self.modalities = tuple(self.modalities)

    def validate(self):
        violations = list(self.encoder.validate())
        if self.encoder.grid != MultiModalUNet.GRID:
            violations.append(f"encoder grid must be {MultiModalUNet.GRID} for the fusion UNet, got {self.encoder.grid}")
        unknown = [m for m in self.modalities if m not in MODALITIES]
        if unknown:
            violations.append(f"unknown modalities {unknown}, expected a subset of {MODALITIES}")
        if not self.modalities or len(set(self.modalities)) != len(self.modalities):
            violations.append(f"modalities must be non-empty and unique, got {self.modalities}")
        if self.use_bbox_fusion and "bbox" not in self.modalities:
            violations.append("bbox fusion needs the bbox modality")
        if self.fused_channels < 8:
            violations.append(f"fused_channels must be >= 8, got {self.fused_channels}")
        if self.out_size < 1:
            violations.append(f"out_size must be positive, got {self.out_size}")
        if self.view_set is not None and self.view_set not in VIEW_SETS:
            violations.append(f"view_set must be one of {sorted(VIEW_SETS)}, got {self.view_set!r}")
        return violations

    def ensure_valid(self):
        violations = self.validate()
        if violations:
            raise ConfigError("; ".join(violations))
        return self

    def widths(self):
        all_widths = {
            "mesh": self.encoder.out_channels,
            "depth": self.encoder.out_channels,
            "text": self.encoder.text_dim,
            "bbox": self.encoder.bbox_dim,
        }
        return {m: all_widths[m] for m in MODALITIES if m in self.modalities}


@dataclass
class MufenInputs:
    """One batch of raw modality inputs; a modality left as None is absent"""

    rgb_a: np.ndarray = None
    rgb_b: np.ndarray = None
    depth: np.ndarray = None
    text: np.ndarray = None
    bbox: np.ndarray = None
    views: list = None


class Mufen(Module):
    """Encoders -> per-modality bbox fusion -> concatenation -> multi-modal UNet"""

    def __init__(self, cfg, rng):
        cfg.ensure_valid()
        self.cfg = cfg
        enc = cfg.encoder
        self.mesh_encoder = None
        if "mesh" in cfg.modalities and cfg.view_set:
            self.mesh_encoder = MultiViewEncoder(enc, rng, len(VIEW_SETS[cfg.view_set]))
        elif "mesh" in cfg.modalities:
            self.mesh_encoder = DualStreamEncoder(enc, rng)
        self.depth_encoder = DepthEncoder(enc, rng) if "depth" in cfg.modalities else None
        self.bbox_encoder = BBoxEncoder(enc, rng) if "bbox" in cfg.modalities else None
        self.bbox_fusions = (
            {name: BBoxFusion(width, enc.bbox_dim, rng) for name, width in cfg.widths().items()}
            if cfg.use_bbox_fusion else {}
        )
        self.concat = MultiModalConcat(cfg.widths(), cfg.fused_channels, rng, grid=enc.grid)
        self.unet = MultiModalUNet(cfg.fused_channels, rng, out_size=cfg.out_size)

    @staticmethod
    def _require(modality, inputs, *fields):
        values = [getattr(inputs, name) for name in fields]
        if any(v is None for v in values):
            raise MissingModalityError(modality)
        return [T.as_tensor(v) for v in values]

    def _encode_mesh(self, inputs):
        if not self.cfg.view_set:
            return self.mesh_encoder(*self._require("mesh", inputs, "rgb_a", "rgb_b"))
        if inputs.views is None:
            raise MissingModalityError("mesh")
        return self.mesh_encoder([T.as_tensor(v) for v in inputs.views])

    def encode(self, inputs):
        """FeatureBundle with per-modality features and the fused grid"""
        modalities = self.cfg.modalities
        bundle = FeatureBundle()
        tokens = {}
        if "mesh" in modalities:
            bundle.mesh_feat = self._encode_mesh(inputs)
            tokens["mesh"] = TokenizedFeature.from_grid(bundle.mesh_feat)
        if "depth" in modalities:
            (depth,) = self._require("depth", inputs, "depth")
            bundle.depth_feat = self.depth_encoder(depth)
            tokens["depth"] = TokenizedFeature.from_grid(bundle.depth_feat)
        if "text" in modalities:
            (bundle.text_feat,) = self._require("text", inputs, "text")
            tokens["text"] = TokenizedFeature.from_vector(bundle.text_feat)
        if "bbox" in modalities:
            (bbox,) = self._require("bbox", inputs, "bbox")
            bundle.bbox_feat = self.bbox_encoder(bbox)
            tokens["bbox"] = TokenizedFeature.from_vector(bundle.bbox_feat)

        for name, fusion in self.bbox_fusions.items():
            trace = fusion.fuse_trace(tokens[name], bundle.bbox_feat)
            tokens[name] = trace.out
            bundle.extras[f"{name}_gate"] = trace.gate
            bundle.extras[f"{name}_alpha"] = trace.alpha
        bundle.fused = self.concat(tokens)
        return bundle

    def forward(self, inputs):
        """Returns (rgb (B, 3, out, out), FeatureBundle)"""
        bundle = self.encode(inputs)
        return self.unet(bundle.fused), bundle
