"""
Forward diffusion, the denoising and hand-reconstruction losses, and the
desk-scale training loop that fits the fusion network together with a small
conditional denoiser.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import tensor as T
from .errors import ConfigError, InvalidArgumentError, NumericError, ShapeError
from .fusion import Mufen, MufenConfig
from .layers import Adam, Conv2d, Module, save_checkpoint
from .seeding import substream

logger = logging.getLogger(__name__)

LATENT_CHANNELS = 4
LATENT_GRID = 16


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Cumulative signal fractions alpha_bar[t], one per diffusion step"""

    alpha_bar: np.ndarray

    MIN_FIRST = 0.99
    MAX_LAST = 0.05

    def __post_init__(self):
        object.__setattr__(self, "alpha_bar", np.asarray(self.alpha_bar, dtype=np.float64))
        violations = self.validate()
        if violations:
            raise InvalidArgumentError("invalid noise schedule: " + "; ".join(violations))

    @property
    def T(self):
        return len(self.alpha_bar)

    def validate(self):
        ab = self.alpha_bar
        if ab.ndim != 1 or len(ab) < 2:
            return [f"alpha_bar must be a 1-D array of at least 2 steps, got shape {ab.shape}"]
        violations = []
        if not np.all(np.isfinite(ab)) or np.any(ab <= 0.0) or np.any(ab > 1.0):
            violations.append("alpha_bar values must lie in (0, 1]")
        if ab[0] < self.MIN_FIRST:
            violations.append(f"alpha_bar[0] must be >= {self.MIN_FIRST}, got {ab[0]:.6f}")
        if ab[-1] > self.MAX_LAST:
            violations.append(f"alpha_bar[T-1] must be <= {self.MAX_LAST}, got {ab[-1]:.6f}")
        if np.any(np.diff(ab) >= 0.0):
            violations.append("alpha_bar must decrease strictly")
        return violations

    @classmethod
    def cosine(cls, steps=100, s=0.008):
        def f(t):
            return math.cos((t / steps + s) / (1.0 + s) * math.pi / 2.0) ** 2

        ab = np.array([f(t + 1) / f(0) for t in range(steps)])
        return cls(np.clip(ab, 1e-5, 1.0))

    @classmethod
    def linear(cls, steps=100):
        """Linear betas, rescaled so `steps` steps cover the same noise range as 1000"""
        scale = 1000.0 / steps
        betas = np.linspace(1e-4 * scale, 0.02 * scale, steps)
        return cls(np.cumprod(1.0 - betas))

    @classmethod
    def named(cls, name, steps=100):
        builders = {"cosine": cls.cosine, "linear": cls.linear}
        if name not in builders:
            raise InvalidArgumentError(f"unknown noise schedule '{name}', expected one of {sorted(builders)}")
        return builders[name](steps)


def forward_diffuse(z0, eps, alpha_bar_t):
    """sqrt(ab) z0 + sqrt(1 - ab) eps; ab is a scalar or broadcasts against z0"""
    z0 = T.as_tensor(z0)
    eps = T.as_tensor(eps, like=z0)
    if z0.shape != eps.shape:
        raise ShapeError("q_sample", z0.shape, eps.shape, "noise must match the latent")
    ab = np.asarray(alpha_bar_t, dtype=np.float64)
    if np.any(ab < 0.0) or np.any(ab > 1.0):
        raise InvalidArgumentError(f"alpha_bar must lie in [0, 1], got {ab}")
    return z0 * np.sqrt(ab).astype(z0.dtype) + eps * np.sqrt(1.0 - ab).astype(z0.dtype)


def _per_sample(values, ndim):
    """Reshape a per-sample vector to broadcast over the remaining axes"""
    return values.reshape((-1,) + (1,) * (ndim - 1)) if values.ndim else values


def q_sample(z0, t, eps, schedule=None):
    """Noised latent z_t at step index t (an int, or one index per sample)"""
    schedule = schedule or NoiseSchedule.cosine()
    t = np.asarray(t)
    if t.dtype.kind not in "iu" or np.any(t < 0) or np.any(t >= schedule.T):
        raise InvalidArgumentError(f"step index must be an integer in [0, {schedule.T}), got {t}")
    z0 = T.as_tensor(z0)
    if t.ndim and (t.ndim != 1 or t.shape[0] != z0.shape[0]):
        raise ShapeError("q_sample", t.shape, z0.shape[:1], "one step index per sample")
    return forward_diffuse(z0, eps, _per_sample(schedule.alpha_bar[t], z0.ndim))


@dataclass
class ConditionBundle:
    """Control grid c for the denoiser plus auxiliary tensors kept for inspection"""

    c: object = None
    aux: dict = field(default_factory=dict)


def denoise_loss(model, z0, t, eps, c=None, schedule=None):
    """MSE between the injected noise and the model's prediction from z_t"""
    if isinstance(c, ConditionBundle):
        c = c.c
    z_t = q_sample(z0, t, eps, schedule)
    prediction = model(z_t, t, c)
    if prediction.shape != z_t.shape:
        raise ShapeError("denoise_loss", prediction.shape, z_t.shape, "model output must match the latent")
    return T.mse_loss(prediction, T.as_tensor(eps, like=z_t))


def rehand_loss(gt, recon):
    """Mean absolute error between ground-truth and reconstructed hand regions"""
    gt, recon = T.as_tensor(gt), T.as_tensor(recon)
    if gt.shape != recon.shape:
        raise ShapeError("rehand_loss", gt.shape, recon.shape)
    return T.l1_loss(recon, gt)


@dataclass(frozen=True)
class LossWeights:
    lam: float = 0.1

    def __post_init__(self):
        if not math.isfinite(self.lam) or self.lam < 0.0:
            raise InvalidArgumentError(f"loss weight lambda must be finite and >= 0, got {self.lam}")

    def to_dict(self):
        return {"lambda": self.lam}


def total_loss(ld, lr, w=None):
    """ld + lambda * lr, for plain numbers or tensors"""
    w = w or LossWeights()
    return ld + w.lam * lr


class ToyDenoiser(Module):
    """Two 3x3 convolutions over [z_t, c, t/T] predicting the injected noise"""

    def __init__(self, cond_channels, rng, latent_channels=LATENT_CHANNELS, hidden=32, steps=100):
        self.latent_channels = latent_channels
        self.cond_channels = cond_channels
        self.steps = steps
        in_channels = latent_channels + cond_channels + 1
        self.conv1 = Conv2d(in_channels, hidden, 3, rng, padding=1)
        self.conv2 = Conv2d(hidden, latent_channels, 3, rng, padding=1)

    def forward(self, z_t, t, c=None):
        z_t = T.as_tensor(z_t)
        n, ch, h, w = z_t.shape
        if ch != self.latent_channels:
            raise ShapeError("toy_denoiser", z_t.shape, (None, self.latent_channels, h, w))
        if c is None:
            c = np.zeros((n, self.cond_channels, h, w), dtype=z_t.dtype)
        c = T.as_tensor(c, like=z_t)
        if c.shape != (n, self.cond_channels, h, w):
            raise ShapeError("toy_denoiser", c.shape, (n, self.cond_channels, h, w), "condition grid")
        t_frac = np.broadcast_to(_per_sample(np.asarray(t, dtype=z_t.dtype) / self.steps, 4), (n, 1, h, w))
        x = T.concat([z_t, c, T.as_tensor(t_frac, like=z_t)], axis=1)
        return self.conv2(T.relu(self.conv1(x)))


def make_latent(rgb, depth, scale=0.18215, grid=LATENT_GRID):
    """RGB (B,3,H,W) and depth (B,1,H,W) in [0,1] pooled to a (B,4,grid,grid) latent in [-scale, scale]"""
    x = np.concatenate([np.asarray(rgb), np.asarray(depth)], axis=1).astype(np.float64)
    h, w = x.shape[2:]
    if h % grid or w % grid:
        raise ShapeError("make_latent", x.shape, (grid, grid), "spatial size must be a multiple of the latent grid")
    n, c = x.shape[:2]
    pooled = x.reshape(n, c, grid, h // grid, grid, w // grid).mean(axis=(3, 5))
    return (2.0 * pooled - 1.0) * scale


def rehand_target(rgb, size=225):
    """Front renders (B,3,H,W) resized to the reconstruction size"""
    rgb = np.asarray(rgb, dtype=np.float64)
    rh = T.resize_matrix(rgb.shape[2], size)
    rw = T.resize_matrix(rgb.shape[3], size)
    return np.matmul(np.matmul(rh, rgb), rw.T)


@dataclass
class TrainConfig:
    seed: int = 0
    steps: int = 300
    lr: float = 1e-3
    batch_size: int = 4
    lam: float = 0.1
    T: int = 100
    schedule: str = "cosine"
    denoiser_hidden: int = 32
    log_every: int = 50
    dtype: str = "float32"
    latent_scale: float = 0.18215
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    PRESETS = {
        "desk": {},
        "full": {"lr": 1e-6, "batch_size": 6, "steps": 90000},
    }

    @classmethod
    def preset(cls, name, **overrides):
        if name not in cls.PRESETS:
            raise InvalidArgumentError(f"unknown training preset '{name}', expected one of {sorted(cls.PRESETS)}")
        return cls(**{**cls.PRESETS[name], **overrides})

    def validate(self):
        violations = []
        if self.seed < 0:
            violations.append(f"seed must be >= 0, got {self.seed}")
        if self.steps < 1:
            violations.append(f"steps must be >= 1, got {self.steps}")
        if not (self.lr > 0.0 and math.isfinite(self.lr)):
            violations.append(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            violations.append(f"batch_size must be >= 1, got {self.batch_size}")
        if not math.isfinite(self.lam) or self.lam < 0.0:
            violations.append(f"lambda must be finite and >= 0, got {self.lam}")
        if self.T < 2:
            violations.append(f"T must be >= 2, got {self.T}")
        if self.schedule not in ("cosine", "linear"):
            violations.append(f"schedule must be 'cosine' or 'linear', got '{self.schedule}'")
        if self.denoiser_hidden < 1 or self.log_every < 1:
            violations.append("denoiser_hidden and log_every must be positive")
        if self.dtype not in ("float32", "float64"):
            violations.append(f"dtype must be float32 or float64, got '{self.dtype}'")
        if not self.latent_scale > 0.0:
            violations.append(f"latent_scale must be positive, got {self.latent_scale}")
        return violations

    def ensure_valid(self):
        violations = self.validate()
        if violations:
            raise ConfigError("; ".join(violations))
        return self

    def to_dict(self):
        return {
            "seed": self.seed, "steps": self.steps, "lr": self.lr, "batch_size": self.batch_size,
            "lambda": self.lam, "T": self.T, "schedule": self.schedule,
            "denoiser_hidden": self.denoiser_hidden, "log_every": self.log_every,
            "dtype": self.dtype, "latent_scale": self.latent_scale,
            "betas": list(self.betas), "eps": self.eps,
        }


@dataclass
class TrainResult:
    losses: pd.DataFrame
    initial_loss: float
    final_loss: float
    checkpoint_dir: Path
    model: Mufen
    denoiser: ToyDenoiser

    INITIAL_WINDOW = 5
    FINAL_WINDOW = 20

    @property
    def ratio(self):
        return self.final_loss / self.initial_loss if self.initial_loss else float("inf")

    def summary(self):
        return {
            "steps": len(self.losses),
            "initial_loss": self.initial_loss,
            "final_loss": self.final_loss,
            "ratio": self.ratio,
            "checkpoint_dir": str(self.checkpoint_dir) if self.checkpoint_dir else None,
        }


def _draw_noise(seed, indices, step, shape, schedule_T):
    """Per-sample timesteps and noise from substreams keyed by (sample_id, step)"""
    t = np.array([substream(seed, "timesteps", int(i), step).integers(schedule_T) for i in indices])
    eps = np.stack([substream(seed, "noise", int(i), step).standard_normal(shape) for i in indices])
    return t, eps


def train_toy(config, dataset, mufen_cfg=None, out_dir=None):
    """Adam on denoise + lambda * rehand over the fusion network and a toy denoiser"""
    config.ensure_valid()
    mufen_cfg = (mufen_cfg or MufenConfig()).ensure_valid()
    if len(dataset) < 1:
        raise InvalidArgumentError("training needs at least one sample")
    schedule = NoiseSchedule.named(config.schedule, config.T)
    weights = LossWeights(config.lam)
    text_dim = mufen_cfg.encoder.text_dim
    latent_shape = (LATENT_CHANNELS, LATENT_GRID, LATENT_GRID)

    with T.default_dtype(config.dtype):
        model = Mufen(mufen_cfg, substream(config.seed, "init", 0))
        denoiser = ToyDenoiser(
            mufen_cfg.fused_channels, substream(config.seed, "init", 1),
            hidden=config.denoiser_hidden, steps=schedule.T,
        )
        optimizer = Adam(model.parameters() + denoiser.parameters(), lr=config.lr, betas=config.betas, eps=config.eps)
        logger.info(
            "training %d + %d parameters for %d steps (batch %d, lr %g, lambda %g)",
            model.num_parameters(), denoiser.num_parameters(), config.steps, config.batch_size, config.lr, config.lam,
        )
        batches = substream(config.seed, "batches")
        replace = len(dataset) < config.batch_size
        rows = []
        for step in range(config.steps):
            indices = np.sort(batches.choice(len(dataset), size=config.batch_size, replace=replace))
            inputs = dataset.inputs(indices, text_dim=text_dim)
            z0 = make_latent(dataset.rgb_front[indices], dataset.depth[indices], config.latent_scale)
            target = rehand_target(dataset.rgb_front[indices], mufen_cfg.out_size)
            t, eps = _draw_noise(config.seed, indices, step, latent_shape, schedule.T)
            try:
                optimizer.zero_grad()
                bundle = model.encode(inputs)
                l_denoise = denoise_loss(denoiser, z0, t, eps, bundle.fused, schedule)
                if weights.lam > 0.0:
                    l_rehand = rehand_loss(target, model.unet(bundle.fused))
                else:
                    with T.no_grad():
                        l_rehand = rehand_loss(target, model.unet(bundle.fused))
                total = total_loss(l_denoise, l_rehand, weights)
                total.backward()
                optimizer.step()
            except NumericError as err:
                raise NumericError(f"training diverged ({err})", step=step) from err
            row = {"step": step, "l_denoise": l_denoise.item(), "l_rehand": l_rehand.item(), "total": total.item()}
            rows.append(row)
            logger.debug("step %d: %s", step, row)
            if (step + 1) % config.log_every == 0:
                logger.info("step %d/%d total %.5f", step + 1, config.steps, row["total"])

    losses = pd.DataFrame(rows, columns=["step", "l_denoise", "l_rehand", "total"])
    initial = float(losses["total"].head(TrainResult.INITIAL_WINDOW).mean())
    final = float(losses["total"].tail(TrainResult.FINAL_WINDOW).mean())
    checkpoint_dir = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        losses.to_csv(out_dir / "losses.csv", index=False)
        checkpoint_dir = out_dir / "checkpoint"
        save_checkpoint(model, checkpoint_dir, prefix="mufen.")
        save_checkpoint(denoiser, checkpoint_dir, prefix="denoiser.")
    logger.info("training finished: initial %.5f final %.5f", initial, final)
    return TrainResult(losses, initial, final, checkpoint_dir, model, denoiser)
