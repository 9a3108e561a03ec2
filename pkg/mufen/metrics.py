"""
Hand-region crops, Frechet and kernel distances between feature sets, and
the paired t-test over per-gesture scores.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import linalg, special

from .encoders import GESTURES
from .errors import DegenerateVarianceError, ImageTooSmallError, InvalidArgumentError, ShapeError
from .seeding import substream
from .tensor import load_tensor, save_tensor

logger = logging.getLogger(__name__)

CROP_SIZE = 299
KID_SUBSETS = 100
KID_MAX_SUBSET = 1000
PSD_TOLERANCE = 1e-8


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """n feature rows of dimension d"""

    rows: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim == 1:
            rows = rows[:, None]
        if rows.ndim != 2:
            raise ShapeError("feature_set", rows.shape, None, "expected (n, d) rows")
        if not np.all(np.isfinite(rows)):
            raise InvalidArgumentError("feature rows must be finite")
        object.__setattr__(self, "rows", rows)

    @property
    def n(self):
        return self.rows.shape[0]

    @property
    def d(self):
        return self.rows.shape[1]

    @classmethod
    def coerce(cls, value):
        return value if isinstance(value, cls) else cls(value)

    @classmethod
    def load(cls, path):
        rows = load_tensor(path)
        if rows.ndim != 2:
            raise ShapeError("feature_set", rows.shape, None, f"{path} must hold a rank-2 tensor")
        return cls(rows)

    def save(self, path):
        save_tensor(path, self.rows)


@dataclass(frozen=True)
class GestureScores:
    """Aligned per-gesture metric values for methods a and b (lower is better)"""

    a: tuple
    b: tuple
    labels: tuple = GESTURES

    def __post_init__(self):
        try:
            object.__setattr__(self, "a", tuple(float(v) for v in self.a))
            object.__setattr__(self, "b", tuple(float(v) for v in self.b))
        except (TypeError, ValueError) as exc:
            raise InvalidArgumentError(f"scores must be lists of numbers ({exc})") from exc
        violations = self.validate()
        if violations:
            raise InvalidArgumentError("; ".join(violations))

    def validate(self):
        violations = []
        if len(self.a) != len(self.b):
            violations.append(f"score lists differ in length: {len(self.a)} vs {len(self.b)}")
        if not all(math.isfinite(v) for v in self.a + self.b):
            violations.append("scores must be finite")
        return violations

    def differences(self):
        return np.array(self.a) - np.array(self.b)


def crop_window(center, extent, size=CROP_SIZE):
    """Start index of a `size` window centered on `center`, shifted inside [0, extent)"""
    start = math.floor(center - (size - 1) / 2.0 - 0.5)
    return min(max(start, 0), extent - size)


def crop_hand(image, bbox, size=CROP_SIZE):
    """size x size crop of an HxWx3 image centered on a normalized (x0, y0, x1, y1) box"""
    image = np.asarray(image)
    h, w = image.shape[:2]
    if h < size or w < size:
        raise ImageTooSmallError(f"image {h}x{w} is smaller than the {size}x{size} crop")
    x0, y0, x1, y1 = (float(v) for v in bbox)
    top = crop_window((y0 + y1) / 2.0 * h, h, size)
    left = crop_window((x0 + x1) / 2.0 * w, w, size)
    return image[top:top + size, left:left + size]


def _covariance(rows):
    return np.atleast_2d(np.cov(rows, rowvar=False, ddof=1))


def _psd_sqrt(matrix, name):
    """Symmetric square root; eigenvalues slightly below zero are clamped"""
    values, vectors = linalg.eigh((matrix + matrix.T) / 2.0)
    floor = -PSD_TOLERANCE * max(1.0, float(np.max(np.abs(values))))
    if values.min() < floor:
        raise InvalidArgumentError(f"{name} is not positive semi-definite (eigenvalue {values.min():.3e})")
    return (vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.T


def frechet_distance(a, b):
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)) between Gaussian fits"""
    a, b = FeatureSet.coerce(a), FeatureSet.coerce(b)
    if a.d != b.d:
        raise ShapeError("frechet_distance", a.rows.shape, b.rows.shape, "feature dimensions differ")
    if min(a.n, b.n) < 2:
        raise InvalidArgumentError("frechet_distance needs at least 2 rows per set")
    if min(a.n, b.n) < a.d:
        logger.warning("frechet_distance with %d rows in %d dimensions: covariance is rank deficient",
                       min(a.n, b.n), a.d)
    if a.rows.shape == b.rows.shape and np.array_equal(a.rows, b.rows):
        return 0.0
    mu = a.rows.mean(axis=0) - b.rows.mean(axis=0)
    sigma_a, sigma_b = _covariance(a.rows), _covariance(b.rows)
    root_a = _psd_sqrt(sigma_a, "covariance of a")
    cross = _psd_sqrt(root_a @ sigma_b @ root_a, "covariance product")
    distance = float(mu @ mu + np.trace(sigma_a) + np.trace(sigma_b) - 2.0 * np.trace(cross))
    return max(distance, 0.0)


def polynomial_kernel(x, y):
    """(x.y / d + 1)^3 for every row pair"""
    return (x @ y.T / x.shape[1] + 1.0) ** 3


def mmd2_unbiased(x, y):
    """Unbiased MMD^2 over equal-size samples, cross terms without the diagonal"""
    m = x.shape[0]
    if y.shape[0] != m or m < 2:
        raise InvalidArgumentError(f"unbiased MMD needs two samples of equal size >= 2, got {m} and {y.shape[0]}")
    kxx, kyy, kxy = polynomial_kernel(x, x), polynomial_kernel(y, y), polynomial_kernel(x, y)
    sxx = kxx.sum() - np.trace(kxx)
    syy = kyy.sum() - np.trace(kyy)
    sxy = kxy.sum() - np.trace(kxy)
    return float((sxx + syy - 2.0 * sxy) / (m * (m - 1)))


def kid(a, b, subsets=KID_SUBSETS, subset_size=None, seed=0):
    """Mean and std of the unbiased MMD^2 over seeded random subsets"""
    a, b = FeatureSet.coerce(a), FeatureSet.coerce(b)
    if a.d != b.d:
        raise ShapeError("kid", a.rows.shape, b.rows.shape, "feature dimensions differ")
    limit = min(a.n, b.n)
    m = subset_size or min(KID_MAX_SUBSET, limit)
    if m > limit:
        raise InvalidArgumentError(f"subset_size {m} exceeds the smaller set ({limit} rows)")
    if m < 2 or subsets < 1:
        raise InvalidArgumentError(f"kid needs subset_size >= 2 and subsets >= 1, got {m} and {subsets}")
    rng = substream(seed, "metrics", m)
    values = np.empty(subsets)
    for i in range(subsets):
        idx_a = rng.choice(a.n, m, replace=False)
        idx_b = idx_a if a.n == b.n else rng.choice(b.n, m, replace=False)
        values[i] = mmd2_unbiased(a.rows[idx_a], b.rows[idx_b])
    return float(values.mean()), float(values.std())


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    better_count: int
    n: int

    def to_dict(self):
        return {"t": self.t, "p": self.p, "better_count": self.better_count, "n": self.n}


def student_t_two_sided(t, dof):
    """Two-sided p-value of Student's t with `dof` degrees of freedom"""
    return float(special.betainc(dof / 2.0, 0.5, dof / (dof + t * t)))


def paired_ttest(a, b=None):
    """Two-sided paired t-test of a against b; better = strictly lower score in a"""
    scores = a if isinstance(a, GestureScores) else GestureScores(a, b)
    d = scores.differences()
    n = len(d)
    if n < 2:
        raise InvalidArgumentError(f"paired t-test needs at least 2 pairs, got {n}")
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise DegenerateVarianceError("paired differences have zero variance")
    t = float(np.mean(d)) / (sd / math.sqrt(n))
    better = int(np.sum(np.array(scores.a) < np.array(scores.b)))
    return TTestResult(t, student_t_two_sided(t, n - 1), better, n)


def paired_ttest_table(metrics):
    """One paired t-test row per metric; `metrics` maps name -> (a, b) or GestureScores"""
    rows = []
    for name, scores in metrics.items():
        if not isinstance(scores, GestureScores):
            scores = GestureScores(*scores)
        rows.append({"metric": name, **paired_ttest(scores).to_dict()})
    return pd.DataFrame(rows, columns=["metric", "t", "p", "better_count", "n"])


def eval_stats(a, b, subsets=KID_SUBSETS, subset_size=None, seed=0):
    a, b = FeatureSet.coerce(a), FeatureSet.coerce(b)
    kid_mean, kid_std = kid(a, b, subsets, subset_size, seed)
    return {
        "fid": frechet_distance(a, b),
        "kid_mean": kid_mean,
        "kid_std": kid_std,
        "n_a": a.n,
        "n_b": b.n,
        "d": a.d,
    }
