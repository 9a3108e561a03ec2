"""Complementary view pairs, projected-area scoring and prior bundles."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import EmptySilhouetteError, InvalidArgumentError
from .geometry import ViewId
from .render import (
    LightRig,
    Material,
    normalize_depth,
    prepare_view,
    rasterize,
    render_view,
    shade,
    silhouette_area,
)

logger = logging.getLogger(__name__)

SELECTION_MODES = ("pair_sum", "single_view")


class PairId(Enum):
    FRONT_REAR = "FrontRear"
    LEFT_RIGHT = "LeftRight"
    TOP_BOTTOM = "TopBottom"

    @property
    def views(self):
        return PAIR_VIEWS[self]

    @classmethod
    def parse(cls, name):
        for pair in cls:
            if pair.value == name:
                return pair
        raise InvalidArgumentError(f"unknown pair '{name}'")


# fixed order doubles as the tie-break order
PAIR_VIEWS = {
    PairId.FRONT_REAR: (ViewId.FRONT, ViewId.REAR),
    PairId.LEFT_RIGHT: (ViewId.LEFT, ViewId.RIGHT),
    PairId.TOP_BOTTOM: (ViewId.TOP, ViewId.BOTTOM),
}
PAIR_ORDER = tuple(PAIR_VIEWS)

# Fixed multi-view alternatives to pair selection.
VIEW_SETS = {
    "FBLR": (ViewId.FRONT, ViewId.REAR, ViewId.LEFT, ViewId.RIGHT),
    "FBTB": (ViewId.FRONT, ViewId.REAR, ViewId.TOP, ViewId.BOTTOM),
    "LRTB": (ViewId.LEFT, ViewId.RIGHT, ViewId.TOP, ViewId.BOTTOM),
    "all6": tuple(ViewId),
}


@dataclass(frozen=True)
class ViewPair:
    pair_id: PairId
    areas: tuple

    @classmethod
    def with_score(cls, pair_id, score):
        """Pair whose two views split `score` evenly"""
        return cls(pair_id, (score / 2.0, score / 2.0))

    @property
    def views(self):
        return self.pair_id.views

    @property
    def score(self):
        return float(self.areas[0] + self.areas[1])

    def to_dict(self):
        return {
            "pair": self.pair_id.value,
            "views": [v.value for v in self.views],
            "areas": [float(a) for a in self.areas],
            "score": self.score,
        }


def score_pairs(mesh, camera, resolution=512, workers=1):
    """Score the three complementary pairs by the summed silhouette areas of their views"""
    views = [view for pair in PAIR_ORDER for view in pair.views]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=min(workers, len(views))) as pool:
            areas = list(pool.map(lambda v: silhouette_area(mesh, v, camera, resolution), views))
    else:
        areas = [silhouette_area(mesh, v, camera, resolution) for v in views]
    by_view = dict(zip(views, areas))
    pairs = [ViewPair(pair, (by_view[pair.views[0]], by_view[pair.views[1]])) for pair in PAIR_ORDER]
    logger.info("pair scores: %s", ", ".join(f"{p.pair_id.value}={p.score:.4f}" for p in pairs))
    return pairs


def select_pair(pairs, mode="pair_sum"):
    """Highest-scoring pair; ties go to the earlier pair in FrontRear, LeftRight, TopBottom order.

    `single_view` picks the pair holding the largest single-view area instead.
    """
    pairs = list(pairs)
    if len(pairs) != 3:
        raise InvalidArgumentError(f"select_pair needs exactly 3 pairs, got {len(pairs)}")
    if mode not in SELECTION_MODES:
        raise InvalidArgumentError(f"unknown selection mode '{mode}', expected one of {SELECTION_MODES}")
    ranked = sorted(pairs, key=lambda p: PAIR_ORDER.index(p.pair_id))
    key = (lambda p: p.score) if mode == "pair_sum" else (lambda p: max(p.areas))
    best = ranked[0]
    for pair in ranked[1:]:
        if key(pair) > key(best):
            best = pair
    return best


def bbox_from_mask(mask):
    """Normalized pixel-edge box (x0, y0, x1, y1) around the covered pixels"""
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if len(rows) == 0:
        raise EmptySilhouetteError("front silhouette is empty, no bounding box")
    height, width = mask.shape
    return (
        cols[0] / width,
        rows[0] / height,
        (cols[-1] + 1) / width,
        (rows[-1] + 1) / height,
    )


@dataclass
class PriorBundle:
    """Training prior for one hand: the selected pair's renders, front depth and bbox"""

    pair: PairId
    rgb_a: np.ndarray
    rgb_b: np.ndarray
    depth_front: np.ndarray
    bbox: tuple
    rgb_front: np.ndarray = None


def emit_pair_renders(mesh, camera, pair, resolution=512, lights=None, material=None, workers=1):
    lights = lights or LightRig()
    material = material or Material.for_hand(mesh.handedness)
    pair_id = pair.pair_id if isinstance(pair, ViewPair) else pair
    view_a, view_b = pair_id.views

    front_mesh, front_camera = prepare_view(mesh, camera, ViewId.FRONT)
    front_geom = rasterize(front_mesh, front_camera, resolution, workers)
    bbox = bbox_from_mask(front_geom.covered)
    front = shade(front_geom, lights.for_view(ViewId.FRONT), material).rgb

    renders = {ViewId.FRONT: front}
    for view in (view_a, view_b):
        if view not in renders:
            renders[view] = render_view(mesh, camera, view, resolution, lights, material, workers).rgb
    return PriorBundle(
        pair=pair_id,
        rgb_a=renders[view_a],
        rgb_b=renders[view_b],
        depth_front=normalize_depth(front_geom.depth),
        bbox=bbox,
        rgb_front=front,
    )


def render_view_set(mesh, camera, name, resolution=512, lights=None, workers=1):
    """Shaded renders of a fixed view set, keyed by view"""
    if name not in VIEW_SETS:
        raise InvalidArgumentError(f"unknown view set '{name}', expected one of {sorted(VIEW_SETS)}")
    return {view: render_view(mesh, camera, view, resolution, lights, workers=workers) for view in VIEW_SETS[name]}
