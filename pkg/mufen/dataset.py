"""Synthetic prior datasets: per-sample hands, prior bundles, JSONL manifests."""

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoders import GESTURES, text_encoder_stub
from .errors import InvalidArgumentError
from .fusion import MufenInputs
from .geometry import CameraPose, save_obj, save_stl, synth_hand
from .render import read_pgm16, read_ppm, write_pgm16, write_png, write_ppm
from .seeding import substream
from .viewselect import emit_pair_renders, render_view_set, score_pairs, select_pair

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"


@dataclass(frozen=True)
class SampleSpec:
    sample_id: int
    seed: int
    curls: tuple
    handedness: str
    label: str

    @classmethod
    def draw(cls, seed, sample_id, left_fraction=0.5):
        rng = substream(seed, "dataset", sample_id)
        curls = tuple(float(c) for c in rng.uniform(0.0, 1.0, size=5))
        handedness = "left" if rng.random() < left_fraction else "right"
        label = GESTURES[int(rng.integers(len(GESTURES)))]
        hand_seed = int(rng.integers(2**31))
        return cls(sample_id, hand_seed, curls, handedness, label)


@dataclass
class Sample:
    spec: SampleSpec
    mesh: object
    pairs: list
    selected: object
    bundle: object


def synthesize_sample(spec, camera=None, resolution=512, selection_resolution=None, mode="pair_sum"):
    """Hand mesh, pair scores, selected pair and its prior bundle for one spec"""
    camera = camera or CameraPose()
    mesh = synth_hand(spec.seed, spec.curls, spec.handedness)
    pairs = score_pairs(mesh, camera, selection_resolution or resolution)
    selected = select_pair(pairs, mode)
    bundle = emit_pair_renders(mesh, camera, selected, resolution)
    return Sample(spec, mesh, pairs, selected, bundle)


def manifest_record(sample_id, pairs, selected, bbox, files, label=None, handedness=None):
    """Manifest line with a fixed key order"""
    record = {"sample_id": sample_id}
    if label is not None:
        record["label"] = label
    if handedness is not None:
        record["handedness"] = handedness
    record["pair"] = selected.pair_id.value
    record["scores"] = [p.score for p in pairs]
    record["bbox"] = [float(v) for v in bbox]
    record["files"] = dict(files)
    return record


def write_bundle(bundle, out_dir, stem, png=False):
    """Write the renders and depth map of a prior bundle; returns {role: filename}"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for role, image in (("rgb_a", bundle.rgb_a), ("rgb_b", bundle.rgb_b), ("rgb_front", bundle.rgb_front)):
        name = f"{stem}_{role}.ppm"
        write_ppm(out_dir / name, image)
        files[role] = name
        if png:
            write_png(out_dir / f"{stem}_{role}.png", image)
    name = f"{stem}_depth.pgm"
    write_pgm16(out_dir / name, bundle.depth_front)
    files["depth"] = name
    return files


def write_manifest(path, records):
    with open(path, "w") as f:
        for record in records:
            f.write(json.dumps(record) + "\n")


def read_manifest(path):
    with open(path, "r") as f:
        return [json.loads(line) for line in f if line.strip()]


def synth_dataset(n, seed, out_dir, camera=None, resolution=512, selection_resolution=None,
                  mode="pair_sum", left_fraction=0.5, png=False, stl=False):
    """Synthesize `n` hands with prior bundles and a manifest under `out_dir`"""
    if n < 1:
        raise InvalidArgumentError(f"dataset size must be positive, got {n}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for sample_id in range(n):
        spec = SampleSpec.draw(seed, sample_id, left_fraction)
        sample = synthesize_sample(spec, camera, resolution, selection_resolution, mode)
        stem = f"sample_{sample_id:05d}"
        files = write_bundle(sample.bundle, out_dir, stem, png=png)
        files["mesh"] = f"{stem}.obj"
        save_obj(sample.mesh, out_dir / files["mesh"])
        if stl:
            files["stl"] = f"{stem}.stl"
            save_stl(sample.mesh, out_dir / files["stl"])
        records.append(manifest_record(
            sample_id, sample.pairs, sample.selected, sample.bundle.bbox, files,
            label=spec.label, handedness=spec.handedness,
        ))
        logger.debug("sample %d: %s %s -> %s", sample_id, spec.label, spec.handedness, sample.selected.pair_id.value)
    write_manifest(out_dir / MANIFEST_NAME, records)
    logger.info("wrote %d samples to %s", n, out_dir)
    return records


def _chw(image):
    """HxWx3 bytes to 3xHxW reals in [0, 1]"""
    return np.transpose(np.asarray(image, dtype=np.float32) / 255.0, (2, 0, 1))


class ToyDataset:
    """In-memory prior bundles for desk-scale training"""

    def __init__(self, rgb_a, rgb_b, rgb_front, depth, bbox, labels, views=None):
        self.rgb_a = np.asarray(rgb_a, dtype=np.float32)
        self.rgb_b = np.asarray(rgb_b, dtype=np.float32)
        self.rgb_front = np.asarray(rgb_front, dtype=np.float32)
        self.depth = np.asarray(depth, dtype=np.float32)
        self.bbox = np.asarray(bbox, dtype=np.float32)
        self.labels = list(labels)
        n = len(self.labels)
        for name in ("rgb_a", "rgb_b", "rgb_front", "depth", "bbox"):
            if len(getattr(self, name)) != n:
                raise InvalidArgumentError(f"dataset field {name} has {len(getattr(self, name))} rows, expected {n}")
        # (n, V, 3, H, W) renders of a fixed view set, when one was rendered
        self.views = None if views is None else np.asarray(views, dtype=np.float32)
        if self.views is not None and (self.views.ndim != 5 or len(self.views) != n):
            raise InvalidArgumentError(f"dataset views must have shape (n, V, 3, H, W) with n={n}, got {self.views.shape}")

    def __len__(self):
        return len(self.labels)

    @property
    def resolution(self):
        return self.rgb_front.shape[-1]

    @classmethod
    def from_samples(cls, samples, views=None):
        return cls(
            rgb_a=[_chw(s.bundle.rgb_a) for s in samples],
            rgb_b=[_chw(s.bundle.rgb_b) for s in samples],
            rgb_front=[_chw(s.bundle.rgb_front) for s in samples],
            depth=[s.bundle.depth_front[None] for s in samples],
            bbox=[s.bundle.bbox for s in samples],
            labels=[s.spec.label for s in samples],
            views=views,
        )

    @classmethod
    def synthesize(cls, n, seed, resolution=64, camera=None, selection_resolution=None, left_fraction=0.5,
                   mode="pair_sum", view_set=None):
        """Synthesized samples; `view_set` also renders every hand from that fixed set of views"""
        camera = camera or CameraPose()
        samples = [
            synthesize_sample(SampleSpec.draw(seed, i, left_fraction), camera, resolution, selection_resolution, mode)
            for i in range(n)
        ]
        views = None
        if view_set:
            views = [
                [_chw(fb.rgb) for fb in render_view_set(s.mesh, camera, view_set, resolution).values()]
                for s in samples
            ]
        logger.info("synthesized %d training samples at %dx%d", n, resolution, resolution)
        return cls.from_samples(samples, views)

    @classmethod
    def from_manifest(cls, path):
        path = Path(path)
        root = path.parent
        records = read_manifest(path)
        if not records:
            raise InvalidArgumentError(f"{path} lists no samples")
        return cls(
            rgb_a=[_chw(read_ppm(root / r["files"]["rgb_a"])) for r in records],
            rgb_b=[_chw(read_ppm(root / r["files"]["rgb_b"])) for r in records],
            rgb_front=[_chw(read_ppm(root / r["files"]["rgb_front"])) for r in records],
            depth=[read_pgm16(root / r["files"]["depth"])[None] for r in records],
            bbox=[r["bbox"] for r in records],
            labels=[r.get("label", "palm") for r in records],
        )

    def text_features(self, indices, dim=768, seed=0):
        return np.stack([text_encoder_stub(self.labels[i], dim, seed) for i in indices]).astype(np.float32)

    def inputs(self, indices, text_dim=768, text_seed=0):
        """MufenInputs for the samples at `indices`"""
        indices = np.asarray(indices)
        return MufenInputs(
            rgb_a=self.rgb_a[indices],
            rgb_b=self.rgb_b[indices],
            depth=self.depth[indices],
            text=self.text_features(indices, text_dim, text_seed),
            bbox=self.bbox[indices],
            views=None if self.views is None else [self.views[indices, v] for v in range(self.views.shape[1])],
        )
