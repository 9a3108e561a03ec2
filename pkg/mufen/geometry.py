"""
Hand mesh and camera types, OBJ ingestion, synthetic hands and the six-view
transform rules.

Camera space is x right, y down, z forward. A vertex v seen by a camera with
translation t sits at v + t in camera space.
"""

import json
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np
import trimesh
from stl import mesh as stl_mesh

from .errors import InvalidArgumentError, MeshValidationError, ObjParseError
from .seeding import substream

logger = logging.getLogger(__name__)

MANO_VERTEX_COUNT = 778
KEYPOINT_COUNT = 21
HANDEDNESS = ("right", "left")


def rot_y(theta):
    """Rotation about the Y axis"""
    theta = float(theta)
    if not math.isfinite(theta):
        raise InvalidArgumentError(f"rot_y angle must be finite, got {theta}")
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_x(phi):
    """Rotation about the X axis"""
    phi = float(phi)
    if not math.isfinite(phi):
        raise InvalidArgumentError(f"rot_x angle must be finite, got {phi}")
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


class ViewId(Enum):
    FRONT = "Front"
    REAR = "Rear"
    LEFT = "Left"
    RIGHT = "Right"
    TOP = "Top"
    BOTTOM = "Bottom"

    @property
    def partner(self):
        return _PARTNERS[self]

    @property
    def is_side(self):
        """Views that get a compensation light"""
        return self not in (ViewId.FRONT, ViewId.REAR)

    @classmethod
    def parse(cls, name):
        for view in cls:
            if view.value.lower() == str(name).strip().lower():
                return view
        raise InvalidArgumentError(f"unknown view '{name}', expected one of {[v.value for v in cls]}")


_PARTNERS = {
    ViewId.FRONT: ViewId.REAR,
    ViewId.REAR: ViewId.FRONT,
    ViewId.LEFT: ViewId.RIGHT,
    ViewId.RIGHT: ViewId.LEFT,
    ViewId.TOP: ViewId.BOTTOM,
    ViewId.BOTTOM: ViewId.TOP,
}

# Top maps the hand's +y face toward a camera looking along +z.
_VIEW_ANGLES = {
    ViewId.FRONT: (rot_y, 0.0),
    ViewId.REAR: (rot_y, math.pi),
    ViewId.RIGHT: (rot_y, math.pi / 2),
    ViewId.LEFT: (rot_y, -math.pi / 2),
    ViewId.TOP: (rot_x, -math.pi / 2),
    ViewId.BOTTOM: (rot_x, math.pi / 2),
}

# Quarter-turn rotations snapped to exact signed permutations.
VIEW_MATRICES = {view: np.rint(rot(angle)) for view, (rot, angle) in _VIEW_ANGLES.items()}


@dataclass(frozen=True)
class WeakPerspective:
    scale: float = 5.0

    kind = "weak_perspective"

    def validate(self):
        if not (math.isfinite(self.scale) and self.scale > 0):
            return [f"weak_perspective scale must be > 0, got {self.scale}"]
        return []

    def to_dict(self):
        return {"type": self.kind, "scale": self.scale}


@dataclass(frozen=True)
class Perspective:
    yfov: float = math.pi / 3
    near: float = 1e-6

    kind = "perspective"

    def validate(self):
        if not (math.isfinite(self.yfov) and 0 < self.yfov < math.pi):
            return [f"perspective yfov must lie in (0, pi), got {self.yfov}"]
        return []

    def to_dict(self):
        return {"type": self.kind, "yfov": self.yfov}


@dataclass(frozen=True)
class CameraPose:
    """Camera translation plus projection model"""

    translation: tuple = (0.0, 0.0, 2.0)
    projection: object = field(default_factory=WeakPerspective)

    def __post_init__(self):
        t = tuple(float(c) for c in self.translation)
        object.__setattr__(self, "translation", t)
        violations = self.validate()
        if violations:
            raise InvalidArgumentError("; ".join(violations))

    def validate(self):
        violations = []
        if len(self.translation) != 3:
            violations.append(f"translation needs 3 components, got {len(self.translation)}")
        elif not all(math.isfinite(c) for c in self.translation):
            violations.append(f"translation must be finite, got {self.translation}")
        if not isinstance(self.projection, (WeakPerspective, Perspective)):
            violations.append(f"unsupported projection {self.projection!r}")
        else:
            violations.extend(self.projection.validate())
        return violations

    @property
    def t(self):
        return np.array(self.translation)

    def with_translation(self, tx, ty, tz):
        return replace(self, translation=(tx, ty, tz))

    @classmethod
    def from_dict(cls, data):
        try:
            translation = data["translation"]
            proj = data.get("projection", {"type": "weak_perspective"})
            kind = proj.get("type")
            if kind == "weak_perspective":
                projection = WeakPerspective(float(proj.get("scale", WeakPerspective.scale)))
            elif kind == "perspective":
                projection = Perspective(float(proj["yfov"]))
            else:
                raise InvalidArgumentError(f"unknown projection type '{kind}'")
        except (KeyError, TypeError, AttributeError) as exc:
            raise InvalidArgumentError(f"malformed camera descriptor: {exc}") from exc
        return cls(tuple(translation), projection)

    @classmethod
    def from_json(cls, path):
        with open(path, "r") as f:
            return cls.from_dict(json.load(f))

    def to_dict(self):
        return {"translation": list(self.translation), "projection": self.projection.to_dict()}


@dataclass(frozen=True, eq=False)
class HandMesh:
    """Triangle mesh with handedness and optional 21 keypoints"""

    vertices: np.ndarray
    faces: np.ndarray
    handedness: str = "right"
    keypoints: np.ndarray = None
    mano_strict: bool = False

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "faces", faces)
        if self.keypoints is not None:
            object.__setattr__(self, "keypoints", np.asarray(self.keypoints, dtype=np.float64).reshape(-1, 3))
        violations = self.validate()
        if violations:
            raise MeshValidationError(violations)

    def validate(self):
        """Collect every invariant violation"""
        violations = []
        if self.handedness not in HANDEDNESS:
            violations.append(f"handedness must be one of {HANDEDNESS}, got '{self.handedness}'")
        if not np.all(np.isfinite(self.vertices)):
            violations.append("vertices must be finite")
        if len(self.faces):
            if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
                violations.append(f"face index out of range for {len(self.vertices)} vertices")
            f = self.faces
            degenerate = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            if degenerate.any():
                violations.append(f"{int(degenerate.sum())} degenerate faces (repeated vertex index)")
        if self.keypoints is not None and len(self.keypoints) != KEYPOINT_COUNT:
            violations.append(f"keypoints must number {KEYPOINT_COUNT}, got {len(self.keypoints)}")
        if self.mano_strict:
            if len(self.vertices) != MANO_VERTEX_COUNT:
                violations.append(f"mano_strict mesh needs {MANO_VERTEX_COUNT} vertices, got {len(self.vertices)}")
            if self.keypoints is None:
                violations.append(f"mano_strict mesh needs {KEYPOINT_COUNT} keypoints")
        return violations

    @property
    def is_empty(self):
        return len(self.faces) == 0

    def centroid(self):
        if len(self.vertices) == 0:
            return np.zeros(3)
        return self.vertices.mean(axis=0)

    def centered(self):
        """Copy translated so the vertex centroid sits at the origin"""
        c = self.centroid()
        kp = None if self.keypoints is None else self.keypoints - c
        return replace(self, vertices=self.vertices - c, keypoints=kp)

    def rotated(self, matrix):
        kp = None if self.keypoints is None else self.keypoints @ matrix.T
        return replace(self, vertices=self.vertices @ matrix.T, keypoints=kp)

    def bounding_radius(self):
        if len(self.vertices) == 0:
            return 0.0
        return float(np.linalg.norm(self.vertices, axis=1).max())

    def to_trimesh(self):
        return trimesh.Trimesh(vertices=self.vertices, faces=self.faces, process=False)

    def vertex_normals(self):
        if self.is_empty:
            return np.zeros_like(self.vertices)
        return np.asarray(self.to_trimesh().vertex_normals, dtype=np.float64)


def transform_to_view(mesh, camera, view):
    """Rotate the mesh into `view` and apply that view's camera translation rule.

    Rear mirrors t_x and keeps t_z. Right/Left move t_x into t_z (t_z = -t_x and
    t_z = t_x) and recenter x. Top/Bottom move t_y into t_z (t_z = t_y and
    t_z = -t_y) and recenter y.
    """
    view = ViewId.parse(view) if not isinstance(view, ViewId) else view
    if view is ViewId.FRONT:
        return mesh, camera

    tx, ty, tz = camera.translation
    if view is ViewId.REAR:
        new_t = (-tx, ty, tz)
    elif view is ViewId.RIGHT:
        new_t = (0.0, ty, -tx)
    elif view is ViewId.LEFT:
        new_t = (0.0, ty, tx)
    elif view is ViewId.TOP:
        new_t = (tx, 0.0, ty)
    else:
        new_t = (tx, 0.0, -ty)
    return mesh.rotated(VIEW_MATRICES[view]), camera.with_translation(*new_t)


# OBJ keywords that carry nothing this mesh model uses.
_IGNORED_OBJ_KEYWORDS = {"vn", "vt", "vp", "o", "g", "s", "mtllib", "usemtl", "l"}


def _parse_face_index(token, n_vertices, line_number):
    head = token.split("/")[0]
    try:
        idx = int(head)
    except ValueError:
        raise ObjParseError(line_number, f"face index '{token}' is not an integer")
    if idx == 0:
        raise ObjParseError(line_number, "face index 0 is invalid, OBJ indices are 1-based")
    return idx - 1 if idx > 0 else n_vertices + idx


def load_obj(path, handedness=None):
    """Load the v/f subset of an OBJ file, fan-triangulating polygons"""
    vertices = []
    faces = []
    file_handedness = None
    with open(path, "r") as f:
        for line_number, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            if stripped.startswith("#"):
                tag = stripped[1:].strip().lower()
                if tag.startswith("handedness:"):
                    file_handedness = tag.split(":", 1)[1].strip()
                continue
            toks = stripped.split()
            keyword = toks[0]
            if keyword == "v":
                if len(toks) < 4:
                    raise ObjParseError(line_number, "vertex needs three coordinates")
                try:
                    vertices.append([float(v) for v in toks[1:4]])
                except ValueError:
                    raise ObjParseError(line_number, f"non-numeric vertex '{stripped}'")
            elif keyword == "f":
                if len(toks) < 4:
                    raise ObjParseError(line_number, "face needs at least three vertices")
                poly = [_parse_face_index(tok, len(vertices), line_number) for tok in toks[1:]]
                for i in range(2, len(poly)):
                    faces.append((poly[0], poly[i - 1], poly[i]))
            elif keyword in _IGNORED_OBJ_KEYWORDS:
                continue
            else:
                raise ObjParseError(line_number, f"unsupported keyword '{keyword}'")

    mesh = HandMesh(
        vertices=np.array(vertices, dtype=np.float64).reshape(-1, 3),
        faces=np.array(faces, dtype=np.int64).reshape(-1, 3),
        handedness=handedness or file_handedness or "right",
    )
    logger.info("loaded %s: %d vertices, %d faces", path, len(mesh.vertices), len(mesh.faces))
    return mesh


def save_obj(mesh, path):
    lines = [f"# handedness: {mesh.handedness}"]
    lines.extend(f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist())
    lines.extend(f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist())
    Path(path).write_text("\n".join(lines) + "\n")
    logger.info("saved %s: %d vertices, %d faces", path, len(mesh.vertices), len(mesh.faces))


def save_stl(mesh, path):
    """Write the mesh as a binary STL"""
    solid = stl_mesh.Mesh(np.zeros(len(mesh.faces), dtype=stl_mesh.Mesh.dtype))
    solid.vectors[:] = mesh.vertices[mesh.faces]
    solid.save(str(path))
    logger.info("saved %s: %d facets", path, len(mesh.faces))


class HandSynthesizer:
    """Palm box plus capsule phalanges, posed by five curl values"""

    PALM_EXTENTS = (0.08, 0.09, 0.02)
    FINGER_RADIUS = 0.008
    THUMB_RADIUS = 0.009
    KNUCKLE_Y = -0.045
    WRIST = (0.0, 0.045, 0.0)

    # name -> (knuckle x, length scale relative to the middle finger)
    FINGERS = {
        "index": (0.03, 0.95),
        "middle": (0.01, 1.0),
        "ring": (-0.01, 0.95),
        "pinky": (-0.03, 0.8),
    }
    SEGMENT_LENGTHS = (0.038, 0.024, 0.018)
    # cumulative flexion of the three joints at full curl
    CURL_ANGLES = (math.pi / 2, math.pi, 5 * math.pi / 4)

    THUMB_CMC = (0.025, 0.03, 0.0)
    THUMB_MCP = (0.045, 0.0, 0.0)
    THUMB_LENGTHS = (0.03, 0.025)
    THUMB_OPEN = (math.sqrt(0.5), -math.sqrt(0.5), 0.0)
    THUMB_CLOSED = ((0.0, 0.0, -1.0), (-1.0, 0.0, 0.0))

    JITTER = 0.04
    CAPSULE_COUNT = (8, 8)

    def __init__(self, seed):
        self.seed = int(seed)

    def _capsule(self, start, end, radius):
        start, end = np.asarray(start, float), np.asarray(end, float)
        axis = end - start
        length = float(np.linalg.norm(axis))
        capsule = trimesh.creation.capsule(height=length, radius=radius, count=list(self.CAPSULE_COUNT))
        transform = trimesh.geometry.align_vectors([0.0, 0.0, 1.0], axis / length)
        transform[:3, 3] = (start + end) / 2
        capsule.apply_transform(transform)
        return capsule

    @staticmethod
    def _blend(a, b, w):
        d = (1.0 - w) * np.asarray(a) + w * np.asarray(b)
        return d / np.linalg.norm(d)

    def build(self, curls, handedness="right"):
        rng = substream(self.seed, "synth_hand")
        scales = rng.uniform(1.0 - self.JITTER, 1.0 + self.JITTER, size=5)

        parts = [trimesh.creation.box(extents=self.PALM_EXTENTS)]
        keypoints = [np.array(self.WRIST)]

        # thumb: fixed metacarpal, then two phalanges swinging toward the palm
        curl = curls[0]
        cmc, mcp = np.array(self.THUMB_CMC), np.array(self.THUMB_MCP)
        parts.append(self._capsule(cmc, mcp, self.THUMB_RADIUS))
        joints = [cmc, mcp]
        for length, closed in zip(self.THUMB_LENGTHS, self.THUMB_CLOSED):
            direction = self._blend(self.THUMB_OPEN, closed, curl)
            nxt = joints[-1] + scales[0] * length * direction
            parts.append(self._capsule(joints[-1], nxt, self.THUMB_RADIUS))
            joints.append(nxt)
        keypoints.extend(joints)

        for i, (x, ratio) in enumerate(self.FINGERS.values(), start=1):
            joint = np.array([x, self.KNUCKLE_Y, 0.0])
            joints = [joint]
            for length, full_angle in zip(self.SEGMENT_LENGTHS, self.CURL_ANGLES):
                a = curls[i] * full_angle
                direction = np.array([0.0, -math.cos(a), -math.sin(a)])
                nxt = joints[-1] + scales[i] * ratio * length * direction
                parts.append(self._capsule(joints[-1], nxt, self.FINGER_RADIUS))
                joints.append(nxt)
            keypoints.extend(joints)

        combined = trimesh.util.concatenate(parts)
        vertices = np.asarray(combined.vertices, dtype=np.float64)
        faces = np.asarray(combined.faces, dtype=np.int64)
        keep = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
        faces = faces[keep]
        keypoints = np.array(keypoints)

        center = vertices.mean(axis=0)
        vertices = vertices - center
        keypoints = keypoints - center

        if handedness == "left":
            mirror = np.array([-1.0, 1.0, 1.0])
            vertices = vertices * mirror
            keypoints = keypoints * mirror
            faces = faces[:, ::-1].copy()

        return HandMesh(vertices=vertices, faces=faces, handedness=handedness, keypoints=keypoints)


def synth_hand(seed, pose_params, handedness="right"):
    """Deterministic synthetic hand; pose_params are five curls in [0, 1], thumb first"""
    curls = [float(c) for c in pose_params]
    if len(curls) != 5:
        raise InvalidArgumentError(f"synth_hand needs 5 curl values, got {len(curls)}")
    if not all(0.0 <= c <= 1.0 for c in curls):
        raise InvalidArgumentError(f"curl values must lie in [0, 1], got {curls}")
    if handedness not in HANDEDNESS:
        raise InvalidArgumentError(f"handedness must be one of {HANDEDNESS}, got '{handedness}'")
    return HandSynthesizer(seed).build(curls, handedness)
