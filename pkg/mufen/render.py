"""
Deterministic software rasterizer, Lambertian shading with the fixed hand
material and light rig, depth maps and silhouette coverage.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import InvalidArgumentError, UnsupportedProjectionError
from .geometry import Perspective, ViewId, WeakPerspective, transform_to_view

logger = logging.getLogger(__name__)

BACKGROUND = (0, 0, 0)
MIN_RESOLUTION = 8


def as_resolution(resolution):
    """Normalize an int or (W, H) pair and check the minimum size"""
    if isinstance(resolution, (int, np.integer)):
        width = height = int(resolution)
    else:
        width, height = (int(v) for v in resolution)
    if width < MIN_RESOLUTION or height < MIN_RESOLUTION:
        raise InvalidArgumentError(f"resolution must be at least {MIN_RESOLUTION}x{MIN_RESOLUTION}, got {width}x{height}")
    return width, height


def quantize(values):
    """[0, 1] reals to bytes, rounding halves up"""
    return np.floor(np.clip(values, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


@dataclass(frozen=True)
class Material:
    base_color: tuple = (1.0, 1.0, 0.9)
    metallic: float = 0.0
    roughness: float = 1.0
    chroma_offset: tuple = (0.0, 0.0, 0.0)

    # per-handedness chromatic offsets added to the base color
    CHROMA_OFFSETS = {"right": (0.0, 0.0, 0.0), "left": (-0.1, 0.0, 0.1)}

    def __post_init__(self):
        violations = self.validate()
        if violations:
            raise InvalidArgumentError("; ".join(violations))

    def validate(self):
        violations = []
        if self.metallic != 0.0:
            violations.append(f"metallic is fixed at 0.0, got {self.metallic}")
        if self.roughness != 1.0:
            violations.append(f"roughness is fixed at 1.0, got {self.roughness}")
        if len(self.base_color) != 3 or len(self.chroma_offset) != 3:
            violations.append("base_color and chroma_offset need three channels")
        return violations

    @classmethod
    def for_hand(cls, handedness):
        return cls(chroma_offset=cls.CHROMA_OFFSETS[handedness])

    @property
    def albedo(self):
        return np.clip(np.add(self.base_color, self.chroma_offset), 0.0, 1.0)


# Light rig values live in an eye frame with y up and z toward the viewer;
# directional lights store their travel direction.
def _eye_to_camera(v):
    x, y, z = v
    return np.array([x, -y, -z], dtype=np.float64)


@dataclass(frozen=True)
class DirectionalLight:
    direction: tuple
    intensity: tuple = (1.0, 1.0, 1.0)

    def to_light(self):
        """Unit vector from a surface toward the light, in camera space"""
        return -_eye_to_camera(self.direction)


@dataclass(frozen=True)
class PointLight:
    position: tuple
    intensity: tuple = (1.0, 1.0, 1.0)

    def camera_position(self):
        return _eye_to_camera(self.position)


def raymond_lights(elevation=math.radians(45.0), intensity=(1.0, 1.0, 1.0)):
    """Three lights at azimuths 0, 120 and 240 degrees on the viewer side, aimed at the origin"""
    lights = []
    for azimuth in (0.0, 2 * math.pi / 3, 4 * math.pi / 3):
        position = np.array([
            math.cos(elevation) * math.cos(azimuth),
            math.cos(elevation) * math.sin(azimuth),
            math.sin(elevation),
        ])
        lights.append(DirectionalLight(tuple(-position), intensity))
    return lights


@dataclass(frozen=True)
class LightRig:
    """Lights in camera space, so the rig moves with the camera into every view.

    COMPENSATION points down the camera axis (0, 0, -1). After the transform
    into a view that axis is the view axis, so each side view is lit head-on
    by the one light without a per-view direction.
    """

    ambient: tuple = (0.3, 0.3, 0.3)
    directional: tuple = (DirectionalLight((0.0, 0.0, -1.0), (0.4, 0.4, 0.4)),)
    point: tuple = (PointLight((0.0, 0.0, 2.0), (0.5, 0.5, 0.5)),)
    raymond: tuple = field(default_factory=lambda: tuple(raymond_lights()))

    COMPENSATION = DirectionalLight((0.0, 0.0, -1.0), (0.2, 0.2, 0.2))

    def __post_init__(self):
        violations = self.validate()
        if violations:
            raise InvalidArgumentError("; ".join(violations))

    def validate(self):
        violations = []
        if min(self.ambient) < 0:
            violations.append(f"ambient intensity must be >= 0, got {self.ambient}")
        for light in self.directional + self.raymond:
            norm = float(np.linalg.norm(light.direction))
            if abs(norm - 1.0) > 1e-9:
                violations.append(f"light direction {light.direction} is not unit length")
        for light in self.directional + self.point + self.raymond:
            if min(light.intensity) < 0:
                violations.append(f"light intensity must be >= 0, got {light.intensity}")
        return violations

    @classmethod
    def ambient_only(cls, ambient=(0.3, 0.3, 0.3)):
        return cls(ambient=ambient, directional=(), point=(), raymond=())

    def for_view(self, view):
        """Rig for a view, adding the compensation light on side views"""
        if view.is_side:
            return replace(self, directional=self.directional + (self.COMPENSATION,))
        return self


@dataclass
class Framebuffer:
    """Raster output: rgb bytes, camera-space depth and per-pixel surface data"""

    width: int
    height: int
    depth: np.ndarray
    normals: np.ndarray
    positions: np.ndarray
    rgb: np.ndarray

    @classmethod
    def empty(cls, width, height):
        return cls(
            width=width,
            height=height,
            depth=np.full((height, width), np.inf),
            normals=np.zeros((height, width, 3)),
            positions=np.zeros((height, width, 3)),
            rgb=np.zeros((height, width, 3), dtype=np.uint8),
        )

    @property
    def covered(self):
        return np.isfinite(self.depth)

    @property
    def coverage(self):
        return float(self.covered.mean())


def _project(points, camera, width, height):
    """Screen coordinates, depth and a validity mask for camera-space points"""
    proj = camera.projection
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    if isinstance(proj, WeakPerspective):
        f = min(width, height) / 2.0
        sx = width / 2.0 + f * proj.scale * x
        sy = height / 2.0 + f * proj.scale * y
        valid = np.ones(len(points), dtype=bool)
    else:
        f = (height / 2.0) / math.tan(proj.yfov / 2.0)
        valid = z > proj.near
        zz = np.where(valid, z, 1.0)
        sx = width / 2.0 + f * x / zz
        sy = height / 2.0 + f * y / zz
    return np.stack([sx, sy], axis=1), z, valid


def _raster_rows(tris, tri_z, tri_normals, tri_points, perspective, fb, row_start, row_stop):
    width = fb.width
    for k in range(len(tris)):
        (x0, y0), (x1, y1), (x2, y2) = tris[k]
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if area == 0.0:
            continue
        col_lo = max(math.ceil(min(x0, x1, x2) - 0.5), 0)
        col_hi = min(math.floor(max(x0, x1, x2) - 0.5), width - 1)
        row_lo = max(math.ceil(min(y0, y1, y2) - 0.5), row_start)
        row_hi = min(math.floor(max(y0, y1, y2) - 0.5), row_stop - 1)
        if col_lo > col_hi or row_lo > row_hi:
            continue

        px = np.arange(col_lo, col_hi + 1)[None, :] + 0.5
        py = np.arange(row_lo, row_hi + 1)[:, None] + 0.5
        b0 = ((x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)) / area
        b1 = ((x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)) / area
        b2 = ((x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)) / area
        inside = (b0 >= 0) & (b1 >= 0) & (b2 >= 0)
        if not inside.any():
            continue

        z0, z1, z2 = tri_z[k]
        if perspective:
            b0, b1, b2 = b0 / z0, b1 / z1, b2 / z2
            z = 1.0 / (b0 + b1 + b2)
            b0, b1, b2 = b0 * z, b1 * z, b2 * z
        else:
            z = b0 * z0 + b1 * z1 + b2 * z2

        rows = slice(row_lo, row_hi + 1)
        cols = slice(col_lo, col_hi + 1)
        depth = fb.depth[rows, cols]
        update = inside & (z < depth)
        if not update.any():
            continue
        depth[update] = z[update]
        for target, attr in ((fb.normals, tri_normals[k]), (fb.positions, tri_points[k])):
            values = b0[..., None] * attr[0] + b1[..., None] * attr[1] + b2[..., None] * attr[2]
            target[rows, cols][update] = values[update]


def rasterize(mesh, camera, resolution, workers=1):
    """Geometry pass: z-buffered depth plus interpolated normals and positions.

    Pixel (0, 0) is the top-left pixel and pixel centers sit at (i + 0.5, j + 0.5).
    A pixel is covered when its center lies inside or on an edge of a projected
    triangle. Output is bit-identical for any `workers` count.
    """
    width, height = as_resolution(resolution)
    fb = Framebuffer.empty(width, height)
    if mesh.is_empty:
        return fb

    points = mesh.vertices + camera.t
    screen, z, valid = _project(points, camera, width, height)
    faces = mesh.faces[valid[mesh.faces].all(axis=1)]
    if len(faces) == 0:
        logger.warning("mesh lies entirely behind the camera; framebuffer is empty")
        return fb

    normals = mesh.vertex_normals()
    perspective = isinstance(camera.projection, Perspective)
    args = (screen[faces], z[faces], normals[faces], points[faces], perspective, fb)

    workers = max(1, min(int(workers), height))
    if workers == 1:
        _raster_rows(*args, 0, height)
    else:
        bounds = np.linspace(0, height, workers + 1).astype(int)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            jobs = [pool.submit(_raster_rows, *args, lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:])]
            for job in jobs:
                job.result()

    covered = fb.covered
    lengths = np.linalg.norm(fb.normals[covered], axis=1, keepdims=True)
    fb.normals[covered] = fb.normals[covered] / np.where(lengths > 0, lengths, 1.0)
    return fb


def shade(geom, lights, material):
    """Fill rgb with clamp(albedo * (ambient + sum of Lambert terms)), background stays black"""
    covered = geom.covered
    rgb = np.zeros((geom.height, geom.width, 3), dtype=np.uint8)
    if covered.any():
        n = geom.normals[covered]
        incident = np.tile(np.asarray(lights.ambient, dtype=np.float64), (len(n), 1))
        for light in lights.directional + lights.raymond:
            cos = np.maximum(0.0, n @ light.to_light())
            incident += cos[:, None] * np.asarray(light.intensity)
        if lights.point:
            p = geom.positions[covered]
            for light in lights.point:
                to_light = light.camera_position() - p
                to_light /= np.maximum(np.linalg.norm(to_light, axis=1, keepdims=True), 1e-12)
                cos = np.maximum(0.0, np.sum(n * to_light, axis=1))
                incident += cos[:, None] * np.asarray(light.intensity)
        rgb[covered] = quantize(material.albedo * incident)
    return replace(geom, rgb=rgb)


def normalize_depth(depth):
    """Map covered camera depths to [0, 1], nearest 1 and farthest 0, background 0"""
    covered = np.isfinite(depth)
    out = np.zeros(depth.shape, dtype=np.float64)
    if not covered.any():
        return out
    near, far = depth[covered].min(), depth[covered].max()
    if far == near:
        out[covered] = 1.0
    else:
        out[covered] = (far - depth[covered]) / (far - near)
    return out


def render_depth(mesh, camera, resolution, workers=1):
    return normalize_depth(rasterize(mesh, camera, resolution, workers).depth)


def prepare_view(mesh, camera, view):
    """Center the mesh on its centroid, then rotate it and its camera into `view`"""
    return transform_to_view(mesh.centered(), camera, view)


def render_view(mesh, camera, view, resolution, lights=None, material=None, workers=1):
    """Shaded framebuffer of one of the six views"""
    lights = lights or LightRig()
    material = material or Material.for_hand(mesh.handedness)
    view_mesh, view_camera = prepare_view(mesh, camera, view)
    geom = rasterize(view_mesh, view_camera, resolution, workers)
    return shade(geom, lights.for_view(view), material)


def silhouette_area(mesh, view, camera, resolution=512, workers=1):
    """Fraction of pixels the mesh covers in `view` under weak perspective"""
    if not isinstance(camera.projection, WeakPerspective):
        raise UnsupportedProjectionError("silhouette area needs a weak_perspective camera")
    view_mesh, view_camera = prepare_view(mesh, camera, view)
    return rasterize(view_mesh, view_camera, resolution, workers).coverage


def silhouette(mesh, view, camera, resolution=512, workers=1):
    view_mesh, view_camera = prepare_view(mesh, camera, view)
    return rasterize(view_mesh, view_camera, resolution, workers).covered


def write_ppm(path, rgb):
    Image.fromarray(np.ascontiguousarray(rgb, dtype=np.uint8)).save(path, format="PPM")


def write_pgm16(path, depth):
    """Depth in [0, 1] as a 16-bit binary PGM"""
    values = np.floor(np.clip(depth, 0.0, 1.0) * 65535.0 + 0.5).astype(np.int32)
    Image.fromarray(values).save(path, format="PPM")


def _read_netpbm(path, modes, kind):
    try:
        image = Image.open(path)
    except (UnidentifiedImageError, SyntaxError) as exc:
        raise InvalidArgumentError(f"{path} is not a {kind} file") from exc
    with image:
        if image.format != "PPM" or image.mode not in modes:
            raise InvalidArgumentError(f"{path} is not a {kind} file (found {image.format} {image.mode})")
        try:
            image.load()
        except (OSError, SyntaxError, ValueError) as exc:
            raise InvalidArgumentError(f"{path}: corrupt {kind} data ({exc})") from exc
        return np.array(image), image.mode


def read_ppm(path):
    return _read_netpbm(path, ("RGB",), "PPM")[0]


def read_pgm16(path):
    """PGM back to [0, 1] reals; 8-bit files are accepted too"""
    values, mode = _read_netpbm(path, ("I", "I;16", "I;16B", "L"), "PGM")
    return values.astype(np.float64) / (255.0 if mode == "L" else 65535.0)


def write_png(path, rgb):
    Image.fromarray(np.asarray(rgb, dtype=np.uint8)).save(path)
