"""3D pose jittering: known small shifts in azimuth/elevation/tilt realized
as image warps, plus the horizontal flip rule.

Geometry convention: a sample's Euler angles orient the object directly in
the camera frame, X_cam = R_cam (R(az, el, ct) X_obj) + t_cam, with the
object model centered at its own origin.  Tilt is the leftmost factor, so a
pure tilt shift rotates the camera frame about its optical axis; when the
camera extrinsics fix that axis (identity rotation, translation along z)
the induced warp is the exact in-plane homography K Rz(d_ct) K^-1.  Azimuth
and elevation shifts move points out of plane, so their warps are estimated
with the DLT algorithm on the points closest to the camera, mirroring the
projection pipeline this models.

Angles inside EulerZXZ are radians; jitter offsets and manifest angle
columns are degrees.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from . import so3

EPS_DEPTH = 1e-9
# second-smallest singular value below this (relative) means the DLT system
# lost more rank than its expected one-dimensional null space
DLT_RANK_TOL = 1e-9
DEFAULT_NEAR_FRACTION = 0.2


class BehindCamera(ValueError):
    """A point's camera-frame depth is not positive."""


class DegenerateConfiguration(ValueError):
    """Point correspondences cannot determine a homography."""


@dataclasses.dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera: pixel = K (R x + t) / depth."""

    intrinsics: np.ndarray
    rotation: so3.Rotation = dataclasses.field(default_factory=so3.Rotation.identity)
    translation: np.ndarray = dataclasses.field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        k = np.asarray(self.intrinsics, dtype=float)
        if k.shape != (3, 3):
            raise ValueError("intrinsics must be 3x3")
        if k[1, 0] != 0.0 or k[2, 0] != 0.0 or k[2, 1] != 0.0:
            raise ValueError("intrinsics must be upper-triangular")
        if k[0, 0] <= 0.0 or k[1, 1] <= 0.0 or k[2, 2] <= 0.0:
            raise ValueError("focal entries must be positive")
        t = np.asarray(self.translation, dtype=float)
        if t.shape != (3,):
            raise ValueError("translation must be a 3-vector")
        k.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "intrinsics", k)
        object.__setattr__(self, "translation", t)

    @property
    def principal_point(self) -> np.ndarray:
        return np.array([self.intrinsics[0, 2], self.intrinsics[1, 2]])


@dataclasses.dataclass(frozen=True)
class JitterSpec:
    """Degree offsets per axis and whether to emit mirrored twins."""

    d_az: tuple = (-1.0, 0.0, 1.0)
    d_el: tuple = (-1.0, 0.0, 1.0)
    d_ct: tuple = (-4.0, -2.0, 0.0, 2.0, 4.0)
    flip: bool = True

    def __post_init__(self):
        for name in ("d_az", "d_el", "d_ct"):
            vals = tuple(float(v) for v in getattr(self, name))
            if not vals:
                raise ValueError(f"{name} must list at least one offset")
            if not all(math.isfinite(v) for v in vals):
                raise ValueError(f"{name} offsets must be finite")
            object.__setattr__(self, name, vals)

    @property
    def grid_size(self) -> int:
        n = len(self.d_az) * len(self.d_el) * len(self.d_ct)
        return 2 * n if self.flip else n


@dataclasses.dataclass(frozen=True, eq=False)
class Homography:
    """3x3 projective warp, normalized to |h|_F = 1 with h[2,2] >= 0."""

    h: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        if h.shape != (3, 3):
            raise ValueError("homography must be 3x3")
        n = np.linalg.norm(h)
        if not np.isfinite(n) or n < 1e-12:
            raise DegenerateConfiguration("homography is numerically zero")
        if abs(n - 1.0) > 1e-9:  # idempotent: reloading normalized data is exact
            h = h / n
        s = _sign_convention(h)
        if s != 1.0:
            h = h * s
        if abs(np.linalg.det(h)) < 1e-12:
            raise DegenerateConfiguration("homography is singular")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return apply_homography(self.h, points)


def _sign_convention(h: np.ndarray) -> float:
    if h[2, 2] != 0.0:
        return 1.0 if h[2, 2] > 0.0 else -1.0
    for v in h.reshape(-1):
        if v != 0.0:
            return 1.0 if v > 0.0 else -1.0
    return 1.0


def apply_homography(h: np.ndarray, points: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    ones = np.ones((pts.shape[0], 1))
    mapped = np.hstack([pts, ones]) @ np.asarray(h, dtype=float).T
    return mapped[:, :2] / mapped[:, 2:3]


def project(cam: Camera, points) -> np.ndarray:
    """Pinhole projection of world points; rejects non-positive depths."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    cam_pts = pts @ cam.rotation.matrix.T + cam.translation
    depths = cam_pts[:, 2]
    if np.any(depths <= EPS_DEPTH):
        raise BehindCamera(f"minimum depth {depths.min():.3e} <= {EPS_DEPTH:g}")
    img = cam_pts @ cam.intrinsics.T
    return img[:, :2] / img[:, 2:3]


def _hartley_normalization(pts: np.ndarray) -> np.ndarray:
    """Similarity T moving the centroid to 0 and mean distance to sqrt(2)."""
    centroid = pts.mean(axis=0)
    mean_dist = float(np.mean(np.linalg.norm(pts - centroid, axis=1)))
    if mean_dist < 1e-12:
        raise DegenerateConfiguration("all points coincide")
    s = math.sqrt(2.0) / mean_dist
    return np.array(
        [
            [s, 0.0, -s * centroid[0]],
            [0.0, s, -s * centroid[1]],
            [0.0, 0.0, 1.0],
        ]
    )


def dlt_homography(src, dst) -> Homography:
    """Hartley-normalized direct linear transform from >= 4 correspondences."""
    src = np.atleast_2d(np.asarray(src, dtype=float))
    dst = np.atleast_2d(np.asarray(dst, dtype=float))
    if src.shape != dst.shape or src.shape[0] < 4 or src.shape[1] != 2:
        raise DegenerateConfiguration("need >= 4 matched 2D correspondences")
    t_src = _hartley_normalization(src)
    t_dst = _hartley_normalization(dst)
    ns = apply_homography(t_src, src)
    nd = apply_homography(t_dst, dst)

    n = src.shape[0]
    a = np.zeros((2 * n, 9))
    for i in range(n):
        x, y = ns[i]
        u, v = nd[i]
        a[2 * i] = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]
        a[2 * i + 1] = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]

    _, sv, vt = np.linalg.svd(a)
    if sv[7] < DLT_RANK_TOL * max(sv[0], 1.0):
        raise DegenerateConfiguration("correspondences are rank-deficient (collinear points?)")
    h_norm = vt[-1].reshape(3, 3)
    return Homography(np.linalg.inv(t_dst) @ h_norm @ t_src)


def flip_homography(cx: float) -> np.ndarray:
    """Mirror about the vertical line x = cx (unnormalized)."""
    return np.array([[-1.0, 0.0, 2.0 * cx], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


@dataclasses.dataclass(frozen=True, eq=False)
class JitteredSample:
    homography: Homography
    euler: so3.EulerZXZ
    d_az: float
    d_el: float
    d_ct: float
    flipped: bool


def _tilt_is_in_plane(cam: Camera) -> bool:
    z = np.array([0.0, 0.0, 1.0])
    axis_fixed = np.allclose(cam.rotation.matrix @ z, z, atol=1e-12)
    on_axis = abs(cam.translation[0]) < 1e-12 and abs(cam.translation[1]) < 1e-12
    return axis_fixed and on_axis


def _near_subset(cam: Camera, points_world: np.ndarray, fraction: float) -> np.ndarray:
    depths = points_world @ cam.rotation.matrix.T[:, 2] + cam.translation[2]
    count = max(4, int(round(fraction * points_world.shape[0])))
    order = np.argsort(depths, kind="stable")
    return order[:count]


def jitter_sample(
    sample,
    spec: JitterSpec,
    near_fraction: float = DEFAULT_NEAR_FRACTION,
) -> list:
    """Expand one (points, camera, euler) sample over the jitter grid.

    Grid order: d_az outer, d_el middle, d_ct inner; when spec.flip each
    cell emits its mirrored twin immediately after the original.  The
    mirrored target follows the stated rule (az, el, ct) -> (-az, el, -ct)
    applied to the jittered angles, and its warp composes the mirror onto
    the cell's warp.
    """
    points, cam, euler = sample
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if not 0.0 < near_fraction <= 1.0:
        raise ValueError("near_fraction must be in (0, 1]")

    pose = so3.euler_to_rotation(euler)
    subset_idx = _near_subset(cam, points @ pose.matrix.T, near_fraction)
    subset = points[subset_idx]
    src = project(cam, subset @ pose.matrix.T)
    k = cam.intrinsics
    k_inv = np.linalg.inv(k)
    exact_tilt = _tilt_is_in_plane(cam)
    cx = float(cam.principal_point[0])

    out = []
    for d_az in spec.d_az:
        for d_el in spec.d_el:
            for d_ct in spec.d_ct:
                jittered = so3.EulerZXZ(
                    euler.azimuth + math.radians(d_az),
                    euler.elevation + math.radians(d_el),
                    euler.tilt + math.radians(d_ct),
                )
                if d_az == 0.0 and d_el == 0.0 and exact_tilt:
                    warp = Homography(k @ so3.rot_z(math.radians(d_ct)) @ k_inv)
                else:
                    new_pose = so3.euler_to_rotation(jittered)
                    dst = project(cam, subset @ new_pose.matrix.T)
                    warp = dlt_homography(src, dst)
                out.append(JitteredSample(warp, jittered, d_az, d_el, d_ct, False))
                if spec.flip:
                    mirrored = so3.EulerZXZ(
                        -jittered.azimuth, jittered.elevation, -jittered.tilt
                    )
                    flipped = Homography(flip_homography(cx) @ warp.h)
                    out.append(JitteredSample(flipped, mirrored, d_az, d_el, d_ct, True))
    return out


# ---------------------------------------------------------------------------
# synthetic point clouds (desk-scale stand-ins for CAD models)


def cuboid_points(half_extents=(0.5, 0.4, 0.3), per_edge: int = 6) -> np.ndarray:
    """Deterministic grid over the surface of an axis-aligned cuboid."""
    hx, hy, hz = (float(v) for v in half_extents)
    if min(hx, hy, hz) <= 0.0 or per_edge < 2:
        raise ValueError("half extents must be positive and per_edge >= 2")
    lin = np.linspace(-1.0, 1.0, per_edge)
    seen = set()
    pts = []
    for u in lin:
        for v in lin:
            for p in (
                (hx * u, hy * v, hz),
                (hx * u, hy * v, -hz),
                (hx * u, hy, hz * v),
                (hx * u, -hy, hz * v),
                (hx, hy * u, hz * v),
                (-hx, hy * u, hz * v),
            ):
                key = (round(p[0], 12), round(p[1], 12), round(p[2], 12))
                if key not in seen:
                    seen.add(key)
                    pts.append(p)
    return np.array(pts)


def sphere_points(n: int = 200, radius: float = 0.5) -> np.ndarray:
    """Deterministic Fibonacci-lattice sampling of a sphere surface."""
    if n < 4 or radius <= 0.0:
        raise ValueError("need n >= 4 points and positive radius")
    i = np.arange(n, dtype=float)
    golden = (1.0 + math.sqrt(5.0)) / 2.0
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = 2.0 * math.pi * i / golden
    return radius * np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def default_camera(focal: float = 800.0, center=(320.0, 240.0), depth: float = 4.0) -> Camera:
    intr = np.array([[focal, 0.0, center[0]], [0.0, focal, center[1]], [0.0, 0.0, 1.0]])
    return Camera(intrinsics=intr, translation=np.array([0.0, 0.0, depth]))


# ---------------------------------------------------------------------------
# manifest IO

MANIFEST_HEADER = "# sample_id, daz, del, dct, flipped, h00, h01, h02, h10, h11, h12, h20, h21, h22, az, el, ct"


def write_manifest(path, entries) -> None:
    """Line-oriented manifest; angle columns in degrees, floats via repr."""
    lines = [MANIFEST_HEADER]
    for sample_id, item in entries:
        h = item.homography.h.reshape(-1)
        cols = [str(sample_id)]
        cols += [repr(float(v)) for v in (item.d_az, item.d_el, item.d_ct)]
        cols.append("1" if item.flipped else "0")
        cols += [repr(float(v)) for v in h]
        cols += [
            repr(math.degrees(item.euler.azimuth)),
            repr(math.degrees(item.euler.elevation)),
            repr(math.degrees(item.euler.tilt)),
        ]
        lines.append(", ".join(cols))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path) -> list:
    """Inverse of write_manifest: list of (sample_id, JitteredSample)."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            cols = [c.strip() for c in line.split(",")]
            if len(cols) != 17:
                raise ValueError(f"malformed manifest line: {line!r}")
            sample_id = cols[0]
            d_az, d_el, d_ct = (float(c) for c in cols[1:4])
            flipped = cols[4] == "1"
            h = np.array([float(c) for c in cols[5:14]]).reshape(3, 3)
            az, el, ct = (math.radians(float(c)) for c in cols[14:17])
            item = JitteredSample(
                Homography(h), so3.EulerZXZ(az, el, ct), d_az, d_el, d_ct, flipped
            )
            out.append((sample_id, item))
    return out
