#!/usr/bin/env python3
"""
Synthetic colon geometry for the Lumen data pipeline
Parametric folded tube, camera trajectories, ray casting, missed-surface
marking and the VC / OC style renderers
"""

import math
from collections import namedtuple
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from lumen_config import ConfigurationError

# Headlight VC tint (red, green, blue) on the [0, 1] scale
VC_TINT = np.array([0.95, 0.78, 0.76])
MISSED_GREEN = np.array([0.0, 1.0, 0.0])

RayHits = namedtuple('RayHits', ['faces', 'distances', 'behind'])
FrameTriple = namedtuple('FrameTriple', ['vc_image', 'oc_image', 'missed_mask'])


@dataclass
class TubeScene:
    length: float = 6.0
    base_radius: float = 1.0
    fold_amplitude: float = 0.5
    fold_period: float = 1.5
    fold_phase_jitter: float = 0.5
    seed: int = 0
    theta_phase: float = field(init=False, default=0.0)

    def __post_init__(self):
        if self.length <= 0 or self.base_radius <= 0 or self.fold_period <= 0:
            raise ConfigurationError("Tube length, radius and fold period must be positive")
        if not 0.0 <= self.fold_amplitude <= 0.8:
            raise ConfigurationError(f"fold_amplitude must lie in [0, 0.8], got {self.fold_amplitude}")
        self.theta_phase = float(np.random.default_rng(self.seed).uniform(0.0, 2.0 * math.pi))

    @classmethod
    def from_seed(cls, seed):
        """Random fold parameters drawn from the scene seed"""
        rng = np.random.default_rng([seed, 1])
        return cls(
            length=6.0,
            base_radius=1.0,
            fold_amplitude=float(rng.uniform(0.35, 0.6)),
            fold_period=float(rng.uniform(1.2, 2.0)),
            fold_phase_jitter=float(rng.uniform(0.2, 1.0)),
            seed=int(seed),
        )

    def jitter(self, theta):
        return self.fold_phase_jitter * np.sin(theta + self.theta_phase)

    def radius(self, z, theta):
        """r(z, theta) = R (1 - A max(0, sin(2 pi z / P + jitter(theta))))"""
        fold = np.maximum(0.0, np.sin(2.0 * math.pi * np.asarray(z) / self.fold_period + self.jitter(theta)))
        return self.base_radius * (1.0 - self.fold_amplitude * fold)

    def contains(self, position, clearance=0.0):
        """True when a point lies strictly inside the tube"""
        x, y, z = position
        if not 0.0 < z < self.length:
            return False
        return math.hypot(x, y) < float(self.radius(z, math.atan2(y, x))) - clearance


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray
    scene: Optional[TubeScene] = None
    visible: Optional[np.ndarray] = None

    @property
    def face_count(self):
        return len(self.faces)

    @property
    def triangles(self):
        return self.vertices[self.faces]

    @property
    def centroids(self):
        return self.triangles.mean(axis=1)

    @property
    def normals(self):
        tris = self.triangles
        n = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)


@dataclass
class CameraPose:
    position: np.ndarray
    forward: np.ndarray
    fov_degrees: float = 90.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        forward = np.asarray(self.forward, dtype=np.float64)
        norm = np.linalg.norm(forward)
        if norm == 0:
            raise ConfigurationError("Camera forward direction is zero")
        self.forward = forward / norm
        if not 0.0 < self.fov_degrees < 180.0:
            raise ConfigurationError(f"Field of view must lie in (0, 180), got {self.fov_degrees}")

    def basis(self):
        """(right, up, forward) unit vectors"""
        up_hint = np.array([0.0, 1.0, 0.0])
        if abs(np.dot(up_hint, self.forward)) > 0.99:
            up_hint = np.array([1.0, 0.0, 0.0])
        right = np.cross(self.forward, up_hint)
        right /= np.linalg.norm(right)
        up = np.cross(right, self.forward)
        return right, up, self.forward

    @property
    def half_extent(self):
        return math.tan(math.radians(self.fov_degrees) / 2.0)


@dataclass
class CameraTrajectory:
    poses: List[CameraPose]

    def __len__(self):
        return len(self.poses)

    def __add__(self, other):
        return CameraTrajectory(list(self.poses) + list(other.poses))

    def validate(self, scene):
        for index, pose in enumerate(self.poses):
            if not scene.contains(pose.position):
                raise ConfigurationError(f"Pose {index} at {pose.position.tolist()} lies outside the tube")
        return self

    @classmethod
    def along_centerline(cls, scene, poses, backward=False, wobble=0.0, fov_degrees=90.0,
                         start=0.1, stop=0.6, seed=0):
        """
        Evenly spaced poses looking down the tube

        Args:
            scene: TubeScene the camera travels through
            poses: number of poses
            backward: look towards z = 0 (withdrawal) instead of z = length
            wobble: lateral offset / tilt fraction, kept strictly inside the tube
            start, stop: travelled span as fractions of the tube length
        """
        if poses < 1:
            raise ConfigurationError("A trajectory needs at least one pose")
        rng = np.random.default_rng([seed, 2])
        clearance = scene.base_radius * (1.0 - scene.fold_amplitude)
        zs = np.linspace(start, stop, poses) * scene.length
        if backward:
            zs = scene.length - zs
        heading = -1.0 if backward else 1.0

        result = []
        for z in zs:
            angle = rng.uniform(0.0, 2.0 * math.pi)
            offset = wobble * 0.3 * clearance * rng.uniform(0.0, 1.0)
            position = np.array([offset * math.cos(angle), offset * math.sin(angle), z])
            tilt = wobble * 0.3 * np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), 0.0])
            forward = np.array([0.0, 0.0, heading]) + tilt
            result.append(CameraPose(position, forward, fov_degrees))
        return cls(result).validate(scene)


def build_mesh(scene: TubeScene, axial_steps, radial_steps):
    """Triangulate the tube wall: 2 * axial * radial faces, normals facing the axis"""
    if axial_steps < 8 or radial_steps < 8:
        raise ConfigurationError(f"Mesh steps must be >= 8, got {axial_steps} x {radial_steps}")

    zs = np.linspace(0.0, scene.length, axial_steps + 1)
    thetas = np.arange(radial_steps) * (2.0 * math.pi / radial_steps)
    zz, tt = np.meshgrid(zs, thetas, indexing='ij')
    rr = scene.radius(zz, tt)
    if np.any(rr <= 0):
        raise ConfigurationError("Tube radius must stay positive")
    vertices = np.stack([rr * np.cos(tt), rr * np.sin(tt), zz], axis=-1).reshape(-1, 3)

    i, j = np.meshgrid(np.arange(axial_steps), np.arange(radial_steps), indexing='ij')
    i, j = i.ravel(), j.ravel()
    a = i * radial_steps + j
    b = (i + 1) * radial_steps + j
    c = i * radial_steps + (j + 1) % radial_steps
    d = (i + 1) * radial_steps + (j + 1) % radial_steps
    faces = np.stack([np.stack([a, b, c], axis=1), np.stack([b, d, c], axis=1)], axis=1).reshape(-1, 3)

    return TriangleMesh(vertices=vertices, faces=faces, scene=scene)


def _intersect(tris, origins, directions, eps=1e-12):
    """Moller-Trumbore for R rays x F triangles; inf where there is no hit"""
    v0 = tris[:, 0]
    edge1 = tris[:, 1] - v0
    edge2 = tris[:, 2] - v0

    with np.errstate(divide='ignore', invalid='ignore'):
        p = np.cross(directions[:, None, :], edge2[None, :, :])
        det = np.einsum('fk,rfk->rf', edge1, p)
        parallel = np.abs(det) < eps
        inv_det = 1.0 / np.where(parallel, 1.0, det)
        tvec = origins[:, None, :] - v0[None, :, :]
        u = np.einsum('rfk,rfk->rf', tvec, p) * inv_det
        q = np.cross(tvec, edge1[None, :, :])
        v = np.einsum('rk,rfk->rf', directions, q) * inv_det
        t = np.einsum('fk,rfk->rf', edge2, q) * inv_det

    hit = ~parallel & (u >= 0.0) & (u <= 1.0) & (v >= 0.0) & (u + v <= 1.0) & (t > 1e-9)
    return np.where(hit, t, np.inf)


def trace_rays(mesh: TriangleMesh, origins, directions, behind_faces=None, chunk=None):
    """
    Nearest hit per ray, ties broken by lowest face id

    Args:
        behind_faces: optional per-face bool; also report rays that cross one
            of these faces beyond their first hit

    Returns:
        RayHits(faces with -1 for misses, distances with inf for misses, behind flags)
    """
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    tris = mesh.triangles
    count = len(directions)
    chunk = chunk or max(1, 1_500_000 // max(1, mesh.face_count))

    faces = np.full(count, -1, dtype=np.int64)
    distances = np.full(count, np.inf)
    behind = np.zeros(count, dtype=bool)

    for start in range(0, count, chunk):
        stop = min(count, start + chunk)
        t = _intersect(tris, np.broadcast_to(origins, directions.shape)[start:stop], directions[start:stop])
        nearest = np.argmin(t, axis=1)
        best = t[np.arange(stop - start), nearest]
        found = np.isfinite(best)
        faces[start:stop] = np.where(found, nearest, -1)
        distances[start:stop] = best
        if behind_faces is not None:
            beyond = np.isfinite(t) & (t > best[:, None] + 1e-9) & behind_faces[None, :]
            behind[start:stop] = found & beyond.any(axis=1)

    return RayHits(faces, distances, behind)


def cast_ray(mesh: TriangleMesh, origin, direction):
    """Nearest (face id, distance) along one ray, or None on a miss"""
    direction = np.asarray(direction, dtype=np.float64)
    direction = direction / np.linalg.norm(direction)
    hits = trace_rays(mesh, np.asarray(origin, dtype=np.float64)[None, :], direction[None, :])
    if hits.faces[0] < 0:
        return None
    return int(hits.faces[0]), float(hits.distances[0])


def camera_rays(pose: CameraPose, width, height, supersample=0):
    """Unit ray directions through pixel centers, plus a supersample x supersample sub-pixel grid"""
    right, up, forward = pose.basis()
    extent = pose.half_extent

    offsets = [(0.5, 0.5)]
    if supersample > 0:
        sub = (np.arange(supersample) + 0.5) / supersample
        offsets += [(float(dx), float(dy)) for dy in sub for dx in sub]

    directions = []
    for dx, dy in offsets:
        xs = (2.0 * (np.arange(width) + dx) / width - 1.0) * extent
        ys = (1.0 - 2.0 * (np.arange(height) + dy) / height) * extent
        gx, gy = np.meshgrid(xs, ys)
        d = forward[None, None, :] + gx[..., None] * right + gy[..., None] * up
        directions.append(d.reshape(-1, 3))
    directions = np.concatenate(directions, axis=0)
    return directions / np.linalg.norm(directions, axis=1, keepdims=True)


def in_frustum(pose: CameraPose, points):
    """Which points fall inside the camera's square viewing frustum"""
    right, up, forward = pose.basis()
    rel = np.asarray(points) - pose.position
    depth = rel @ forward
    extent = pose.half_extent
    return (depth > 0) & (np.abs(rel @ right) <= extent * depth) & (np.abs(rel @ up) <= extent * depth)


def mark_visibility(mesh: TriangleMesh, trajectory: CameraTrajectory, resolution=64, supersample=2,
                    rays='pixels'):
    """
    Per-face visible flags: a face is visible when it is the nearest hit of a cast ray from some pose

    The dataset builder uses pixel rays, so its ground truth counts a face as seen once any
    sub-pixel ray lands on it; partially visible faces are never marked missed. Centroid rays
    match a per-face line-of-sight test instead.

    Args:
        resolution: pixel grid per pose
        supersample: extra sub-pixel rays per axis on top of the pixel centers
        rays: 'pixels', 'centroids' or 'both'; a centroid ray credits only its own face,
            when that face is the nearest hit (direct line of sight)
    """
    if rays not in ('pixels', 'centroids', 'both'):
        raise ConfigurationError(f"Unknown ray set: {rays}")
    visible = np.zeros(mesh.face_count, dtype=bool)
    centroids = mesh.centroids

    for pose in trajectory.poses:
        origin = pose.position[None, :]
        if rays in ('pixels', 'both'):
            hits = trace_rays(mesh, origin, camera_rays(pose, resolution, resolution, supersample))
            visible[hits.faces[hits.faces >= 0]] = True
        if rays in ('centroids', 'both'):
            targets = np.flatnonzero(in_frustum(pose, centroids))
            if len(targets):
                rel = centroids[targets] - pose.position
                hits = trace_rays(mesh, origin, rel / np.linalg.norm(rel, axis=1, keepdims=True))
                visible[targets[hits.faces == targets]] = True

    return visible


def _check_pose(mesh, pose):
    if mesh.scene is not None and not mesh.scene.contains(pose.position):
        raise ConfigurationError(f"Camera at {pose.position.tolist()} lies outside the tube")


def _primary_pass(mesh, pose, size, behind_faces=None):
    directions = camera_rays(pose, size, size)
    hits = trace_rays(mesh, pose.position[None, :], directions, behind_faces)
    return directions, hits


def _to_signed(image01):
    return (np.clip(image01, 0.0, 1.0) * 2.0 - 1.0).astype(np.float32)


def render_vc_frame(mesh: TriangleMesh, pose: CameraPose, flags, size=64, opacity=0.6, with_depth=False):
    """
    Headlight-shaded VC frame with missed faces behind the first hit composited green

    Returns:
        (image in [-1, 1] of shape (size, size, 3), bool missed mask) and the depth map when with_depth
    """
    _check_pose(mesh, pose)
    missed = ~np.asarray(flags, dtype=bool)
    directions, hits = _primary_pass(mesh, pose, size, missed)

    found = hits.faces >= 0
    normals = mesh.normals[np.where(found, hits.faces, 0)]
    cosine = np.abs(np.einsum('rk,rk->r', normals, directions))
    distance = np.where(found, hits.distances, 0.0)
    shade = np.where(found, 0.15 + 0.85 * cosine / (1.0 + 0.05 * distance ** 2), 0.0)
    color = shade[:, None] * VC_TINT[None, :]

    mask = hits.behind
    color[mask] = (1.0 - opacity) * color[mask] + opacity * MISSED_GREEN

    image = _to_signed(color.reshape(size, size, 3))
    mask = mask.reshape(size, size)
    if with_depth:
        return image, mask, hits.distances.reshape(size, size)
    return image, mask


def _value_noise(rng, cells_z, cells_theta, u, v):
    """Bilinear value noise on a grid periodic in theta"""
    grid = rng.uniform(0.0, 1.0, size=(cells_z + 1, cells_theta))
    gz = np.clip(u, 0.0, 1.0) * cells_z
    gt = (v % 1.0) * cells_theta
    z0 = np.minimum(np.floor(gz).astype(int), cells_z - 1)
    t0 = np.floor(gt).astype(int) % cells_theta
    t1 = (t0 + 1) % cells_theta
    fz, ft = gz - z0, gt - np.floor(gt)
    top = grid[z0, t0] * (1 - ft) + grid[z0, t1] * ft
    bottom = grid[z0 + 1, t0] * (1 - ft) + grid[z0 + 1, t1] * ft
    return top * (1 - fz) + bottom * fz


def render_oc_frame(mesh: TriangleMesh, pose: CameraPose, appearance_seed, size=64, specular_strength=0.6,
                    with_depth=False):
    """
    OC-style frame: procedural albedo, point light with falloff, Phong highlights and a seeded tint

    Returns:
        image in [-1, 1] of shape (size, size, 3), and the depth map when with_depth
    """
    _check_pose(mesh, pose)
    directions, hits = _primary_pass(mesh, pose, size)
    rng = np.random.default_rng([appearance_seed, 3])

    # Appearance parameters
    tint = np.array([rng.uniform(0.78, 0.98), rng.uniform(0.38, 0.55), rng.uniform(0.32, 0.48)])
    light_power = rng.uniform(0.9, 1.3)
    shininess = rng.uniform(20.0, 60.0)
    falloff_k = rng.uniform(0.03, 0.08)
    light_offset = rng.uniform(-0.15, 0.15, size=3) * np.array([1.0, 1.0, 0.0])

    found = hits.faces >= 0
    distance = np.where(found, hits.distances, 0.0)
    points = pose.position[None, :] + directions * distance[:, None]

    # Surface coordinates for the texture
    length = mesh.scene.length if mesh.scene is not None else max(1e-9, float(np.ptp(mesh.vertices[:, 2])))
    u = points[:, 2] / length
    v = np.arctan2(points[:, 1], points[:, 0]) / (2.0 * math.pi)
    pattern = 0.7 * _value_noise(rng, 6, 12, u, v) + 0.3 * _value_noise(rng, 24, 48, u, v)
    albedo = tint[None, :] * (0.55 + 0.45 * pattern[:, None])

    # Normals turned towards the viewer
    normals = mesh.normals[np.where(found, hits.faces, 0)]
    normals = normals * np.sign(-np.einsum('rk,rk->r', normals, directions) + 1e-12)[:, None]

    light = pose.position + light_offset
    to_light = light[None, :] - points
    light_distance = np.linalg.norm(to_light, axis=1) + 1e-12
    to_light /= light_distance[:, None]
    falloff = light_power / (1.0 + falloff_k * light_distance ** 2)

    diffuse = np.maximum(0.0, np.einsum('rk,rk->r', normals, to_light))
    reflected = 2.0 * np.einsum('rk,rk->r', normals, to_light)[:, None] * normals - to_light
    view = -directions
    specular = specular_strength * np.maximum(0.0, np.einsum('rk,rk->r', reflected, view)) ** shininess

    color = albedo * (0.12 + diffuse * falloff)[:, None] + (specular * falloff)[:, None]
    color = np.where(found[:, None], color, 0.0)

    image = _to_signed(color.reshape(size, size, 3))
    if with_depth:
        return image, hits.distances.reshape(size, size)
    return image


def render_frame_triple(mesh, pose, flags, appearance_seed, size=64, opacity=0.6, specular_strength=0.6):
    """VC render, OC render and missed mask of one pose"""
    vc_image, mask = render_vc_frame(mesh, pose, flags, size, opacity)
    oc_image = render_oc_frame(mesh, pose, appearance_seed, size, specular_strength)
    return FrameTriple(vc_image, oc_image, mask)


def main():
    """Render one preview triple of a random scene"""
    from frame_io import save_image, save_mask

    scene = TubeScene.from_seed(7)
    mesh = build_mesh(scene, 32, 24)
    trajectory = CameraTrajectory.along_centerline(scene, 12, wobble=0.5, seed=7)
    print(f"🔄 Marking visibility for {mesh.face_count} faces from {len(trajectory)} poses...")
    flags = mark_visibility(mesh, trajectory)
    print(f"✅ {int((~flags).sum())} faces missed")

    triple = render_frame_triple(mesh, trajectory.poses[3], flags, appearance_seed=1)
    save_image('preview_vc.png', triple.vc_image)
    save_image('preview_oc.png', triple.oc_image)
    save_mask('preview_mask.png', triple.missed_mask)
    print("✅ Wrote preview_vc.png, preview_oc.png, preview_mask.png")


if __name__ == "__main__":
    main()
