"""Deterministic synthetic scenes with known geometry.

Cameras sit on an arc facing the origin. Every pixel is unprojected onto the
layout surface to give one Gaussian per pixel, colored by a procedural texture
evaluated in world space, so views agree on the appearance of shared surface.
Ground-truth images are renders of the pooled set.
"""

from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from engine.renderer import rasterize, rgb_to_sh_dc
from models import Camera, GaussianSet, ImageView, Layout, Scene, SceneView, SyntheticSceneSpec
from utils.helpers import get_logger
from utils.scene_io import write_scene

logger = get_logger(__name__)

ARC_RADIUS = 4.0
ARC_HALF_ANGLE = 0.3
FOOTPRINT = 0.7
OPACITY_RANGE = (0.3, 1.0)
STEP_HEIGHT = 0.6
BACKDROP_DEPTH = 1.0


def look_at_origin(position: np.ndarray) -> np.ndarray:
    """Row-major 4x4 world-to-camera matrix for a camera at ``position`` looking at the origin."""
    forward = -position / np.linalg.norm(position)
    right = np.cross(forward, np.array([0.0, -1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])
    w2c = np.eye(4)
    w2c[:3, :3] = R
    w2c[:3, 3] = -R @ position
    return w2c


def arc_cameras(n_views: int, height: int, width: int) -> List[Camera]:
    angles = np.linspace(-ARC_HALF_ANGLE, ARC_HALF_ANGLE, n_views) if n_views > 1 else np.zeros(1)
    cameras = []
    for theta in angles:
        position = ARC_RADIUS * np.array([np.sin(theta), 0.0, -np.cos(theta)])
        cameras.append(
            Camera(
                fx=float(width),
                fy=float(width),
                cx=width / 2.0,
                cy=height / 2.0,
                width=width,
                height=height,
                w2c=look_at_origin(position),
            )
        )
    return cameras


def _plane_hit(origin: np.ndarray, dirs: np.ndarray, axis: int, value: float) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (value - origin[axis]) / dirs[:, axis]
    return np.where(np.isfinite(t) & (t > 0), t, np.inf)


def _sphere_hit(origin: np.ndarray, dirs: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    oc = origin - center
    b = dirs @ oc
    c = oc @ oc - radius * radius
    disc = b * b - c
    root = np.sqrt(np.maximum(disc, 0.0))
    near, far = -b - root, -b + root
    t = np.where(near > 0, near, far)
    return np.where((disc >= 0) & (t > 0), t, np.inf)


def _blobs(rng: np.random.Generator) -> List[Tuple[np.ndarray, float]]:
    count = int(rng.integers(3, 6))
    centers = np.column_stack(
        [rng.uniform(-1.0, 1.0, count), rng.uniform(-1.0, 1.0, count), rng.uniform(-0.6, 0.2, count)]
    )
    radii = rng.uniform(0.25, 0.5, count)
    return [(centers[i], float(radii[i])) for i in range(count)]


def _surface_distance(
    layout: Layout,
    origin: np.ndarray,
    dirs: np.ndarray,
    blobs: List[Tuple[np.ndarray, float]],
) -> np.ndarray:
    """Ray parameter of the first surface hit for every ray."""
    if layout is Layout.PLANE:
        return _plane_hit(origin, dirs, 2, 0.0)

    if layout is Layout.TWO_PLANES:
        t_low = _plane_hit(origin, dirs, 2, 0.0)
        t_high = _plane_hit(origin, dirs, 2, STEP_HEIGHT)
        t_wall = _plane_hit(origin, dirs, 0, 0.0)
        x_low = origin[0] + t_low * dirs[:, 0]
        x_high = origin[0] + t_high * dirs[:, 0]
        z_wall = origin[2] + t_wall * dirs[:, 2]
        t_low = np.where(np.isfinite(t_low) & (x_low < 0), t_low, np.inf)
        t_high_valid = np.where(np.isfinite(t_high) & (x_high >= 0), t_high, np.inf)
        t_wall = np.where(np.isfinite(t_wall) & (z_wall >= 0) & (z_wall <= STEP_HEIGHT), t_wall, np.inf)
        t = np.minimum(np.minimum(t_low, t_high_valid), t_wall)
        return np.where(np.isfinite(t), t, t_high)

    t = _plane_hit(origin, dirs, 2, BACKDROP_DEPTH)
    for center, radius in blobs:
        t = np.minimum(t, _sphere_hit(origin, dirs, center, radius))
    return t


def procedural_texture(points: np.ndarray, phases: np.ndarray) -> np.ndarray:
    """Smooth stripes plus a checker pattern, RGB in [0.1, 0.9]."""
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    checker = (np.floor(2.0 * x) + np.floor(2.0 * y) + np.floor(2.0 * z)) % 2
    r = 0.5 + 0.3 * np.sin(3.0 * x + phases[0]) * np.cos(2.0 * y + phases[1])
    g = 0.5 + 0.3 * np.sin(2.0 * x + 3.0 * z + phases[2])
    b = 0.3 + 0.4 * checker + 0.1 * np.cos(4.0 * y + phases[3])
    return np.clip(np.stack([r, g, b], axis=1), 0.1, 0.9)


def _view_gaussians(
    view_id: int,
    camera: Camera,
    spec: SyntheticSceneSpec,
    blobs: List[Tuple[np.ndarray, float]],
    phases: np.ndarray,
    rng: np.random.Generator,
) -> GaussianSet:
    origin, dirs = camera.pixel_rays()
    t = _surface_distance(spec.layout, origin, dirs, blobs)
    centers = origin + t[:, None] * dirs
    depth = camera.to_camera(centers)[:, 2]
    n = centers.shape[0]
    sigma = FOOTPRINT * depth / camera.fx
    return GaussianSet(
        centers=centers,
        opacities=rng.uniform(*OPACITY_RANGE, n),
        scales=np.repeat(sigma[:, None], 3, axis=1),
        rotations=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        sh=rgb_to_sh_dc(procedural_texture(centers, phases))[:, None, :],
        source_view=view_id,
        source_pixel=np.arange(n),
        pixel_aligned=True,
    )


def generate_synthetic_scene(
    spec: SyntheticSceneSpec,
    out_dir: Optional[Union[str, Path]] = None,
    background: Tuple[float, float, float] = (0.0, 0.0, 0.0),
) -> Scene:
    """Build a synthetic scene and, when ``out_dir`` is given, write it with its manifest.

    Args:
        spec (SyntheticSceneSpec): View count, resolution, seed and layout.
        out_dir: Optional output directory.
        background: Background color of the ground-truth renders.

    Returns:
        Scene: The generated scene; images are renders of the pooled Gaussians.
    """
    rng = np.random.default_rng(spec.seed)
    phases = rng.uniform(0.0, 2.0 * np.pi, 4)
    blobs = _blobs(rng) if spec.layout is Layout.RANDOM_BLOBS else []
    cameras = arc_cameras(spec.n_views, spec.height, spec.width)
    sets = [_view_gaussians(i, cam, spec, blobs, phases, rng) for i, cam in enumerate(cameras)]

    pooled = GaussianSet.concatenate(sets)
    views = []
    for i, (camera, gaussians) in enumerate(zip(cameras, sets)):
        image = rasterize(pooled, camera, background)
        views.append(
            SceneView(
                view_id=i,
                image=ImageView(pixels=np.clip(image.pixels, 0.0, 1.0)),
                camera=camera,
                gaussians=gaussians,
            )
        )
    scene = Scene(views=views)
    logger.info(f"Generated {spec.layout} scene: {spec.n_views} views of {spec.height}x{spec.width} (seed {spec.seed})")
    if out_dir is not None:
        write_scene(scene, out_dir)
    return scene
