"""CPU splatting rasterizer and its brute-force reference.

Gaussians are projected with the local perspective Jacobian, sorted front to
back (depth, then index) and alpha-composited per pixel. ``rasterize`` works on
16x16 tiles and uses the usual alpha floor and transmittance cutoff;
``reference_rasterize`` evaluates every Gaussian at every pixel and exists to
check the former.
"""

import time
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from engine.geometry import covariances
from errors import RenderGuardError
from models import Camera, GaussianPrimitive, GaussianSet, ImageView, ProjectedGaussian
from utils.helpers import get_logger

logger = get_logger(__name__)

NEAR_PLANE = 0.01
ALPHA_CAP = 0.99
ALPHA_FLOOR = 1.0 / 255.0
TRANSMITTANCE_CUTOFF = 1e-4
DILATION = 0.3
RADIUS_SIGMAS = 3.0
TILE_SIZE = 16
REFERENCE_GUARD = 10_000
REFERENCE_CHUNK = 4096

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = [
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
]
SH_C3 = [
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.4453057213202769,
    -0.5900435899266435,
]


def evaluate_sh(degree: int, coeffs: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Evaluate real SH up to ``degree`` for coefficients (n, (d+1)^2, 3) along unit dirs (n, 3)."""
    result = SH_C0 * coeffs[:, 0]
    if degree < 1:
        return result

    x, y, z = dirs[:, 0:1], dirs[:, 1:2], dirs[:, 2:3]
    result = (
        result
        - SH_C1 * y * coeffs[:, 1]
        + SH_C1 * z * coeffs[:, 2]
        - SH_C1 * x * coeffs[:, 3]
    )
    if degree < 2:
        return result

    xx, yy, zz = x * x, y * y, z * z
    xy, yz, xz = x * y, y * z, x * z
    result = (
        result
        + SH_C2[0] * xy * coeffs[:, 4]
        + SH_C2[1] * yz * coeffs[:, 5]
        + SH_C2[2] * (2.0 * zz - xx - yy) * coeffs[:, 6]
        + SH_C2[3] * xz * coeffs[:, 7]
        + SH_C2[4] * (xx - yy) * coeffs[:, 8]
    )
    if degree < 3:
        return result

    return (
        result
        + SH_C3[0] * y * (3.0 * xx - yy) * coeffs[:, 9]
        + SH_C3[1] * xy * z * coeffs[:, 10]
        + SH_C3[2] * y * (4.0 * zz - xx - yy) * coeffs[:, 11]
        + SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy) * coeffs[:, 12]
        + SH_C3[4] * x * (4.0 * zz - xx - yy) * coeffs[:, 13]
        + SH_C3[5] * z * (xx - yy) * coeffs[:, 14]
        + SH_C3[6] * x * (xx - 3.0 * yy) * coeffs[:, 15]
    )


def rgb_to_sh_dc(rgb: np.ndarray) -> np.ndarray:
    """Degree-0 coefficient giving ``rgb`` under the 0.5 + SH convention."""
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0


class Splats(NamedTuple):
    """Projected Gaussians sorted front to back."""
    index: np.ndarray
    mean2d: np.ndarray
    cov2d: np.ndarray
    conic: np.ndarray
    depth: np.ndarray
    color: np.ndarray
    opacity: np.ndarray
    radius: np.ndarray


class RenderBuffers(NamedTuple):
    image: ImageView
    transmittance: np.ndarray
    accumulated_alpha: np.ndarray


def project_splats(gaussians: GaussianSet, camera: Camera) -> Splats:
    """EWA-project every Gaussian in front of the near plane."""
    cam = camera.to_camera(gaussians.centers)
    keep = np.flatnonzero(cam[:, 2] > NEAR_PLANE)
    cam = cam[keep]
    x, y, z = cam[:, 0], cam[:, 1], cam[:, 2]

    mean2d = np.stack([camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy], axis=1)
    J = np.zeros((keep.size, 2, 3))
    J[:, 0, 0] = camera.fx / z
    J[:, 0, 2] = -camera.fx * x / (z * z)
    J[:, 1, 1] = camera.fy / z
    J[:, 1, 2] = -camera.fy * y / (z * z)
    T = J @ camera.rotation
    sigma = covariances(gaussians.scales[keep], gaussians.rotations[keep])
    cov2d = T @ sigma @ np.transpose(T, (0, 2, 1)) + DILATION * np.eye(2)

    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    valid = det > 0
    if not np.all(valid):
        logger.debug(f"Skipping {int((~valid).sum())} splats with singular 2D covariance")
    safe_det = np.where(valid, det, 1.0)
    conic = np.stack([c / safe_det, -b / safe_det, a / safe_det], axis=1)
    mid = 0.5 * (a + c)
    radius = RADIUS_SIGMAS * np.sqrt(mid + np.sqrt(np.maximum(mid * mid - det, 0.0)))

    dirs = gaussians.centers[keep] - camera.center
    norm = np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs = np.where(norm > 0, dirs / np.where(norm > 0, norm, 1.0), np.array([0.0, 0.0, 1.0]))
    color = np.clip(0.5 + evaluate_sh(gaussians.sh_degree, gaussians.sh[keep], dirs), 0.0, 1.0)

    order = np.lexsort((keep, z))
    order = order[valid[order]]
    return Splats(
        index=keep[order],
        mean2d=mean2d[order],
        cov2d=cov2d[order],
        conic=conic[order],
        depth=z[order],
        color=color[order],
        opacity=gaussians.opacities[keep][order],
        radius=radius[order],
    )


def project_gaussian(g: GaussianPrimitive, cam: Camera) -> Optional[ProjectedGaussian]:
    splats = project_splats(GaussianSet.from_primitives([g]), cam)
    if splats.index.size == 0:
        return None
    return ProjectedGaussian(
        mean2d=splats.mean2d[0],
        cov2d=splats.cov2d[0],
        depth=float(splats.depth[0]),
        color=splats.color[0],
        opacity=float(splats.opacity[0]),
        radius=float(splats.radius[0]),
    )


def _splat_alpha(splats: Splats, idx: np.ndarray, px: np.ndarray, py: np.ndarray, floor: bool) -> np.ndarray:
    """Alpha of splats ``idx`` at pixel centers (px, py), shape (len(idx), n_pixels)."""
    dx = px[None, :] - splats.mean2d[idx, 0:1]
    dy = py[None, :] - splats.mean2d[idx, 1:2]
    ca, cb, cc = splats.conic[idx, 0:1], splats.conic[idx, 1:2], splats.conic[idx, 2:3]
    power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy
    alpha = np.minimum(ALPHA_CAP, splats.opacity[idx, None] * np.exp(np.minimum(power, 0.0)))
    alpha[power > 0] = 0.0
    if floor:
        alpha[alpha < ALPHA_FLOOR] = 0.0
    return alpha


def _composite(alpha: np.ndarray, colors: np.ndarray, early_stop: bool) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Front-to-back compositing of (G, P) alphas; returns (rgb, transmittance, accumulated alpha)."""
    n_pixels = alpha.shape[1]
    if alpha.shape[0] == 0:
        return np.zeros((n_pixels, 3)), np.ones(n_pixels), np.zeros(n_pixels)
    t_after = np.cumprod(1.0 - alpha, axis=0)
    t_before = np.vstack([np.ones((1, n_pixels)), t_after[:-1]])
    if early_stop:
        stopped = np.logical_or.accumulate(t_after < TRANSMITTANCE_CUTOFF, axis=0)
        weights = np.where(stopped, 0.0, alpha * t_before)
        first = np.argmax(stopped, axis=0)
        cols = np.arange(n_pixels)
        transmittance = np.where(stopped[-1], t_before[first, cols], t_after[-1])
    else:
        weights = alpha * t_before
        transmittance = t_after[-1]
    return weights.T @ colors, transmittance, weights.sum(axis=0)


def _background(height: int, width: int, background: Sequence[float]) -> np.ndarray:
    return np.broadcast_to(np.asarray(background, dtype=np.float64), (height, width, 3))


def rasterize_buffers(gaussians: GaussianSet, cam: Camera, background: Sequence[float] = (0.0, 0.0, 0.0)) -> RenderBuffers:
    """Tile rasterizer returning the image plus final transmittance and accumulated alpha."""
    H, W = cam.height, cam.width
    rgb = np.zeros((H, W, 3))
    transmittance = np.ones((H, W))
    accumulated = np.zeros((H, W))
    splats = project_splats(gaussians, cam)

    if splats.index.size:
        mx, my, r = splats.mean2d[:, 0], splats.mean2d[:, 1], splats.radius
        on_screen = (mx + r >= 0) & (mx - r < W) & (my + r >= 0) & (my - r < H)
        n_tx, n_ty = -(-W // TILE_SIZE), -(-H // TILE_SIZE)
        tx0 = np.clip(np.floor((mx - r) / TILE_SIZE), 0, n_tx - 1)
        tx1 = np.clip(np.floor((mx + r) / TILE_SIZE), 0, n_tx - 1)
        ty0 = np.clip(np.floor((my - r) / TILE_SIZE), 0, n_ty - 1)
        ty1 = np.clip(np.floor((my + r) / TILE_SIZE), 0, n_ty - 1)
        for ty in range(n_ty):
            y0, y1 = ty * TILE_SIZE, min((ty + 1) * TILE_SIZE, H)
            in_row = on_screen & (ty0 <= ty) & (ty <= ty1)
            for tx in range(n_tx):
                idx = np.flatnonzero(in_row & (tx0 <= tx) & (tx <= tx1))
                if idx.size == 0:
                    continue
                x0, x1 = tx * TILE_SIZE, min((tx + 1) * TILE_SIZE, W)
                rows, cols = np.mgrid[y0:y1, x0:x1]
                alpha = _splat_alpha(splats, idx, cols.reshape(-1) + 0.5, rows.reshape(-1) + 0.5, floor=True)
                tile_rgb, tile_t, tile_acc = _composite(alpha, splats.color[idx], early_stop=True)
                rgb[y0:y1, x0:x1] = tile_rgb.reshape(y1 - y0, x1 - x0, 3)
                transmittance[y0:y1, x0:x1] = tile_t.reshape(y1 - y0, x1 - x0)
                accumulated[y0:y1, x0:x1] = tile_acc.reshape(y1 - y0, x1 - x0)

    image = rgb + transmittance[..., None] * _background(H, W, background)
    return RenderBuffers(image=ImageView(pixels=image), transmittance=transmittance, accumulated_alpha=accumulated)


def rasterize(gaussians: GaussianSet, cam: Camera, background: Sequence[float] = (0.0, 0.0, 0.0)) -> ImageView:
    return rasterize_buffers(gaussians, cam, background).image


def reference_rasterize(gaussians: GaussianSet, cam: Camera, background: Sequence[float] = (0.0, 0.0, 0.0)) -> ImageView:
    """Evaluate every Gaussian at every pixel: no tiles, no alpha floor, no early stop."""
    if len(gaussians) > REFERENCE_GUARD:
        raise RenderGuardError(f"reference rasterizer is limited to {REFERENCE_GUARD} primitives, got {len(gaussians)}")
    H, W = cam.height, cam.width
    splats = project_splats(gaussians, cam)
    rows, cols = np.mgrid[0:H, 0:W]
    px, py = cols.reshape(-1) + 0.5, rows.reshape(-1) + 0.5
    rgb = np.zeros((H * W, 3))
    transmittance = np.ones(H * W)
    idx = np.arange(splats.index.size)
    for start in range(0, H * W, REFERENCE_CHUNK):
        chunk = slice(start, start + REFERENCE_CHUNK)
        alpha = _splat_alpha(splats, idx, px[chunk], py[chunk], floor=False)
        rgb[chunk], transmittance[chunk], _ = _composite(alpha, splats.color, early_stop=False)
    image = rgb.reshape(H, W, 3) + transmittance.reshape(H, W, 1) * _background(H, W, background)
    return ImageView(pixels=image)


def render_views(gaussians: GaussianSet, cameras: Sequence[Camera], background: Sequence[float] = (0.0, 0.0, 0.0)) -> List[ImageView]:
    return [rasterize(gaussians, cam, background) for cam in cameras]


def measure_render_fps(
    gaussians: GaussianSet,
    cameras: Sequence[Camera],
    background: Sequence[float] = (0.0, 0.0, 0.0),
) -> Tuple[List[ImageView], float]:
    """Render every camera once and report frames per second."""
    start = time.perf_counter()
    images = render_views(gaussians, cameras, background)
    elapsed = time.perf_counter() - start
    return images, len(images) / max(elapsed, 1e-9)
