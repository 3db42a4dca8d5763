"""Importance mask generation for pixel-aligned Gaussian sets.

The pipeline for one view is: photometric and geometric variation maps,
quantile binarization, high/low partition, single-step K-means merging of the
low-variation Gaussians around patch key Gaussians, and projection of the
retained centers back onto the image plane.
"""

from typing import Tuple

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from engine.geometry import covariances, factors_from_covariance
from errors import QuantileError, ShapeMismatchError
from models import (
    Camera,
    GaussianSet,
    ImageView,
    ImportanceConfig,
    ImportanceSelection,
    QuantileMode,
    SceneView,
    VariationMaps,
)
from utils.helpers import get_logger

logger = get_logger(__name__)

CENTRAL_DIFFERENCE = np.array([-0.5, 0.0, 0.5])
NORMAL_SENTINEL = np.array([0.0, 0.0, 1.0])
MIN_DEPTH = 1e-6
KEY_CANDIDATES = 8


def _gradients(field: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Central differences along x (columns) and y (rows), replicate boundary."""
    gx = ndimage.correlate1d(field, CENTRAL_DIFFERENCE, axis=1, mode="nearest")
    gy = ndimage.correlate1d(field, CENTRAL_DIFFERENCE, axis=0, mode="nearest")
    return gx, gy


def _gradient_magnitude(field: np.ndarray) -> np.ndarray:
    gx, gy = _gradients(np.asarray(field, dtype=np.float64))
    return np.sqrt(np.sum(gx * gx, axis=2) + np.sum(gy * gy, axis=2))


def photometric_variation(image: ImageView) -> np.ndarray:
    """Per-pixel image gradient magnitude over the three channels."""
    return _gradient_magnitude(image.pixels)


def _require_pixel_aligned(gaussians: GaussianSet, camera: Camera) -> None:
    expected = camera.height * camera.width
    if not gaussians.pixel_aligned or len(gaussians) != expected:
        raise ShapeMismatchError(
            f"expected a pixel-aligned set of {expected} primitives, got {len(gaussians)} "
            f"(pixel_aligned={gaussians.pixel_aligned})"
        )


def point_map_normals(gaussians: GaussianSet, camera: Camera) -> np.ndarray:
    """Normals of the camera-frame point map formed by the per-pixel centers."""
    _require_pixel_aligned(gaussians, camera)
    points = camera.to_camera(gaussians.centers).reshape(camera.height, camera.width, 3)
    dx, dy = _gradients(points)
    normals = np.cross(dx, dy)
    norm = np.linalg.norm(normals, axis=2, keepdims=True)
    degenerate = norm[..., 0] <= 1e-12
    normals = normals / np.where(norm > 1e-12, norm, 1.0)
    normals[degenerate] = NORMAL_SENTINEL
    return normals


def geometric_variation(normals: np.ndarray) -> np.ndarray:
    return _gradient_magnitude(normals)


def combined_binary_variation(
    photo: np.ndarray,
    geo: np.ndarray,
    rho: float,
    mode: QuantileMode = QuantileMode.LITERAL,
) -> Tuple[np.ndarray, float, np.ndarray]:
    """Average the two maps and binarize them against a rho-dependent quantile.

    ``literal`` thresholds at Q_rho, ``complement`` at Q_(1-rho); a pixel is high-variation
    when its combined value strictly exceeds the threshold.
    """
    photo = np.asarray(photo, dtype=np.float64)
    geo = np.asarray(geo, dtype=np.float64)
    if photo.shape != geo.shape:
        raise ShapeMismatchError(f"variation maps differ in shape: {photo.shape} vs {geo.shape}")
    if not 0.0 < rho <= 1.0:
        raise QuantileError(f"rho must lie in (0, 1], got {rho}")
    combined = (photo + geo) / 2.0
    q = rho if QuantileMode(mode) is QuantileMode.LITERAL else 1.0 - rho
    threshold = float(np.quantile(combined, q, method="linear"))
    binary = (combined > threshold).astype(np.uint8)
    return combined, threshold, binary


def partition_by_variation(gaussians: GaussianSet, binary: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Split pixel indices into high-variation (binary = 1) and low-variation sets."""
    flat = np.asarray(binary).reshape(-1)
    if flat.shape[0] != len(gaussians):
        raise ShapeMismatchError(f"binary map has {flat.shape[0]} pixels but the set holds {len(gaussians)} primitives")
    return np.flatnonzero(flat == 1), np.flatnonzero(flat != 1)


def assign_to_keys(low_set: GaussianSet, image_width: int, patch: int = 4) -> Tuple[np.ndarray, np.ndarray]:
    """Find key Gaussians and assign every low-set member to its nearest key.

    Returns (key positions within ``low_set``, per-member cluster labels). Labels index
    into the key positions; ties go to the lowest key. With no keys every member is
    its own cluster.
    """
    n = len(low_set)
    if low_set.source_pixel is None:
        raise ShapeMismatchError("low set must carry source pixel indices")
    if patch < 1:
        raise ShapeMismatchError(f"patch size must be at least 1, got {patch}")
    pixels = low_set.source_pixel
    is_key = ((pixels // image_width) % patch == 0) & ((pixels % image_width) % patch == 0)
    key_pos = np.flatnonzero(is_key)
    if key_pos.size == 0:
        return key_pos, np.arange(n)

    key_centers = low_set.centers[key_pos]
    k = min(KEY_CANDIDATES, key_pos.size)
    _, candidates = cKDTree(key_centers).query(low_set.centers, k=k)
    candidates = np.asarray(candidates).reshape(n, k)
    # exact squared distances decide, so near-ties resolve to the lowest key index
    diff = low_set.centers[:, None, :] - key_centers[candidates]
    d2 = np.sum(diff * diff, axis=2)
    tied = d2 == d2.min(axis=1, keepdims=True)
    labels = np.where(tied, candidates, key_pos.size).min(axis=1)
    labels[key_pos] = np.arange(key_pos.size)
    return key_pos, labels


def merge_clusters(members: GaussianSet, labels: np.ndarray, n_clusters: int) -> GaussianSet:
    """Opacity-weighted moment matching of each cluster into one Gaussian.

    Centers, covariances and SH are weighted by opacity; the merged opacity is the
    cluster maximum. Singleton clusters are copied unchanged.
    """
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels, minlength=n_clusters)
    weights = members.opacities.copy()
    weight_sum = np.bincount(labels, weights=weights, minlength=n_clusters)
    # all-transparent clusters fall back to uniform weights
    zero = weight_sum[labels] <= 0
    weights[zero] = 1.0
    norm = np.bincount(labels, weights=weights, minlength=n_clusters)

    mu = np.stack(
        [np.bincount(labels, weights=weights * members.centers[:, a], minlength=n_clusters) for a in range(3)],
        axis=1,
    ) / norm[:, None]
    delta = members.centers - mu[labels]
    second = covariances(members.scales, members.rotations) + delta[:, :, None] * delta[:, None, :]
    sigma = np.zeros((n_clusters, 3, 3))
    np.add.at(sigma, labels, weights[:, None, None] * second)
    sigma /= norm[:, None, None]
    sh = np.zeros((n_clusters,) + members.sh.shape[1:])
    np.add.at(sh, labels, weights[:, None, None] * members.sh)
    sh /= norm[:, None, None]
    alpha = np.zeros(n_clusters)
    np.maximum.at(alpha, labels, members.opacities)

    scales = np.zeros((n_clusters, 3))
    rotations = np.zeros((n_clusters, 4))
    for c in range(n_clusters):
        scales[c], rotations[c] = factors_from_covariance(sigma[c])

    singletons = np.flatnonzero(counts == 1)
    if singletons.size:
        # label -> member position for the singleton clusters
        owner = np.zeros(n_clusters, dtype=np.int64)
        owner[labels] = np.arange(len(members))
        src = owner[singletons]
        mu[singletons] = members.centers[src]
        scales[singletons] = members.scales[src]
        rotations[singletons] = members.rotations[src]
        sh[singletons] = members.sh[src]
        alpha[singletons] = members.opacities[src]

    return GaussianSet(
        centers=mu,
        opacities=alpha,
        scales=scales,
        rotations=rotations,
        sh=sh,
        source_view=members.source_view,
    )


def single_step_kmeans_merge(
    low_set: GaussianSet,
    image_width: int,
    patch: int = 4,
) -> Tuple[np.ndarray, GaussianSet]:
    """Cluster the low-variation set around patch key Gaussians and merge each cluster.

    Returns the key pixel indices and the merged set (one Gaussian per key, in key
    order). When no key exists the merge is the identity on ``low_set``.
    """
    if len(low_set) == 0:
        return np.zeros(0, dtype=np.int64), GaussianSet.empty(low_set.sh_degree)
    key_pos, labels = assign_to_keys(low_set, image_width, patch)
    if key_pos.size == 0:
        logger.debug("No key Gaussians in the low-variation set; merge is the identity")
        return key_pos, low_set.subset(np.arange(len(low_set)))
    merged = merge_clusters(low_set, labels, key_pos.size)
    key_pixels = low_set.source_pixel[key_pos]
    return key_pixels, merged.model_copy(update={"source_pixel": key_pixels})


def project_mask(centers: np.ndarray, camera: Camera) -> np.ndarray:
    """Binary H x W map of pixels receiving at least one projected center."""
    mask = np.zeros((camera.height, camera.width), dtype=np.uint8)
    if len(centers) == 0:
        return mask
    uv, depth = camera.project(centers)
    valid = depth > MIN_DEPTH
    # pixel (r, c) is centered at (c + 0.5, r + 0.5), so floor(uv) is the nearest pixel
    cols = np.floor(uv[valid, 0])
    rows = np.floor(uv[valid, 1])
    inside = (cols >= 0) & (cols < camera.width) & (rows >= 0) & (rows < camera.height)
    mask[rows[inside].astype(np.int64), cols[inside].astype(np.int64)] = 1
    return mask


def compute_variation_maps(view: SceneView, rho: float, mode: QuantileMode = QuantileMode.LITERAL) -> VariationMaps:
    if (view.image.height, view.image.width) != (view.camera.height, view.camera.width):
        raise ShapeMismatchError(f"view {view.view_id}: image and camera sizes differ")
    photo = photometric_variation(view.image)
    normals = point_map_normals(view.gaussians, view.camera)
    geo = geometric_variation(normals)
    combined, threshold, binary = combined_binary_variation(photo, geo, rho, mode)
    return VariationMaps(
        photometric=photo,
        normals=normals,
        geometric=geo,
        combined=combined,
        threshold=threshold,
        binary=binary,
        rho=rho,
        quantile_mode=mode,
    )


def build_importance_selection(
    view: SceneView,
    rho: float,
    config: ImportanceConfig = ImportanceConfig(),
) -> ImportanceSelection:
    """Run the full mask pipeline for one view."""
    maps = compute_variation_maps(view, rho, config.quantile_mode)
    high, low = partition_by_variation(view.gaussians, maps.binary)
    low_set = view.gaussians.subset(low)
    key_indices, merged = single_step_kmeans_merge(low_set, view.camera.width, config.patch_size)
    retained = np.concatenate([view.gaussians.centers[high], merged.centers])
    mask = project_mask(retained, view.camera)
    logger.debug(
        f"View {view.view_id}: {high.size} high, {low.size} low, {key_indices.size} keys, "
        f"{int(mask.sum())} mask pixels (rho={rho:.4f})"
    )
    return ImportanceSelection(
        high_indices=high,
        low_indices=low,
        key_indices=key_indices,
        merged=merged,
        mask=mask,
        maps=maps,
    )
