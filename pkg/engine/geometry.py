from typing import List, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from errors import InvalidRotationError, InvalidScaleError
from models import SH_COEFF_COUNTS, Camera, GaussianSet, ImageView, Scene, Violation
from utils.helpers import get_logger

logger = get_logger(__name__)

ORTHONORMAL_TOLERANCE = 1e-6
MIN_VARIANCE = 1e-12


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    """Convert (w, x, y, z) quaternions to rotation matrices.

    Accepts a single quaternion (4,) or a batch (n, 4). Quaternions are normalized
    first; zero-norm entries map to the identity.
    """
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q = q.reshape(-1, 4)
    norm = np.linalg.norm(q, axis=1, keepdims=True)
    q = np.where(norm > 0, q / np.where(norm > 0, norm, 1.0), np.array([1.0, 0.0, 0.0, 0.0]))
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ], axis=-1).reshape(-1, 3, 3)
    return R[0] if single else R


def rotation_to_quaternion(R: np.ndarray) -> np.ndarray:
    """Convert a proper rotation matrix to a unit (w, x, y, z) quaternion with w >= 0."""
    x, y, z, w = Rotation.from_matrix(np.asarray(R, dtype=np.float64)).as_quat()
    q = np.array([w, x, y, z])
    return -q if w < 0 else q


def covariance_from_factors(scale: np.ndarray, rotation: np.ndarray) -> np.ndarray:
    """Build Sigma = R diag(scale^2) R^T from per-axis standard deviations and a quaternion.

    Raises:
        InvalidScaleError: If any scale component is not strictly positive.
        InvalidRotationError: If the quaternion has zero norm.
    """
    scale = np.asarray(scale, dtype=np.float64).reshape(3)
    rotation = np.asarray(rotation, dtype=np.float64).reshape(4)
    if not np.all(np.isfinite(scale)) or np.any(scale <= 0):
        raise InvalidScaleError(f"scale must be strictly positive, got {scale.tolist()}")
    if not np.all(np.isfinite(rotation)) or np.linalg.norm(rotation) == 0:
        raise InvalidRotationError(f"rotation quaternion must be non-zero, got {rotation.tolist()}")
    M = quaternion_to_rotation(rotation) * scale
    sigma = M @ M.T
    return 0.5 * (sigma + sigma.T)


def covariances(scales: np.ndarray, rotations: np.ndarray) -> np.ndarray:
    """Batched ``covariance_from_factors`` without validation, shape (n, 3, 3)."""
    M = quaternion_to_rotation(np.asarray(rotations).reshape(-1, 4)) * np.asarray(scales).reshape(-1, 1, 3)
    sigma = M @ np.transpose(M, (0, 2, 1))
    return 0.5 * (sigma + np.transpose(sigma, (0, 2, 1)))


def factors_from_covariance(sigma: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Refactor a symmetric covariance into (scale, quaternion) by eigendecomposition."""
    sigma = 0.5 * (np.asarray(sigma) + np.asarray(sigma).T)
    eigvals, eigvecs = np.linalg.eigh(sigma)
    if np.linalg.det(eigvecs) < 0:
        eigvecs[:, 0] = -eigvecs[:, 0]
    scale = np.sqrt(np.maximum(eigvals, MIN_VARIANCE))
    return scale, rotation_to_quaternion(eigvecs)


def _camera_violations(view_id: int, camera: Camera) -> List[Violation]:
    found = []
    if camera.fx <= 0 or camera.fy <= 0:
        found.append(Violation(view_id=view_id, field="camera.focal", message=f"focal lengths must be positive, got ({camera.fx}, {camera.fy})"))
    if camera.width <= 0 or camera.height <= 0:
        found.append(Violation(view_id=view_id, field="camera.size", message=f"image size must be positive, got {camera.width}x{camera.height}"))
    if not 0 <= camera.cx < camera.width or not 0 <= camera.cy < camera.height:
        found.append(Violation(view_id=view_id, field="camera.principal_point", message=f"principal point ({camera.cx}, {camera.cy}) lies outside the image"))
    w2c = camera.world_to_camera
    if not np.all(np.isfinite(w2c)):
        found.append(Violation(view_id=view_id, field="camera.w2c", message="world_to_camera holds non-finite values"))
        return found
    R = w2c[:3, :3]
    if np.max(np.abs(R @ R.T - np.eye(3))) > ORTHONORMAL_TOLERANCE or np.linalg.det(R) <= 0:
        found.append(Violation(view_id=view_id, field="camera.w2c", message="rotation block is not a proper orthonormal matrix"))
    if np.max(np.abs(w2c[3] - np.array([0.0, 0.0, 0.0, 1.0]))) > ORTHONORMAL_TOLERANCE:
        found.append(Violation(view_id=view_id, field="camera.w2c", message="last row of world_to_camera must be (0, 0, 0, 1)"))
    return found


def _image_violations(view_id: int, image: ImageView, camera: Camera) -> List[Violation]:
    found = []
    if (image.height, image.width) != (camera.height, camera.width):
        found.append(Violation(view_id=view_id, field="image.size", message=f"image is {image.height}x{image.width} but camera says {camera.height}x{camera.width}"))
    pixels = image.pixels
    if not np.all(np.isfinite(pixels)) or pixels.min(initial=0.0) < 0.0 or pixels.max(initial=0.0) > 1.0:
        found.append(Violation(view_id=view_id, field="image.pixels", message="channel values must lie in [0, 1]"))
    return found


def _gaussian_violations(view_id: int, gaussians: GaussianSet, camera: Camera) -> List[Violation]:
    found = []
    for idx in np.flatnonzero(~((gaussians.opacities >= 0) & (gaussians.opacities <= 1))):
        found.append(Violation(view_id=view_id, primitive=int(idx), field="opacity", message=f"opacity {gaussians.opacities[idx]} outside [0, 1]"))
    for idx in np.flatnonzero(~np.all(gaussians.scales > 0, axis=1)):
        found.append(Violation(view_id=view_id, primitive=int(idx), field="scale", message=f"scale {gaussians.scales[idx].tolist()} is not strictly positive"))
    norms = np.linalg.norm(gaussians.rotations, axis=1)
    for idx in np.flatnonzero(~(np.isfinite(norms) & (norms > 0))):
        found.append(Violation(view_id=view_id, primitive=int(idx), field="rotation", message="rotation quaternion has zero norm"))
    for idx in np.flatnonzero(~np.all(np.isfinite(gaussians.centers), axis=1)):
        found.append(Violation(view_id=view_id, primitive=int(idx), field="center", message="center holds non-finite values"))
    if gaussians.sh.shape[1] not in SH_COEFF_COUNTS:
        found.append(Violation(view_id=view_id, field="sh_coeffs", message=f"unsupported SH coefficient count {gaussians.sh.shape[1]}"))
    if gaussians.pixel_aligned:
        expected = camera.height * camera.width
        if len(gaussians) != expected:
            found.append(Violation(view_id=view_id, field="gaussians.size", message=f"pixel-aligned set holds {len(gaussians)} primitives, expected H*W = {expected}"))
        elif gaussians.source_pixel is None or not np.array_equal(gaussians.source_pixel, np.arange(expected)):
            found.append(Violation(view_id=view_id, field="gaussians.source_pixel", message="pixel-aligned set must enumerate source pixels 0..H*W-1 in order"))
    return found


def validate_scene(scene: Scene) -> List[Violation]:
    """Collect every type-invariant violation of a scene; an empty list means valid."""
    violations: List[Violation] = []
    if scene.n_views < 1:
        violations.append(Violation(field="views", message="scene must contain at least one view"))
    seen = set()
    for view in scene.views:
        if view.view_id in seen:
            violations.append(Violation(view_id=view.view_id, field="view_id", message=f"duplicate view_id {view.view_id}"))
        seen.add(view.view_id)
        violations.extend(_camera_violations(view.view_id, view.camera))
        violations.extend(_image_violations(view.view_id, view.image, view.camera))
        violations.extend(_gaussian_violations(view.view_id, view.gaussians, view.camera))
    if violations:
        logger.debug(f"Scene validation found {len(violations)} violations")
    return violations
