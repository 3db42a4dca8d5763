import math
from enum import StrEnum
from typing import Any, List, Optional, Tuple

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    field_serializer,
    field_validator,
    model_validator,
)

SH_COEFF_COUNTS = (1, 4, 9, 16)


def frozen_array(value: Any, dtype=np.float64) -> np.ndarray:
    """Copy ``value`` into a read-only numpy array."""
    arr = np.array(value, dtype=dtype)
    arr.flags.writeable = False
    return arr


def _serialize_db(value: float) -> float | str:
    return "inf" if math.isinf(value) else value


class ArrayModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


class Strategy(StrEnum):
    OPACITY = "opacity"
    VARIATION = "variation"
    VARIATION_X_OPACITY = "variation_x_opacity"
    MASK_THEN_OPACITY = "mask_then_opacity"


class QuantileMode(StrEnum):
    LITERAL = "literal"
    COMPLEMENT = "complement"


class CompactionMode(StrEnum):
    SELECT = "select"
    SELECT_MERGE = "select+merge"


class Layout(StrEnum):
    PLANE = "plane"
    TWO_PLANES = "two_planes"
    RANDOM_BLOBS = "random_blobs"


class EvaluationTarget(StrEnum):
    FULL_RENDER = "full_render"
    IMAGES = "images"


# --------------------------------------------------------------------------
# Core types
# --------------------------------------------------------------------------

class GaussianPrimitive(BaseModel):
    """One anisotropic 3D Gaussian.

    ``sh_coeffs`` is flattened coefficient-major: ``[c0_r, c0_g, c0_b, c1_r, ...]``.
    Opacity is the activated value; value ranges are checked by
    ``engine.geometry.validate_scene`` rather than on construction.
    """
    model_config = ConfigDict(frozen=True)

    center: Tuple[float, float, float]
    opacity: float
    scale: Tuple[float, float, float]
    rotation: Tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    sh_coeffs: Tuple[float, ...] = (0.0, 0.0, 0.0)

    @field_validator("sh_coeffs")
    @classmethod
    def _check_sh_length(cls, value: Tuple[float, ...]) -> Tuple[float, ...]:
        if len(value) not in tuple(3 * m for m in SH_COEFF_COUNTS):
            raise ValueError(f"sh_coeffs must hold 3, 12, 27 or 48 values, got {len(value)}")
        return value

    @property
    def sh_degree(self) -> int:
        return math.isqrt(len(self.sh_coeffs) // 3) - 1


class GaussianSet(ArrayModel):
    """Structure-of-arrays container for an ordered list of Gaussians."""

    centers: np.ndarray
    opacities: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray
    sh: np.ndarray
    source_view: Optional[int] = None
    source_pixel: Optional[np.ndarray] = None
    pixel_aligned: bool = False

    @field_validator("centers", "scales", mode="before")
    @classmethod
    def _vec3(cls, value: Any) -> np.ndarray:
        return frozen_array(np.asarray(value, dtype=np.float64).reshape(-1, 3))

    @field_validator("rotations", mode="before")
    @classmethod
    def _vec4(cls, value: Any) -> np.ndarray:
        return frozen_array(np.asarray(value, dtype=np.float64).reshape(-1, 4))

    @field_validator("opacities", mode="before")
    @classmethod
    def _scalar(cls, value: Any) -> np.ndarray:
        return frozen_array(np.asarray(value, dtype=np.float64).reshape(-1))

    @field_validator("sh", mode="before")
    @classmethod
    def _sh(cls, value: Any) -> np.ndarray:
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[1] not in SH_COEFF_COUNTS:
            raise ValueError(f"sh must have shape (n, 1|4|9|16, 3), got {arr.shape}")
        return frozen_array(arr)

    @field_validator("source_pixel", mode="before")
    @classmethod
    def _pixels(cls, value: Any) -> Optional[np.ndarray]:
        if value is None:
            return None
        return frozen_array(np.asarray(value).reshape(-1), dtype=np.int64)

    @model_validator(mode="after")
    def _check_lengths(self) -> "GaussianSet":
        n = self.centers.shape[0]
        for name in ("opacities", "scales", "rotations", "sh"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"{name} holds {getattr(self, name).shape[0]} entries, expected {n}")
        if self.source_pixel is not None and self.source_pixel.shape[0] != n:
            raise ValueError("source_pixel length does not match the primitive count")
        return self

    def __len__(self) -> int:
        return int(self.centers.shape[0])

    @property
    def sh_degree(self) -> int:
        return math.isqrt(self.sh.shape[1]) - 1

    @classmethod
    def empty(cls, sh_degree: int = 0) -> "GaussianSet":
        m = (sh_degree + 1) ** 2
        return cls(
            centers=np.zeros((0, 3)),
            opacities=np.zeros(0),
            scales=np.zeros((0, 3)),
            rotations=np.zeros((0, 4)),
            sh=np.zeros((0, m, 3)),
        )

    @classmethod
    def from_primitives(cls, primitives: List[GaussianPrimitive], **kwargs: Any) -> "GaussianSet":
        if not primitives:
            return cls.empty().model_copy(update=kwargs)
        m = max(len(p.sh_coeffs) for p in primitives) // 3
        sh = np.zeros((len(primitives), m, 3))
        for i, p in enumerate(primitives):
            coeffs = np.asarray(p.sh_coeffs).reshape(-1, 3)
            sh[i, : coeffs.shape[0]] = coeffs
        return cls(
            centers=[p.center for p in primitives],
            opacities=[p.opacity for p in primitives],
            scales=[p.scale for p in primitives],
            rotations=[p.rotation for p in primitives],
            sh=sh,
            **kwargs,
        )

    def primitive(self, index: int) -> GaussianPrimitive:
        return GaussianPrimitive(
            center=tuple(self.centers[index]),
            opacity=float(self.opacities[index]),
            scale=tuple(self.scales[index]),
            rotation=tuple(self.rotations[index]),
            sh_coeffs=tuple(self.sh[index].reshape(-1)),
        )

    def subset(self, indices: Any) -> "GaussianSet":
        """Select primitives by index; the result is no longer pixel-aligned."""
        idx = np.asarray(indices, dtype=np.int64).reshape(-1)
        return GaussianSet(
            centers=self.centers[idx],
            opacities=self.opacities[idx],
            scales=self.scales[idx],
            rotations=self.rotations[idx],
            sh=self.sh[idx],
            source_view=self.source_view,
            source_pixel=None if self.source_pixel is None else self.source_pixel[idx],
        )

    @classmethod
    def concatenate(cls, sets: List["GaussianSet"]) -> "GaussianSet":
        """Stack sets in order, padding SH bands with zeros to the highest degree."""
        if not sets:
            return cls.empty()
        m = max(s.sh.shape[1] for s in sets)
        sh_blocks = []
        for s in sets:
            block = np.zeros((len(s), m, 3))
            block[:, : s.sh.shape[1]] = s.sh
            sh_blocks.append(block)
        views = {s.source_view for s in sets}
        return cls(
            centers=np.concatenate([s.centers for s in sets]),
            opacities=np.concatenate([s.opacities for s in sets]),
            scales=np.concatenate([s.scales for s in sets]),
            rotations=np.concatenate([s.rotations for s in sets]),
            sh=np.concatenate(sh_blocks),
            source_view=views.pop() if len(views) == 1 else None,
        )


class Camera(BaseModel):
    """Pinhole camera; ``w2c`` is the row-major 4x4 world-to-camera transform."""
    model_config = ConfigDict(frozen=True)

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    w2c: Tuple[float, ...]

    @field_validator("w2c", mode="before")
    @classmethod
    def _flatten(cls, value: Any) -> Tuple[float, ...]:
        flat = tuple(float(v) for v in np.asarray(value, dtype=np.float64).reshape(-1))
        if len(flat) != 16:
            raise ValueError(f"w2c must hold 16 values, got {len(flat)}")
        return flat

    @property
    def world_to_camera(self) -> np.ndarray:
        return np.asarray(self.w2c, dtype=np.float64).reshape(4, 4)

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def intrinsics(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return points @ self.rotation.T + self.translation

    def project(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Return pixel coordinates (n, 2) and camera-frame depths (n,).

        Points at or behind the camera plane get NaN coordinates.
        """
        cam = self.to_camera(points)
        z = cam[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            safe = np.where(z > 0, z, np.nan)
            u = self.fx * cam[:, 0] / safe + self.cx
            v = self.fy * cam[:, 1] / safe + self.cy
        return np.stack([u, v], axis=1), z

    def unproject(self, depths: np.ndarray) -> np.ndarray:
        """World points of every pixel center (row-major) at the given camera-frame depths."""
        z = np.asarray(depths, dtype=np.float64).reshape(-1)
        rows, cols = np.mgrid[0 : self.height, 0 : self.width]
        x = (cols.reshape(-1) + 0.5 - self.cx) / self.fx * z
        y = (rows.reshape(-1) + 0.5 - self.cy) / self.fy * z
        return (np.stack([x, y, z], axis=1) - self.translation) @ self.rotation

    def pixel_rays(self) -> Tuple[np.ndarray, np.ndarray]:
        """World-space ray origin and unit directions through every pixel center, row-major."""
        rows, cols = np.mgrid[0 : self.height, 0 : self.width]
        x = (cols.reshape(-1) + 0.5 - self.cx) / self.fx
        y = (rows.reshape(-1) + 0.5 - self.cy) / self.fy
        dirs_cam = np.stack([x, y, np.ones_like(x)], axis=1)
        dirs = dirs_cam @ self.rotation
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        return self.center, dirs


class ImageView(ArrayModel):
    pixels: np.ndarray

    @field_validator("pixels", mode="before")
    @classmethod
    def _pixels(cls, value: Any) -> np.ndarray:
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"pixels must have shape (H, W, 3), got {arr.shape}")
        return frozen_array(arr)

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])


class SceneView(ArrayModel):
    view_id: int
    image: ImageView
    camera: Camera
    gaussians: GaussianSet

    @property
    def capacity(self) -> int:
        return self.camera.height * self.camera.width


class Scene(ArrayModel):
    views: List[SceneView]

    @property
    def n_views(self) -> int:
        return len(self.views)

    @property
    def capacities(self) -> List[int]:
        return [view.capacity for view in self.views]

    @property
    def total_pool(self) -> int:
        return sum(self.capacities)

    def pooled_gaussians(self) -> GaussianSet:
        return GaussianSet.concatenate([view.gaussians for view in self.views])


class Violation(BaseModel):
    view_id: Optional[int] = None
    primitive: Optional[int] = None
    field: str
    message: str


# --------------------------------------------------------------------------
# Importance
# --------------------------------------------------------------------------

class ImportanceConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    patch_size: int = Field(4, ge=1)
    quantile_mode: QuantileMode = QuantileMode.LITERAL


class VariationMaps(ArrayModel):
    photometric: np.ndarray
    normals: np.ndarray
    geometric: np.ndarray
    combined: np.ndarray
    threshold: float
    binary: np.ndarray
    rho: float
    quantile_mode: QuantileMode


class ImportanceSelection(ArrayModel):
    """Pixel indices are row-major positions in the view's image."""

    high_indices: np.ndarray
    low_indices: np.ndarray
    key_indices: np.ndarray
    merged: GaussianSet
    mask: np.ndarray
    maps: VariationMaps


# --------------------------------------------------------------------------
# Allocation
# --------------------------------------------------------------------------

class SpectralProfile(BaseModel):
    eta: List[float]
    psi: List[float]
    kappa: List[float]
    temperature: float
    lowfreq_side: int


class ViewAllocation(BaseModel):
    view_id: int
    eta: float
    psi: float
    kappa: float
    rho: float
    budget: int
    capacity: int


class AllocationPlan(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    total: int = Field(alias="K")
    rho_global: float
    temperature: float
    lowfreq_side: int
    uniform: bool = False
    views: List[ViewAllocation]

    @property
    def budgets(self) -> List[int]:
        return [v.budget for v in self.views]

    @property
    def kappa(self) -> List[float]:
        return [v.kappa for v in self.views]

    @property
    def rho_per_view(self) -> List[float]:
        return [v.rho for v in self.views]


# --------------------------------------------------------------------------
# Compaction
# --------------------------------------------------------------------------

class ScoreVector(ArrayModel):
    scores: np.ndarray
    strategy: Strategy

    @field_validator("scores", mode="before")
    @classmethod
    def _scores(cls, value: Any) -> np.ndarray:
        arr = np.asarray(value, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise ValueError("scores must be finite and non-negative")
        return frozen_array(arr)

    def __len__(self) -> int:
        return int(self.scores.shape[0])


class ViewCompaction(BaseModel):
    view_id: int
    budget: int
    selected: int
    merged_added: int = 0
    merged_score_mean: Optional[float] = None
    kept_opacity_mean: Optional[float] = None


class ViewMetrics(BaseModel):
    view_id: int
    psnr_db: float
    ssim: float

    @field_serializer("psnr_db")
    def _psnr(self, value: float) -> float | str:
        return _serialize_db(value)


class QualityMetrics(BaseModel):
    psnr_mean: float
    ssim_mean: float
    lpips: Optional[float] = None
    target: EvaluationTarget = EvaluationTarget.FULL_RENDER
    per_view: List[ViewMetrics]

    @field_serializer("psnr_mean")
    def _psnr(self, value: float) -> float | str:
        return _serialize_db(value)


class CompactionReport(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    total: int = Field(alias="K")
    rho_global: float
    strategy: Strategy
    mode: CompactionMode
    global_topk: bool = False
    input_count: int
    output_count: int
    per_view: List[ViewCompaction]
    storage_bytes: int
    metrics: Optional[QualityMetrics] = None
    render_fps: Optional[float] = None
    wall_time_s: float


class CompactionResponse(ArrayModel):
    status: str
    error: Optional[str] = None
    report: Optional[CompactionReport] = None
    gaussians: Optional[GaussianSet] = None


# --------------------------------------------------------------------------
# Losses, rendering, schedule
# --------------------------------------------------------------------------

class LossValue(ArrayModel):
    value: float
    gradient: Optional[np.ndarray] = None


class ProjectedGaussian(ArrayModel):
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    color: np.ndarray
    opacity: float
    radius: float


class ScheduleConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    total_pool: int = Field(ge=0)
    k_max_frac: float = 0.95
    k_start_frac: float = 0.85
    k_floor_frac: float = 0.05
    decay: float = Field(0.05, ge=0.0)
    interval: int = Field(1000, ge=1)
    seed: int = Field(0, ge=0, lt=2**64)

    @model_validator(mode="after")
    def _check_fractions(self) -> "ScheduleConfig":
        if not 0.0 < self.k_floor_frac <= self.k_start_frac <= self.k_max_frac <= 1.0:
            raise ValueError("fractions must satisfy 0 < floor <= start <= max <= 1")
        return self


# --------------------------------------------------------------------------
# Files
# --------------------------------------------------------------------------

class ManifestView(BaseModel):
    view_id: int
    image_path: str
    camera_path: str
    gaussians_path: str


class SceneManifest(BaseModel):
    views: List[ManifestView]
    resolution: Tuple[int, int]
    format_version: str = "1.0"

    @model_validator(mode="after")
    def _check_ids(self) -> "SceneManifest":
        seen = set()
        for view in self.views:
            if view.view_id in seen:
                raise ValueError(f"duplicate view_id {view.view_id}")
            seen.add(view.view_id)
        if sorted(seen) != list(range(len(self.views))):
            raise ValueError(f"view_ids must be contiguous from 0, got {sorted(seen)}")
        return self


class SyntheticSceneSpec(BaseModel):
    n_views: int = Field(2, ge=1)
    height: int = Field(8, ge=8)
    width: int = Field(8, ge=8)
    seed: int = 0
    layout: Layout = Layout.PLANE
