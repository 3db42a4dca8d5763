"""Scene manifests, camera JSON and report JSON on disk.

A scene directory holds one PNG, one camera JSON and one 3DGS PLY per view,
tied together by ``manifest.json``; paths in the manifest are relative to the
manifest's own directory.
"""

import json
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Optional, Union

import jsonschema
import numpy as np
from pydantic import ValidationError

from engine.geometry import validate_scene
from errors import SceneLoadError
from models import (
    AllocationPlan,
    Camera,
    CompactionReport,
    GaussianSet,
    ManifestView,
    Scene,
    SceneManifest,
    SceneView,
    frozen_array,
)
from utils.helpers import dump_json, get_logger
from utils.image_io import read_image, write_image
from utils.ply_io import read_gaussian_ply, write_gaussian_ply

logger = get_logger(__name__)

MANIFEST_NAME = "manifest.json"
REPORT_SCHEMA_PATH = Path(__file__).resolve().parent.parent / "schemas" / "report.schema.json"


def read_camera(path: Union[str, Path]) -> Camera:
    try:
        return Camera.model_validate_json(Path(path).read_text())
    except OSError as e:
        raise SceneLoadError(f"cannot read camera {path}: {e}") from e
    except ValidationError as e:
        raise SceneLoadError(f"invalid camera file {path}: {' '.join(str(e).split())}") from e


def write_camera(camera: Camera, path: Union[str, Path]) -> None:
    payload = camera.model_dump()
    payload["w2c"] = list(camera.w2c)
    dump_json(payload, Path(path))


def read_manifest(path: Union[str, Path]) -> SceneManifest:
    path = Path(path)
    if not path.is_file():
        raise SceneLoadError(f"manifest not found: {path}")
    try:
        return SceneManifest.model_validate_json(path.read_text())
    except ValidationError as e:
        raise SceneLoadError(f"invalid manifest {path}: {' '.join(str(e).split())}") from e


def _resolve(base: Path, relative: str, view_id: int, kind: str) -> Path:
    path = base / relative
    if not path.is_file():
        raise SceneLoadError(f"view {view_id}: missing {kind} file {path}")
    return path


def _pixel_aligned(gaussians: GaussianSet, view_id: int) -> GaussianSet:
    return gaussians.model_copy(
        update={
            "pixel_aligned": True,
            "source_view": view_id,
            "source_pixel": frozen_array(np.arange(len(gaussians)), dtype=np.int64),
        }
    )


def _load_view(base: Path, entry: ManifestView, resolution: tuple) -> SceneView:
    image = read_image(_resolve(base, entry.image_path, entry.view_id, "image"))
    camera = read_camera(_resolve(base, entry.camera_path, entry.view_id, "camera"))
    gaussians = read_gaussian_ply(_resolve(base, entry.gaussians_path, entry.view_id, "gaussians"), entry.view_id)
    height, width = resolution
    if (camera.height, camera.width) != (height, width):
        raise SceneLoadError(
            f"view {entry.view_id}: camera is {camera.height}x{camera.width} but the manifest resolution is {height}x{width}"
        )
    if (image.height, image.width) != (camera.height, camera.width):
        raise SceneLoadError(
            f"view {entry.view_id}: image is {image.height}x{image.width} but the camera says {camera.height}x{camera.width}"
        )
    if len(gaussians) != height * width:
        raise SceneLoadError(
            f"view {entry.view_id}: {len(gaussians)} primitives but a pixel-aligned set needs H*W = {height * width}"
        )
    return SceneView(view_id=entry.view_id, image=image, camera=camera, gaussians=_pixel_aligned(gaussians, entry.view_id))


def read_scene(manifest_path: Union[str, Path]) -> Scene:
    """Load and validate every view listed in a manifest.

    Args:
        manifest_path: Path to ``manifest.json``.

    Returns:
        Scene: Views in view_id order, each with a pixel-aligned Gaussian set.

    Raises:
        SceneLoadError: On missing files, size mismatches or validation violations.
    """
    manifest_path = Path(manifest_path)
    manifest = read_manifest(manifest_path)
    base = manifest_path.parent
    entries = sorted(manifest.views, key=lambda v: v.view_id)
    scene = Scene(views=[_load_view(base, entry, manifest.resolution) for entry in entries])

    violations = validate_scene(scene)
    if violations:
        first = violations[0]
        raise SceneLoadError(
            f"view {first.view_id}: {first.field}: {first.message}"
            + (f" (and {len(violations) - 1} more)" if len(violations) > 1 else "")
        )
    logger.info(f"Loaded {scene.n_views} views ({scene.total_pool} primitives) from {manifest_path}")
    return scene


def write_scene(scene: Scene, out_dir: Union[str, Path], degree: Optional[int] = None) -> Path:
    """Write per-view PNG/camera/PLY files and the manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for view in scene.views:
        stem = f"view_{view.view_id:03d}"
        write_image(view.image, out_dir / f"{stem}.png")
        write_camera(view.camera, out_dir / f"{stem}.camera.json")
        write_gaussian_ply(view.gaussians, out_dir / f"{stem}.ply", degree)
        entries.append(
            ManifestView(
                view_id=view.view_id,
                image_path=f"{stem}.png",
                camera_path=f"{stem}.camera.json",
                gaussians_path=f"{stem}.ply",
            )
        )
    first = scene.views[0].camera
    manifest = SceneManifest(views=entries, resolution=(first.height, first.width))
    manifest_path = out_dir / MANIFEST_NAME
    dump_json(manifest.model_dump(), manifest_path)
    return manifest_path


@lru_cache(maxsize=1)
def report_schema() -> Dict[str, Any]:
    return json.loads(REPORT_SCHEMA_PATH.read_text())


def report_payload(report: CompactionReport) -> Dict[str, Any]:
    """JSON-ready report, validated against the published schema."""
    payload = report.model_dump(mode="json", by_alias=True)
    jsonschema.validate(payload, report_schema())
    return payload


def write_report(report: CompactionReport, path: Union[str, Path]) -> None:
    dump_json(report_payload(report), Path(path))


def read_report(path: Union[str, Path]) -> CompactionReport:
    return CompactionReport.model_validate_json(Path(path).read_text())


def read_plan(path: Union[str, Path]) -> AllocationPlan:
    return AllocationPlan.model_validate_json(Path(path).read_text())
