from pathlib import Path

import numpy as np
import pytest

from engine.renderer import rgb_to_sh_dc
from models import Camera, GaussianSet, Layout, Scene, SyntheticSceneSpec
from utils.synthetic import generate_synthetic_scene


def random_gaussians(rng: np.random.Generator, n: int, sh_degree: int = 0) -> GaussianSet:
    """Random primitives around the origin with unit quaternions."""
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    q[q[:, 0] < 0] *= -1
    return GaussianSet(
        centers=rng.uniform(-1.0, 1.0, (n, 3)),
        opacities=rng.uniform(0.1, 0.9, n),
        scales=rng.uniform(0.05, 0.5, (n, 3)),
        rotations=q,
        sh=rng.normal(scale=0.3, size=(n, (sh_degree + 1) ** 2, 3)),
    )


def front_gaussians(rng: np.random.Generator, n: int, color_range=(0.45, 0.55)) -> GaussianSet:
    """Primitives in front of ``pinhole_camera`` with muted degree-0 colors."""
    z = rng.uniform(2.0, 4.0, n)
    centers = np.column_stack([rng.uniform(-0.4, 0.4, n) * z, rng.uniform(-0.4, 0.4, n) * z, z])
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    rgb = rng.uniform(*color_range, (n, 3))
    return GaussianSet(
        centers=centers,
        opacities=rng.uniform(0.2, 0.8, n),
        scales=rng.uniform(0.05, 0.2, (n, 3)),
        rotations=q,
        sh=rgb_to_sh_dc(rgb)[:, None, :],
    )


def make_camera(width: int = 32, height: int = 32, focal: float = 32.0, cx: float = 16.0, cy: float = 16.0) -> Camera:
    return Camera(fx=focal, fy=focal, cx=cx, cy=cy, width=width, height=height, w2c=np.eye(4))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(42)


@pytest.fixture
def pinhole_camera() -> Camera:
    return make_camera()


@pytest.fixture(scope="session")
def small_scene() -> Scene:
    """Two 8x8 views of the plane layout."""
    return generate_synthetic_scene(SyntheticSceneSpec(n_views=2, height=8, width=8, seed=0))


@pytest.fixture(scope="session")
def medium_scene() -> Scene:
    """Two 16x16 views, large enough for SSIM."""
    return generate_synthetic_scene(SyntheticSceneSpec(n_views=2, height=16, width=16, seed=1, layout=Layout.TWO_PLANES))


@pytest.fixture(scope="session")
def scene_dir(tmp_path_factory) -> Path:
    """Manifest path of the small scene written to disk."""
    out = tmp_path_factory.mktemp("scene")
    generate_synthetic_scene(SyntheticSceneSpec(n_views=2, height=8, width=8, seed=0), out)
    return out / "manifest.json"


@pytest.fixture(scope="session")
def medium_scene_dir(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("medium")
    generate_synthetic_scene(SyntheticSceneSpec(n_views=2, height=16, width=16, seed=1), out)
    return out / "manifest.json"
