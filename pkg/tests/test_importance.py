import math

import numpy as np
import pytest

from engine.geometry import covariance_from_factors
from engine.importance import (
    assign_to_keys,
    build_importance_selection,
    combined_binary_variation,
    geometric_variation,
    partition_by_variation,
    photometric_variation,
    point_map_normals,
    project_mask,
    single_step_kmeans_merge,
)
from errors import QuantileError, ShapeMismatchError
from models import ImageView, ImportanceConfig, QuantileMode, SyntheticSceneSpec
from utils.synthetic import generate_synthetic_scene


def _edge_gradient(field):
    padded = np.pad(field, ((1, 1), (1, 1), (0, 0)), mode="edge")
    gx = 0.5 * (padded[1:-1, 2:] - padded[1:-1, :-2])
    gy = 0.5 * (padded[2:, 1:-1] - padded[:-2, 1:-1])
    return gx, gy


def _edge_magnitude(field):
    gx, gy = _edge_gradient(field)
    return np.sqrt(np.sum(gx * gx, axis=2) + np.sum(gy * gy, axis=2))


def oracle_mask(view, rho, patch=4):
    """Straight-line re-implementation of the mask pipeline with plain numpy loops."""
    cam = view.camera
    H, W = cam.height, cam.width
    photo = _edge_magnitude(view.image.pixels)

    points = (view.gaussians.centers @ cam.rotation.T + cam.translation).reshape(H, W, 3)
    dx, dy = _edge_gradient(points)
    normals = np.cross(dx, dy)
    norm = np.linalg.norm(normals, axis=2, keepdims=True)
    normals = normals / np.where(norm > 1e-12, norm, 1.0)
    geo = _edge_magnitude(normals)

    combined = ((photo + geo) / 2.0).reshape(-1)
    ordered = np.sort(combined)
    pos = rho * (ordered.size - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, ordered.size - 1)
    threshold = ordered[lo] + (ordered[hi] - ordered[lo]) * (pos - lo)
    high = [j for j in range(H * W) if combined[j] > threshold]
    low = [j for j in range(H * W) if not combined[j] > threshold]

    centers, alpha = view.gaussians.centers, view.gaussians.opacities
    keys = [j for j in low if (j // W) % patch == 0 and (j % W) % patch == 0]
    retained = [centers[j] for j in high]
    if keys:
        clusters = {k: [] for k in range(len(keys))}
        for j in low:
            d = [float(np.sum((centers[j] - centers[key]) ** 2)) for key in keys]
            clusters[int(np.argmin(d))].append(j)
        for members in clusters.values():
            w = np.array([alpha[j] for j in members])
            pts = np.array([centers[j] for j in members])
            retained.append((w[:, None] * pts).sum(axis=0) / w.sum())
    else:
        retained.extend(centers[j] for j in low)

    mask = np.zeros((H, W), dtype=np.uint8)
    for point in retained:
        x, y, z = cam.rotation @ point + cam.translation
        if z <= 1e-6:
            continue
        col = math.floor(cam.fx * x / z + cam.cx)
        row = math.floor(cam.fy * y / z + cam.cy)
        if 0 <= col < W and 0 <= row < H:
            mask[row, col] = 1
    return mask


class TestVariationMaps:
    def test_constant_image_has_no_variation(self):
        assert np.all(photometric_variation(ImageView(pixels=np.full((6, 7, 3), 0.4))) == 0)

    def test_horizontal_ramp(self):
        ramp = np.tile((0.1 * np.arange(8))[None, :, None], (5, 1, 3))
        photo = photometric_variation(ImageView(pixels=ramp))
        np.testing.assert_allclose(photo[:, 1:-1], math.sqrt(3 * 0.01), atol=1e-12)
        np.testing.assert_allclose(photo[:, 0], math.sqrt(3 * 0.05 ** 2), atol=1e-12)

    def test_fronto_parallel_plane_normals(self):
        scene = generate_synthetic_scene(SyntheticSceneSpec(n_views=1, height=8, width=8))
        view = scene.views[0]
        normals = point_map_normals(view.gaussians, view.camera)
        np.testing.assert_allclose(normals, np.broadcast_to([0.0, 0.0, 1.0], (8, 8, 3)), atol=1e-6)
        assert geometric_variation(normals).max() < 1e-6

    def test_normals_need_pixel_aligned_set(self, small_scene):
        view = small_scene.views[0]
        with pytest.raises(ShapeMismatchError):
            point_map_normals(view.gaussians.subset(np.arange(len(view.gaussians))), view.camera)


class TestBinarization:
    @pytest.mark.parametrize("rho", [0.05, 0.3, 0.5, 0.77, 0.95])
    def test_literal_one_fraction(self, rng, rho):
        photo, geo = rng.random((8, 8)), rng.random((8, 8))
        _, _, binary = combined_binary_variation(photo, geo, rho, QuantileMode.LITERAL)
        assert abs(binary.mean() - (1.0 - rho)) <= 1.0 / 64 + 1e-12

    @pytest.mark.parametrize("rho", [0.1, 0.4, 0.9])
    def test_complement_one_fraction(self, rng, rho):
        photo, geo = rng.random((8, 8)), rng.random((8, 8))
        _, _, binary = combined_binary_variation(photo, geo, rho, QuantileMode.COMPLEMENT)
        assert abs(binary.mean() - rho) <= 1.0 / 64 + 1e-12

    def test_full_retention_literal_marks_nothing(self, rng):
        _, threshold, binary = combined_binary_variation(rng.random((4, 4)), rng.random((4, 4)), 1.0)
        assert binary.sum() == 0

    def test_combined_is_the_average(self, rng):
        photo, geo = rng.random((3, 3)), rng.random((3, 3))
        combined, _, _ = combined_binary_variation(photo, geo, 0.5)
        np.testing.assert_allclose(combined, (photo + geo) / 2)

    @pytest.mark.parametrize("rho", [0.0, -0.1, 1.5])
    def test_rho_out_of_range(self, rho):
        with pytest.raises(QuantileError):
            combined_binary_variation(np.zeros((2, 2)), np.zeros((2, 2)), rho)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            combined_binary_variation(np.zeros((2, 2)), np.zeros((2, 3)), 0.5)

    def test_partition_covers_every_pixel(self, small_scene, rng):
        binary = (rng.random((8, 8)) > 0.5).astype(np.uint8)
        high, low = partition_by_variation(small_scene.views[0].gaussians, binary)
        np.testing.assert_array_equal(np.sort(np.concatenate([high, low])), np.arange(64))
        np.testing.assert_array_equal(high, np.flatnonzero(binary.reshape(-1)))


class TestKMeansMerge:
    def test_keys_on_the_patch_lattice(self, small_scene):
        view = small_scene.views[0]
        key_pixels, merged = single_step_kmeans_merge(view.gaussians.subset(np.arange(64)), 8, 4)
        np.testing.assert_array_equal(key_pixels, [0, 4, 32, 36])
        assert len(merged) == 4
        np.testing.assert_array_equal(merged.source_pixel, key_pixels)

    def test_assignment_matches_brute_force(self, small_scene, rng):
        view = small_scene.views[0]
        low = np.sort(rng.choice(64, 40, replace=False))
        low_set = view.gaussians.subset(low)
        key_pos, labels = assign_to_keys(low_set, 8, 4)
        keys = low_set.centers[key_pos]
        for j, center in enumerate(low_set.centers):
            assert labels[j] == int(np.argmin(np.sum((keys - center) ** 2, axis=1)))

    def test_moment_conservation(self, small_scene):
        view = small_scene.views[1]
        low_set = view.gaussians.subset(np.arange(64))
        key_pos, labels = assign_to_keys(low_set, 8, 4)
        _, merged = single_step_kmeans_merge(low_set, 8, 4)
        alpha = low_set.opacities
        for c in range(len(merged)):
            members = labels == c
            w = alpha[members]
            mu = (w[:, None] * low_set.centers[members]).sum(axis=0) / w.sum()
            np.testing.assert_allclose(merged.centers[c], mu, atol=1e-12)
            second = sum(
                wi * (covariance_from_factors(s, q) + np.outer(x - mu, x - mu))
                for wi, s, q, x in zip(w, low_set.scales[members], low_set.rotations[members], low_set.centers[members])
            ) / w.sum()
            np.testing.assert_allclose(
                covariance_from_factors(merged.scales[c], merged.rotations[c]), second, rtol=1e-8, atol=1e-12
            )
            assert merged.opacities[c] == alpha[members].max()

    def test_no_keys_is_identity(self, small_scene):
        view = small_scene.views[0]
        odd = np.array([j for j in range(64) if (j % 8) % 4 == 1])
        low_set = view.gaussians.subset(odd)
        key_pixels, merged = single_step_kmeans_merge(low_set, 8, 4)
        assert key_pixels.size == 0
        np.testing.assert_array_equal(merged.centers, low_set.centers)

    def test_empty_low_set(self, small_scene):
        empty = small_scene.views[0].gaussians.subset(np.zeros(0, dtype=np.int64))
        key_pixels, merged = single_step_kmeans_merge(empty, 8, 4)
        assert key_pixels.size == 0 and len(merged) == 0


class TestMask:
    def test_projection_marks_the_containing_pixel(self, pinhole_camera):
        points = np.array([[0.0, 0.0, 2.0], [0.0, 0.0, -2.0], [100.0, 0.0, 1.0]])
        mask = project_mask(points, pinhole_camera)
        assert mask.sum() == 1 and mask[16, 16] == 1

    def test_full_retention_bounded_by_keys(self, small_scene):
        for view in small_scene.views:
            selection = build_importance_selection(view, 1.0)
            assert selection.mask.sum() <= math.ceil(8 / 4) * math.ceil(8 / 4)

    @pytest.mark.parametrize("rho", [0.3, 0.5, 0.8])
    def test_matches_oracle_pipeline(self, medium_scene, rho):
        for view in medium_scene.views:
            selection = build_importance_selection(view, rho, ImportanceConfig(patch_size=4))
            np.testing.assert_array_equal(selection.mask, oracle_mask(view, rho, 4))

    def test_selection_indices(self, small_scene):
        selection = build_importance_selection(small_scene.views[0], 0.5)
        assert selection.high_indices.size + selection.low_indices.size == 64
        assert selection.mask.shape == (8, 8)
        assert set(selection.mask.reshape(-1).tolist()) <= {0, 1}

    def test_projection_uses_nearest_pixel_center(self, pinhole_camera):
        # u = 16.7 is closest to the center of column 16 at 16.5
        points = np.array([[0.7 / 32.0, 0.0, 1.0], [-0.3 / 32.0, 0.2 / 32.0, 1.0]])
        mask = project_mask(points, pinhole_camera)
        assert mask.sum() == 2
        assert mask[16, 16] == 1 and mask[16, 15] == 1
