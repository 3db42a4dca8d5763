import math
from typing import Callable, Iterable, List, Sequence, Tuple

import numpy as np
from scipy.signal import convolve2d

from errors import ShapeMismatchError
from models import ImageView, LossValue

BCE_EPSILON = 1e-7
DEFAULT_LAMBDA_IO = 0.1
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
PSNR_SATURATED = math.inf


def _pixels(image: ImageView | np.ndarray) -> np.ndarray:
    return image.pixels if isinstance(image, ImageView) else np.asarray(image, dtype=np.float64)


def _same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{what}: shapes differ, {a.shape} vs {b.shape}")


def bce_opacity_loss(mask: np.ndarray, opacities: np.ndarray, lambda_io: float = DEFAULT_LAMBDA_IO) -> LossValue:
    """Weighted binary cross-entropy between the importance mask and the opacities.

    Opacities are clamped to [eps, 1 - eps] before the log; the value is the mean over
    every entry and the gradient is taken with respect to the opacities.
    """
    omega = np.asarray(mask, dtype=np.float64)
    alpha = np.asarray(opacities, dtype=np.float64)
    _same_shape(omega, alpha, "bce_opacity_loss")
    alpha = np.clip(alpha, BCE_EPSILON, 1.0 - BCE_EPSILON)
    n = alpha.size
    entries = -(omega * np.log(alpha) + (1.0 - omega) * np.log1p(-alpha))
    gradient = (lambda_io / n) * (alpha - omega) / (alpha * (1.0 - alpha))
    return LossValue(value=float(lambda_io * entries.mean()), gradient=gradient)


def mse_loss(rendered: ImageView | np.ndarray, target: ImageView | np.ndarray) -> LossValue:
    a, b = _pixels(rendered), _pixels(target)
    _same_shape(a, b, "mse_loss")
    diff = a - b
    return LossValue(value=float(np.mean(diff * diff)), gradient=2.0 * diff / diff.size)


def k_render_loss(pairs: Sequence[Tuple[ImageView, ImageView]]) -> LossValue:
    """Mean MSE over target views; the gradient is stacked per view (rendered side).

    Only the MSE term is carried; there is no perceptual term.
    """
    if not pairs:
        raise ShapeMismatchError("at least one (rendered, target) pair is required")
    losses = [mse_loss(rendered, target) for rendered, target in pairs]
    n = len(losses)
    value = float(sum(loss.value for loss in losses) / n)
    shapes = {loss.gradient.shape for loss in losses}
    gradient = np.stack([loss.gradient / n for loss in losses]) if len(shapes) == 1 else None
    return LossValue(value=value, gradient=gradient)


def batch_render_loss(pairs: Sequence[Tuple[ImageView, ImageView]]) -> float:
    return k_render_loss(pairs).value


def total_loss(io: LossValue | float, render: float) -> float:
    io_value = io.value if isinstance(io, LossValue) else float(io)
    return io_value + float(render)


def psnr(a: ImageView | np.ndarray, b: ImageView | np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for peak 1; identical images give ``PSNR_SATURATED``."""
    x, y = _pixels(a), _pixels(b)
    _same_shape(x, y, "psnr")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return PSNR_SATURATED
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _ssim_channel(x: np.ndarray, y: np.ndarray, window: np.ndarray) -> float:
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2

    def blur(img: np.ndarray) -> np.ndarray:
        return convolve2d(img, window, mode="valid")

    mu_x, mu_y = blur(x), blur(y)
    sigma_x = blur(x * x) - mu_x ** 2
    sigma_y = blur(y * y) - mu_y ** 2
    sigma_xy = blur(x * y) - mu_x * mu_y
    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * sigma_xy + c2)) / ((mu_x ** 2 + mu_y ** 2 + c1) * (sigma_x + sigma_y + c2))
    return float(ssim_map.mean())


def ssim(a: ImageView | np.ndarray, b: ImageView | np.ndarray) -> float:
    """Mean SSIM over valid 11x11 Gaussian windows, averaged over channels."""
    x, y = _pixels(a), _pixels(b)
    _same_shape(x, y, "ssim")
    if x.shape[0] < SSIM_WINDOW or x.shape[1] < SSIM_WINDOW:
        raise ShapeMismatchError(f"ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {x.shape[0]}x{x.shape[1]}")
    window = gaussian_window()
    return float(np.mean([_ssim_channel(x[..., c], y[..., c], window) for c in range(x.shape[2])]))


def finite_difference_gradient(func: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        original = x.flat[i]
        x.flat[i] = original + h
        f_plus = func(x)
        x.flat[i] = original - h
        f_minus = func(x)
        x.flat[i] = original
        grad.flat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def mean_metric(values: Iterable[float]) -> float:
    """Mean of the finite values; the saturated sentinel when every value is saturated."""
    values: List[float] = list(values)
    if not values:
        return float("nan")
    if any(math.isinf(v) for v in values):
        finite = [v for v in values if not math.isinf(v)]
        return PSNR_SATURATED if not finite else float(np.mean(finite))
    return float(np.mean(values))
