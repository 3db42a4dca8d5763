from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image

from errors import SceneLoadError
from models import ImageView


def read_image(path: Union[str, Path]) -> ImageView:
    """Load an 8-bit image as RGB in [0, 1] (value / 255)."""
    try:
        with Image.open(path) as img:
            pixels = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, ValueError) as e:
        raise SceneLoadError(f"cannot read image {path}: {e}") from e
    return ImageView(pixels=pixels)


def to_uint8(pixels: np.ndarray) -> np.ndarray:
    return np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(image: ImageView | np.ndarray, path: Union[str, Path]) -> None:
    pixels = image.pixels if isinstance(image, ImageView) else np.asarray(image)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(pixels)).save(path, format="PNG")


def write_mask(mask: np.ndarray, path: Union[str, Path]) -> None:
    """Write a binary mask as a single-channel 0/255 PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = np.where(np.asarray(mask) > 0, 255, 0).astype(np.uint8)
    Image.fromarray(values).save(path, format="PNG")


def read_mask(path: Union[str, Path]) -> np.ndarray:
    with Image.open(path) as img:
        return (np.asarray(img.convert("L")) > 127).astype(np.uint8)
