import io
from pathlib import Path
from typing import BinaryIO, List, Optional, Tuple, Union

import numpy as np
from plyfile import PlyData, PlyElement, PlyParseError
from scipy.special import expit, logit

from errors import PlyFormatError, UnsupportedFormatError
from models import GaussianSet
from utils.helpers import get_logger

logger = get_logger(__name__)

LOGIT_CLAMP = 15.0
SH_COUNTS = (1, 4, 9, 16)


def _property_names(sh_count: int) -> List[str]:
    names = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(3 * (sh_count - 1))]
    names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    return names


def _with_degree(sh: np.ndarray, degree: Optional[int]) -> np.ndarray:
    if degree is None:
        return sh
    if degree not in range(4):
        raise PlyFormatError(f"SH degree must be 0..3, got {degree}")
    count = (degree + 1) ** 2
    out = np.zeros((sh.shape[0], count, 3))
    keep = min(count, sh.shape[1])
    out[:, :keep] = sh[:, :keep]
    return out


def gaussians_to_vertices(gaussians: GaussianSet, degree: Optional[int] = None) -> np.ndarray:
    """Structured float32 vertex array in the 3DGS property order."""
    sh = _with_degree(gaussians.sh, degree)
    n, count = sh.shape[0], sh.shape[1]
    # f_rest is channel-major: all red coefficients, then green, then blue
    rest = np.transpose(sh[:, 1:, :], (0, 2, 1)).reshape(n, 3 * (count - 1))
    opacity = np.clip(logit(gaussians.opacities), -LOGIT_CLAMP, LOGIT_CLAMP)
    columns = np.concatenate(
        [
            gaussians.centers,
            np.zeros((n, 3)),
            sh[:, 0, :],
            rest,
            opacity[:, None],
            np.log(gaussians.scales),
            gaussians.rotations,
        ],
        axis=1,
    )
    vertices = np.empty(n, dtype=[(name, "f4") for name in _property_names(count)])
    for i, name in enumerate(vertices.dtype.names):
        vertices[name] = columns[:, i]
    return vertices


def write_gaussian_ply(
    gaussians: GaussianSet,
    path: Union[str, Path, BinaryIO],
    degree: Optional[int] = None,
) -> None:
    """Write a binary little-endian 3DGS PLY.

    Args:
        gaussians (GaussianSet): Primitives to write.
        path: Destination file path or writable binary stream.
        degree (Optional[int]): SH degree to store; defaults to the set's own degree.
    """
    element = PlyElement.describe(gaussians_to_vertices(gaussians, degree), "vertex")
    PlyData([element], text=False, byte_order="<").write(path)
    if isinstance(path, (str, Path)):
        logger.debug(f"Wrote {len(gaussians)} primitives to {path}")


def ply_bytes(gaussians: GaussianSet, degree: Optional[int] = None) -> bytes:
    buffer = io.BytesIO()
    write_gaussian_ply(gaussians, buffer, degree)
    return buffer.getvalue()


def _sh_count(names: Tuple[str, ...]) -> int:
    rest = sum(1 for name in names if name.startswith("f_rest_"))
    if rest % 3:
        raise PlyFormatError(f"f_rest property count {rest} is not a multiple of 3")
    count = rest // 3 + 1
    if count not in SH_COUNTS:
        raise PlyFormatError(f"{rest} f_rest properties do not match any SH degree")
    return count


def read_gaussian_ply(path: Union[str, Path, BinaryIO], source_view: Optional[int] = None) -> GaussianSet:
    """Read a binary little-endian 3DGS PLY; opacities pass through a sigmoid, scales through exp."""
    try:
        ply = PlyData.read(path)
    except (OSError, ValueError, PlyParseError) as e:
        raise PlyFormatError(f"cannot parse PLY {path}: {e}") from e
    if ply.text:
        raise UnsupportedFormatError(f"{path}: ASCII PLY is not supported")
    if ply.byte_order == ">":
        raise UnsupportedFormatError(f"{path}: big-endian PLY is not supported")
    if "vertex" not in [el.name for el in ply.elements]:
        raise PlyFormatError(f"{path}: missing element 'vertex'")

    data = ply["vertex"].data
    names = data.dtype.names or ()
    count = _sh_count(names)
    for name in _property_names(count):
        if name in ("nx", "ny", "nz"):
            continue
        if name not in names:
            raise PlyFormatError(f"{path}: missing property '{name}'")

    def column(*keys: str) -> np.ndarray:
        return np.stack([np.asarray(data[k], dtype=np.float64) for k in keys], axis=1)

    n = len(data)
    dc = column("f_dc_0", "f_dc_1", "f_dc_2")
    sh = np.zeros((n, count, 3))
    sh[:, 0, :] = dc
    if count > 1:
        rest = column(*[f"f_rest_{i}" for i in range(3 * (count - 1))])
        sh[:, 1:, :] = np.transpose(rest.reshape(n, 3, count - 1), (0, 2, 1))

    rotations = column("rot_0", "rot_1", "rot_2", "rot_3")
    norms = np.linalg.norm(rotations, axis=1, keepdims=True)
    rotations = np.where(norms > 0, rotations / np.where(norms > 0, norms, 1.0), rotations)

    return GaussianSet(
        centers=column("x", "y", "z"),
        opacities=expit(np.asarray(data["opacity"], dtype=np.float64)),
        scales=np.exp(column("scale_0", "scale_1", "scale_2")),
        rotations=rotations,
        sh=sh,
        source_view=source_view,
    )


def vertex_count(path: Union[str, Path]) -> int:
    """Vertex count from the PLY header."""
    return PlyData.read(path)["vertex"].count
