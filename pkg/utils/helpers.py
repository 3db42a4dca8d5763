import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Iterable, List, Optional, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def serialize_value(obj: Any) -> Any:
    """Serialize numpy scalars/arrays and non-finite floats for JSON output.

    Args:
        obj (Any): The object to serialize.

    Returns:
        Any: A JSON-compatible value.

    Raises:
        TypeError: If the object has no JSON representation.
    """
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        value = float(obj)
        return "inf" if math.isinf(value) else value
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"Type {type(obj).__name__} not serializable")


def dump_json(payload: Any, path: Optional[Path] = None) -> str:
    """Render ``payload`` as indented JSON, writing it to ``path`` when given."""
    text = json.dumps(payload, indent=2, default=serialize_value)
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n")
    return text


def configure_logging(level: str = "INFO") -> None:
    """Set the root level; handlers are created once by ``get_logger``."""
    logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)
    logging.getLogger().setLevel(level.upper())


def get_logger(name: str) -> logging.Logger:
    """Get a configured logger with a specified name.

    Args:
        name (str): The name of the logger.

    Returns:
        logging.Logger: The configured logger instance.
    """
    logging.basicConfig(
        level=logging.INFO,
        format=LOG_FORMAT,
    )
    return logging.getLogger(name)


def parallel_map(func: Callable[[T], R], items: Iterable[T], max_workers: Optional[int] = None) -> List[R]:
    """Apply ``func`` to every item on a thread pool, keeping input order."""
    items = list(items)
    if max_workers == 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(func, items))
