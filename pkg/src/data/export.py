"""
Heatmap and report exports

PGM files are binary P5 with one comment line documenting the linear
min-max scaling that mapped the float map onto 0..255.
"""
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from app_config import EXPORT_CONFIG
from ..core.exceptions import FormatError
from ..core.tensor import Tensor
from ..utils.logging import get_logger
from .storage import write_json

logger = get_logger(__name__)

PathLike = Union[str, Path]


def scale_to_u8(values: np.ndarray) -> Tuple[np.ndarray, float, float]:
    """Linear min-max scaling to 0..255; constant maps become all zeros"""
    values = np.asarray(values, dtype=np.float64)
    low, high = float(values.min()), float(values.max())
    top = EXPORT_CONFIG["pgm_max_value"]
    if high <= low:
        return np.zeros(values.shape, dtype=np.uint8), low, high
    scaled = np.rint((values - low) / (high - low) * top)
    return scaled.astype(np.uint8), low, high


def write_pgm(path: PathLike, image: Union[Tensor, np.ndarray], upscale: int = 1) -> None:
    """Write a 2-D map (or [1,H,W] tensor) as an 8-bit P5 PGM"""
    array = image.data if isinstance(image, Tensor) else np.asarray(image)
    if array.ndim == 3 and array.shape[0] == 1:
        array = array[0]
    if array.ndim != 2:
        raise FormatError(f"PGM export needs a 2-D map, got shape {array.shape}")
    if upscale > 1:
        array = np.kron(array, np.ones((upscale, upscale)))
    pixels, low, high = scale_to_u8(array)
    height, width = pixels.shape
    header = (
        f"P5\n# {EXPORT_CONFIG['pgm_scaling_note']}: min={low:.9g} max={high:.9g}\n"
        f"{width} {height}\n{EXPORT_CONFIG['pgm_max_value']}\n"
    ).encode("ascii")
    Path(path).write_bytes(header + pixels.tobytes())


def read_pgm(path: PathLike) -> np.ndarray:
    """Read an 8-bit P5 PGM into a uint8 array, skipping comment lines"""
    data = Path(path).read_bytes()
    fields = []
    offset = 0
    while len(fields) < 4:
        end = data.find(b"\n", offset)
        if end < 0:
            raise FormatError(f"{path}: truncated PGM header")
        line = data[offset:end]
        offset = end + 1
        if line.startswith(b"#"):
            continue
        fields.extend(line.split())
    if fields[0] != b"P5":
        raise FormatError(f"{path}: unsupported PGM magic {fields[0]!r}")
    width, height, max_value = int(fields[1]), int(fields[2]), int(fields[3])
    if max_value > 255:
        raise FormatError(f"{path}: only 8-bit PGM is supported")
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=offset)
    return pixels.reshape(height, width)


def grid_map(values: Union[Tensor, np.ndarray], rows: int, cols: int) -> np.ndarray:
    """Per-patch vector (row-major patch order) as a rows x cols map"""
    array = values.data if isinstance(values, Tensor) else np.asarray(values)
    return np.asarray(array, dtype=np.float32).reshape(rows, cols)


def write_metrics_report(path: PathLike, report: Dict[str, Dict[str, Optional[float]]]) -> None:
    """Metrics JSON: {split: {miou, iou, f1, precision, recall, ...}}"""
    for split, values in report.items():
        missing = [key for key in EXPORT_CONFIG["metrics_keys"] if key not in values]
        if missing:
            raise FormatError(f"metrics for split {split} miss keys {missing}")
    write_json(path, report)
    logger.info(f"Wrote metrics report to {path}")
