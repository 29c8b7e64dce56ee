"""
On-disk formats: MTF1 tensors, MTC1 checkpoints, dataset manifests

MTF1 layout: magic b"MTF1", u32 LE rank r, r x u32 LE extents, then
product(extents) f32 LE values.

MTC1 checkpoint layout: magic b"MTC1", u32 LE metadata length, UTF-8 JSON
metadata (sorted keys), u32 LE entry count, then per entry (sorted by name):
u32 LE name length, UTF-8 name, one MTF1 blob.
"""
import json
import struct
from pathlib import Path
from typing import Any, Dict, List, Mapping, Tuple, Union

import numpy as np

from app_config import EXPORT_CONFIG, PATHS_CONFIG
from ..core.exceptions import CheckpointError, DatasetError, FormatError
from ..core.tensor import MAX_RANK, Tensor
from ..utils.logging import get_logger
from .models import ManifestRecord, SceneSample, Split

logger = get_logger(__name__)

TENSOR_MAGIC = b"MTF1"
CHECKPOINT_MAGIC = b"MTC1"
_U32 = struct.Struct("<I")

PathLike = Union[str, Path]


# ---------------------------------------------------------------------------
# MTF1 tensors
# ---------------------------------------------------------------------------

def encode_tensor(tensor: Union[Tensor, np.ndarray]) -> bytes:
    array = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor)
    if array.ndim > MAX_RANK:
        raise FormatError(f"MTF1 stores rank <= {MAX_RANK}, got rank {array.ndim}")
    header = TENSOR_MAGIC + _U32.pack(array.ndim) + b"".join(_U32.pack(extent) for extent in array.shape)
    return header + np.ascontiguousarray(array, dtype="<f4").tobytes()


def _decode_tensor_at(buffer: bytes, offset: int) -> Tuple[Tensor, int]:
    if buffer[offset:offset + 4] != TENSOR_MAGIC:
        raise FormatError(f"missing MTF1 magic at byte {offset}")
    offset += 4
    if len(buffer) < offset + 4:
        raise FormatError("truncated MTF1 header")
    (rank,) = _U32.unpack_from(buffer, offset)
    offset += 4
    if rank > MAX_RANK:
        raise FormatError(f"MTF1 rank {rank} exceeds {MAX_RANK}")
    if len(buffer) < offset + 4 * rank:
        raise FormatError("truncated MTF1 extents")
    shape = tuple(_U32.unpack_from(buffer, offset + 4 * k)[0] for k in range(rank))
    offset += 4 * rank
    count = int(np.prod(shape, dtype=np.int64))
    end = offset + 4 * count
    if len(buffer) < end:
        raise FormatError(f"truncated MTF1 payload: need {4 * count} bytes for shape {shape}")
    values = np.frombuffer(buffer, dtype="<f4", count=count, offset=offset).astype(np.float32)
    return Tensor.wrap(values.reshape(shape), "mtf1_read"), end


def decode_tensor(buffer: bytes) -> Tensor:
    tensor, end = _decode_tensor_at(buffer, 0)
    if end != len(buffer):
        raise FormatError(f"{len(buffer) - end} trailing bytes after MTF1 tensor")
    return tensor


def write_tensor(path: PathLike, tensor: Union[Tensor, np.ndarray]) -> None:
    Path(path).write_bytes(encode_tensor(tensor))


def read_tensor(path: PathLike) -> Tensor:
    return decode_tensor(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path: PathLike, tensors: Mapping[str, Union[Tensor, np.ndarray]], meta: Dict[str, Any]) -> None:
    """Write named tensors plus JSON metadata; byte-identical for identical inputs"""
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, _U32.pack(len(meta_bytes)), meta_bytes, _U32.pack(len(tensors))]
    for name in sorted(tensors):
        encoded_name = name.encode("utf-8")
        parts.extend([_U32.pack(len(encoded_name)), encoded_name, encode_tensor(tensors[name])])
    Path(path).write_bytes(b"".join(parts))
    logger.debug(f"Saved checkpoint with {len(tensors)} tensors to {path}")


def load_checkpoint(path: PathLike) -> Tuple[Dict[str, Tensor], Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    buffer = path.read_bytes()
    try:
        if buffer[:4] != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path} is not an MTC1 checkpoint")
        offset = 4
        (meta_len,) = _U32.unpack_from(buffer, offset)
        offset += 4
        meta = json.loads(buffer[offset:offset + meta_len].decode("utf-8"))
        offset += meta_len
        (count,) = _U32.unpack_from(buffer, offset)
        offset += 4
        tensors: Dict[str, Tensor] = {}
        for _ in range(count):
            (name_len,) = _U32.unpack_from(buffer, offset)
            offset += 4
            name = buffer[offset:offset + name_len].decode("utf-8")
            offset += name_len
            tensors[name], offset = _decode_tensor_at(buffer, offset)
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError, FormatError) as e:
        raise CheckpointError(f"corrupt checkpoint {path}: {e}") from e
    if offset != len(buffer):
        raise CheckpointError(f"corrupt checkpoint {path}: trailing bytes")
    return tensors, meta


# ---------------------------------------------------------------------------
# JSON helpers and dataset store
# ---------------------------------------------------------------------------

def write_json(path: PathLike, payload: Any) -> None:
    text = json.dumps(payload, indent=EXPORT_CONFIG["json_indent"], sort_keys=True)
    Path(path).write_text(text + "\n", encoding="utf-8")


def write_manifest(path: PathLike, records: List[ManifestRecord]) -> None:
    lines = [json.dumps(record.to_dict(), separators=(", ", ": ")) for record in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path: PathLike) -> List[ManifestRecord]:
    records = []
    for number, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(ManifestRecord.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, ValueError) as e:
            raise DatasetError(f"manifest line {number} is malformed: {e}") from e
    return records


class DatasetStore:
    """Read access to a generated dataset directory"""

    def __init__(self, root: PathLike):
        self.root = Path(root)
        manifest_path = self.root / PATHS_CONFIG["manifest_file"]
        splits_path = self.root / PATHS_CONFIG["splits_file"]
        if not manifest_path.exists() or not splits_path.exists():
            raise DatasetError(f"no dataset at {self.root} (missing manifest or splits)")
        self.records: Dict[int, ManifestRecord] = {r.id: r for r in read_manifest(manifest_path)}
        raw_splits = json.loads(splits_path.read_text(encoding="utf-8"))
        self.splits: Dict[Split, List[int]] = {
            Split(name): [int(i) for i in ids] for name, ids in raw_splits.items()
        }
        logger.debug(f"Opened dataset {self.root} with {len(self.records)} samples")

    def split_ids(self, split: Union[Split, str]) -> List[int]:
        return list(self.splits.get(Split(split), []))

    def record(self, sample_id: int) -> ManifestRecord:
        if sample_id not in self.records:
            raise DatasetError(f"sample {sample_id} is not in the manifest")
        return self.records[sample_id]

    def load_sample(self, sample_id: int) -> SceneSample:
        record = self.record(sample_id)
        try:
            return SceneSample(
                id=record.id,
                primary=read_tensor(self.root / record.primary_path),
                auxiliary=read_tensor(self.root / record.auxiliary_path),
                label=read_tensor(self.root / record.label_path),
                edge=read_tensor(self.root / record.edge_path),
                changed_cells=list(record.changed_cells),
            )
        except OSError as e:
            raise DatasetError(f"cannot read sample {sample_id}: {e}") from e
