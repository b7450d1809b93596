"""Binary container shared by model checkpoints and teacher caches.

Layout:
    magic (8 bytes) | header length (uint64, little endian) | header (UTF-8 JSON,
    sorted keys, compact separators) | arrays as little-endian float64, row-major,
    in the order listed by header["arrays"].

Identical inputs always produce identical bytes.
"""
import json
import logging
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from errors import DataValidationError
from models.cross import CrossHead, CrossModel
from models.encoder import EncoderParams
from models.siamese import SiameseHead, SiameseModel
from optimizer import AdamState
from schemas import EncoderConfig, PoolingStrategy, TaskKind
from tensor import Tensor
from vocab import Vocab

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"DVDCKPT1"
FORMAT_VERSION = 1


def write_container(path: Union[str, Path], magic: bytes, meta: Dict[str, Any],
                    arrays: "OrderedDict[str, np.ndarray]") -> None:
    header = dict(meta)
    header["arrays"] = [{"name": name, "shape": list(arr.shape)} for name, arr in arrays.items()]
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_container(path: Union[str, Path], magic: bytes) -> Tuple[Dict[str, Any], "OrderedDict[str, np.ndarray]"]:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise DataValidationError(f"cannot read {path}: {e}")
    if raw[: len(magic)] != magic:
        raise DataValidationError(f"{path} is not a {magic.decode()} file")
    offset = len(magic)
    (size,) = struct.unpack("<Q", raw[offset: offset + 8])
    offset += 8
    try:
        header = json.loads(raw[offset: offset + size].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataValidationError(f"{path}: corrupt header: {e}")
    offset += size
    arrays: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for entry in header.pop("arrays"):
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(raw):
            raise DataValidationError(f"{path}: truncated array '{entry['name']}'")
        arrays[entry["name"]] = np.frombuffer(raw[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
    if offset != len(raw):
        raise DataValidationError(f"{path}: {len(raw) - offset} trailing bytes")
    return header, arrays


Model = Union[SiameseModel, CrossModel]


def save_checkpoint(path: Union[str, Path], model: Model, vocab: Vocab,
                    optimizer_state: Optional[AdamState] = None, extra: Optional[Dict[str, Any]] = None) -> None:
    """Write config, vocabulary, parameters and (optionally) Adam moments."""
    kind = "cross" if isinstance(model, CrossModel) else "siamese"
    meta: Dict[str, Any] = {
        "version": FORMAT_VERSION,
        "kind": kind,
        "task_kind": model.task_kind.value,
        "encoder": model.encoder.config.model_dump(mode="json"),
        "vocab": vocab.words,
        "extra": extra or {},
    }
    if kind == "siamese":
        meta["pooling"] = model.pooling.value
    arrays: "OrderedDict[str, np.ndarray]" = OrderedDict((name, t.data) for name, t in model.parameters().items())
    if optimizer_state is not None:
        meta["optimizer"] = optimizer_state.meta()
        for name, arr in optimizer_state.arrays().items():
            arrays[f"optimizer.{name}"] = arr
    write_container(path, CHECKPOINT_MAGIC, meta, arrays)
    logger.info("Saved %s checkpoint to %s", kind, path)


def load_checkpoint(path: Union[str, Path]) -> Tuple[Model, Vocab, Optional[AdamState], Dict[str, Any]]:
    meta, arrays = read_container(path, CHECKPOINT_MAGIC)
    if meta.get("version") != FORMAT_VERSION:
        raise DataValidationError(f"{path}: unsupported checkpoint version {meta.get('version')}")
    config = EncoderConfig(**meta["encoder"])
    encoder_arrays = {k[len("encoder."):]: v for k, v in arrays.items() if k.startswith("encoder.")}
    encoder = EncoderParams.from_arrays(config, encoder_arrays)
    task_kind = TaskKind(meta["task_kind"])
    if meta["kind"] == "cross":
        model: Model = CrossModel(encoder, CrossHead(_leaf(arrays, "head.O", path)), task_kind)
    else:
        head = SiameseHead(_leaf(arrays, "head.W", path)) if "head.W" in arrays else None
        model = SiameseModel(encoder, PoolingStrategy(meta["pooling"]), task_kind, head)
    state = None
    if "optimizer" in meta:
        opt_arrays = {k[len("optimizer."):]: v for k, v in arrays.items() if k.startswith("optimizer.")}
        state = AdamState.from_saved(meta["optimizer"], opt_arrays)
    return model, Vocab(meta["vocab"]), state, meta.get("extra", {})


def _leaf(arrays, name, path) -> Tensor:
    if name not in arrays:
        raise DataValidationError(f"{path}: missing '{name}'")
    return Tensor(arrays[name], requires_grad=True, name=name)
