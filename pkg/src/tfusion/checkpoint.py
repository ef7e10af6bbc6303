"""Self-describing binary checkpoints.

Layout (little-endian): magic "TFN1", u32 version, u32 config-blob length,
UTF-8 config text in the same key=value grammar as the CLI config, u32 tensor
count, then per tensor: u16 name length, name bytes, u8 ndim, u32 dims,
float32 data row-major. The embedded config makes a model file loadable
without any side information.
"""

import struct

import numpy as np

from . import tensor
from .errors import ConfigError, FormatError, VersionError
from .kvconfig import format_kv_text, parse_kv_text
from .model import ModelConfig, TFusionModel, build_tfusion

MAGIC = b"TFN1"
VERSION = 1

_MODEL_KEYS = (
    "input_h", "input_w", "input_c", "branch_filters", "block_filters",
    "dense_units", "num_classes", "dropout_rate", "mlsam_kernels",
)
_INT_LISTS = ("block_filters", "mlsam_kernels")


def _config_blob(model: TFusionModel) -> str:
    cfg = model.config
    pairs = []
    for key in _MODEL_KEYS:
        value = getattr(cfg, key)
        if key in _INT_LISTS:
            value = ",".join(str(v) for v in value)
        pairs.append((key, str(value)))
    pairs.append(("seed", str(model.seed)))
    pairs.append(("epochs", str(model.epochs_trained)))
    if model.class_names:
        pairs.append(("class_names", ",".join(model.class_names)))
    return format_kv_text(pairs)


def _config_from_blob(text: str):
    try:
        kv = parse_kv_text(text)
    except ConfigError as exc:
        raise FormatError(f"checkpoint config does not parse: {exc}") from None
    try:
        fields = {}
        for key in _MODEL_KEYS:
            raw = kv.pop(key)
            if key in _INT_LISTS:
                fields[key] = tuple(int(v) for v in raw.split(","))
            elif key == "dropout_rate":
                fields[key] = float(raw)
            else:
                fields[key] = int(raw)
        seed = int(kv.pop("seed", "0"))
        epochs = int(kv.pop("epochs", "0"))
        names = kv.pop("class_names", None)
        class_names = names.split(",") if names else None
    except KeyError as exc:
        raise FormatError(f"checkpoint config is missing key {exc}") from None
    except ValueError as exc:
        raise FormatError(f"checkpoint config is malformed: {exc}") from None
    if kv:
        raise FormatError(f"checkpoint config has unknown keys: {sorted(kv)}")
    return ModelConfig(**fields), seed, epochs, class_names


def _all_tensors(model: TFusionModel) -> dict:
    out = dict(model.params())
    out.update(model.state())
    return out


def save_checkpoint(model: TFusionModel, path) -> None:
    blob = _config_blob(model).encode("utf-8")
    tensors = _all_tensors(model)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated checkpoint: {what}")
    return buf


def load_checkpoint(path) -> TFusionModel:
    """Rebuild a model from a checkpoint; rejects bad magic, version, or
    missing/mismatched/truncated tensors, naming the offender."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise FormatError("bad magic bytes: not a model checkpoint")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != VERSION:
            raise VersionError(f"unsupported checkpoint version {version} (expected {VERSION})")
        (blob_len,) = struct.unpack("<I", _read_exact(fh, 4, "config length"))
        blob = _read_exact(fh, blob_len, "config blob").decode("utf-8")
        config, seed, epochs, class_names = _config_from_blob(blob)

        model = build_tfusion(config, seed)
        model.epochs_trained = epochs
        model.class_names = class_names
        targets = _all_tensors(model)

        (count,) = struct.unpack("<I", _read_exact(fh, 4, "tensor count"))
        seen = set()
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "tensor name length"))
            name = _read_exact(fh, name_len, "tensor name").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1, f"rank of '{name}'"))
            dims = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, f"dims of '{name}'"))
            if name not in targets:
                raise FormatError(f"checkpoint names unknown tensor '{name}'")
            target = targets[name]
            if tuple(dims) != target.shape:
                raise FormatError(f"tensor '{name}' has shape {dims}, expected {target.shape}")
            n_values = int(np.prod(dims)) if ndim else 1
            raw = _read_exact(fh, 4 * n_values, f"data of '{name}'")
            data = np.frombuffer(raw, dtype="<f4").reshape(dims)
            target[...] = data.astype(tensor.default_dtype())
            seen.add(name)
        missing = set(targets) - seen
        if missing:
            raise FormatError(f"checkpoint is missing tensors: {sorted(missing)}")
    return model
