"""Dense tensor kernels: creation, GEMM, im2col/col2im, channel ops.

Activations live in NHWC layout; convolution weights in (kh, kw, Cin, Cout).
Storage is float32 by default; switch the engine to float64 with
``set_default_dtype`` for finite-difference gradient checks.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import GeometryError, SizeError

_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
_default_dtype = np.dtype(np.float32)


def set_default_dtype(dtype) -> None:
    """Set the engine-wide storage dtype (float32 or float64)."""
    global _default_dtype
    dt = np.dtype(dtype)
    if dt not in _DTYPES:
        raise ValueError(f"unsupported dtype {dt}, expected float32 or float64")
    _default_dtype = dt


def default_dtype() -> np.dtype:
    return _default_dtype


def create(shape, fill=None, data=None) -> np.ndarray:
    """Build a tensor of `shape`, either constant-filled or from a flat array.

    Exactly one of `fill` / `data` may be given; with neither, zeros.
    """
    shape = tuple(int(d) for d in shape)
    if len(shape) == 0 or any(d <= 0 for d in shape):
        raise SizeError(f"invalid shape {shape}: dimensions must be positive")
    if data is not None:
        if fill is not None:
            raise SizeError("pass either fill or data, not both")
        flat = np.asarray(data, dtype=_default_dtype).reshape(-1)
        n = int(np.prod(shape))
        if flat.size != n:
            raise SizeError(f"data length {flat.size} does not match shape {shape} ({n} elements)")
        return flat.reshape(shape).copy()
    value = 0.0 if fill is None else float(fill)
    return np.full(shape, value, dtype=_default_dtype)


def assert_all_finite(x: np.ndarray, what: str = "tensor") -> None:
    """Debug assertion: raise if any value is NaN or infinite."""
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"{what} contains NaN or Inf")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """2-D matrix product c[i,j] = sum_k a[i,k] * b[k,j]."""
    if a.ndim != 2 or b.ndim != 2:
        raise SizeError(f"matmul needs 2-D operands, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise SizeError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b


def conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    """Output extent of a convolution along one axis; must divide exactly."""
    span = size + 2 * pad - k
    if span < 0 or span % stride != 0:
        raise GeometryError(
            f"size {size} with kernel {k}, stride {stride}, pad {pad} "
            "gives a non-integral output size"
        )
    return span // stride + 1


def pad_spatial(x: np.ndarray, pad: int) -> np.ndarray:
    """Zero-pad the H and W axes of an NHWC tensor."""
    if pad == 0:
        return x
    n, h, w, c = x.shape
    out = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=x.dtype)
    out[:, pad:pad + h, pad:pad + w, :] = x
    return out


def im2col(x: np.ndarray, kh: int, kw: int, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Unroll receptive fields of an NHWC tensor into rows.

    Row (n, ho, wo) holds the window flattened in (kh, kw, C) order;
    out-of-bounds positions contribute zeros. Output shape is
    (N*Ho*Wo, kh*kw*C), matching weights reshaped to (kh*kw*Cin, Cout).
    """
    if x.ndim != 4:
        raise SizeError(f"im2col expects NHWC input, got {x.ndim}-D")
    n, h, w, c = x.shape
    ho = conv_out_size(h, kh, stride, pad)
    wo = conv_out_size(w, kw, stride, pad)
    xp = pad_spatial(x, pad)
    sn, sh, sw, sc = xp.strides
    patches = as_strided(
        xp,
        shape=(n, ho, wo, kh, kw, c),
        strides=(sn, stride * sh, stride * sw, sh, sw, sc),
        writeable=False,
    )
    return patches.reshape(n * ho * wo, kh * kw * c)


def col2im(cols: np.ndarray, shape, kh: int, kw: int, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Adjoint of im2col: scatter-add rows back into an NHWC tensor.

    Satisfies <im2col(x), y> == <x, col2im(y)> for matching geometry.
    """
    n, h, w, c = shape
    ho = conv_out_size(h, kh, stride, pad)
    wo = conv_out_size(w, kw, stride, pad)
    if cols.shape != (n * ho * wo, kh * kw * c):
        raise SizeError(
            f"cols shape {cols.shape} does not match geometry "
            f"{(n * ho * wo, kh * kw * c)}"
        )
    xp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=cols.dtype)
    patches = cols.reshape(n, ho, wo, kh, kw, c)
    for i in range(kh):
        for j in range(kw):
            xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += patches[:, :, :, i, j, :]
    if pad == 0:
        return xp
    return xp[:, pad:pad + h, pad:pad + w, :].copy()


def broadcast_mul(x: np.ndarray, gate: np.ndarray) -> np.ndarray:
    """Multiply an NHWC tensor by a single-channel NHW1 map, per position."""
    if x.ndim != 4 or gate.ndim != 4:
        raise SizeError("broadcast_mul expects two NHWC tensors")
    if gate.shape[3] != 1 or x.shape[:3] != gate.shape[:3]:
        raise SizeError(f"map shape {gate.shape} does not gate input shape {x.shape}")
    return x * gate


def concat_channels(parts) -> np.ndarray:
    """Concatenate NHWC tensors along the channel axis, in argument order."""
    parts = list(parts)
    if not parts:
        raise SizeError("concat_channels needs at least one part")
    lead = parts[0].shape[:3]
    for p in parts[1:]:
        if p.shape[:3] != lead:
            raise SizeError(f"spatial dims disagree: {p.shape[:3]} vs {lead}")
    return np.concatenate(parts, axis=3)
