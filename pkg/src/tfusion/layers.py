"""Differentiable layers with hand-derived backward passes.

Each layer caches whatever its backward pass needs during forward; a layer
instance therefore serves one caller at a time while training. `params()` and
`grads()` expose name-keyed arrays so the optimizer can update in place.
"""

import enum

import numpy as np

from . import tensor
from .errors import ConfigError, DataError, GeometryError, LabelError, SizeError, StateError


class Mode(enum.Enum):
    TRAIN = "train"
    INFER = "infer"


class Layer:
    """Base layer: forward/backward plus named parameters and gradients."""

    def forward(self, x: np.ndarray, mode: Mode = Mode.INFER) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        """Return d(loss)/d(input); parameter gradients land in grads()."""
        raise NotImplementedError

    def params(self) -> dict:
        return {}

    def grads(self) -> dict:
        return {}

    def state(self) -> dict:
        """Non-trainable tensors persisted in checkpoints (e.g. BN stats)."""
        return {}

    def _need_cache(self, cached, what="forward cache"):
        if cached is None:
            raise StateError(f"{type(self).__name__}.backward called before forward ({what} missing)")
        return cached


def he_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Zero-mean normal scaled by sqrt(2/fan_in), in the engine dtype."""
    w = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
    return w.astype(tensor.default_dtype())


class Conv2D(Layer):
    """2-D convolution over NHWC input.

    `pad='same'` keeps the spatial size for odd kernels at stride 1.
    Weights are (kh, kw, Cin, Cout); bias is (Cout,).

    Stride-1 convolutions accumulate one GEMM per kernel offset over
    shifted input views, which keeps the working set cache-resident;
    strided convolutions take the im2col + GEMM route. Both compute the
    same cross-correlation.
    """

    def __init__(self, kh, kw, cin, cout, stride=1, pad="same", rng=None):
        if pad == "same":
            if kh % 2 == 0 or kw % 2 == 0:
                raise GeometryError(f"'same' padding needs odd kernels, got {kh}x{kw}")
            if stride != 1:
                raise GeometryError("'same' padding is defined here for stride 1 only")
            pad = (kh - 1) // 2
        self.kh, self.kw, self.cin, self.cout = kh, kw, cin, cout
        self.stride, self.pad = stride, int(pad)
        rng = np.random.default_rng(rng)
        self.w = he_init(rng, (kh, kw, cin, cout), fan_in=kh * kw * cin)
        self.b = np.zeros(cout, dtype=tensor.default_dtype())
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._cache = None

    def _geometry(self, x):
        if x.ndim != 4 or x.shape[3] != self.cin:
            raise SizeError(f"conv expects NHWC with C={self.cin}, got shape {getattr(x, 'shape', None)}")
        ho = tensor.conv_out_size(x.shape[1], self.kh, self.stride, self.pad)
        wo = tensor.conv_out_size(x.shape[2], self.kw, self.stride, self.pad)
        return ho, wo

    def forward(self, x, mode=Mode.INFER):
        if self.stride == 1:
            return self._forward_shifted(x)
        return self._forward_im2col(x)

    def backward(self, grad):
        kind, payload = self._need_cache(self._cache)
        if kind == "shifted":
            return self._backward_shifted(grad, payload)
        return self._backward_im2col(grad, payload)

    # im2col + GEMM route (any stride)

    def _forward_im2col(self, x):
        n, _, _, _ = x.shape
        ho, wo = self._geometry(x)
        cols = tensor.im2col(x, self.kh, self.kw, self.stride, self.pad)
        out = cols @ self.w.reshape(-1, self.cout) + self.b
        self._cache = ("im2col", (cols, x.shape))
        return out.reshape(n, ho, wo, self.cout)

    def _backward_im2col(self, grad, payload):
        cols, x_shape = payload
        gmat = grad.reshape(-1, self.cout)
        self.dw = (cols.T @ gmat).reshape(self.w.shape)
        self.db = gmat.sum(axis=0)
        dcols = gmat @ self.w.reshape(-1, self.cout).T
        return tensor.col2im(dcols, x_shape, self.kh, self.kw, self.stride, self.pad)

    # shifted-view route (stride 1)

    def _forward_shifted(self, x):
        n, _, _, _ = x.shape
        ho, wo = self._geometry(x)
        xp = tensor.pad_spatial(x, self.pad)
        out = np.empty((n * ho * wo, self.cout), dtype=x.dtype)
        out[:] = self.b
        for i in range(self.kh):
            for j in range(self.kw):
                xs = xp[:, i:i + ho, j:j + wo, :].reshape(-1, self.cin)
                out += xs @ self.w[i, j]
        self._cache = ("shifted", (xp, x.shape, (ho, wo)))
        return out.reshape(n, ho, wo, self.cout)

    def _backward_shifted(self, grad, payload):
        xp, x_shape, (ho, wo) = payload
        n, h, w, _ = x_shape
        gmat = grad.reshape(-1, self.cout)
        self.dw = np.empty_like(self.w)
        self.db = gmat.sum(axis=0)
        dxp = np.zeros_like(xp)
        for i in range(self.kh):
            for j in range(self.kw):
                xs = xp[:, i:i + ho, j:j + wo, :].reshape(-1, self.cin)
                self.dw[i, j] = xs.T @ gmat
                dxs = gmat @ self.w[i, j].T
                dxp[:, i:i + ho, j:j + wo, :] += dxs.reshape(n, ho, wo, self.cin)
        if self.pad == 0:
            return dxp
        return dxp[:, self.pad:self.pad + h, self.pad:self.pad + w, :].copy()

    def params(self):
        return {"weight": self.w, "bias": self.b}

    def grads(self):
        return {"weight": self.dw, "bias": self.db}


class MultiKernelConv(Layer):
    """Parallel same-padded stride-1 convolutions over one input, with the
    branch outputs concatenated along the channel axis.

    Equivalent to running one Conv2D per kernel size and concatenating, but
    all branches share each shifted input slice and the input-gradient
    scatter, which roughly halves memory traffic for the 3/5/7 trio.
    """

    def __init__(self, cin, specs, rng=None):
        specs = [(int(k), int(cout)) for k, cout in specs]
        if not specs:
            raise SizeError("need at least one (kernel, channels) spec")
        for k, cout in specs:
            if k < 1 or k % 2 == 0 or cout < 1:
                raise GeometryError(f"kernels must be odd and channels positive, got ({k},{cout})")
        if len({k for k, _ in specs}) != len(specs):
            raise SizeError("kernel sizes must be distinct")
        rng = np.random.default_rng(rng)
        self.cin = cin
        self.specs = specs
        self.kmax = max(k for k, _ in specs)
        self.pad = (self.kmax - 1) // 2
        self.ws = [he_init(rng, (k, k, cin, cout), fan_in=k * k * cin) for k, cout in specs]
        dt = tensor.default_dtype()
        self.bs = [np.zeros(cout, dtype=dt) for _, cout in specs]
        self.dws = [np.zeros_like(w) for w in self.ws]
        self.dbs = [np.zeros_like(b) for b in self.bs]
        starts = np.concatenate([[0], np.cumsum([cout for _, cout in specs])])
        self.col = [(int(starts[i]), int(starts[i + 1])) for i in range(len(specs))]
        self.total_cout = int(starts[-1])
        self._plans = self._offset_plans()
        self._cache = None

    def _offset_plans(self):
        """For each offset of the widest kernel, which branches cover it."""
        plans = []
        for i in range(self.kmax):
            for j in range(self.kmax):
                parts = []
                for b, (k, _) in enumerate(self.specs):
                    d = (self.kmax - k) // 2
                    ib, jb = i - d, j - d
                    if 0 <= ib < k and 0 <= jb < k:
                        parts.append((b, ib, jb))
                idxs = [b for b, _, _ in parts]
                merged = idxs == list(range(idxs[0], idxs[-1] + 1))
                c0 = self.col[idxs[0]][0] if merged else None
                c1 = self.col[idxs[-1]][1] if merged else None
                plans.append((i, j, parts, merged, c0, c1))
        return plans

    def forward(self, x, mode=Mode.INFER):
        if x.ndim != 4 or x.shape[3] != self.cin:
            raise SizeError(f"conv expects NHWC with C={self.cin}, got shape {getattr(x, 'shape', None)}")
        n, h, w, _ = x.shape
        xp = tensor.pad_spatial(x, self.pad)
        # one contiguous accumulator per branch; concatenated once at the end
        outs = []
        for bias in self.bs:
            buf = np.empty((n * h * w, bias.size), dtype=x.dtype)
            buf[:] = bias
            outs.append(buf)
        xs = np.empty((n * h * w, self.cin), dtype=x.dtype)
        xs4 = xs.reshape(n, h, w, self.cin)
        for i, j, parts, _, _, _ in self._plans:
            np.copyto(xs4, xp[:, i:i + h, j:j + w, :])
            for b, ib, jb in parts:
                outs[b] += xs @ self.ws[b][ib, jb]
        self._cache = (xp, x.shape)
        return np.concatenate(outs, axis=1).reshape(n, h, w, self.total_cout)

    def backward(self, grad):
        xp, x_shape = self._need_cache(self._cache)
        n, h, w, _ = x_shape
        gmat = np.ascontiguousarray(grad).reshape(-1, self.total_cout)
        self.dws = [np.empty_like(dw) for dw in self.dws]
        self.dbs = [gmat[:, s0:s1].sum(axis=0) for s0, s1 in self.col]
        dxp = np.zeros_like(xp)
        xs = np.empty((n * h * w, self.cin), dtype=gmat.dtype)
        xs4 = xs.reshape(n, h, w, self.cin)
        dxs = np.empty_like(xs)
        dxs4 = dxs.reshape(n, h, w, self.cin)
        for i, j, parts, merged, c0, c1 in self._plans:
            np.copyto(xs4, xp[:, i:i + h, j:j + w, :])
            if merged:
                # column slices of gmat are BLAS-strided views, no copies
                gview = gmat[:, c0:c1]
                dwcat = xs.T @ gview
                for b, ib, jb in parts:
                    s0, s1 = self.col[b]
                    self.dws[b][ib, jb] = dwcat[:, s0 - c0:s1 - c0]
                if len(parts) > 1:
                    wcat = np.concatenate([self.ws[b][ib, jb] for b, ib, jb in parts], axis=1)
                else:
                    b, ib, jb = parts[0]
                    wcat = self.ws[b][ib, jb]
                np.matmul(gview, wcat.T, out=dxs)
            else:
                first = True
                for b, ib, jb in parts:
                    s0, s1 = self.col[b]
                    gview = gmat[:, s0:s1]
                    self.dws[b][ib, jb] = xs.T @ gview
                    if first:
                        np.matmul(gview, self.ws[b][ib, jb].T, out=dxs)
                        first = False
                    else:
                        dxs += gview @ self.ws[b][ib, jb].T
            dxp[:, i:i + h, j:j + w, :] += dxs4
        if self.pad == 0:
            return dxp
        return dxp[:, self.pad:self.pad + h, self.pad:self.pad + w, :].copy()

    def _names(self):
        return [f"k{k}" for k, _ in self.specs]

    def params(self):
        out = {}
        for name, wt, bias in zip(self._names(), self.ws, self.bs):
            out[f"{name}.weight"] = wt
            out[f"{name}.bias"] = bias
        return out

    def grads(self):
        out = {}
        for name, dw, db in zip(self._names(), self.dws, self.dbs):
            out[f"{name}.weight"] = dw
            out[f"{name}.bias"] = db
        return out


class BatchNorm2D(Layer):
    """Per-channel batch normalization over the (N, H, W) axes of NHWC input.

    Training normalizes with batch statistics and updates the running stats
    as running <- momentum*running + (1-momentum)*batch; inference uses the
    running stats and is deterministic.
    """

    def __init__(self, c, momentum=0.9, eps=1e-5):
        if not 0.0 < momentum < 1.0:
            raise ConfigError(f"momentum must be in (0,1), got {momentum}")
        self.c = c
        self.momentum = momentum
        self.eps = eps
        dt = tensor.default_dtype()
        self.gamma = np.ones(c, dtype=dt)
        self.beta = np.zeros(c, dtype=dt)
        self.running_mean = np.zeros(c, dtype=dt)
        self.running_var = np.ones(c, dtype=dt)
        self.dgamma = np.zeros_like(self.gamma)
        self.dbeta = np.zeros_like(self.beta)
        self._cache = None

    def forward(self, x, mode=Mode.INFER):
        if x.ndim != 4 or x.shape[3] != self.c:
            raise SizeError(f"batchnorm expects NHWC with C={self.c}, got {getattr(x, 'shape', None)}")
        if mode is Mode.TRAIN:
            m = x.shape[0] * x.shape[1] * x.shape[2]
            if m < 2:
                raise DataError("batchnorm training needs at least 2 values per channel")
            mean = x.mean(axis=(0, 1, 2))
            var = x.var(axis=(0, 1, 2))
            ivar = 1.0 / np.sqrt(var + self.eps)
            xhat = x - mean
            xhat *= ivar
            self.running_mean = (self.momentum * self.running_mean
                                 + (1.0 - self.momentum) * mean).astype(x.dtype)
            self.running_var = (self.momentum * self.running_var
                                + (1.0 - self.momentum) * var).astype(x.dtype)
            self._cache = (Mode.TRAIN, xhat, ivar, m)
        else:
            ivar = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = x - self.running_mean
            xhat *= ivar
            self._cache = (Mode.INFER, xhat, ivar, None)
        out = xhat * self.gamma
        out += self.beta
        return out

    def backward(self, grad):
        mode, xhat, ivar, m = self._need_cache(self._cache)
        self.dgamma = (grad * xhat).sum(axis=(0, 1, 2))
        self.dbeta = grad.sum(axis=(0, 1, 2))
        dxhat = grad * self.gamma
        if mode is Mode.INFER:
            return dxhat * ivar
        # batch statistics depend on x, hence the two correction terms
        return (ivar / m) * (
            m * dxhat
            - dxhat.sum(axis=(0, 1, 2))
            - xhat * (dxhat * xhat).sum(axis=(0, 1, 2))
        )

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def grads(self):
        return {"gamma": self.dgamma, "beta": self.dbeta}

    def state(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class MaxPool2D(Layer):
    """Non-overlapping square max pooling (window == stride).

    Ties go to the first window position in row-major order, making the
    backward scatter deterministic. Trailing rows/cols that do not fill a
    window are dropped (floor semantics).
    """

    def __init__(self, window=2):
        self.k = window
        self._cache = None

    def _quadrants(self, x, ho, wo):
        v = x[:, :ho * 2, :wo * 2, :].reshape(x.shape[0], ho, 2, wo, 2, x.shape[3])
        return [v[:, :, 0, :, 0, :], v[:, :, 0, :, 1, :], v[:, :, 1, :, 0, :], v[:, :, 1, :, 1, :]]

    def forward(self, x, mode=Mode.INFER):
        if x.ndim != 4:
            raise SizeError("maxpool expects NHWC input")
        n, h, w, c = x.shape
        k = self.k
        if h < k or w < k:
            raise GeometryError(f"input {h}x{w} smaller than pooling window {k}")
        ho, wo = h // k, w // k
        if k == 2 and h % 2 == 0 and w % 2 == 0:
            q = self._quadrants(x, ho, wo)
            out = np.maximum(np.maximum(q[0], q[1]), np.maximum(q[2], q[3]))
            self._cache = ("fast", x, out)
            return out
        xc = x[:, :ho * k, :wo * k, :]
        win = xc.reshape(n, ho, k, wo, k, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, ho, wo, k * k, c)
        idx = win.argmax(axis=3)
        out = np.take_along_axis(win, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]
        self._cache = ("argmax", x.shape, idx)
        return out

    def backward(self, grad):
        cache = self._need_cache(self._cache)
        if cache[0] == "fast":
            _, x, out = cache
            n, h, w, c = x.shape
            ho, wo = h // 2, w // 2
            dx = np.zeros(x.shape, dtype=grad.dtype)
            dv = dx.reshape(n, ho, 2, wo, 2, c)
            taken = np.zeros(out.shape, dtype=bool)
            for pos, quad in enumerate(self._quadrants(x, ho, wo)):
                hit = quad == out
                first = hit & ~taken  # row-major tie break: earlier window cell wins
                taken |= hit
                dv[:, :, pos // 2, :, pos % 2, :] = np.where(first, grad, 0)
            return dx
        _, x_shape, idx = cache
        n, h, w, c = x_shape
        k = self.k
        ho, wo = h // k, w // k
        win_grad = np.zeros((n, ho, wo, k * k, c), dtype=grad.dtype)
        np.put_along_axis(win_grad, idx[:, :, :, None, :], grad[:, :, :, None, :], axis=3)
        dx = np.zeros(x_shape, dtype=grad.dtype)
        dx[:, :ho * k, :wo * k, :] = (
            win_grad.reshape(n, ho, wo, k, k, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, ho * k, wo * k, c)
        )
        return dx


class Dense(Layer):
    """Fully connected layer: out = x @ W + b with W of shape (Din, Dout)."""

    def __init__(self, din, dout, rng=None):
        self.din, self.dout = din, dout
        rng = np.random.default_rng(rng)
        self.w = he_init(rng, (din, dout), fan_in=din)
        self.b = np.zeros(dout, dtype=tensor.default_dtype())
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._x = None

    def forward(self, x, mode=Mode.INFER):
        if x.ndim != 2 or x.shape[1] != self.din:
            raise SizeError(f"dense expects (N,{self.din}) input, got {getattr(x, 'shape', None)}")
        self._x = x
        return x @ self.w + self.b

    def backward(self, grad):
        x = self._need_cache(self._x)
        self.dw = x.T @ grad
        self.db = grad.sum(axis=0)
        return grad @ self.w.T

    def params(self):
        return {"weight": self.w, "bias": self.b}

    def grads(self):
        return {"weight": self.dw, "bias": self.db}


class ReLU(Layer):
    def __init__(self):
        self._x = None

    def forward(self, x, mode=Mode.INFER):
        self._x = x
        return np.maximum(x, 0)

    def backward(self, grad):
        x = self._need_cache(self._x)
        return grad * (x > 0)


class Sigmoid(Layer):
    def __init__(self):
        self._out = None

    def forward(self, x, mode=Mode.INFER):
        out = 1.0 / (1.0 + np.exp(-x))
        self._out = out
        return out

    def backward(self, grad):
        s = self._need_cache(self._out)
        return grad * s * (1.0 - s)


class Softmax(Layer):
    """Row-wise softmax over the last axis with max subtraction."""

    def __init__(self):
        self._out = None

    def forward(self, x, mode=Mode.INFER):
        if x.shape[-1] < 1:
            raise SizeError("softmax needs a non-empty last axis")
        shifted = x - x.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=-1, keepdims=True)
        self._out = out
        return out

    def backward(self, grad):
        p = self._need_cache(self._out)
        return p * (grad - (grad * p).sum(axis=-1, keepdims=True))


class Dropout(Layer):
    """Inverted dropout: training scales survivors by 1/(1-rate), inference
    is the identity, so no rescaling is ever needed at prediction time."""

    def __init__(self, rate, rng=0):
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0,1), got {rate}")
        self.rate = float(rate)
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self._cache = None

    def forward(self, x, mode=Mode.INFER):
        if mode is Mode.INFER:
            self._cache = (Mode.INFER, None)
            return x
        keep = 1.0 - self.rate
        mask = (self.rng.random(x.shape) >= self.rate).astype(x.dtype) / keep
        self._cache = (Mode.TRAIN, mask)
        return x * mask

    def backward(self, grad):
        mode, mask = self._need_cache(self._cache)
        if mode is Mode.INFER:
            return grad
        return grad * mask


class Flatten(Layer):
    """NHWC -> (N, H*W*C), row-major."""

    def __init__(self):
        self._shape = None

    def forward(self, x, mode=Mode.INFER):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        shape = self._need_cache(self._shape)
        return grad.reshape(shape)


def _check_onehot(onehot):
    ok = np.all((onehot == 0) | (onehot == 1)) and np.all(onehot.sum(axis=1) == 1)
    if not ok:
        raise LabelError("each one-hot row must contain exactly one 1")


def cce_loss(probs: np.ndarray, onehot: np.ndarray) -> float:
    """Mean categorical cross-entropy, probs clamped to [1e-12, 1] before log."""
    if probs.shape != onehot.shape:
        raise SizeError(f"probs {probs.shape} vs onehot {onehot.shape}")
    if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-4):
        raise DataError("probability rows must sum to 1")
    _check_onehot(onehot)
    picked = np.clip((probs * onehot).sum(axis=1), 1e-12, 1.0)
    return float(-np.mean(np.log(picked)))


def softmax_cce_grad(probs: np.ndarray, onehot: np.ndarray) -> np.ndarray:
    """Gradient of mean CCE w.r.t. the softmax *input*: (probs - onehot)/N."""
    if probs.shape != onehot.shape:
        raise SizeError(f"probs {probs.shape} vs onehot {onehot.shape}")
    _check_onehot(onehot)
    return (probs - onehot) / probs.shape[0]
