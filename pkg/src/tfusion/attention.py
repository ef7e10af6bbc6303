"""Multi-localization spatial attention: parallel multi-kernel convolutions
fused into a single sigmoid gate that rescales the input feature map.

Branch convolutions (default kernels 3/5/7, 4 channels each) run in parallel
on the same input; their concatenation is squeezed to one channel by a 3x3
convolution and a sigmoid, and the resulting map multiplies the input
position-wise. Output shape always equals input shape.
"""

import numpy as np

from . import tensor
from .errors import SizeError
from .layers import Conv2D, Layer, Mode, MultiKernelConv, Sigmoid

BRANCH_CHANNELS = 4


class MlsamBlock(Layer):
    """Spatial attention gate built from parallel convolutions.

    The branch convs carry biases but no normalization or activation;
    the fused map is the only nonlinearity. After a forward pass the
    attention map is kept on `self.attention`.
    """

    def __init__(self, cin, kernels=(3, 5, 7), rng=None):
        kernels = tuple(int(k) for k in kernels)
        if not kernels or any(k % 2 == 0 or k < 1 for k in kernels):
            raise SizeError(f"attention kernels must be odd and positive, got {kernels}")
        if len(set(kernels)) != len(kernels):
            raise SizeError(f"attention kernels must be distinct, got {kernels}")
        rng = np.random.default_rng(rng)
        self.cin = cin
        self.kernels = kernels
        self.branches = MultiKernelConv(cin, [(k, BRANCH_CHANNELS) for k in kernels], rng=rng)
        self.fuse = Conv2D(3, 3, BRANCH_CHANNELS * len(kernels), 1, rng=rng)
        self.sigmoid = Sigmoid()
        self.attention = None
        self._x = None

    def attend(self, x, mode=Mode.INFER):
        """Return (attended, attention) for an NHWC input."""
        if x.ndim != 4 or x.shape[3] != self.cin:
            raise SizeError(f"attention block expects NHWC with C={self.cin}, got {getattr(x, 'shape', None)}")
        fused = self.fuse.forward(self.branches.forward(x, mode), mode)
        attention = self.sigmoid.forward(fused, mode)
        attended = tensor.broadcast_mul(x, attention)
        self.attention = attention
        self._x = x
        return attended, attention

    def forward(self, x, mode=Mode.INFER):
        attended, _ = self.attend(x, mode)
        return attended

    def backward(self, grad):
        x = self._need_cache(self._x)
        a = self.attention
        # product rule: gradient flows both through the gate value and
        # through the branches that produced it
        dx = grad * a
        da = (grad * x).sum(axis=3, keepdims=True)
        dfused = self.sigmoid.backward(da)
        dcat = self.fuse.backward(dfused)
        return dx + self.branches.backward(dcat)

    def params(self):
        out = dict(self.branches.params())
        out.update({f"fuse.{p}": arr for p, arr in self.fuse.params().items()})
        return out

    def grads(self):
        out = dict(self.branches.grads())
        out.update({f"fuse.{p}": arr for p, arr in self.fuse.grads().items()})
        return out


def export_attention(attention: np.ndarray, path) -> None:
    """Write a single-sample attention map as an 8-bit binary PGM (P5).

    Values are clamped to [0,1] and quantized with round-half-up, so a
    uniform 0.5 map becomes uniform gray 128.
    """
    if attention.ndim != 4 or attention.shape[0] != 1 or attention.shape[3] != 1:
        raise SizeError(f"expected a [1,H,W,1] attention map, got {attention.shape}")
    h, w = attention.shape[1], attention.shape[2]
    clamped = np.clip(attention[0, :, :, 0].astype(np.float64), 0.0, 1.0)
    pixels = np.floor(255.0 * clamped + 0.5).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())
