"""Image ingestion and batching.

Native formats are binary PPM (P6) and PGM (P5) at 8 bits per sample;
grayscale is replicated to three channels. Datasets are directories with one
subdirectory per class; class indices follow lexicographic subdirectory
order. Preprocessing is a half-pixel-center bilinear resize followed by
division by 255.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor
from .errors import DataError, FormatError, SizeError

IMAGE_EXTENSIONS = (".ppm", ".pgm")


def _read_header_tokens(data: bytes, count: int, pos: int):
    """Read `count` whitespace-separated header tokens, skipping # comments."""
    tokens = []
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace():
            pos += 1
        if pos == start:
            raise FormatError("truncated image header")
        tokens.append(data[start:pos])
    return tokens, pos


def load_image(path) -> np.ndarray:
    """Decode a P6/P5 file into an (H, W, 3) tensor of raw 0-255 floats."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic = data[:2]
    if magic == b"P6":
        channels = 3
    elif magic == b"P5":
        channels = 1
    else:
        raise FormatError(f"unsupported image magic {magic!r} in {path} (need binary P5/P6)")
    try:
        (w_tok, h_tok, max_tok), pos = _read_header_tokens(data, 3, 2)
        width, height, maxval = int(w_tok), int(h_tok), int(max_tok)
    except ValueError:
        raise FormatError(f"non-numeric image header in {path}") from None
    if width < 1 or height < 1:
        raise FormatError(f"bad image dimensions {width}x{height} in {path}")
    if not 0 < maxval < 256:
        raise FormatError(f"unsupported maxval {maxval} in {path} (8-bit only)")
    pos += 1  # single whitespace byte after maxval
    need = width * height * channels
    payload = data[pos:pos + need]
    if len(payload) < need:
        raise FormatError(f"truncated pixel data in {path}: {len(payload)} of {need} bytes")
    img = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    img = img.astype(tensor.default_dtype())
    if channels == 1:
        img = np.repeat(img, 3, axis=2)
    return img


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample with half-pixel-center mapping and edge clamping.

    Source coordinate for destination index d is (d + 0.5) * in/out - 0.5;
    out-of-range coordinates clamp to the border, so corners are preserved
    and constant images stay constant.
    """
    if out_h < 1 or out_w < 1:
        raise SizeError(f"target size {out_h}x{out_w} must be positive")
    if img.ndim != 3:
        raise SizeError(f"expected an (H,W,C) image, got shape {getattr(img, 'shape', None)}")
    h, w, _ = img.shape

    def axis_coords(n_in, n_out):
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        lo = np.floor(src)
        frac = src - lo
        i0 = np.clip(lo, 0, n_in - 1).astype(np.intp)
        i1 = np.clip(lo + 1, 0, n_in - 1).astype(np.intp)
        return i0, i1, frac

    y0, y1, fy = axis_coords(h, out_h)
    x0, x1, fx = axis_coords(w, out_w)
    fx = fx[None, :, None]
    fy = fy[:, None, None]
    top = img[y0][:, x0] * (1.0 - fx) + img[y0][:, x1] * fx
    bottom = img[y1][:, x0] * (1.0 - fx) + img[y1][:, x1] * fx
    return (top * (1.0 - fy) + bottom * fy).astype(img.dtype)


def normalize(img: np.ndarray) -> np.ndarray:
    """Scale raw 0-255 values into [0,1] by dividing by 255."""
    return img / np.asarray(255.0, dtype=img.dtype)


@dataclass
class Dataset:
    samples: list          # (path, class index) pairs
    class_names: list
    image_hw: tuple        # (target_h, target_w) applied while batching
    _cache: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.samples)

    @property
    def labels(self):
        return [label for _, label in self.samples]

    def image_tensor(self, index: int) -> np.ndarray:
        """Resized, normalized image for one sample (cached)."""
        cached = self._cache.get(index)
        if cached is None:
            path, _ = self.samples[index]
            img = resize_bilinear(load_image(path), *self.image_hw)
            cached = normalize(img)
            self._cache[index] = cached
        return cached


def load_dataset(root, image_hw) -> Dataset:
    """Scan `<root>/<class_name>/*.{ppm,pgm}` into a Dataset."""
    if not os.path.isdir(root):
        raise DataError(f"dataset root {root} is not a directory")
    class_names = sorted(
        d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d))
    )
    samples = []
    for idx, name in enumerate(class_names):
        class_dir = os.path.join(root, name)
        for fname in sorted(os.listdir(class_dir)):
            if fname.lower().endswith(IMAGE_EXTENSIONS):
                samples.append((os.path.join(class_dir, fname), idx))
    if not class_names or not samples:
        raise DataError(f"no class subdirectories with images under {root}")
    return Dataset(samples=samples, class_names=class_names, image_hw=tuple(image_hw))


@dataclass
class Batch:
    images: np.ndarray   # [N, H, W, 3] in [0,1]
    onehot: np.ndarray   # [N, K]
    indices: list


def make_batches(ds: Dataset, indices, batch_size: int, shuffle: bool = False, seed: int = 0):
    """Yield Batches over `indices`; the last batch may be smaller.

    Shuffling permutes the given indices with a generator seeded by `seed`,
    so identical calls produce identical batch sequences.
    """
    if batch_size < 1:
        raise SizeError(f"batch_size must be >= 1, got {batch_size}")
    indices = list(indices)
    for i in indices:
        if not 0 <= i < len(ds.samples):
            raise IndexError(f"sample index {i} outside dataset of {len(ds.samples)}")
    if shuffle:
        order = np.random.default_rng(seed).permutation(len(indices))
        indices = [indices[j] for j in order]
    k = len(ds.class_names)
    dt = tensor.default_dtype()
    for start in range(0, len(indices), batch_size):
        chunk = indices[start:start + batch_size]
        images = np.stack([ds.image_tensor(i) for i in chunk]).astype(dt)
        onehot = np.zeros((len(chunk), k), dtype=dt)
        for row, i in enumerate(chunk):
            onehot[row, ds.samples[i][1]] = 1.0
        yield Batch(images=images, onehot=onehot, indices=chunk)
