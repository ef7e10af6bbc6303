"""Synthetic two-class image dataset for desk-scale experiments.

Class `covid` is a bright centered blob, class `noncovid` a dark center with
a bright ring, both with per-pixel noise and jittered geometry. Written as
binary PPM so the loader's native path is exercised.
"""

import numpy as np


def write_ppm(path, img_u8):
    h, w, _ = img_u8.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img_u8.astype(np.uint8).tobytes())


def write_pgm(path, img_u8):
    h, w = img_u8.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img_u8.astype(np.uint8).tobytes())


def make_image(rng, cls, size=32):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy, cx = (size - 1) / 2 + rng.uniform(-3, 3, size=2)
    d = np.hypot(yy - cy, xx - cx)
    if cls == 0:
        radius = size * 0.22 * rng.uniform(0.85, 1.15)
        base = 30.0 + 195.0 * np.exp(-((d / radius) ** 2))
    else:
        ring = size * 0.32 * rng.uniform(0.9, 1.1)
        width = size * 0.10
        base = 30.0 + 195.0 * np.exp(-(((d - ring) / width) ** 2))
    img = base[:, :, None] + rng.normal(0.0, 18.0, size=(size, size, 3))
    return np.clip(img, 0, 255).astype(np.uint8)


def generate_dataset(root, per_class=500, size=32, seed=2024):
    rng = np.random.default_rng(seed)
    for cls, name in enumerate(("covid", "noncovid")):
        class_dir = root / name
        class_dir.mkdir(parents=True, exist_ok=True)
        for i in range(per_class):
            write_ppm(class_dir / f"{name}_{i:04d}.ppm", make_image(rng, cls, size))
    return root
