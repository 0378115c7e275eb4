"""Regenerate the 64x64 grayscale benchmark crops under crates/core/tests/data.

Sources are scikit-image sample images (camera: CC0, astronaut: public domain,
brick: CC0). Each source is converted to 8-bit grayscale, reduced by 2x2 or
4x4 block averaging, and cropped to 64x64.
"""
import os
import numpy as np
from skimage import data, color

OUT = os.path.join(os.path.dirname(__file__), "..", "crates", "core", "tests", "data")


def to_gray_u8(img):
    if img.ndim == 3:
        img = color.rgb2gray(img[..., :3]) * 255.0
    return img.astype(np.float64)


def block_reduce(img, k):
    h, w = img.shape[0] // k * k, img.shape[1] // k * k
    img = img[:h, :w]
    return img.reshape(h // k, k, w // k, k).mean(axis=(1, 3))


def write_pgm(path, img):
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        f.write(img.tobytes())


# (name, source, reduction factor, row, col) of the 64x64 crop after reduction
CROPS = [
    ("camera", data.camera, 4, 16, 32),
    ("astronaut", data.astronaut, 4, 8, 40),
    ("brick", data.brick, 4, 32, 32),
]

if __name__ == "__main__":
    os.makedirs(OUT, exist_ok=True)
    for name, src, k, r, c in CROPS:
        img = block_reduce(to_gray_u8(src()), k)[r : r + 64, c : c + 64]
        assert img.shape == (64, 64), (name, img.shape)
        write_pgm(os.path.join(OUT, f"{name}64.pgm"), img)
        print(name, img.shape, img.min(), img.max())
