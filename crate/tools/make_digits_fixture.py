"""Builds the 8x8 handwritten-digit fixtures under data/ in IDX (ubyte) format.

Source images are the 1797 8x8 digits bundled with scikit-learn (values 0..16).
Images 0..1399 feed the training file, 1400..1796 the test file. Each output
image is an original with a random one-pixel shift (probability 0.5) and a
random intensity gain in [0.8, 1.25], rescaled to 0..255. Binarization happens
at ingest time (threshold 0.5 after scaling to [0, 1]).

    python3 tools/make_digits_fixture.py
"""
import struct

import numpy as np
from sklearn.datasets import load_digits


def augment(images, count, rng):
    out = np.zeros((count, 8, 8), dtype=np.float64)
    for i in range(count):
        img = images[rng.integers(len(images))].reshape(8, 8)
        if rng.random() < 0.5:
            dy, dx = rng.integers(-1, 2, size=2)
            img = np.roll(img, (dy, dx), axis=(0, 1))
            if dy == 1:
                img[0, :] = 0
            elif dy == -1:
                img[-1, :] = 0
            if dx == 1:
                img[:, 0] = 0
            elif dx == -1:
                img[:, -1] = 0
        out[i] = np.clip(img * rng.uniform(0.8, 1.25), 0, 16)
    return np.round(out * 255.0 / 16.0).astype(np.uint8)


def write_idx(path, images):
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        f.write(images.tobytes())


def main():
    data = load_digits().data
    rng = np.random.default_rng(20190101)
    write_idx("data/digits8x8-train-idx3-ubyte", augment(data[:1400], 5000, rng))
    write_idx("data/digits8x8-test-idx3-ubyte", augment(data[1400:], 1000, rng))


if __name__ == "__main__":
    main()
