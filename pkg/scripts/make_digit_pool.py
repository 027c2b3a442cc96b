"""Materialize a handwritten-digit pool as IDX ubyte files.

Prefers real MNIST files if a source directory already has them;
otherwise upsamples scikit-learn's bundled 8x8 handwritten digits to
28x28. Either way the output is standard IDX files the loader in
worldlab.envs.numbers can parse.

Usage: python scripts/make_digit_pool.py OUT_DIR
"""

import os
import shutil
import sys

import numpy as np

IMAGE_NAME = "train-images-idx3-ubyte"
LABEL_NAME = "train-labels-idx1-ubyte"


def _resize_bilinear(img: np.ndarray, side: int) -> np.ndarray:
    src = img.astype(np.float64)
    n = src.shape[0]
    pos = (np.arange(side) + 0.5) * n / side - 0.5
    lo = np.clip(np.floor(pos).astype(int), 0, n - 1)
    hi = np.clip(lo + 1, 0, n - 1)
    frac = np.clip(pos - lo, 0.0, 1.0)
    rows = src[lo][:, :] * (1 - frac)[:, None] + src[hi][:, :] * frac[:, None]
    out = rows[:, lo] * (1 - frac)[None, :] + rows[:, hi] * frac[None, :]
    return out


def build_digit_pool(out_dir: str, side: int = 28, source_mnist: str | None = None) -> str:
    os.makedirs(out_dir, exist_ok=True)
    out_images = os.path.join(out_dir, IMAGE_NAME)
    out_labels = os.path.join(out_dir, LABEL_NAME)
    if os.path.exists(out_images) and os.path.exists(out_labels):
        return out_dir
    if source_mnist and os.path.exists(os.path.join(source_mnist, IMAGE_NAME)):
        shutil.copy(os.path.join(source_mnist, IMAGE_NAME), out_images)
        shutil.copy(os.path.join(source_mnist, LABEL_NAME), out_labels)
        return out_dir

    from sklearn.datasets import load_digits

    from worldlab.envs.numbers import write_idx_images, write_idx_labels

    digits = load_digits()
    images = []
    for img in digits.images:             # 8x8 floats in [0, 16]
        big = _resize_bilinear(img, side) * (255.0 / 16.0)
        images.append(np.clip(np.rint(big), 0, 255).astype(np.uint8))
    write_idx_images(out_images, np.stack(images))
    write_idx_labels(out_labels, digits.target.astype(np.uint8))
    return out_dir


if __name__ == "__main__":
    target = sys.argv[1] if len(sys.argv) > 1 else "digit_pool"
    build_digit_pool(target)
    print(f"digit pool ready at {target}")
