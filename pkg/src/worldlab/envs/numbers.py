"""Rotating digit-tuple world over a pool of binarized digit images.

The true state is an n-tuple of 28x28 binary images whose digit classes
advance by one (mod 10) every step, with a fresh image instance drawn
for each class. Queries ask for single pixel values (x, y, slot).
"""

from __future__ import annotations

import os
import struct

import numpy as np

from . import Environment, KeySpace, StepPacket

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
SIDE = 28
BINARIZE_THRESHOLD = 128  # raw byte >= 128 is a lit pixel


class IdxFormatError(ValueError):
    """Malformed IDX file (bad magic number or truncated payload)."""


def read_idx_images(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) < 16:
            raise IdxFormatError(f"{path}: truncated IDX header")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IMAGE_MAGIC:
            raise IdxFormatError(f"{path}: bad image magic 0x{magic:08x}")
        payload = fh.read(count * rows * cols)
    if len(payload) != count * rows * cols:
        raise IdxFormatError(f"{path}: truncated image payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)


def read_idx_labels(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(8)
        if len(header) < 8:
            raise IdxFormatError(f"{path}: truncated IDX header")
        magic, count = struct.unpack(">II", header)
        if magic != LABEL_MAGIC:
            raise IdxFormatError(f"{path}: bad label magic 0x{magic:08x}")
        payload = fh.read(count)
    if len(payload) != count:
        raise IdxFormatError(f"{path}: truncated label payload")
    return np.frombuffer(payload, dtype=np.uint8)


def write_idx_images(path: str, images: np.ndarray):
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols))
        fh.write(images.tobytes())


def write_idx_labels(path: str, labels: np.ndarray):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", LABEL_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def load_mnist(path: str) -> dict[int, np.ndarray]:
    """Load a binarized digit pool, indexed by class, from IDX files.

    ``path`` is a directory holding train-images-idx3-ubyte and
    train-labels-idx1-ubyte. Pixels binarize at byte value >= 128.
    """
    images_path = os.path.join(path, "train-images-idx3-ubyte")
    labels_path = os.path.join(path, "train-labels-idx1-ubyte")
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(f"{path}: image/label counts differ")
    binary = images >= BINARIZE_THRESHOLD
    pool = {}
    for cls in range(10):
        sel = binary[labels == cls]
        if sel.shape[0] == 0:
            raise ValueError(f"digit class {cls} missing from pool at {path}")
        pool[cls] = sel
    return pool


def won_reset(rng: np.random.Generator, pool: dict, n_images: int = 3):
    """Sample a run of consecutive digit classes and one instance each."""
    start = int(rng.integers(0, 10))
    classes = [(start + i) % 10 for i in range(n_images)]
    instances = [int(rng.integers(0, pool[c].shape[0])) for c in classes]
    return classes, instances


def won_step(rng: np.random.Generator, pool: dict, classes, instances):
    """Rotate every class forward (mod 10) and resample fresh instances."""
    classes = [(c + 1) % 10 for c in classes]
    instances = [int(rng.integers(0, pool[c].shape[0])) for c in classes]
    return classes, instances


class NumberTupleEnv(Environment):
    kind = "numbers"

    def __init__(self, seed: int, pool: dict, n_images: int = 3,
                 t1_max_instructions: int = 500, max_instructions: int = 75,
                 n_queries: int = 75):
        self.pool = pool
        self.n_images = n_images
        self.t1_max = t1_max_instructions
        self.later_max = max_instructions
        self.n_queries = n_queries
        self.n_keys = SIDE * SIDE * n_images
        self.key_space = KeySpace(
            kinds=("pixel",),
            axes=(("x", SIDE), ("y", SIDE), ("slot", n_images)))
        super().__init__(seed)

    def _reset(self):
        self.classes, self.instances = won_reset(self.rng, self.pool, self.n_images)

    def _images(self):
        return [self.pool[c][i] for c, i in zip(self.classes, self.instances)]

    def _key(self, flat: int):
        slot, rest = divmod(flat, SIDE * SIDE)
        y, x = divmod(rest, SIDE)
        return ("pixel", x, y, slot)

    def _advance(self) -> StepPacket:
        if self.t > 1:
            self.classes, self.instances = won_step(
                self.rng, self.pool, self.classes, self.instances)
        limit = self.t1_max if self.t == 1 else self.later_max
        n_instr = int(self.rng.integers(0, limit + 1))
        instr_flat = self.rng.choice(self.n_keys, size=n_instr, replace=False)
        instructions = [(self._key(int(f)), self.oracle(self._key(int(f))))
                        for f in instr_flat]
        given = {k for k, _ in instructions}
        query_flat = self.rng.choice(self.n_keys, size=self.n_queries, replace=False)
        queries = [self._key(int(f)) for f in query_flat]
        answers = np.array([self.oracle(q) for q in queries], dtype=bool)
        buckets = ["given" if q in given else "unobserved" for q in queries]
        return StepPacket(t=self.t, instructions=instructions,
                          queries=queries, answers=answers, buckets=buckets)

    def oracle(self, key) -> bool:
        _, x, y, slot = key
        return bool(self._images()[slot][y, x])

    def all_query_keys(self) -> list:
        return [self._key(f) for f in range(self.n_keys)]
