"""Synthetic dashed-path connectivity task, fed progressively.

Each instance renders two dashed lattice paths plus two solid 2x2 dots;
the label says whether both dots terminate the same path. Pixels are
revealed partition by partition, and the model is queried about pixels
it has already seen plus the instance class.

Geometry is constrained so that an independent flood-fill oracle (with
one-cell gap bridging) recovers the label exactly: paths keep Chebyshev
distance >= 5 from each other, dashes leave single-cell gaps, and only
dots contain solid 2x2 blocks.
"""

from __future__ import annotations

import csv
import itertools

import numpy as np

from . import Environment, KeySpace, StepPacket

SEPARATION = 5   # min Chebyshev distance between cells of different paths
BRIDGE = 2       # flood fill connects pixels within this Chebyshev radius


class PathfinderOracleError(ValueError):
    """Rendered image does not contain exactly two dots."""


def _walk(rng: np.random.Generator, side: int, length: int, forbidden: set):
    """Self-avoiding 4-direction walk that never folds onto itself
    (no cell adjacent to its own older cells) and avoids ``forbidden``."""
    start = (int(rng.integers(0, side)), int(rng.integers(0, side)))
    if start in forbidden:
        return None
    cells = [start]
    own = {start}
    for _ in range(length - 1):
        x, y = cells[-1]
        recent = set(cells[-2:])
        options = []
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            c = (x + dx, y + dy)
            if not (0 <= c[0] < side and 0 <= c[1] < side):
                continue
            if c in forbidden or c in own:
                continue
            crowded = False
            for ex in range(c[0] - 1, c[0] + 2):
                for ey in range(c[1] - 1, c[1] + 2):
                    if (ex, ey) in own and (ex, ey) not in recent:
                        crowded = True
            if crowded:
                continue
            options.append(c)
        if not options:
            return None
        nxt = options[int(rng.integers(0, len(options)))]
        cells.append(nxt)
        own.add(nxt)
    return cells


def _inflate(cells, side: int, radius: int) -> set:
    out = set()
    for x, y in cells:
        for ex in range(max(0, x - radius), min(side, x + radius + 1)):
            for ey in range(max(0, y - radius), min(side, y + radius + 1)):
                out.add((ex, ey))
    return out


def _dot_cells(anchor, side: int):
    x0 = min(anchor[0], side - 2)
    y0 = min(anchor[1], side - 2)
    return [(x0 + dx, y0 + dy) for dx in (0, 1) for dy in (0, 1)]


def pathfinder_generate(seed: int, side: int = 32):
    """Deterministic instance: (side x side bool image, bool label)."""
    for sub in itertools.count():
        rng = np.random.default_rng([seed, sub])
        for _ in range(100):
            out = _try_generate(rng, side)
            if out is not None:
                return out


def _try_generate(rng: np.random.Generator, side: int):
    label = bool(rng.random() < 0.5)
    length_a = int(rng.integers(12, 20)) * 2 + 1   # odd, 25..39 cells
    length_b = int(rng.integers(12, 20)) * 2 + 1
    path_a = _walk(rng, side, length_a, forbidden=set())
    if path_a is None:
        return None
    forbidden = _inflate(path_a, side, SEPARATION - 1)
    path_b = _walk(rng, side, length_b, forbidden=forbidden)
    if path_b is None:
        return None
    if label:
        anchors = [path_a[0], path_a[-1]]
    else:
        anchors = [path_a[0] if rng.random() < 0.5 else path_a[-1],
                   path_b[0] if rng.random() < 0.5 else path_b[-1]]
    squares = [set(_dot_cells(a, side)) for a in anchors]
    # dots must stay visually distinct: squares disjoint with a gap
    for (ax, ay) in squares[0]:
        for (bx, by) in squares[1]:
            if max(abs(ax - bx), abs(ay - by)) < 2:
                return None
    image = np.zeros((side, side), dtype=bool)
    for path in (path_a, path_b):
        for i in range(0, len(path), 2):     # dashes: every other cell
            x, y = path[i]
            image[y, x] = True
    for anchor in anchors:
        for x, y in _dot_cells(anchor, side):
            image[y, x] = True
    # reject stray solid 2x2 blocks so dots are the only block clusters
    clusters = _find_dots(image)
    if len(clusters) != 2:
        return None
    return image, label


def _find_dots(image: np.ndarray):
    """Clusters of overlapping solid 2x2 blocks."""
    side = image.shape[0]
    blocks = []
    for y in range(side - 1):
        for x in range(side - 1):
            if image[y, x] and image[y, x + 1] and image[y + 1, x] and image[y + 1, x + 1]:
                blocks.append({(x, y), (x + 1, y), (x, y + 1), (x + 1, y + 1)})
    clusters: list[set] = []
    for block in blocks:
        merged = [c for c in clusters if c & block]
        for c in merged:
            clusters.remove(c)
            block = block | c
        clusters.append(block)
    return clusters


def flood_fill_label(image: np.ndarray) -> bool:
    """Independent label oracle: connect lit pixels across one-cell dash
    gaps (Chebyshev radius 2) and test whether both dots share a
    component."""
    dots = _find_dots(image)
    if len(dots) != 2:
        raise PathfinderOracleError(f"expected 2 dots, found {len(dots)}")
    side = image.shape[0]
    comp = -np.ones((side, side), dtype=np.int32)
    next_comp = 0
    for sy in range(side):
        for sx in range(side):
            if not image[sy, sx] or comp[sy, sx] >= 0:
                continue
            stack = [(sx, sy)]
            comp[sy, sx] = next_comp
            while stack:
                x, y = stack.pop()
                for nx in range(max(0, x - BRIDGE), min(side, x + BRIDGE + 1)):
                    for ny in range(max(0, y - BRIDGE), min(side, y + BRIDGE + 1)):
                        if image[ny, nx] and comp[ny, nx] < 0:
                            comp[ny, nx] = next_comp
                            stack.append((nx, ny))
            next_comp += 1
    (ax, ay) = next(iter(dots[0]))
    (bx, by) = next(iter(dots[1]))
    return bool(comp[ay, ax] == comp[by, bx])


def load_pathfinder_external(images_path: str, labels_path: str, side: int = 32):
    """Load user-supplied instances: raw u8 images (side*side bytes per
    instance, row-major) plus an index,label CSV."""
    raw = np.fromfile(images_path, dtype=np.uint8)
    per = side * side
    if raw.size % per != 0:
        raise ValueError(f"{images_path}: size not a multiple of {per}")
    images = raw.reshape(-1, side, side) > 0
    labels = {}
    with open(labels_path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            labels[int(row[0])] = bool(int(row[1]))
    if len(labels) != images.shape[0]:
        raise ValueError("label count does not match image count")
    return [(images[i], labels[i]) for i in range(images.shape[0])]


class PathfinderEnv(Environment):
    kind = "pathfinder"

    def __init__(self, seed: int, side: int = 32, n_partitions: int = 8,
                 n_queries: int = 64, instance=None):
        self.side = side
        self.n_partitions = n_partitions
        self.n_queries = n_queries
        if (side * side) % n_partitions != 0:
            raise ValueError("pixel count must divide evenly into partitions")
        self.instance = instance
        self.key_space = KeySpace(kinds=("pixel", "class"),
                                  axes=(("x", side), ("y", side)))
        super().__init__(seed)

    def _reset(self):
        if self.instance is None:
            self.image, self.label = pathfinder_generate(self.seed, self.side)
        else:
            self.image, self.label = self.instance
        flat = self.rng.permutation(self.side * self.side)
        per = flat.size // self.n_partitions
        self.partitions = [flat[i * per:(i + 1) * per] for i in range(self.n_partitions)]

    def _key(self, flat: int):
        y, x = divmod(int(flat), self.side)
        return ("pixel", x, y)

    def _advance(self) -> StepPacket:
        if self.t > self.n_partitions:
            raise ValueError("all partitions already revealed")
        part = self.partitions[self.t - 1]
        instructions = [(self._key(f), self.oracle(self._key(f))) for f in part]
        observed = np.concatenate(self.partitions[:self.t])
        picks = self.rng.choice(observed.size, size=self.n_queries, replace=False)
        current = {int(f) for f in part}
        queries, buckets = [], []
        for p in picks:
            f = int(observed[p])
            queries.append(self._key(f))
            buckets.append("given" if f in current else "recall")
        queries.append(("class",))
        buckets.append("class")
        answers = np.array([self.oracle(q) for q in queries], dtype=bool)
        return StepPacket(t=self.t, instructions=instructions,
                          queries=queries, answers=answers, buckets=buckets)

    def oracle(self, key) -> bool:
        if key[0] == "class":
            return bool(self.label)
        _, x, y = key
        return bool(self.image[y, x])

    def all_query_keys(self) -> list:
        keys = [self._key(f) for f in range(self.side * self.side)]
        keys.append(("class",))
        return keys
