"""Conway's Game of Life on an 8x8 grid with external interventions.

Borders are dead (non-toroidal). Within one tick the dynamics rule is
applied first and interventions afterwards, so the intervention
instructions always state the final cell values for that step.
"""

from __future__ import annotations

import numpy as np

from . import Environment, KeySpace, StepPacket


def gol_step(grid: np.ndarray) -> np.ndarray:
    """One synchronous step: birth on 3 neighbors, survival on 2 or 3."""
    g = np.asarray(grid, dtype=bool)
    padded = np.zeros((g.shape[0] + 2, g.shape[1] + 2), dtype=np.int32)
    padded[1:-1, 1:-1] = g
    neighbors = (
        padded[:-2, :-2] + padded[:-2, 1:-1] + padded[:-2, 2:]
        + padded[1:-1, :-2] + padded[1:-1, 2:]
        + padded[2:, :-2] + padded[2:, 1:-1] + padded[2:, 2:]
    )
    return (neighbors == 3) | (g & (neighbors == 2))


def gol_intervene(grid: np.ndarray, interventions) -> np.ndarray:
    """Force listed cells to the given states (applied post-dynamics)."""
    cells = [(x, y) for x, y, _ in interventions]
    if len(set(cells)) != len(cells):
        raise ValueError("duplicate cell in intervention list")
    out = np.array(grid, dtype=bool)
    for x, y, alive in interventions:
        if not (0 <= x < out.shape[1] and 0 <= y < out.shape[0]):
            raise ValueError(f"intervention cell ({x}, {y}) out of range")
        out[y, x] = alive
    return out


class GameOfLifeEnv(Environment):
    kind = "life"

    def __init__(self, seed: int, size: int = 8, density: float = 0.4,
                 mode: str = "plain", max_interventions: int = 3):
        if mode not in ("plain", "interventions"):
            raise ValueError(f"unknown life mode {mode!r}")
        self.size = size
        self.density = density
        self.mode = mode
        self.max_interventions = max_interventions
        self.key_space = KeySpace(kinds=("cell",),
                                  axes=(("x", size), ("y", size)))
        super().__init__(seed)

    def _reset(self):
        self.grid = self.rng.random((self.size, self.size)) < self.density

    def _advance(self) -> StepPacket:
        if self.t == 1:
            instructions = [(("cell", x, y), bool(self.grid[y, x]))
                            for y in range(self.size) for x in range(self.size)]
        else:
            self.grid = gol_step(self.grid)
            instructions = []
            if self.mode == "interventions":
                count = int(self.rng.integers(0, self.max_interventions + 1))
                flat = self.rng.choice(self.size * self.size, size=count, replace=False)
                forced = [(int(f % self.size), int(f // self.size),
                           bool(self.rng.integers(0, 2))) for f in flat]
                self.grid = gol_intervene(self.grid, forced)
                instructions = [(("cell", x, y), alive) for x, y, alive in forced]
        given = {k for k, _ in instructions}
        queries = self.all_query_keys()
        answers = self.grid.reshape(-1).copy()
        buckets = ["given" if q in given else "unobserved" for q in queries]
        return StepPacket(t=self.t, instructions=instructions,
                          queries=queries, answers=answers, buckets=buckets)

    def oracle(self, key) -> bool:
        _, x, y = key
        return bool(self.grid[y, x])

    def all_query_keys(self) -> list:
        return [("cell", x, y) for y in range(self.size) for x in range(self.size)]
