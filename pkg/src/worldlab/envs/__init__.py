"""Ground-truth environments: true world trajectories plus exact
answer oracles, emitted as per-step instruction/query packets.

Every environment is a deterministic state machine over (kind, params,
seed): advancing the same seed twice yields identical packet streams.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class KeySpace:
    """Discrete structure of an environment's query keys.

    ``kinds`` names the key families; ``axes`` are (name, cardinality)
    coordinate tables. ``indices`` maps a key to (kind_index, axis
    indices...), using each axis's reserved null slot (== cardinality)
    when a kind does not use that axis.
    """

    kinds: tuple
    axes: tuple

    def indices(self, key) -> tuple:
        cache = _INDEX_CACHE.setdefault((self.kinds, self.axes), {})
        hit = cache.get(key)
        if hit is not None:
            return hit
        kind = key[0]
        kind_idx = self.kinds.index(kind)
        coords = key[1:]
        out = [kind_idx]
        for i, (name, card) in enumerate(self.axes):
            if i < len(coords):
                c = int(coords[i])
                if not 0 <= c < card:
                    raise ValueError(f"coordinate {name}={c} out of range [0, {card})")
                out.append(c)
            else:
                out.append(card)  # null slot
        cache[key] = tuple(out)
        return cache[key]


_INDEX_CACHE: dict = {}


@dataclass
class StepPacket:
    """One step of supervision: instructions (key, flag) the model is
    given, query keys it must answer, and the oracle answers."""

    t: int
    instructions: list          # [(key, bool), ...]
    queries: list               # [key, ...]
    answers: np.ndarray         # (k,) bool
    buckets: list = field(default_factory=list)  # provenance per query

    def instruction_keys(self):
        return [k for k, _ in self.instructions]

    def instruction_flags(self):
        return np.array([f for _, f in self.instructions], dtype=bool)


class Environment:
    """Base world: subclasses implement _reset and _advance."""

    kind = "abstract"
    key_space: KeySpace

    def __init__(self, seed: int):
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.t = 0
        self._reset()

    def _reset(self):
        raise NotImplementedError

    def _advance(self) -> StepPacket:
        raise NotImplementedError

    def advance(self) -> StepPacket:
        """Advance one time step and emit its packet (first call: t=1)."""
        self.t += 1
        packet = self._advance()
        packet.t = self.t
        return packet

    def oracle(self, key) -> bool:
        """Exact answer for ``key`` at the current step."""
        raise NotImplementedError

    def all_query_keys(self) -> list:
        raise NotImplementedError

    def check_packet(self, packet: StepPacket):
        """Audit: every flag and answer must match the oracle now."""
        for key, flag in packet.instructions:
            assert flag == self.oracle(key), f"instruction flag mismatch at {key}"
        for key, ans in zip(packet.queries, packet.answers):
            assert bool(ans) == self.oracle(key), f"answer mismatch at {key}"


from .recall import TokenRecallEnv, recall_sequence, recall_variants, RECALL  # noqa: E402
from .numbers import NumberTupleEnv, load_mnist, won_reset, won_step  # noqa: E402
from .life import GameOfLifeEnv, gol_step, gol_intervene  # noqa: E402
from .pathfinder import PathfinderEnv, pathfinder_generate, flood_fill_label  # noqa: E402

_REGISTRY = {
    "recall": TokenRecallEnv,
    "numbers": NumberTupleEnv,
    "life": GameOfLifeEnv,
    "pathfinder": PathfinderEnv,
}


def make_env(kind: str, seed: int, **params) -> Environment:
    if kind not in _REGISTRY:
        raise ValueError(f"unknown environment kind {kind!r}")
    return _REGISTRY[kind](seed=seed, **params)
