"""Token recall task and its query-distribution variants.

A sequence starts with a target token; every later input either repeats
a fresh token or is the special RECALL symbol, which asks for the
target. The variants reshape the query distribution around the same
worlds: disentangled repeat/recall queries, reminder noise in the
labels, and a gap before the first recall pressure appears.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import Environment, KeySpace, StepPacket

RECALL = "RECALL"  # input token id == vocab


def recall_sequence(seed_or_rng, length: int, vocab: int, flip_p: float = 0.3):
    """Sample one (inputs, targets) pair.

    inputs[0] is never RECALL; every later position flips to RECALL with
    probability ``flip_p``; the final position is always RECALL. The
    target is the input itself, or the first input on RECALL positions.
    The RECALL input is encoded as token id ``vocab``.
    """
    if vocab < 2 or length < 2:
        raise ValueError("need vocab >= 2 and length >= 2")
    rng = np.random.default_rng(seed_or_rng) if isinstance(seed_or_rng, (int, np.integer)) else seed_or_rng
    inputs = rng.integers(0, vocab, size=length)
    flips = rng.random(length) < flip_p
    flips[0] = False
    flips[-1] = True
    inputs = np.where(flips, vocab, inputs)
    targets = np.where(inputs == vocab, inputs[0], inputs)
    return inputs.astype(np.int64), targets.astype(np.int64)


@dataclass
class RecallStream:
    """Sequence sampler for one query-distribution scenario.

    seq2seq        - plain copy/recall data as above
    disentangled   - inputs never RECALL; every step carries both a
                     repeat query (answer: current token) and a recall
                     query (answer: the target token)
    reminder_noise - seq2seq, but each target is replaced by the target
                     token with probability ``noise_p``
    gap_shift      - reminder_noise with all recall pressure (RECALL
                     flips and reminder events) suppressed before ``gap``
    """

    scenario: str
    length: int = 12
    vocab: int = 10
    flip_p: float = 0.3
    noise_p: float = 0.05
    gap: int = 0

    def __post_init__(self):
        if self.scenario not in ("seq2seq", "disentangled", "reminder_noise", "gap_shift"):
            raise ValueError(f"unknown recall scenario {self.scenario!r}")

    def sample(self, rng: np.random.Generator, clean: bool = False) -> dict:
        """One sequence; ``clean`` strips reminder noise (test time)."""
        L, V = self.length, self.vocab
        if self.scenario == "disentangled":
            inputs = rng.integers(0, V, size=L).astype(np.int64)
            return {
                "inputs": inputs,
                "repeat_targets": inputs.copy(),
                "recall_targets": np.full(L, inputs[0], dtype=np.int64),
            }
        inputs = rng.integers(0, V, size=L)
        flips = rng.random(L) < self.flip_p
        noise = rng.random(L) < self.noise_p  # drawn always, applied per scenario
        flips[0] = False
        flips[-1] = True
        start = 0
        if self.scenario == "seq2seq":
            noise[:] = False
        elif self.scenario == "gap_shift":
            start = self.gap
            flips[1:start] = False
            flips[-1] = True
            noise[:start] = False
        inputs = np.where(flips, V, inputs).astype(np.int64)
        targets = np.where(inputs == V, inputs[0], inputs)
        if not clean and self.scenario in ("reminder_noise", "gap_shift"):
            targets = np.where(noise, inputs[0], targets)
        return {"inputs": inputs, "targets": targets.astype(np.int64)}

    def sample_batch(self, rng: np.random.Generator, batch: int, clean: bool = False) -> dict:
        rows = [self.sample(rng, clean=clean) for _ in range(batch)]
        return {k: np.stack([r[k] for r in rows]) for k in rows[0]}


def recall_variants(scenario: str, gap: int = 0, **kw) -> RecallStream:
    return RecallStream(scenario=scenario, gap=gap, **kw)


def stream_is_thorough(stream: RecallStream) -> bool:
    """Whether every step of the stream carries recall pressure: a query
    (or reminder event with positive probability) whose answer is pinned
    by the first instruction."""
    if stream.scenario == "disentangled":
        return True
    if stream.scenario == "reminder_noise":
        return stream.noise_p > 0
    if stream.scenario == "gap_shift":
        return stream.noise_p > 0 and stream.gap <= 1
    return False


class TokenRecallEnv(Environment):
    """Packet view of the disentangled recall world, for the
    updater-extractor model and the optimality probes.

    Each step announces the current token as one true instruction and
    asks every (repeat, token) and (recall, token) binary query.
    """

    kind = "recall"

    def __init__(self, seed: int, vocab: int = 4, length: int = 5):
        self.vocab = vocab
        self.length = length
        self.key_space = KeySpace(kinds=("repeat", "recall"),
                                  axes=(("token", vocab),))
        super().__init__(seed)

    def _reset(self):
        self.tokens = self.rng.integers(0, self.vocab, size=self.length)

    def _advance(self) -> StepPacket:
        if self.t > self.length:
            raise ValueError(f"recall world has only {self.length} steps")
        tok = int(self.tokens[self.t - 1])
        instructions = [(("repeat", tok), True)]
        queries = [("repeat", k) for k in range(self.vocab)]
        queries += [("recall", k) for k in range(self.vocab)]
        answers = np.array([self.oracle(q) for q in queries], dtype=bool)
        buckets = ["given"] * self.vocab + ["recall"] * self.vocab
        return StepPacket(t=self.t, instructions=instructions,
                          queries=queries, answers=answers, buckets=buckets)

    def oracle(self, key) -> bool:
        kind, tok = key
        if kind == "repeat":
            return int(self.tokens[self.t - 1]) == tok
        if kind == "recall":
            return int(self.tokens[0]) == tok
        raise ValueError(f"unknown recall key kind {kind!r}")

    def all_query_keys(self) -> list:
        return ([("repeat", k) for k in range(self.vocab)]
                + [("recall", k) for k in range(self.vocab)])

    def enumerate_histories(self):
        """All token sequences the generative process can emit, with
        probabilities (uniform); used by the exact posterior oracle."""
        seqs = [[]]
        for _ in range(self.length):
            seqs = [s + [v] for s in seqs for v in range(self.vocab)]
        p = 1.0 / len(seqs)
        return [(tuple(s), p) for s in seqs]
