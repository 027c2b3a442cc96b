"""Rollout evaluation, trajectory-stability measures, exact-posterior
optimality probes, and belief rendering to PGM images."""

from __future__ import annotations

import itertools
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .model import QueryBatch, UpdaterExtractor
from .tensor import Tensor


@dataclass
class RolloutReport:
    steps: list = field(default_factory=list)
    acc: list = field(default_factory=list)
    acc_by_bucket: dict = field(default_factory=dict)   # name -> list (nan when absent)
    state_norm: list = field(default_factory=list)      # max token L2 norm
    finite: list = field(default_factory=list)
    instruction_counts: list = field(default_factory=list)
    diverged: bool = False

    def acc_at(self, t: int) -> float:
        if t not in self.steps:
            raise KeyError(f"step {t} not covered by this report")
        return self.acc[self.steps.index(t)]

    def norm_at(self, t: int) -> float:
        if t not in self.steps:
            raise KeyError(f"step {t} not covered by this report")
        return self.state_norm[self.steps.index(t)]

    def bucket_at(self, name: str, t: int) -> float:
        return self.acc_by_bucket[name][self.steps.index(t)]


def rollout_eval(model: UpdaterExtractor, env, t_eval: int,
                 query_schedule=None, record_every: int = 1,
                 w0_seed: int | None = None) -> RolloutReport:
    """Advance the model ``t_eval`` steps against a live environment.

    Instructions come from the environment's packets (possibly none);
    queries likewise unless ``query_schedule(t, packet)`` overrides
    them. A non-finite world state sets the divergence flag but the
    rollout continues. ``record_every`` thins the per-step rows for
    very long horizons (the first and last steps are always recorded).
    """
    report = RolloutReport()
    state = model.init_world_state(seed=w0_seed)
    tokens = Tensor(state.tokens.reshape((1,) + state.tokens.shape).copy())
    key_cache: dict = {}
    with T.no_grad():
        for t in range(1, t_eval + 1):
            packet = env.advance()
            keys = packet.instruction_keys()
            flags = packet.instruction_flags()
            tokens = model.update_batch_tokens(tokens, [keys], [flags])
            tokens = Tensor(tokens.data)
            if query_schedule is not None:
                queries, buckets, answers = query_schedule(t, packet)
            else:
                queries, buckets = packet.queries, packet.buckets
                answers = packet.answers
            if not (t == 1 or t == t_eval or t % record_every == 0):
                continue
            qk = tuple(queries)
            if qk not in key_cache:
                if len(key_cache) > 8:   # schedules with fresh queries every step
                    key_cache.clear()
                key_cache[qk] = model.embed_keys(list(queries))
            probs = model.extract(
                _state_of(tokens, t), QueryBatch(embeddings=key_cache[qk]))
            finite = bool(np.all(np.isfinite(tokens.data)))
            if not finite:
                report.diverged = True
            preds = probs.reshape(-1) > 0.5
            truth = np.asarray(answers, dtype=bool)
            report.steps.append(t)
            report.acc.append(float((preds == truth).mean()))
            seen = {}
            for b, ok in zip(buckets, preds == truth):
                seen.setdefault(b, []).append(ok)
            for name in set(list(report.acc_by_bucket) + list(seen)):
                report.acc_by_bucket.setdefault(name, [float("nan")] * (len(report.steps) - 1))
                row = seen.get(name)
                report.acc_by_bucket[name].append(
                    float(np.mean(row)) if row else float("nan"))
            norms = np.linalg.norm(tokens.data[0], axis=-1)
            report.state_norm.append(float(norms.max()))
            report.finite.append(finite)
            report.instruction_counts.append(len(keys))
    return report


def _state_of(tokens: Tensor, t: int):
    from .model import WorldStateRepr
    return WorldStateRepr(tokens=tokens.data[0].copy(), step_index=t)


def stability_delta(report: RolloutReport, t_far: int, t_ref: int = 8) -> float:
    """acc(t_ref) - acc(t_far): positive means accuracy decayed."""
    return report.acc_at(t_ref) - report.acc_at(t_far)


def write_rollout_csv(path: str, report: RolloutReport):
    with open(path, "w", newline="") as fh:
        fh.write("step,acc,acc_given,acc_unobserved,state_norm,finite\n")
        for i, t in enumerate(report.steps):
            given = report.acc_by_bucket.get("given", [float("nan")] * len(report.steps))[i]
            unobs = report.acc_by_bucket.get("unobserved", [float("nan")] * len(report.steps))[i]
            g = "" if np.isnan(given) else f"{given:.6f}"
            u = "" if np.isnan(unobs) else f"{unobs:.6f}"
            fh.write(f"{t},{report.acc[i]:.6f},{g},{u},"
                     f"{report.state_norm[i]:.6f},{int(report.finite[i])}\n")


# ---------------------------------------------------------------------------
# exact posterior probe (tiny recall world)
# ---------------------------------------------------------------------------

def brute_force_posterior(vocab: int, length: int, prefix: tuple, query) -> float:
    """P(query is true at step len(prefix)) by enumerating every full
    token sequence consistent with the announced prefix."""
    t = len(prefix)
    kind, k = query
    total = hits = 0
    for suffix in itertools.product(range(vocab), repeat=length - t):
        seq = prefix + suffix
        total += 1
        if kind == "repeat":
            hits += int(seq[t - 1] == k)
        elif kind == "recall":
            hits += int(seq[0] == k)
        else:
            raise ValueError(f"unknown query kind {kind!r}")
    return hits / total


def optimality_probe(model: UpdaterExtractor, vocab: int = 4, length: int = 5,
                     cap: int = 4096) -> dict:
    """Max absolute deviation of the extractor from the exact posterior,
    over every instruction history the tiny recall world can emit.

    The world announces its current token each step and every
    (repeat, k) / (recall, k) query is probed; the reference posterior
    comes from brute-force enumeration of the generative process.
    """
    if vocab ** length > cap:
        raise ValueError(f"enumeration {vocab}^{length} exceeds cap {cap}")
    queries = ([("repeat", k) for k in range(vocab)]
               + [("recall", k) for k in range(vocab)])
    with T.no_grad():
        query_emb = model.embed_keys(queries)
    worst = 0.0

    def descend(prefix: tuple, tokens: Tensor):
        nonlocal worst
        t = len(prefix)
        if t > 0:
            probs = model.extract(_state_of(tokens, t), QueryBatch(embeddings=query_emb))
            for q, p in zip(queries, probs.reshape(-1)):
                target = brute_force_posterior(vocab, length, prefix, q)
                worst = max(worst, abs(float(p) - target))
        if t == length:
            return
        for tok in range(vocab):
            with T.no_grad():
                nxt = model.update_batch_tokens(
                    Tensor(tokens.data.copy()), [[("repeat", tok)]],
                    [np.array([True])])
            descend(prefix + (tok,), Tensor(nxt.data))

    state = model.init_world_state(seed=0)
    descend((), Tensor(state.tokens.reshape((1,) + state.tokens.shape).copy()))
    return {"max_deviation": worst}


# ---------------------------------------------------------------------------
# belief rendering
# ---------------------------------------------------------------------------

def write_pgm(path: str, values: np.ndarray):
    """8-bit grayscale PGM (P5), probability 1.0 -> byte 255."""
    arr = np.asarray(values, dtype=np.float64)
    quantized = np.rint(arr * 255.0).clip(0, 255).astype(np.uint8)
    h, w = quantized.shape
    with open(path, "wb") as fh:
        fh.write(f"P5 {w} {h} 255\n".encode("ascii"))
        fh.write(quantized.tobytes())


def read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    head, _, rest = blob.partition(b"\n")
    magic, w, h, maxval = head.split()
    if magic != b"P5" or maxval != b"255":
        raise ValueError(f"{path}: not an 8-bit P5 PGM")
    w, h = int(w), int(h)
    return np.frombuffer(rest[:w * h], dtype=np.uint8).reshape(h, w)


def render_beliefs(model: UpdaterExtractor, state, env, out_dir: str,
                   tag: str = "step") -> list:
    """Query every pixel key of a 2-D environment and write one PGM per
    image slot; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    keys = [k for k in env.all_query_keys() if k[0] in ("pixel", "cell")]
    if not keys:
        raise ValueError(f"environment {env.kind} has no 2-D pixel queries")
    slots: dict = {}
    for key in keys:
        slot = key[3] if len(key) == 4 else 0
        slots.setdefault(slot, []).append(key)
    paths = []
    for slot in sorted(slots):
        slot_keys = slots[slot]
        side_x = max(k[1] for k in slot_keys) + 1
        side_y = max(k[2] for k in slot_keys) + 1
        probs = model.extract_keys(state, slot_keys)
        image = np.zeros((side_y, side_x), dtype=np.float64)
        for key, p in zip(slot_keys, probs.reshape(-1)):
            image[key[2], key[1]] = p
        path = os.path.join(out_dir, f"{tag}_slot{slot}.pgm")
        write_pgm(path, image)
        paths.append(path)
    return paths
