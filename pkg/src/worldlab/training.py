"""Trajectory-batched training with single-step gradient truncation.

Each outer cycle samples K fresh worlds and rolls them T steps. The
world state entering a step is always a constant (the barrier), so the
per-step losses are additive in the graph and gradients accumulate
until every ``update_freq`` steps an optimizer step is applied. The
full-BPTT path (recurrent baselines only) differs solely in carrying
graph-connected states across steps.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import nn
from . import tensor as T
from .tensor import Tensor
from .model import UpdaterExtractor, WorldStateRepr


class NumericalAbort(RuntimeError):
    """Training stopped on a non-finite loss or gradient."""


@dataclass
class TrainConfig:
    k_worlds: int = 32            # trajectories per batch (K)
    t_steps: int = 8              # steps per trajectory (T)
    n_cycles: int = 200           # outer cycles (N)
    update_freq: int = 8          # optimizer step every this many steps
    lr: float = 1e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0
    loss_kind: str = "bce"        # bce | cross_entropy
    grad_clip: float | None = None
    bptt_mode: str = "truncated"  # truncated | full (recurrent baselines only)
    env_kind: str = ""
    env_params: dict = field(default_factory=dict)
    eval_every: int = 0           # 0 -> n_cycles // 10
    eval_worlds: int = 8
    checkpoint_every: int = 0     # cycles; 0 disables periodic checkpoints
    timing_in_metrics: bool = False

    def validate(self):
        if min(self.k_worlds, self.t_steps, self.n_cycles, self.update_freq) < 1:
            raise nn.ConfigError("K, T, N and update_freq must all be >= 1")
        if self.update_freq > self.t_steps:
            raise nn.ConfigError("update_freq cannot exceed steps per trajectory")
        if self.bptt_mode not in ("truncated", "full"):
            raise nn.ConfigError(f"unknown bptt_mode {self.bptt_mode!r}")


@dataclass
class MetricsRecord:
    cycle: int
    t: int
    loss: float
    acc: float
    acc_by_bucket: dict
    wall_ms: float = 0.0
    phase: str = "train"


def world_seed(base: int, *branch) -> int:
    """Deterministic child seed from a base seed and a branch path.

    Branch components may be ints or short strings (stream labels)."""
    parts = [int(base)]
    for b in branch:
        if isinstance(b, str):
            parts.append(int.from_bytes(b.encode("utf-8"), "little") % (2 ** 63))
        else:
            parts.append(int(b))
    return int(np.random.SeedSequence(parts).generate_state(1)[0])


def step_loss(predictions: Tensor, answers, loss_kind: str = "bce") -> Tensor:
    """Mean loss of one step's predictions against the oracle answers."""
    if loss_kind == "bce":
        return nn.bce_loss(predictions, np.asarray(answers, dtype=np.float32))
    if loss_kind == "cross_entropy":
        return nn.cross_entropy_loss(predictions, answers)
    raise nn.ConfigError(f"unknown loss kind {loss_kind!r}")


def _bucket_accuracy(probs: np.ndarray, answers: np.ndarray, buckets) -> dict:
    correct = (probs > 0.5) == answers
    out = {}
    flat = np.asarray(buckets).reshape(-1)
    c = correct.reshape(-1)
    for name in sorted(set(flat.tolist())):
        sel = flat == name
        out[name] = float(c[sel].mean())
    return out


@dataclass
class TrainingResult:
    model: object
    metrics: list
    evals: list


def _roll_step(model: UpdaterExtractor, tokens: Tensor, packets):
    key_lists = [p.instruction_keys() for p in packets]
    flag_lists = [p.instruction_flags() for p in packets]
    new_tokens = model.update_batch_tokens(tokens, key_lists, flag_lists)
    query_lists = [p.queries for p in packets]
    probs = model.extract_batch_tokens(new_tokens, query_lists)
    answers = np.stack([p.answers for p in packets]).astype(np.float32)
    return new_tokens, probs, answers


def run_training(config: TrainConfig, model: UpdaterExtractor, env_factory,
                 metrics_sink=None, checkpoint_cb=None) -> TrainingResult:
    """Train an updater-extractor model per the truncated schedule.

    ``env_factory(seed)`` builds one world; ``metrics_sink`` (if given)
    receives every MetricsRecord as it is produced; ``checkpoint_cb``
    is invoked as checkpoint_cb(model, cycle) per the configured cadence
    and once more after the final cycle.
    """
    config.validate()
    optimizer = nn.AdamW(model.parameters(), lr=config.lr, betas=tuple(config.betas),
                         eps=config.eps, weight_decay=config.weight_decay)
    metrics: list[MetricsRecord] = []
    evals: list[MetricsRecord] = []
    eval_every = config.eval_every or max(1, config.n_cycles // 10)
    params = model.parameters()

    for cycle in range(config.n_cycles):
        envs = [env_factory(world_seed(config.seed, cycle, k))
                for k in range(config.k_worlds)]
        states = [model.init_world_state(seed=world_seed(config.seed, cycle, k, 7))
                  for k in range(config.k_worlds)]
        tokens = model.stack_states(states)
        optimizer.zero_grad()
        for t in range(1, config.t_steps + 1):
            tick = time.perf_counter()
            packets = [env.advance() for env in envs]
            tokens, probs, answers = _roll_step(model, Tensor(tokens.data), packets)
            loss = step_loss(probs, answers, config.loss_kind)
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise NumericalAbort(f"non-finite loss at cycle {cycle} step {t}")
            loss.backward()
            if t % config.update_freq == 0:
                if config.grad_clip:
                    nn.clip_grad_norm(params, config.grad_clip)
                optimizer.step()
                optimizer.zero_grad()
            acc_overall = float(((probs.data > 0.5) == answers.astype(bool)).mean())
            record = MetricsRecord(
                cycle=cycle, t=t, loss=loss_val, acc=acc_overall,
                acc_by_bucket=_bucket_accuracy(
                    probs.data, answers.astype(bool),
                    [p.buckets for p in packets]),
                wall_ms=(time.perf_counter() - tick) * 1e3)
            metrics.append(record)
            if metrics_sink is not None:
                metrics_sink(record)
        if config.checkpoint_every and (cycle + 1) % config.checkpoint_every == 0:
            if checkpoint_cb is not None:
                checkpoint_cb(model, cycle)
        if (cycle + 1) % eval_every == 0:
            evals.extend(evaluate_heldout(config, model, env_factory, cycle))
    if checkpoint_cb is not None:
        checkpoint_cb(model, config.n_cycles - 1)
    return TrainingResult(model=model, metrics=metrics, evals=evals)


def evaluate_heldout(config: TrainConfig, model: UpdaterExtractor, env_factory,
                     cycle: int) -> list:
    """Forward-only rollout on freshly seeded held-out worlds."""
    envs = [env_factory(world_seed(config.seed, "eval", cycle, k))
            for k in range(config.eval_worlds)]
    states = [model.init_world_state(seed=world_seed(config.seed, "eval", cycle, k, 7))
              for k in range(config.eval_worlds)]
    tokens = model.stack_states(states)
    out = []
    with T.no_grad():
        for t in range(1, config.t_steps + 1):
            packets = [env.advance() for env in envs]
            tokens, probs, answers = _roll_step(model, tokens, packets)
            loss_val = float(step_loss(probs, answers, config.loss_kind).data)
            out.append(MetricsRecord(
                cycle=cycle, t=t, loss=loss_val,
                acc=float(((probs.data > 0.5) == answers.astype(bool)).mean()),
                acc_by_bucket=_bucket_accuracy(probs.data, answers.astype(bool),
                                               [p.buckets for p in packets]),
                phase="eval"))
    return out


# ---------------------------------------------------------------------------
# recurrent baseline loop (token recall)
# ---------------------------------------------------------------------------

def run_recall_training(config: TrainConfig, model, stream,
                        metrics_sink=None) -> TrainingResult:
    """Train a recurrent recall baseline, truncated or full BPTT.

    One cycle is one batch of K sequences rolled T steps. In truncated
    mode each step's loss is backpropagated as it is produced (the
    barrier makes step losses additive) and an optimizer step fires
    every ``update_freq`` steps, exactly like the trajectory loop. Full
    BPTT keeps the whole graph, so it requires update_freq == T and
    applies one step per batch.
    """
    config.validate()
    truncated = config.bptt_mode == "truncated"
    if not truncated and config.update_freq != config.t_steps:
        raise nn.ConfigError("full BPTT cannot step the optimizer mid-sequence")
    optimizer = nn.AdamW(model.parameters(), lr=config.lr, betas=tuple(config.betas),
                         eps=config.eps, weight_decay=config.weight_decay)
    params = model.parameters()
    rng = np.random.default_rng(config.seed)
    metrics = []
    for cycle in range(config.n_cycles):
        tick = time.perf_counter()
        batch = stream.sample_batch(rng, config.k_worlds)
        optimizer.zero_grad()
        losses, full_losses = [], []
        acc_totals: dict = {}
        for t, loss_t, acc_t in model.step_losses(batch, truncated=truncated):
            loss_val = float(loss_t.data)
            if not np.isfinite(loss_val):
                raise NumericalAbort(f"non-finite loss at cycle {cycle} step {t}")
            losses.append(loss_val)
            for k, (hit, n) in acc_t.items():
                agg = acc_totals.setdefault(k, [0, 0])
                agg[0] += hit
                agg[1] += n
            if truncated:
                loss_t.backward()
                if t % config.update_freq == 0:
                    if config.grad_clip:
                        nn.clip_grad_norm(params, config.grad_clip)
                    optimizer.step()
                    optimizer.zero_grad()
            else:
                full_losses.append(loss_t)
        if not truncated:
            total = full_losses[0]
            for piece in full_losses[1:]:
                total = T.add(total, piece)
            total.backward()
            if config.grad_clip:
                nn.clip_grad_norm(params, config.grad_clip)
            optimizer.step()
        acc_by_bucket = {k: v[0] / max(1, v[1]) for k, v in acc_totals.items()}
        record = MetricsRecord(
            cycle=cycle, t=config.t_steps, loss=float(np.mean(losses)),
            acc=float(np.mean(list(acc_by_bucket.values()))),
            acc_by_bucket=acc_by_bucket,
            wall_ms=(time.perf_counter() - tick) * 1e3)
        metrics.append(record)
        if metrics_sink is not None:
            metrics_sink(record)
    return TrainingResult(model=model, metrics=metrics, evals=[])


def run_full_bptt(config: TrainConfig, model, stream, metrics_sink=None) -> TrainingResult:
    if config.bptt_mode != "full":
        raise nn.ConfigError("run_full_bptt requires bptt_mode == 'full'")
    return run_recall_training(config, model, stream, metrics_sink=metrics_sink)


# ---------------------------------------------------------------------------
# stop-gradient isolation probes
# ---------------------------------------------------------------------------

def _grads_snapshot(params: dict) -> dict:
    return {k: (None if p.grad is None else p.grad.copy()) for k, p in params.items()}


def gradient_isolation_probe(model: UpdaterExtractor, env_factory, t: int,
                             seed: int = 0) -> bool:
    """True iff step-t parameter gradients are bit-identical between a
    live rollout (state passed through the stop-gradient barrier) and a
    rollout where the previous state is detached, serialized, restored,
    and injected as a constant."""
    params = model.parameters()

    def packets_to(step):
        env = env_factory(seed)
        return [env.advance() for _ in range(step)]

    packets = packets_to(t)
    state0 = model.init_world_state(seed=seed)

    # (a) live rollout, barrier between every step
    tokens = Tensor(state0.tokens)
    for s in range(t):
        p = packets[s]
        instr = model.encode_instructions(p.instruction_keys(), p.instruction_flags())
        tokens = model.update_tokens(T.stop_gradient(tokens),
                                     model._instruction_tokens(instr))
    grads_a = _finish_probe(model, tokens, packets[-1], params)

    # (b) detach at t-1, round-trip through serialization, inject
    with T.no_grad():
        prev = Tensor(state0.tokens)
        for s in range(t - 1):
            p = packets[s]
            instr = model.encode_instructions(p.instruction_keys(), p.instruction_flags())
            prev = model.update_tokens(prev, model._instruction_tokens(instr))
    restored = WorldStateRepr.from_bytes(
        WorldStateRepr(tokens=prev.data.copy(), step_index=t - 1).to_bytes())
    p = packets[t - 1]
    instr = model.encode_instructions(p.instruction_keys(), p.instruction_flags())
    tokens_b = model.update_tokens(Tensor(restored.tokens),
                                   model._instruction_tokens(instr))
    grads_b = _finish_probe(model, tokens_b, packets[-1], params)

    for name in params:
        a, b = grads_a[name], grads_b[name]
        if (a is None) != (b is None):
            return False
        if a is not None and not np.array_equal(a, b):
            return False
    return True


def _finish_probe(model, tokens: Tensor, packet, params) -> dict:
    for p in params.values():
        p.zero_grad()
    probs = model.extract_tokens(
        T.reshape(tokens, (1,) + tokens.shape) if tokens.ndim == 2 else tokens,
        T.reshape(model.embed_keys(packet.queries),
                  (1, len(packet.queries), model.config.d)))
    loss = step_loss(probs, packet.answers.astype(np.float32).reshape(1, -1), "bce")
    loss.backward()
    return _grads_snapshot(params)


def recall_isolation_probe(model, batch: dict, t: int, truncated: bool) -> bool:
    """Same probe for the recurrent baseline: compares step-t gradients
    from a rollout (with or without the barrier) against an
    injected-constant previous hidden state. With full BPTT the live
    rollout keeps earlier-step contributions, so the probe is False."""
    params = model.parameters()

    def grads_live():
        for p in params.values():
            p.zero_grad()
        loss = model.step_loss_at(batch, t, truncated=truncated, inject_constant=False)
        loss.backward()
        return _grads_snapshot(params)

    def grads_injected():
        for p in params.values():
            p.zero_grad()
        loss = model.step_loss_at(batch, t, truncated=truncated, inject_constant=True)
        loss.backward()
        return _grads_snapshot(params)

    ga, gb = grads_live(), grads_injected()
    for name in params:
        a, b = ga[name], gb[name]
        if (a is None) != (b is None):
            return False
        if a is not None and not np.array_equal(a, b):
            return False
    return True


# ---------------------------------------------------------------------------
# metrics csv
# ---------------------------------------------------------------------------

CSV_HEADER = ["cycle", "t", "loss", "acc", "acc_given", "acc_unobserved", "acc_recall", "ms"]


class MetricsCsv:
    """Appends MetricsRecords to metrics.csv with a fixed column set.

    The ms column is 0 unless wall-clock persistence was explicitly
    enabled, keeping reruns of the same seed byte-identical.
    """

    def __init__(self, path: str, timing: bool = False):
        self.path = path
        self.timing = timing
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(CSV_HEADER)

    def __call__(self, record: MetricsRecord):
        if record.phase != "train":
            return
        buckets = record.acc_by_bucket
        row = [record.cycle, record.t, f"{record.loss:.6f}", f"{record.acc:.6f}"]
        for name in ("given", "unobserved", "recall"):
            row.append("" if name not in buckets else f"{buckets[name]:.6f}")
        row.append(int(record.wall_ms) if self.timing else 0)
        self._writer.writerow(row)

    def close(self):
        self._fh.close()


def config_as_dict(config: TrainConfig) -> dict:
    out = asdict(config)
    out["betas"] = list(out["betas"])
    return out
