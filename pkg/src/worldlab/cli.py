"""Command-line entry point: train / eval / render / gradcheck / exp0.

All run inputs flow from a JSON config (plus --set overrides); exit
codes are fixed for scripting: 0 ok, 2 config error, 3 numerical
abort, 4 missing artifact.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import time

import numpy as np

from . import checkpoint, evaluation, nn, recall_lab, training
from .envs import make_env
from .envs.numbers import load_mnist
from .model import ModelConfig, UpdaterExtractor, model_config_dict
from .training import MetricsCsv, NumericalAbort, TrainConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_MISSING = 4

SCHEMA_VERSION = 1

_TRAIN_KEYS = set(TrainConfig.__dataclass_fields__) - {"env_kind", "env_params"}
_MODEL_KEYS = set(ModelConfig.__dataclass_fields__)
_ENV_KEYS = {"kind", "params"}
_TOP_KEYS = {"schema_version", "seed", "out_dir", "env", "model", "train"}
_REQUIRED = ("schema_version", "seed", "env")


class ConfigFileError(ValueError):
    pass


def load_run_config(path: str, overrides=(), out_dir=None, seed=None) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigFileError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigFileError(f"config is not valid JSON: {exc}")
    cfg = copy.deepcopy(cfg)
    for item in overrides:
        cfg = _apply_override(cfg, item)
    if out_dir is not None:
        cfg["out_dir"] = out_dir
    if seed is not None:
        cfg["seed"] = seed
    validate_run_config(cfg)
    return cfg


def _apply_override(cfg: dict, item: str) -> dict:
    if "=" not in item:
        raise ConfigFileError(f"--set expects key=value, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigFileError(f"--set path {key!r} crosses a non-object")
    node[parts[-1]] = value
    return cfg


def validate_run_config(cfg: dict):
    for key in _REQUIRED:
        if key not in cfg:
            raise ConfigFileError(f"missing required config key: {key}")
    unknown = set(cfg) - _TOP_KEYS
    if unknown:
        raise ConfigFileError(f"unknown config keys: {sorted(unknown)}")
    if cfg["schema_version"] != SCHEMA_VERSION:
        raise ConfigFileError(f"unsupported schema_version {cfg['schema_version']}")
    env = cfg["env"]
    if not isinstance(env, dict) or "kind" not in env:
        raise ConfigFileError("missing required config key: env.kind")
    if set(env) - _ENV_KEYS:
        raise ConfigFileError(f"unknown env keys: {sorted(set(env) - _ENV_KEYS)}")
    bad = set(cfg.get("model", {})) - _MODEL_KEYS
    if bad:
        raise ConfigFileError(f"unknown model keys: {sorted(bad)}")
    bad = set(cfg.get("train", {})) - _TRAIN_KEYS
    if bad:
        raise ConfigFileError(f"unknown train keys: {sorted(bad)}")


def build_env_factory(env_cfg: dict):
    """Returns (factory(seed) -> Environment, probe_env)."""
    kind = env_cfg["kind"]
    params = dict(env_cfg.get("params", {}))
    if kind == "numbers":
        pool_dir = params.pop("mnist_path", None)
        if pool_dir is None:
            raise ConfigFileError("missing required config key: env.params.mnist_path")
        pool = load_mnist(pool_dir)
        factory = lambda seed: make_env("numbers", seed=seed, pool=pool, **params)
    else:
        factory = lambda seed: make_env(kind, seed=seed, **params)
    return factory, factory(0)


def build_train_config(cfg: dict) -> TrainConfig:
    tc = TrainConfig(seed=cfg["seed"], env_kind=cfg["env"]["kind"],
                     env_params=dict(cfg["env"].get("params", {})))
    for key, val in cfg.get("train", {}).items():
        setattr(tc, key, tuple(val) if key == "betas" else val)
    if "checkpoint_every" not in cfg.get("train", {}):
        # periodic saves so a numerical abort still leaves a recent checkpoint
        tc.checkpoint_every = max(1, tc.n_cycles // 10)
    tc.validate()
    return tc


def build_model(cfg: dict, key_space) -> UpdaterExtractor:
    mc = ModelConfig(**cfg.get("model", {}))
    return UpdaterExtractor(mc, key_space, seed=cfg["seed"])


def _out_dir(cfg: dict) -> str:
    out = cfg.get("out_dir", "run_out")
    os.makedirs(out, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.set or (), args.out, args.seed)
    out = _out_dir(cfg)
    env_factory, probe = build_env_factory(cfg["env"])
    tconfig = build_train_config(cfg)
    model = build_model(cfg, probe.key_space)
    sink = MetricsCsv(os.path.join(out, "metrics.csv"), timing=tconfig.timing_in_metrics)
    ckpt_dir = os.path.join(out, "checkpoint")

    def save_ckpt(m, cycle):
        checkpoint.save_model(m, ckpt_dir, model_config_dict(m))

    try:
        result = training.run_training(tconfig, model, env_factory,
                                       metrics_sink=sink, checkpoint_cb=save_ckpt)
    except NumericalAbort as exc:
        sink.close()
        print(f"aborted: {exc}", file=sys.stderr)
        print(f"last good checkpoint retained at {ckpt_dir}", file=sys.stderr)
        return EXIT_NUMERIC
    sink.close()
    for rec in result.evals:
        extras = " ".join(f"{k}={v:.3f}" for k, v in sorted(rec.acc_by_bucket.items()))
        print(f"eval cycle={rec.cycle} t={rec.t} loss={rec.loss:.4f} "
              f"acc={rec.acc:.4f} {extras}")
    print(f"done: metrics at {out}/metrics.csv, checkpoint at {ckpt_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_run_config(args.config, args.set or (), args.out, args.seed)
    out = _out_dir(cfg)
    if not os.path.isdir(args.checkpoint):
        print(f"checkpoint not found: {args.checkpoint}", file=sys.stderr)
        return EXIT_MISSING
    model, _ = checkpoint.load_model(args.checkpoint)
    env_factory, _ = build_env_factory(cfg["env"])
    env = env_factory(cfg["seed"])
    record_every = args.record_every or 1
    report = evaluation.rollout_eval(model, env, args.t_eval,
                                     record_every=record_every)
    evaluation.write_rollout_csv(os.path.join(out, "rollout.csv"), report)
    print(f"rollout of {args.t_eval} steps written to {out}/rollout.csv "
          f"(diverged={report.diverged})")
    return EXIT_OK


def cmd_render(args) -> int:
    cfg = load_run_config(args.config, args.set or (), args.out, args.seed)
    out = _out_dir(cfg)
    if not os.path.isdir(args.checkpoint):
        print(f"checkpoint not found: {args.checkpoint}", file=sys.stderr)
        return EXIT_MISSING
    model, _ = checkpoint.load_model(args.checkpoint)
    env_factory, _ = build_env_factory(cfg["env"])
    env = env_factory(cfg["seed"])
    state = model.init_world_state(seed=cfg["seed"])
    written = []
    for t in range(1, args.steps + 1):
        packet = env.advance()
        state = model.update_with_keys(state, packet.instruction_keys(),
                                       packet.instruction_flags())
        written += evaluation.render_beliefs(model, state, env, out, tag=f"step{t:04d}")
    print(f"wrote {len(written)} PGM files under {out}")
    return EXIT_OK


GRADCHECK_TOLERANCE = 1e-3


def gradcheck_suite(float64: bool = True) -> dict:
    """Finite-difference checks over every block type on small dims."""
    rng = np.random.default_rng(1234)
    from . import tensor as T
    from .tensor import Tensor
    results = {}

    att = nn.AttentionLayer(rng, 8, 2)
    q = Tensor(rng.normal(size=(3, 8)).astype(np.float32))
    ctx = Tensor(rng.normal(size=(5, 8)).astype(np.float32))
    results["attention"] = nn.grad_check(
        lambda: T.tsum(att(q, ctx)), att.parameters(), float64=float64)

    block = nn.DecoderBlock(rng, 8, 2, 16, self_attention=True)
    x = Tensor(rng.normal(size=(4, 8)).astype(np.float32))
    c = Tensor(rng.normal(size=(3, 8)).astype(np.float32))
    results["decoder_block"] = nn.grad_check(
        lambda: T.tsum(block(x, c)), block.parameters(), float64=float64)

    cell = nn.LSTMCell(rng, 6, 5)
    xs = Tensor(rng.normal(size=(4, 6)).astype(np.float32))
    h0 = Tensor(rng.normal(size=(4, 5)).astype(np.float32))
    c0 = Tensor(rng.normal(size=(4, 5)).astype(np.float32))
    results["lstm_cell"] = nn.grad_check(
        lambda: T.tsum(cell(xs, h0, c0)[0]), cell.parameters(), float64=float64)

    head = nn.Linear(rng, 8, 1)
    hx = Tensor(rng.normal(size=(6, 8)).astype(np.float32))
    targets = rng.integers(0, 2, size=6).astype(np.float32)
    results["bce_head"] = nn.grad_check(
        lambda: nn.bce_loss(T.sigmoid(T.reshape(head(hx), (6,))), targets),
        head.parameters(), float64=float64)

    clf = nn.Linear(rng, 8, 10)
    cx = Tensor(rng.normal(size=(6, 8)).astype(np.float32))
    classes = rng.integers(0, 10, size=6)
    results["cross_entropy_head"] = nn.grad_check(
        lambda: nn.cross_entropy_loss(clf(cx), classes),
        clf.parameters(), float64=float64)

    norm = nn.LayerNorm(8)
    nx = Tensor(rng.normal(size=(4, 8)).astype(np.float32))
    results["layer_norm"] = nn.grad_check(
        lambda: T.tsum(T.mul(norm(nx), norm(nx))), norm.parameters(), float64=float64)
    return results


def cmd_gradcheck(args) -> int:
    start = time.perf_counter()
    results = gradcheck_suite(float64=not args.float32)
    failed = False
    for name, err in results.items():
        status = "ok" if err <= GRADCHECK_TOLERANCE else "FAIL"
        if err > GRADCHECK_TOLERANCE:
            failed = True
        print(f"{name:20s} max_rel_err={err:.3e} {status}")
    print(f"gradcheck finished in {time.perf_counter() - start:.1f}s")
    return EXIT_CONFIG if failed else EXIT_OK


def cmd_exp0(args) -> int:
    out = args.out or "run_out"
    os.makedirs(out, exist_ok=True)
    scenario = args.scenario.upper()
    if scenario not in recall_lab.SCENARIOS:
        print(f"unknown scenario {scenario!r} (A..E)", file=sys.stderr)
        return EXIT_CONFIG
    gaps = [int(g) for g in (args.gaps or "1,2,4,6").split(",")] if scenario == "E" else [0]
    rows = []
    try:
        for g in gaps:
            row = recall_lab.run_experiment0(scenario, gap=g, seed=args.seed or 0,
                                             n_batches=args.batches)
            rows.append(row)
            print(f"scenario {scenario} g={row['g']}: copy={row['copy_acc']:.4f} "
                  f"recall={row['recall_acc']:.4f} clean={row['recall_acc_clean']:.4f}")
    except NumericalAbort as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    recall_lab.write_exp0_csv(os.path.join(out, "exp0_results.csv"), rows)
    print(f"results written to {out}/exp0_results.csv")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="worldlab")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required)
        p.add_argument("--set", action="append", metavar="K=V")
        p.add_argument("--out", default=None)
        p.add_argument("--seed", type=int, default=None)

    p_train = sub.add_parser("train", help="run the training loop")
    common(p_train)
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="roll out a checkpoint against an environment")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--t-eval", type=int, default=64)
    p_eval.add_argument("--record-every", type=int, default=0)
    p_eval.set_defaults(fn=cmd_eval)

    p_render = sub.add_parser("render", help="render belief maps to PGM files")
    common(p_render)
    p_render.add_argument("--checkpoint", required=True)
    p_render.add_argument("--steps", type=int, default=1)
    p_render.set_defaults(fn=cmd_render)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p_grad.add_argument("--float32", action="store_true",
                        help="noisy mode: run the differences in float32")
    p_grad.set_defaults(fn=cmd_gradcheck)

    p_exp = sub.add_parser("exp0", help="recall-lab scenario A..E")
    p_exp.add_argument("scenario")
    p_exp.add_argument("--out", default=None)
    p_exp.add_argument("--seed", type=int, default=None)
    p_exp.add_argument("--batches", type=int, default=None)
    p_exp.add_argument("--gaps", default=None, help="comma list for scenario E")
    p_exp.set_defaults(fn=cmd_exp0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigFileError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except nn.ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_MISSING


if __name__ == "__main__":
    sys.exit(main())
