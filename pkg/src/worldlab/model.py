"""Updater-extractor model over a tokenized recurrent world state.

The world state is a fixed grid of m tokens of width d. The updater is
a transformer decoder that self-attends over the state tokens and
cross-attends to the current instruction set; the extractor is a
decoder that answers each query independently against the state (query
self-attention disabled). Instruction and query embeddings come from
small learned tables over the environment's discrete key space.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import nn
from . import tensor as T
from .tensor import Tensor
from .envs import KeySpace


@dataclass
class ModelConfig:
    m: int = 16                # world-state tokens
    d: int = 64                # token width
    n_heads: int = 4
    updater_layers: int = 2
    extractor_layers: int = 2
    ff_width: int = 256
    w0_mode: str = "zeros"     # zeros | seeded-random

    def validate(self):
        if self.d % self.n_heads != 0:
            raise nn.ConfigError(f"d={self.d} not divisible by n_heads={self.n_heads}")
        if self.w0_mode not in ("zeros", "seeded-random"):
            raise nn.ConfigError(f"unknown w0_mode {self.w0_mode!r}")


@dataclass(frozen=True)
class WorldStateRepr:
    """Immutable model belief state: tokens (m, d) plus its step index."""
    tokens: np.ndarray
    step_index: int = 0

    def __post_init__(self):
        self.tokens.setflags(write=False)

    def to_bytes(self) -> bytes:
        m, d = self.tokens.shape
        header = struct.pack("<III", m, d, self.step_index)
        return header + self.tokens.astype("<f4").tobytes()

    @staticmethod
    def from_bytes(blob: bytes) -> "WorldStateRepr":
        m, d, step = struct.unpack("<III", blob[:12])
        data = np.frombuffer(blob[12:], dtype="<f4").reshape(m, d).copy()
        return WorldStateRepr(tokens=data, step_index=step)


@dataclass
class InstructionBatch:
    """Embedded instructions: one truth flag per query embedding."""
    embeddings: Tensor          # (j, d), j may be 0
    flags: np.ndarray           # (j,) bool

    def __post_init__(self):
        if self.embeddings.shape[0] != len(self.flags):
            raise nn.ConfigError("one flag required per instruction embedding")


@dataclass
class QueryBatch:
    embeddings: Tensor          # (k, d), k >= 1
    provenance: list = field(default_factory=list)


def init_world_state(config: ModelConfig, seed: int | None = None) -> WorldStateRepr:
    """Fresh w_0: all zeros, or reproducible small gaussian noise."""
    if config.w0_mode == "zeros":
        tokens = np.zeros((config.m, config.d), dtype=np.float32)
    else:
        rng = np.random.default_rng(0 if seed is None else seed)
        tokens = rng.normal(0.0, 0.02, size=(config.m, config.d)).astype(np.float32)
    return WorldStateRepr(tokens=tokens, step_index=0)


# Query/instruction/positional signals enter residual streams whose
# post-norm scale is ~1. Embeddings left at their raw 0.02 init are
# drowned out there and the query/instruction binding never takes off
# at desk-scale budgets, so these carriers are rescaled to this RMS at
# build time (deterministic given the seed).
SIGNAL_RMS = 0.5


class KeyEmbedder(nn.Module):
    """Discrete task keys -> d-dim embeddings.

    Per-axis tables (plus a kind table) are concatenated and linearly
    projected; each axis reserves one extra null row for kinds that do
    not use it. The projection is rescaled at build time so emitted
    embeddings have RMS around SIGNAL_RMS.
    """

    AXIS_WIDTH = 16

    def __init__(self, rng, key_space: KeySpace, d: int):
        self.key_space = key_space
        self.kind_table = nn.Embedding(rng, len(key_space.kinds), self.AXIS_WIDTH)
        self.axis_tables = [nn.Embedding(rng, card + 1, self.AXIS_WIDTH)
                            for _, card in key_space.axes]
        self.proj = nn.Linear(rng, self.AXIS_WIDTH * (1 + len(key_space.axes)), d)
        measured = self._sample_rms(rng)
        factor = SIGNAL_RMS / max(measured, 1e-8)
        self.proj.w.data *= factor
        self.proj.b.data *= factor

    def _sample_rms(self, rng, n: int = 256) -> float:
        rows = [self.kind_table.table.data[rng.integers(0, len(self.key_space.kinds), size=n)]]
        for (_, card), table in zip(self.key_space.axes, self.axis_tables):
            rows.append(table.table.data[rng.integers(0, card + 1, size=n)])
        concat = np.concatenate(rows, axis=-1)
        out = concat @ self.proj.w.data + self.proj.b.data
        return float(np.sqrt((out ** 2).mean()))

    def __call__(self, keys) -> Tensor:
        idx = np.asarray([self.key_space.indices(k) for k in keys], dtype=np.int64)
        parts = [self.kind_table(idx[:, 0])]
        parts += [table(idx[:, i + 1]) for i, table in enumerate(self.axis_tables)]
        return self.proj(T.concat(parts, axis=-1))


class UpdaterExtractor(nn.Module):
    """The full model: key embedder, flag embedding, updater stack,
    extractor stack, scalar answer head."""

    kind = "updater_extractor"

    def __init__(self, config: ModelConfig, key_space: KeySpace, seed: int = 0):
        config.validate()
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        d = config.d
        self.embedder = KeyEmbedder(rng, key_space, d)
        self.flag_table = nn.Embedding(rng, 2, d)
        self.world_pos = nn.Embedding(rng, config.m, d)
        for table in (self.flag_table.table, self.world_pos.table):
            table.data *= SIGNAL_RMS / max(float(np.sqrt((table.data ** 2).mean())), 1e-8)
        self.updater_blocks = [
            nn.DecoderBlock(rng, d, config.n_heads, config.ff_width, self_attention=True)
            for _ in range(config.updater_layers)
        ]
        self.updater_norm = nn.LayerNorm(d)
        self.extractor_blocks = [
            nn.DecoderBlock(rng, d, config.n_heads, config.ff_width, self_attention=False)
            for _ in range(config.extractor_layers)
        ]
        self.extractor_norm = nn.LayerNorm(d)
        self.head = nn.Linear(rng, d, 1)

    # -- embedding surfaces ---------------------------------------------
    def embed_keys(self, keys) -> Tensor:
        return self.embedder(keys)

    def encode_instruction(self, query_embedding: Tensor, flag: bool) -> Tensor:
        """Single instruction token: query embedding + flag embedding."""
        return T.add(query_embedding, self.flag_table(np.array([int(flag)])))

    def encode_instructions(self, keys, flags) -> InstructionBatch:
        flags = np.asarray(flags, dtype=bool)
        if len(keys) == 0:
            emb = Tensor(np.zeros((0, self.config.d), dtype=np.float32))
            return InstructionBatch(embeddings=emb, flags=flags)
        return InstructionBatch(embeddings=self.embed_keys(keys), flags=flags)

    def _instruction_tokens(self, batch: InstructionBatch) -> Tensor:
        if batch.embeddings.shape[0] == 0:
            return batch.embeddings
        flag_vecs = self.flag_table(batch.flags.astype(np.int64))
        return T.add(batch.embeddings, flag_vecs)

    # -- core forward passes ----------------------------------------------
    def _positioned(self, tokens: Tensor) -> Tensor:
        m = self.config.m
        return T.add(tokens, self.world_pos(np.arange(m)))

    def update_tokens(self, tokens: Tensor, instr_tokens: Tensor | None,
                      cross_mask=None) -> Tensor:
        """Advance (..., m, d) state tokens one step; graph-connected."""
        x = self._positioned(tokens)
        if instr_tokens is not None and instr_tokens.shape[-2] == 0:
            instr_tokens = None
        for block in self.updater_blocks:
            x = block(x, instr_tokens, cross_mask=cross_mask)
        return self.updater_norm(x)

    def extract_tokens(self, tokens: Tensor, query_emb: Tensor) -> Tensor:
        """Answer queries (..., k, d) against state tokens; returns
        probabilities (..., k) in the open unit interval."""
        ctx = self._positioned(tokens)
        x = query_emb
        for block in self.extractor_blocks:
            x = block(x, ctx)
        x = self.extractor_norm(x)
        logits = self.head(x)
        probs = T.sigmoid(T.reshape(logits, logits.shape[:-1]))
        return T.clip(probs, nn.PROB_EPS, 1.0 - nn.PROB_EPS)

    # -- public single-state operations -----------------------------------
    def init_world_state(self, seed: int | None = None) -> WorldStateRepr:
        return init_world_state(self.config, seed)

    def update(self, state: WorldStateRepr, instructions: InstructionBatch) -> WorldStateRepr:
        if instructions.embeddings.shape[0] and instructions.embeddings.shape[-1] != self.config.d:
            raise nn.ConfigError("instruction embedding dim mismatch")
        with T.no_grad():
            out = self.update_tokens(Tensor(state.tokens),
                                     self._instruction_tokens(instructions))
        return WorldStateRepr(tokens=out.data, step_index=state.step_index + 1)

    def update_with_keys(self, state: WorldStateRepr, keys, flags) -> WorldStateRepr:
        return self.update(state, self.encode_instructions(keys, flags))

    def extract(self, state: WorldStateRepr, queries: QueryBatch) -> np.ndarray:
        if queries.embeddings.shape[0] == 0:
            raise nn.ConfigError("extract requires at least one query")
        with T.no_grad():
            probs = self.extract_tokens(Tensor(state.tokens), queries.embeddings)
        return probs.data

    def extract_keys(self, state: WorldStateRepr, keys) -> np.ndarray:
        if len(keys) == 0:
            raise nn.ConfigError("extract requires at least one query")
        with T.no_grad():
            out = self.extract(state, QueryBatch(embeddings=self.embed_keys(keys)))
        return out

    # -- batched training forward ------------------------------------------
    def stack_states(self, states) -> Tensor:
        return Tensor(np.stack([s.tokens for s in states]))

    def update_batch_tokens(self, tokens: Tensor, key_lists, flag_lists) -> Tensor:
        """Batched update with per-world variable instruction counts.

        Worlds with no instructions take a pure dynamics step; the rest
        are padded to a common length and masked, so every world sees
        exactly its own instruction set.
        """
        B = tokens.shape[0]
        counts = [len(k) for k in key_lists]
        if all(c == 0 for c in counts):
            return self.update_tokens(tokens, None)
        if min(counts) == max(counts):
            flat_keys = [k for keys in key_lists for k in keys]
            emb = self.embed_keys(flat_keys)
            flags = np.concatenate([np.asarray(f, dtype=np.int64) for f in flag_lists])
            toks = T.add(emb, self.flag_table(flags))
            toks = T.reshape(toks, (B, counts[0], self.config.d))
            return self.update_tokens(tokens, toks)
        # mixed counts: split the batch into empty and padded non-empty parts
        empty = [i for i, c in enumerate(counts) if c == 0]
        full = [i for i, c in enumerate(counts) if c > 0]
        outs: list = [None] * B
        if empty:
            res = self.update_tokens(_gather_rows(tokens, empty), None)
            for row, i in enumerate(empty):
                outs[i] = (res, row)
        jmax = max(counts)
        flat_keys = [k for i in full for k in key_lists[i]]
        emb = self.embed_keys(flat_keys)
        flags = np.concatenate([np.asarray(flag_lists[i], dtype=np.int64) for i in full])
        instr = T.add(emb, self.flag_table(flags))
        padded_rows = []
        offset = 0
        mask = np.zeros((len(full), self.config.m, jmax), dtype=bool)
        for row, i in enumerate(full):
            c = counts[i]
            chunk = T.narrow(instr, 0, offset, c)
            if c < jmax:
                pad = Tensor(np.zeros((jmax - c, self.config.d), dtype=np.float32))
                chunk = T.concat([chunk, pad], axis=0)
                mask[row, :, c:] = True
            padded_rows.append(T.reshape(chunk, (1, jmax, self.config.d)))
            offset += c
        instr_tokens = T.concat(padded_rows, axis=0)
        sub_tokens = _gather_rows(tokens, full)
        res_full = self.update_tokens(sub_tokens, instr_tokens, cross_mask=mask)
        for row, i in enumerate(full):
            outs[i] = (res_full, row)
        pieces = []
        for i in range(B):
            src, row = outs[i]
            pieces.append(T.narrow(src, 0, row, 1))
        return T.concat(pieces, axis=0)

    def extract_batch_tokens(self, tokens: Tensor, key_lists) -> Tensor:
        """Batched extraction; every world must ask the same number of
        queries (pad at the environment level if not)."""
        B = tokens.shape[0]
        k = len(key_lists[0])
        if any(len(keys) != k for keys in key_lists):
            raise nn.ConfigError("extract_batch requires a uniform query count")
        first = key_lists[0]
        if all(keys is first or keys == first for keys in key_lists[1:]):
            # shared schedule: embed once, broadcast over the batch
            emb = T.reshape(self.embed_keys(first), (1, k, self.config.d))
        else:
            flat = [key for keys in key_lists for key in keys]
            emb = T.reshape(self.embed_keys(flat), (B, k, self.config.d))
        return self.extract_tokens(tokens, emb)


def _gather_rows(x: Tensor, rows) -> Tensor:
    pieces = [T.narrow(x, 0, i, 1) for i in rows]
    return T.concat(pieces, axis=0)


def model_config_dict(model: UpdaterExtractor) -> dict:
    ks = model.embedder.key_space
    return {
        "kind": model.kind,
        "seed": model.seed,
        "model": asdict(model.config),
        "key_space": {"kinds": list(ks.kinds), "axes": [list(a) for a in ks.axes]},
    }


def build_from_config(config: dict) -> UpdaterExtractor:
    ks = KeySpace(kinds=tuple(config["key_space"]["kinds"]),
                  axes=tuple((n, c) for n, c in config["key_space"]["axes"]))
    return UpdaterExtractor(ModelConfig(**config["model"]), ks, seed=config.get("seed", 0))


from . import checkpoint as _checkpoint  # noqa: E402

_checkpoint.register_model_kind(UpdaterExtractor.kind, build_from_config)
