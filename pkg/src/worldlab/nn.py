"""Neural building blocks on top of the autodiff tensor core.

Layers follow the pre-norm transformer convention. Weight init is
uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) for linear maps and
normal(0, 0.02) for embedding tables, drawn from an explicit
numpy Generator so every model build is seed-reproducible.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

PROB_EPS = 1e-7  # probability clamp applied inside the losses


class NonFiniteGradient(RuntimeError):
    """Raised by the optimizer when a parameter gradient is not finite."""


class ConfigError(ValueError):
    """Shape or configuration mismatch detected at module boundaries."""


# ---------------------------------------------------------------------------
# module / parameter plumbing
# ---------------------------------------------------------------------------

class Module:
    """Tiny parameter container: children discovered via attributes."""

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        self._collect("", out)
        return out

    def _collect(self, prefix: str, out: dict):
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                out[name] = val
            elif isinstance(val, Module):
                val._collect(name + ".", out)
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        item._collect(f"{name}.{i}.", out)
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out[f"{name}.{i}"] = item

    def zero_grad(self):
        for p in self.parameters().values():
            p.zero_grad()


def linear_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def embedding_init(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.normal(0.0, 0.02, size=shape).astype(np.float32)


class Linear(Module):
    def __init__(self, rng, d_in: int, d_out: int, bias: bool = True):
        self.w = Tensor(linear_init(rng, d_in, (d_in, d_out)), requires_grad=True)
        self.b = Tensor(np.zeros(d_out, dtype=np.float32), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = T.matmul(x, self.w)
        if self.b is not None:
            out = T.add(out, self.b)
        return out


class Embedding(Module):
    def __init__(self, rng, n_rows: int, d: int):
        self.table = Tensor(embedding_init(rng, (n_rows, d)), requires_grad=True)

    def __call__(self, indices) -> Tensor:
        return T.embedding(self.table, indices)


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gain = Tensor(np.ones(d, dtype=np.float32), requires_grad=True)
        self.bias = Tensor(np.zeros(d, dtype=np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias)


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------

def multi_head_attention(queries: Tensor, keys: Tensor, values: Tensor,
                         n_heads: int, mask=None) -> Tensor:
    """Scaled dot-product attention with head splitting (no projections).

    Inputs are (..., len, d) with d divisible by ``n_heads``. ``mask`` is
    a boolean (query_len, key_len) matrix (or broadcastable batch of
    them) where True forbids attending to that key; a fully masked row
    is an error because its softmax is undefined.
    """
    d = queries.shape[-1]
    if d % n_heads != 0:
        raise ConfigError(f"feature dim {d} not divisible by {n_heads} heads")
    if keys.shape[-1] != d or values.shape[-1] != d:
        raise ConfigError("queries/keys/values feature dims differ")
    if keys.shape[-2] != values.shape[-2]:
        raise ConfigError("keys and values length mismatch")
    dh = d // n_heads
    q_len, k_len = queries.shape[-2], keys.shape[-2]
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape[-2:] != (q_len, k_len):
            raise ConfigError(f"mask shape {mask.shape} != ({q_len}, {k_len})")

    def split(x: Tensor):
        new_shape = x.shape[:-1] + (n_heads, dh)
        return T.swapaxes(T.reshape(x, new_shape), -3, -2)  # (..., h, len, dh)

    q, k, v = split(queries), split(keys), split(values)
    scores = T.mul(T.matmul(q, T.swapaxes(k, -1, -2)), 1.0 / np.sqrt(dh))
    if mask is not None:
        # broadcast mask over the head axis
        mask = np.expand_dims(mask, -3)
    weights = T.softmax(scores, mask=mask)
    mixed = T.matmul(weights, v)  # (..., h, q_len, dh)
    out_shape = mixed.shape[:-3] + (q_len, d)  # batch dims may have broadcast
    merged = T.reshape(T.swapaxes(mixed, -3, -2), out_shape)
    return merged


class AttentionLayer(Module):
    """Learned projections around multi_head_attention."""

    def __init__(self, rng, d: int, n_heads: int):
        self.n_heads = n_heads
        self.wq = Linear(rng, d, d)
        self.wk = Linear(rng, d, d)
        self.wv = Linear(rng, d, d)
        self.wo = Linear(rng, d, d)

    def __call__(self, x: Tensor, context: Tensor, mask=None) -> Tensor:
        q = self.wq(x)
        k = self.wk(context)
        v = self.wv(context)
        return self.wo(multi_head_attention(q, k, v, self.n_heads, mask=mask))


class FeedForward(Module):
    def __init__(self, rng, d: int, width: int):
        self.up = Linear(rng, d, width)
        self.down = Linear(rng, width, d)

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(T.relu(self.up(x)))


class DecoderBlock(Module):
    """Pre-norm decoder block: optional self-attention, cross-attention
    to a context sequence, feed-forward; all with residual connections.

    Cross-attention is skipped when the context has length zero, so a
    block can advance a state with no external inputs at all.
    """

    def __init__(self, rng, d: int, n_heads: int, ff_width: int,
                 self_attention: bool = True):
        self.use_self_attention = self_attention
        if self_attention:
            self.self_attn = AttentionLayer(rng, d, n_heads)
            self.norm_self = LayerNorm(d)
        self.cross_attn = AttentionLayer(rng, d, n_heads)
        self.norm_cross = LayerNorm(d)
        self.ff = FeedForward(rng, d, ff_width)
        self.norm_ff = LayerNorm(d)

    def __call__(self, x: Tensor, context: Tensor | None, cross_mask=None) -> Tensor:
        if self.use_self_attention:
            h = self.norm_self(x)
            x = T.add(x, self.self_attn(h, h))
        if context is not None and context.shape[-2] > 0:
            if context.shape[-1] != x.shape[-1]:
                raise ConfigError("context feature dim differs from input")
            x = T.add(x, self.cross_attn(self.norm_cross(x), context, mask=cross_mask))
        x = T.add(x, self.ff(self.norm_ff(x)))
        return x


# ---------------------------------------------------------------------------
# recurrent cell
# ---------------------------------------------------------------------------

class LSTMCell(Module):
    """Single LSTM cell, gates ordered (input, forget, cell, output)."""

    def __init__(self, rng, d_in: int, d_hidden: int):
        self.d_hidden = d_hidden
        self.wx = Linear(rng, d_in, 4 * d_hidden, bias=False)
        self.wh = Linear(rng, d_hidden, 4 * d_hidden, bias=False)
        self.b = Tensor(np.zeros(4 * d_hidden, dtype=np.float32), requires_grad=True)

    def __call__(self, x: Tensor, h: Tensor, c: Tensor):
        if x.shape[-1] != self.wx.w.shape[0] or h.shape[-1] != self.d_hidden:
            raise ConfigError("lstm input/hidden dims do not match cell parameters")
        z = T.add(T.add(self.wx(x), self.wh(h)), self.b)
        n = self.d_hidden
        i = T.sigmoid(T.narrow(z, -1, 0, n))
        f = T.sigmoid(T.narrow(z, -1, n, n))
        g = T.tanh(T.narrow(z, -1, 2 * n, n))
        o = T.sigmoid(T.narrow(z, -1, 3 * n, n))
        c_next = T.add(T.mul(f, c), T.mul(i, g))
        h_next = T.mul(o, T.tanh(c_next))
        return h_next, c_next


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def bce_loss(probabilities: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of independent binary targets."""
    t = np.asarray(targets, dtype=probabilities.data.dtype)
    if t.size != probabilities.data.size:
        raise ConfigError("probability/target length mismatch")
    t = t.reshape(probabilities.shape)
    p = T.clip(probabilities, PROB_EPS, 1.0 - PROB_EPS)
    losses = T.add(T.mul(T.log(p), -t), T.mul(T.log(T.add(T.mul(p, -1.0), 1.0)), t - 1.0))
    return T.tmean(losses)


def cross_entropy_loss(logits: Tensor, target_classes) -> Tensor:
    """Mean cross-entropy of integer class targets against raw logits."""
    idx = np.asarray(target_classes, dtype=np.int64)
    x = logits
    if x.ndim == 1:
        x = T.reshape(x, (1, -1))
        idx = idx.reshape(1)
    flat = T.reshape(x, (-1, x.shape[-1]))
    idx = idx.reshape(-1)
    if idx.shape[0] != flat.shape[0]:
        raise ConfigError("logit/target count mismatch")
    data = flat.data
    shifted = data - data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=-1, keepdims=True)
    rows = np.arange(idx.shape[0])
    nll = -(shifted[rows, idx] - np.log(e.sum(axis=-1)))
    out_data = np.asarray(nll.mean(), dtype=data.dtype)

    def backward(g):
        if flat.requires_grad:
            grad = probs.copy()
            grad[rows, idx] -= 1.0
            flat.accumulate_grad(g * grad / idx.shape[0])

    return T._make(out_data, (flat,), backward)


def class_accuracy(logits: Tensor, target_classes) -> float:
    idx = np.asarray(target_classes, dtype=np.int64).reshape(-1)
    pred = logits.data.reshape(-1, logits.shape[-1]).argmax(axis=-1)
    return float((pred == idx).mean())


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class AdamW:
    """Adam with decoupled weight decay.

    Decay is applied directly to the parameter (scaled by lr), not mixed
    into the gradient moments.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4,
                 betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self):
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"non-finite gradient in parameter {name!r}")
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------

def grad_check(f, params: dict[str, Tensor], h: float = 1e-3,
               float64: bool = True) -> float:
    """Max relative error between analytic and central-difference grads.

    ``f`` must rebuild the scalar loss from the live parameter tensors
    each call. With ``float64`` the whole check runs in double precision
    (parameters are temporarily cast), which isolates formula errors
    from float32 roundoff.
    """
    originals = {k: p.data for k, p in params.items()}
    try:
        if float64:
            for p in params.values():
                p.data = p.data.astype(np.float64)
        for p in params.values():
            p.zero_grad()
        loss = f()
        loss.backward()
        analytic = {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                    for k, p in params.items()}
        worst = 0.0
        for name, p in params.items():
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + h
                with T.no_grad():
                    up = float(f().data)
                flat[i] = keep - h
                with T.no_grad():
                    down = float(f().data)
                flat[i] = keep
                numeric = (up - down) / (2.0 * h)
                a = float(analytic[name].reshape(-1)[i])
                err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
                worst = max(worst, err)
        return worst
    finally:
        for k, p in params.items():
            p.data = originals[k]
            p.zero_grad()
