"""Decoder-only transformer implemented in numpy.

Pre-norm blocks with RMS normalization, rotary position encoding, grouped
key/value heads and a gated (SiLU) MLP, no biases anywhere. The forward
pass optionally records a tape of intermediates so that `backward` can
produce exact gradients for every tensor; gradients are validated against
central finite differences in the test suite.

All tensors are float32 by default. Passing float64 tensors (see
`cast_state`) runs the same code at double precision, which the gradient
checks rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, LengthError, NumericError

RMS_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    hidden_size: int
    intermediate_size: int
    n_layers: int
    n_heads: int
    n_kv_heads: int
    vocab_size: int
    max_seq_len: int
    rope_base: float = 10000.0
    tie_embeddings: bool = False

    def __post_init__(self) -> None:
        for name in ("hidden_size", "intermediate_size", "n_layers", "n_heads",
                     "n_kv_heads", "vocab_size", "max_seq_len"):
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"{name} must be a positive integer")
        if self.hidden_size % self.n_heads != 0:
            raise ConfigError("hidden_size must be divisible by n_heads")
        if self.n_heads % self.n_kv_heads != 0:
            raise ConfigError("n_heads must be divisible by n_kv_heads")
        if self.rope_base <= 0:
            raise ConfigError("rope_base must be positive")

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.n_heads

    @property
    def kv_dim(self) -> int:
        return self.head_dim * self.n_kv_heads

    def to_dict(self) -> dict:
        return {
            "hidden_size": self.hidden_size,
            "intermediate_size": self.intermediate_size,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "n_kv_heads": self.n_kv_heads,
            "vocab_size": self.vocab_size,
            "max_seq_len": self.max_seq_len,
            "rope_base": self.rope_base,
            "tie_embeddings": self.tie_embeddings,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def tensor_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Tensor names and shapes in declared (checkpoint) order."""
    h, i, v = config.hidden_size, config.intermediate_size, config.vocab_size
    kv = config.kv_dim
    shapes: dict[str, tuple[int, ...]] = {"embed": (v, h)}
    for l in range(config.n_layers):
        p = f"layers.{l}."
        shapes[p + "attn_norm"] = (h,)
        shapes[p + "wq"] = (h, h)
        shapes[p + "wk"] = (h, kv)
        shapes[p + "wv"] = (h, kv)
        shapes[p + "wo"] = (h, h)
        shapes[p + "mlp_norm"] = (h,)
        shapes[p + "w_gate"] = (h, i)
        shapes[p + "w_up"] = (h, i)
        shapes[p + "w_down"] = (i, h)
    shapes["final_norm"] = (h,)
    if not config.tie_embeddings:
        shapes["head"] = (h, v)
    return shapes


@dataclass
class ModelState:
    config: ModelConfig
    tensors: dict[str, np.ndarray]

    @property
    def dtype(self) -> np.dtype:
        return self.tensors["embed"].dtype

    def head_weight(self) -> np.ndarray:
        """(hidden, vocab) output projection, shared with embed when tied."""
        if self.config.tie_embeddings:
            return self.tensors["embed"].T
        return self.tensors["head"]

    def check_finite(self) -> None:
        for name, t in self.tensors.items():
            if not np.isfinite(t).all():
                raise NumericError(f"tensor {name} contains non-finite values")


def init_model(config: ModelConfig, seed: int) -> ModelState:
    """Deterministic initialization: unit norm gains, N(0, 1/hidden) projections."""
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(config.hidden_size)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in tensor_shapes(config).items():
        if name.endswith("norm"):
            tensors[name] = np.ones(shape, dtype=np.float32)
        else:
            tensors[name] = (rng.standard_normal(shape) * scale).astype(np.float32)
    state = ModelState(config=config, tensors=tensors)
    state.check_finite()
    return state


def cast_state(state: ModelState, dtype) -> ModelState:
    return ModelState(
        config=state.config,
        tensors={k: v.astype(dtype) for k, v in state.tensors.items()},
    )


def zero_grads(state: ModelState) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in state.tensors.items()}


def param_count(config: ModelConfig, exclude_embedding_tables: bool = False) -> int:
    """Exact element count over all tensors.

    With `exclude_embedding_tables`, the input embedding table and (when
    untied) the output head are dropped from the sum; this is the count
    used for latency-oriented parameter budgets.
    """
    total = 0
    for name, shape in tensor_shapes(config).items():
        if exclude_embedding_tables and name in ("embed", "head"):
            continue
        total += int(np.prod(shape))
    return total


class KVCache:
    """Per-layer key/value store for one decode session.

    Entries below `filled_len` are immutable once written; `truncate` only
    discards the tail. A cache must not be shared between sessions.
    """

    def __init__(self, config: ModelConfig, dtype=np.float32) -> None:
        self.config = config
        shape = (config.n_layers, config.max_seq_len, config.n_kv_heads, config.head_dim)
        self.keys = np.zeros(shape, dtype=dtype)
        self.values = np.zeros(shape, dtype=dtype)
        self.filled_len = 0

    def truncate(self, length: int) -> None:
        if not 0 <= length <= self.filled_len:
            raise LengthError(
                f"cannot truncate cache of length {self.filled_len} to {length}")
        self.filled_len = length


@dataclass
class Tape:
    """Intermediates recorded by a training forward for use in backward."""
    tokens: np.ndarray                      # (B, S) int
    layers: list[dict] = field(default_factory=list)
    x_final: np.ndarray | None = None       # residual stream before final norm
    r_final: np.ndarray | None = None
    n_final: np.ndarray | None = None       # normalized final hidden


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _rms_inv(x: np.ndarray) -> np.ndarray:
    return 1.0 / np.sqrt(np.mean(np.square(x), axis=-1, keepdims=True) + RMS_EPS)


def _rope_tables(config: ModelConfig, positions: np.ndarray, dtype) -> tuple[np.ndarray, np.ndarray]:
    d = config.head_dim
    inv_freq = config.rope_base ** (-np.arange(0, d, 2, dtype=np.float64) / d)
    angles = positions[:, None].astype(np.float64) * inv_freq[None, :]
    return np.cos(angles).astype(dtype), np.sin(angles).astype(dtype)


def _apply_rope(x: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    # x: (B, S, H, d), cos/sin: (S, d/2). Half-split rotation.
    d2 = x.shape[-1] // 2
    x1, x2 = x[..., :d2], x[..., d2:]
    c = cos[None, :, None, :]
    s = sin[None, :, None, :]
    return np.concatenate([x1 * c - x2 * s, x2 * c + x1 * s], axis=-1)


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    b, s, _ = x.shape
    return x.reshape(b, s, n_heads, -1)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, s, h, d = x.shape
    return x.reshape(b, s, h * d)


def _forward_batch(
    state: ModelState,
    tokens: np.ndarray,
    cache: KVCache | None = None,
    record: bool = False,
) -> tuple[np.ndarray, Tape | None]:
    """Shared forward over a (B, S) token batch; cache path requires B == 1."""
    cfg = state.config
    t = state.tensors
    dtype = state.dtype
    tokens = np.asarray(tokens, dtype=np.int64)
    B, S = tokens.shape
    if cache is not None and B != 1:
        raise ConfigError("cached forward supports a single sequence")
    start = cache.filled_len if cache is not None else 0
    total = start + S
    if total > cfg.max_seq_len:
        raise LengthError(f"context of {total} tokens exceeds max_seq_len {cfg.max_seq_len}")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
        raise ConfigError("token id out of vocabulary range")

    positions = np.arange(start, total)
    cos, sin = _rope_tables(cfg, positions, dtype)
    groups = cfg.n_heads // cfg.n_kv_heads
    scale = 1.0 / np.sqrt(cfg.head_dim)

    # additive causal mask: query i (global start+i) may attend keys <= start+i
    key_pos = np.arange(total)
    mask = np.where(key_pos[None, :] <= (positions[:, None]), 0.0, -np.inf).astype(dtype)

    tape = Tape(tokens=tokens) if record else None
    x = t["embed"][tokens]

    for l in range(cfg.n_layers):
        p = f"layers.{l}."
        r1 = _rms_inv(x)
        n1 = x * r1
        y1 = n1 * t[p + "attn_norm"]

        q = _split_heads(y1 @ t[p + "wq"], cfg.n_heads)
        k = _split_heads(y1 @ t[p + "wk"], cfg.n_kv_heads)
        v = _split_heads(y1 @ t[p + "wv"], cfg.n_kv_heads)
        q = _apply_rope(q, cos, sin)
        k = _apply_rope(k, cos, sin)

        if cache is not None:
            cache.keys[l, start:total] = k[0]
            cache.values[l, start:total] = v[0]
            k_all = cache.keys[l, :total][None, ...]
            v_all = cache.values[l, :total][None, ...]
        else:
            k_all, v_all = k, v

        # (B, H, S, d) x (B, H, d, T) -> (B, H, S, T)
        qh = q.transpose(0, 2, 1, 3)
        kh = np.repeat(k_all.transpose(0, 2, 1, 3), groups, axis=1)
        vh = np.repeat(v_all.transpose(0, 2, 1, 3), groups, axis=1)
        scores = (qh @ kh.transpose(0, 1, 3, 2)) * scale + mask[None, None, :, :]
        scores -= scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        probs = e / e.sum(axis=-1, keepdims=True)

        o = _merge_heads((probs @ vh).transpose(0, 2, 1, 3))
        attn_out = o @ t[p + "wo"]
        x2 = x + attn_out

        r2 = _rms_inv(x2)
        n2 = x2 * r2
        y2 = n2 * t[p + "mlp_norm"]
        gate = y2 @ t[p + "w_gate"]
        up = y2 @ t[p + "w_up"]
        sig = _sigmoid(gate)
        act = gate * sig * up
        mlp_out = act @ t[p + "w_down"]
        x3 = x2 + mlp_out

        if record:
            tape.layers.append({
                "x": x, "r1": r1, "y1": y1,
                "q": qh, "k": kh, "v": vh, "probs": probs, "o": o,
                "x2": x2, "r2": r2, "y2": y2,
                "gate": gate, "up": up, "sig": sig,
                "cos": cos, "sin": sin,
            })
        x = x3

    r_f = _rms_inv(x)
    n_f = x * r_f
    y_f = n_f * t["final_norm"]
    logits = y_f @ state.head_weight()

    if record:
        tape.x_final = x
        tape.r_final = r_f
        tape.n_final = n_f
    return logits, tape


def forward(
    state: ModelState,
    tokens,
    cache: KVCache | None = None,
) -> tuple[np.ndarray, KVCache | None]:
    """Run the model over new tokens, returning one logits row per token.

    With a cache, evaluation is incremental: previously cached positions are
    reused and the new keys/values are appended. The returned logits match a
    full recompute of the whole sequence to float32 accuracy.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1:
        raise ConfigError("forward expects a flat token sequence")
    if tokens.size == 0:
        raise ConfigError("forward expects at least one token")
    logits, _ = _forward_batch(state, tokens[None, :], cache=cache, record=False)
    logits = logits[0]
    if not np.isfinite(logits).all():
        raise NumericError("non-finite activations in forward pass")
    if cache is not None:
        cache.filled_len += tokens.size
    return logits, cache


def forward_train(state: ModelState, tokens: np.ndarray) -> tuple[np.ndarray, Tape]:
    """Batched forward that records the tape needed by `backward`."""
    logits, tape = _forward_batch(state, tokens, cache=None, record=True)
    if not np.isfinite(logits).all():
        raise NumericError("non-finite activations in training forward")
    return logits, tape


def _rmsnorm_backward(dy: np.ndarray, x: np.ndarray, r: np.ndarray, gain: np.ndarray):
    n = x * r
    dn = dy * gain
    dgain = np.sum(dy * n, axis=tuple(range(dy.ndim - 1)))
    dx = r * (dn - n * np.mean(dn * n, axis=-1, keepdims=True))
    return dx, dgain


def backward(state: ModelState, tape: Tape, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every model tensor, given dloss/dlogits."""
    cfg = state.config
    t = state.tensors
    grads = zero_grads(state)
    groups = cfg.n_heads // cfg.n_kv_heads
    scale = 1.0 / np.sqrt(cfg.head_dim)
    B, S = tape.tokens.shape
    flat = lambda a: a.reshape(-1, a.shape[-1])

    y_f = tape.n_final * t["final_norm"]
    if cfg.tie_embeddings:
        grads["embed"] += np.einsum("pv,ph->vh", flat(dlogits), flat(y_f))
        dy_f = dlogits @ t["embed"]
    else:
        grads["head"] += flat(y_f).T @ flat(dlogits)
        dy_f = dlogits @ t["head"].T
    dx, dg = _rmsnorm_backward(dy_f, tape.x_final, tape.r_final, t["final_norm"])
    grads["final_norm"] += dg

    for l in reversed(range(cfg.n_layers)):
        p = f"layers.{l}."
        tp = tape.layers[l]

        # MLP branch
        d_mlp_out = dx
        act = tp["gate"] * tp["sig"] * tp["up"]
        grads[p + "w_down"] += flat(act).T @ flat(d_mlp_out)
        dact = d_mlp_out @ t[p + "w_down"].T
        silu = tp["gate"] * tp["sig"]
        dgate = dact * tp["up"] * (tp["sig"] * (1.0 + tp["gate"] * (1.0 - tp["sig"])))
        dup = dact * silu
        grads[p + "w_gate"] += flat(tp["y2"]).T @ flat(dgate)
        grads[p + "w_up"] += flat(tp["y2"]).T @ flat(dup)
        dy2 = dgate @ t[p + "w_gate"].T + dup @ t[p + "w_up"].T
        dx2, dg2 = _rmsnorm_backward(dy2, tp["x2"], tp["r2"], t[p + "mlp_norm"])
        grads[p + "mlp_norm"] += dg2
        dx2 = dx2 + dx  # residual

        # attention branch
        d_attn_out = dx2
        grads[p + "wo"] += flat(tp["o"]).T @ flat(d_attn_out)
        do = (d_attn_out @ t[p + "wo"].T).reshape(B, S, cfg.n_heads, cfg.head_dim)
        do = do.transpose(0, 2, 1, 3)
        dprobs = do @ tp["v"].transpose(0, 1, 3, 2)
        dv_rep = tp["probs"].transpose(0, 1, 3, 2) @ do
        dscores = tp["probs"] * (dprobs - np.sum(dprobs * tp["probs"], axis=-1, keepdims=True))
        dq = (dscores @ tp["k"]) * scale
        dk_rep = (dscores.transpose(0, 1, 3, 2) @ tp["q"]) * scale

        def group_sum(a: np.ndarray) -> np.ndarray:
            b, _, s, d = a.shape
            return a.reshape(b, cfg.n_kv_heads, groups, s, d).sum(axis=2)

        dk = group_sum(dk_rep).transpose(0, 2, 1, 3)
        dv = group_sum(dv_rep).transpose(0, 2, 1, 3)
        dq = dq.transpose(0, 2, 1, 3)
        # inverse rotation (orthogonal): rotate by the negated angle
        dq = _apply_rope(dq, tp["cos"], -tp["sin"])
        dk = _apply_rope(dk, tp["cos"], -tp["sin"])
        dqm, dkm, dvm = _merge_heads(dq), _merge_heads(dk), _merge_heads(dv)

        grads[p + "wq"] += flat(tp["y1"]).T @ flat(dqm)
        grads[p + "wk"] += flat(tp["y1"]).T @ flat(dkm)
        grads[p + "wv"] += flat(tp["y1"]).T @ flat(dvm)
        dy1 = dqm @ t[p + "wq"].T + dkm @ t[p + "wk"].T + dvm @ t[p + "wv"].T
        dx1, dg1 = _rmsnorm_backward(dy1, tp["x"], tp["r1"], t[p + "attn_norm"])
        grads[p + "attn_norm"] += dg1
        dx = dx1 + dx2  # residual

    demb = grads["embed"]
    np.add.at(demb, tape.tokens.reshape(-1), flat(dx))
    return grads
