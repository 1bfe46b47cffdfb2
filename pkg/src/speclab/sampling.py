"""Sampling policies and token-level decoding helpers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError
from .model import KVCache, ModelState, forward


@dataclass(frozen=True)
class SamplingPolicy:
    """How tokens are drawn from logits.

    Greedy ignores the temperature entirely and is seed independent.
    Multinomial draws from softmax(logits / temperature) using the session
    rng, so identical (policy, state, context, rng state) produce identical
    samples.
    """
    mode: str = "greedy"
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in ("greedy", "multinomial"):
            raise ConfigError(f"unknown sampling mode {self.mode!r}")
        if self.mode == "multinomial" and self.temperature <= 0:
            raise ConfigError("temperature must be positive")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Normalized distribution in float64, stable for any finite logits."""
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def distribution(logits: np.ndarray, policy: SamplingPolicy) -> np.ndarray:
    """The verification distribution a policy induces over one logits row.

    Greedy is a point mass on the argmax (smallest id wins ties); multinomial
    is the temperature-scaled softmax.
    """
    if policy.mode == "greedy":
        p = np.zeros(len(logits), dtype=np.float64)
        p[int(np.argmax(logits))] = 1.0
        return p
    return softmax(logits, policy.temperature)


def sample_from_dist(p: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw; never returns a zero-probability token."""
    cum = np.cumsum(p)
    idx = int(np.searchsorted(cum, rng.random(), side="right"))
    support = np.flatnonzero(p > 0)
    return int(min(idx, support[-1]))


def sample(logits: np.ndarray, policy: SamplingPolicy, rng: np.random.Generator) -> int:
    """Draw one token from a logits row under the policy."""
    logits = np.asarray(logits)
    if not np.isfinite(logits).all():
        raise NumericError("cannot sample from non-finite logits")
    if policy.mode == "greedy":
        return int(np.argmax(logits))
    return sample_from_dist(softmax(logits, policy.temperature), rng)


def autoregressive_decode(
    state: ModelState,
    prompt: list[int],
    policy: SamplingPolicy,
    max_new_tokens: int,
    rng: np.random.Generator | None = None,
    eos_id: int | None = None,
) -> list[int]:
    """Plain one-token-per-forward generation; the target-only baseline."""
    if rng is None:
        rng = policy.rng()
    cache = KVCache(state.config, dtype=state.dtype)
    out: list[int] = []
    pending = list(prompt)
    for _ in range(max_new_tokens):
        logits, _ = forward(state, pending, cache)
        tok = sample(logits[-1], policy, rng)
        out.append(tok)
        if eos_id is not None and tok == eos_id:
            break
        pending = [tok]
    return out
