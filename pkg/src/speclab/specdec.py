"""Lossless speculative decoding.

A draft model proposes a block of tokens, the target verifies all of them
in one batched forward, and each proposal is accepted or rejected by the
ratio rule: accept x with probability min(1, p(x)/q(x)); on rejection,
resample from the residual max(0, p - q) renormalized. A fully accepted
block appends one bonus token from the target's next distribution, so a
block always emits accepted + 1 tokens. Under greedy verification the
output is token-for-token the target's own greedy decode.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, LengthError, VocabMismatchError
from .metrics import DecodeStats
from .model import KVCache, ModelState, forward
from .sampling import SamplingPolicy, distribution, sample_from_dist

DIST_SUM_TOL = 1e-4


@dataclass(frozen=True)
class SpecConfig:
    gamma: int
    policy: SamplingPolicy
    max_new_tokens: int
    eos_id: int | None = None

    def __post_init__(self) -> None:
        if self.gamma < 1:
            raise ConfigError("gamma must be >= 1")
        if self.max_new_tokens < 1:
            raise ConfigError("max_new_tokens must be >= 1")


@dataclass
class AcceptResult:
    accepted: bool
    residual: np.ndarray | None = None   # multinomial rejection: resample from this
    replacement: int | None = None       # greedy rejection: the target argmax


@dataclass
class BlockResult:
    proposed: list[int]
    accepted_count: int
    emitted: list[int]
    u_values: list[float]
    draft_dists: list[np.ndarray] | None = None   # audit mode only
    target_dists: list[np.ndarray] | None = None


@dataclass
class SpecSession:
    draft: ModelState
    target: ModelState
    committed: list[int]
    rng: np.random.Generator
    draft_cache: KVCache
    target_cache: KVCache
    blocks: list[BlockResult] = field(default_factory=list)
    audit: bool = False


def start_session(
    draft: ModelState,
    target: ModelState,
    prompt: list[int],
    policy: SamplingPolicy | None = None,
    rng: np.random.Generator | None = None,
    audit: bool = False,
) -> SpecSession:
    """Create a decode session over a shared-vocabulary draft/target pair."""
    if draft.config.vocab_size != target.config.vocab_size:
        raise VocabMismatchError(
            f"draft vocab {draft.config.vocab_size} != target vocab {target.config.vocab_size}")
    prompt = [int(t) for t in prompt]
    if not prompt:
        raise LengthError("prompt must contain at least one token")
    if rng is None:
        rng = (policy or SamplingPolicy()).rng()
    return SpecSession(
        draft=draft,
        target=target,
        committed=prompt,
        rng=rng,
        draft_cache=KVCache(draft.config, dtype=draft.dtype),
        target_cache=KVCache(target.config, dtype=target.dtype),
        audit=audit,
    )


def _check_normalized(p: np.ndarray, name: str) -> None:
    s = float(np.sum(p))
    if abs(s - 1.0) > DIST_SUM_TOL:
        raise ContractError(f"{name} distribution sums to {s}, not 1")
    if np.any(p < 0):
        raise ContractError(f"{name} distribution has negative entries")


def accept_step(
    p_target: np.ndarray,
    q_draft: np.ndarray,
    x: int,
    u: float,
    mode: str = "multinomial",
) -> AcceptResult:
    """Accept/reject one proposed token.

    Multinomial: accept iff u <= min(1, p(x)/q(x)); on rejection return the
    renormalized residual max(0, p - q). Greedy: accept iff x is the target
    argmax (smallest id on ties); on rejection return that argmax.
    """
    p = np.asarray(p_target, dtype=np.float64)
    q = np.asarray(q_draft, dtype=np.float64)
    _check_normalized(p, "target")
    _check_normalized(q, "draft")
    x = int(x)

    if mode == "greedy":
        best = int(np.argmax(p))
        if x == best:
            return AcceptResult(accepted=True)
        return AcceptResult(accepted=False, replacement=best)

    if mode != "multinomial":
        raise ConfigError(f"unknown verification mode {mode!r}")
    if q[x] <= 0:
        raise ContractError("proposed token has zero draft probability")
    ratio = min(1.0, p[x] / q[x])
    if u <= ratio:
        return AcceptResult(accepted=True)
    residual = np.maximum(p - q, 0.0)
    total = residual.sum()
    if total <= 0:
        # p == q up to rounding: rejection is a measure-zero event there,
        # fall back to the target distribution
        residual = p.copy()
        total = residual.sum()
    return AcceptResult(accepted=False, residual=residual / total)


def _catch_up(state: ModelState, cache: KVCache, committed: list[int]) -> np.ndarray:
    """Feed the cache's lagging suffix; returns logits for the frontier."""
    pending = committed[cache.filled_len:]
    logits, _ = forward(state, pending, cache)
    return logits[-1]


def speculate_block(
    session: SpecSession,
    spec: SpecConfig,
    proposal_len: int | None = None,
) -> BlockResult:
    """One propose/verify round; emits accepted prefix plus one more token.

    `proposal_len` shrinks the block for a partial final budget; the nominal
    gamma is unchanged for statistics.
    """
    gamma = spec.gamma if proposal_len is None else proposal_len
    if gamma < 0:
        raise ConfigError("proposal length must be nonnegative")
    policy = spec.policy
    m = len(session.committed)
    for st, label in ((session.draft, "draft"), (session.target, "target")):
        if m + gamma + 1 > st.config.max_seq_len:
            raise LengthError(f"no room for a {gamma}-token block in the {label} context")

    # draft proposes gamma tokens sequentially
    proposed: list[int] = []
    q_dists: list[np.ndarray] = []
    if gamma > 0:
        logits = _catch_up(session.draft, session.draft_cache, session.committed)
        for _ in range(gamma):
            q = distribution(logits, policy)
            q_dists.append(q)
            tok = int(np.argmax(q)) if policy.mode == "greedy" else sample_from_dist(q, session.rng)
            proposed.append(tok)
            logits, _ = forward(session.draft, [tok], session.draft_cache)
            logits = logits[-1]

    # target verifies the whole block in one forward
    pending = session.committed[session.target_cache.filled_len:] + proposed
    t_logits, _ = forward(session.target, pending, session.target_cache)
    p_dists = [distribution(t_logits[-(gamma + 1) + j], policy) for j in range(gamma + 1)]

    emitted: list[int] = []
    u_values: list[float] = []
    accepted = 0
    for j, tok in enumerate(proposed):
        u = float(session.rng.random()) if policy.mode == "multinomial" else 0.0
        if policy.mode == "multinomial":
            u_values.append(u)
        res = accept_step(p_dists[j], q_dists[j], tok, u, mode=policy.mode)
        if res.accepted:
            accepted += 1
            emitted.append(tok)
            continue
        if policy.mode == "greedy":
            emitted.append(res.replacement)
        else:
            emitted.append(sample_from_dist(res.residual, session.rng))
        break
    else:
        # whole block accepted: bonus token from the target's next distribution
        bonus_p = p_dists[gamma]
        tok = int(np.argmax(bonus_p)) if policy.mode == "greedy" else sample_from_dist(bonus_p, session.rng)
        emitted.append(tok)

    session.committed.extend(emitted)
    frontier = len(session.committed) - 1
    session.draft_cache.truncate(min(session.draft_cache.filled_len, frontier))
    session.target_cache.truncate(min(session.target_cache.filled_len, frontier))

    block = BlockResult(
        proposed=proposed,
        accepted_count=accepted,
        emitted=emitted,
        u_values=u_values,
        draft_dists=q_dists if session.audit else None,
        target_dists=p_dists if session.audit else None,
    )
    session.blocks.append(block)
    return block


@dataclass
class GenerateResult:
    tokens: list[int]
    stats: DecodeStats
    blocks: list[BlockResult]


def generate(session: SpecSession, spec: SpecConfig) -> GenerateResult:
    """Speculate blocks until the budget or eos; returns new tokens and stats.

    A partial final budget shrinks the proposal length of the last block so
    a generation never overshoots max_new_tokens.
    """
    start_len = len(session.committed)
    first_block = len(session.blocks)
    if start_len + 1 > session.target.config.max_seq_len:
        raise LengthError("context full: no room to emit a single token")
    produced = 0
    while produced < spec.max_new_tokens:
        remaining = spec.max_new_tokens - produced
        room = min(st.config.max_seq_len for st in (session.draft, session.target))
        room -= len(session.committed) + 1
        if room < 0:
            raise LengthError("context full during generation")
        block_len = min(spec.gamma, remaining - 1, room)
        block = speculate_block(session, spec, proposal_len=block_len)
        produced += len(block.emitted)
        if spec.eos_id is not None and spec.eos_id in block.emitted:
            break

    new_tokens = session.committed[start_len:]
    if spec.eos_id is not None and spec.eos_id in new_tokens:
        cut = new_tokens.index(spec.eos_id) + 1
        surplus = len(new_tokens) - cut
        if surplus:
            # tokens conditioned on context past the eos are never used again
            del session.committed[-surplus:]
            frontier = len(session.committed) - 1
            session.draft_cache.truncate(min(session.draft_cache.filled_len, frontier))
            session.target_cache.truncate(min(session.target_cache.filled_len, frontier))
            new_tokens = new_tokens[:cut]

    blocks = session.blocks[first_block:]
    stats = DecodeStats(gamma=spec.gamma, blocks=[b.accepted_count for b in blocks])
    return GenerateResult(tokens=new_tokens, stats=stats, blocks=blocks)


def write_audit_log(path: str | Path, blocks: list[BlockResult]) -> None:
    """One JSON line per block with the fields needed to replay decisions."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for b in blocks:
            f.write(json.dumps({
                "proposed": b.proposed,
                "accepted_count": b.accepted_count,
                "emitted": b.emitted,
                "u": b.u_values,
            }) + "\n")


def read_audit_log(path: str | Path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]
