"""Constant-parameter-budget architecture search.

For each candidate hidden size, pick the layer count whose
excluded-embeddings parameter count lands closest to the budget. Head
counts and the MLP ratio follow a base config template, keeping the head
dimension fixed, so width candidates stay in the same family.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError
from .model import ModelConfig, param_count


@dataclass(frozen=True)
class BudgetSearchSpec:
    budget: int                      # excluded-embeddings parameter count
    hidden_candidates: tuple[int, ...]
    base_config: ModelConfig

    def __post_init__(self) -> None:
        if self.budget <= 0:
            raise ConfigError("budget must be positive")
        if not self.hidden_candidates:
            raise ConfigError("need at least one hidden-size candidate")
        if any(h <= 0 for h in self.hidden_candidates):
            raise ConfigError("hidden candidates must be positive")


@dataclass
class BudgetCandidate:
    config: ModelConfig | None
    hidden_size: int
    n_layers: int | None
    achieved: int | None
    deviation: int | None
    feasible: bool
    reason: str = ""


def derive_config(base: ModelConfig, hidden: int, n_layers: int) -> ModelConfig:
    """Scale the base template to a new width, keeping head_dim and the
    intermediate/hidden ratio."""
    head_dim = base.head_dim
    if hidden % head_dim != 0:
        raise ConfigError(
            f"hidden {hidden} is not a multiple of the template head_dim {head_dim}")
    n_heads = hidden // head_dim
    kv_ratio = base.n_heads // base.n_kv_heads
    if n_heads % kv_ratio != 0:
        raise ConfigError(f"hidden {hidden} cannot keep the template kv grouping")
    inter = round(hidden * base.intermediate_size / base.hidden_size)
    return ModelConfig(
        hidden_size=hidden,
        intermediate_size=inter,
        n_layers=n_layers,
        n_heads=n_heads,
        n_kv_heads=n_heads // kv_ratio,
        vocab_size=base.vocab_size,
        max_seq_len=base.max_seq_len,
        rope_base=base.rope_base,
        tie_embeddings=base.tie_embeddings,
    )


def per_layer_count(base: ModelConfig, hidden: int) -> int:
    two = param_count(derive_config(base, hidden, 2), exclude_embedding_tables=True)
    one = param_count(derive_config(base, hidden, 1), exclude_embedding_tables=True)
    return two - one


def budget_search(spec: BudgetSearchSpec) -> list[BudgetCandidate]:
    """One candidate per hidden size; deviations are at most one per-layer
    block by construction. Raises only if no candidate is feasible."""
    results: list[BudgetCandidate] = []
    for hidden in spec.hidden_candidates:
        try:
            layer = per_layer_count(spec.base_config, hidden)
        except ConfigError as exc:
            results.append(BudgetCandidate(
                config=None, hidden_size=hidden, n_layers=None, achieved=None,
                deviation=None, feasible=False, reason=str(exc)))
            continue
        if layer > spec.budget:
            results.append(BudgetCandidate(
                config=None, hidden_size=hidden, n_layers=None, achieved=None,
                deviation=None, feasible=False,
                reason=f"one layer costs {layer} params, over the {spec.budget} budget"))
            continue
        base_cost = param_count(derive_config(spec.base_config, hidden, 1),
                                exclude_embedding_tables=True) - layer
        ideal = (spec.budget - base_cost) / layer
        best = None
        for n_layers in {max(1, int(ideal)), max(1, int(ideal) + 1)}:
            cfg = derive_config(spec.base_config, hidden, n_layers)
            achieved = param_count(cfg, exclude_embedding_tables=True)
            dev = achieved - spec.budget
            if best is None or abs(dev) < abs(best.deviation):
                best = BudgetCandidate(
                    config=cfg, hidden_size=hidden, n_layers=n_layers,
                    achieved=achieved, deviation=dev, feasible=True)
        results.append(best)
    if not any(r.feasible for r in results):
        raise ConfigError("no feasible layer count for any hidden candidate")
    return results
