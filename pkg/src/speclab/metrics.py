"""Acceptance-rate, block-efficiency, MBSU, TPOT and speedup metrics.

All functions are pure: reports can be replayed from recorded stats and
audit logs. Speedup is computed as the exact ratio of the per-token
latencies, which keeps the closed-form identity with the TPOT expressions
exact in floating point.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ConfigError, ContractError

REPORT_COLUMNS = [
    "benchmark", "sampling_mode", "temperature", "gamma", "N_blocks",
    "alpha", "tau", "c", "c_hat", "mbsu", "tpot_ar", "tpot_sd", "speedup_est",
]


@dataclass
class DecodeStats:
    """Per-block accepted counts at a nominal block size."""
    gamma: int
    blocks: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.gamma < 1:
            raise ConfigError("gamma must be >= 1")
        for b in self.blocks:
            if not 0 <= b <= self.gamma:
                raise ContractError(f"accepted count {b} outside [0, {self.gamma}]")

    def merged(self, other: "DecodeStats") -> "DecodeStats":
        if other.gamma != self.gamma:
            raise ConfigError("cannot merge stats with different gamma")
        return DecodeStats(gamma=self.gamma, blocks=self.blocks + other.blocks)


@dataclass(frozen=True)
class LatencyProfile:
    """Measured seconds per forward: draft single step, target at block 1
    and at block gamma."""
    l_draft: float
    l_target_1: float
    l_target_gamma: float

    def __post_init__(self) -> None:
        if min(self.l_draft, self.l_target_1, self.l_target_gamma) <= 0:
            raise ConfigError("latencies must be positive")


@dataclass(frozen=True)
class SpeedupInputs:
    """Ratios for the hardware-agnostic estimators: c is the draft/target
    latency ratio, c_hat the draft/target parameter-count ratio."""
    c: float
    c_hat: float


def acceptance_rate(stats: DecodeStats) -> float:
    """Mean accepted fraction per block: (1/N) sum(accepted_n / gamma)."""
    n = len(stats.blocks)
    if n == 0:
        raise ContractError("acceptance rate needs at least one block")
    return sum(stats.blocks) / (n * stats.gamma)


def block_efficiency(alpha: float, gamma: int) -> float:
    """Expected tokens emitted per block: tau = 1 + alpha * gamma."""
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"alpha {alpha} outside [0, 1]")
    return 1.0 + alpha * gamma

def mbsu(tau: float, c_hat: float, gamma: int) -> float:
    """Memory-bound speedup: tau / (c_hat * gamma + 1)."""
    if c_hat <= 0:
        raise ConfigError("c_hat must be positive")
    return tau / (c_hat * gamma + 1.0)


def tpot_ar(profile: LatencyProfile) -> float:
    """Autoregressive time per output token (one target forward per token)."""
    return profile.l_target_1


def tpot_sd(profile: LatencyProfile, gamma: int, tau: float) -> float:
    """Speculative time per output token: (l_draft*gamma + l_target_gamma)/tau."""
    if tau < 1.0:
        raise ContractError("tau must be >= 1")
    return (profile.l_draft * gamma + profile.l_target_gamma) / tau


def expected_speedup(inputs: LatencyProfile | SpeedupInputs, gamma: int, tau: float) -> float:
    """Expected speedup of speculative over autoregressive decoding.

    With a LatencyProfile this is tpot_ar / tpot_sd, algebraically equal to
    tau / ((l_draft/l_target_1)*gamma + l_target_gamma/l_target_1). With
    SpeedupInputs it is the simplified estimator tau / (c*gamma + 1), which
    treats the target's block-gamma forward as costing one block-1 forward.
    """
    if tau < 1.0:
        raise ContractError("tau must be >= 1")
    if isinstance(inputs, LatencyProfile):
        return tpot_ar(inputs) / tpot_sd(inputs, gamma, tau)
    if inputs.c <= 0:
        raise ConfigError("latency ratio c must be positive")
    return tau / (inputs.c * gamma + 1.0)


@dataclass
class MetricsRow:
    benchmark: str
    sampling_mode: str
    temperature: float
    gamma: int
    N_blocks: int
    alpha: float
    tau: float
    c: float
    c_hat: float
    mbsu: float
    tpot_ar: float
    tpot_sd: float
    speedup_est: float


def metrics_row(
    benchmark: str,
    policy_mode: str,
    temperature: float,
    stats: DecodeStats,
    c_hat: float,
    profile: LatencyProfile | None = None,
) -> MetricsRow:
    """Assemble one report row from decode stats and measured latencies."""
    alpha = acceptance_rate(stats)
    tau = block_efficiency(alpha, stats.gamma)
    c = profile.l_draft / profile.l_target_1 if profile else float("nan")
    return MetricsRow(
        benchmark=benchmark,
        sampling_mode=policy_mode,
        temperature=temperature,
        gamma=stats.gamma,
        N_blocks=len(stats.blocks),
        alpha=alpha,
        tau=tau,
        c=c,
        c_hat=c_hat,
        mbsu=mbsu(tau, c_hat, stats.gamma),
        tpot_ar=tpot_ar(profile) if profile else float("nan"),
        tpot_sd=tpot_sd(profile, stats.gamma, tau) if profile else float("nan"),
        speedup_est=expected_speedup(profile, stats.gamma, tau) if profile else float("nan"),
    )


LATENCY_COLUMNS = ("c", "tpot_ar", "tpot_sd", "speedup_est")


def write_report(rows: list[MetricsRow], csv_path: str | Path, json_path: str | Path) -> None:
    """Emit the metrics table as CSV plus a JSON twin with the same fields."""
    csv_path, json_path = Path(csv_path), Path(json_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    dicts = [asdict(r) for r in rows]
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for d in dicts:
            writer.writerow({k: repr(d[k]) if isinstance(d[k], float) else d[k]
                             for k in REPORT_COLUMNS})
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(dicts, f, indent=2)
        f.write("\n")


def read_report_csv(path: str | Path) -> list[dict]:
    with open(path, "r", newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))
