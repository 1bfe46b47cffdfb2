"""Pipeline driver: staged training (PT -> CP -> FT), evaluation grids,
latency measurement, architecture tables and report emission.

Configuration is one JSON document (see README for the schema); every run
writes a manifest with the config hash, seeds and versions so it can be
replayed. Apart from measured-latency columns, reports are a pure function
of (checkpoints, eval seeds).
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .archsearch import BudgetSearchSpec, budget_search
from .checkpoint import canonical_json, load_checkpoint, save_checkpoint
from .data import (MixPart, MixSpec, alignment_batches, chat_prompt,
                   chat_sequence, generate_alignment_set, lm_batches,
                   load_alignment_set, load_corpus, make_completion_tasks, mix)
from .distill import (extract_sparse_logits, read_sparse_dataset,
                      records_to_arrays, write_sparse_dataset)
from .errors import ConfigError, DataError, StageError
from .latency import build_latency_profile, measure_latency
from .losses import LossSpec
from .metrics import (DecodeStats, LatencyProfile, MetricsRow, SpeedupInputs,
                      acceptance_rate, expected_speedup, mbsu, metrics_row,
                      write_report)
from .model import ModelConfig, ModelState, init_model, param_count
from .sampling import SamplingPolicy
from .specdec import SpecConfig, generate, start_session, write_audit_log
from .tokenizer import ByteTokenizer
from .training import TrainSchedule, train_stage


def _child_seed(base: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=base, spawn_key=key))


def _policy(mode: str, temperature: float, seed: int = 0) -> SamplingPolicy:
    if mode == "greedy":
        return SamplingPolicy("greedy", seed=seed)
    return SamplingPolicy("multinomial", temperature=temperature, seed=seed)


def evaluate_acceptance(
    draft: ModelState,
    target: ModelState,
    prompts: list[list[int]],
    policy: SamplingPolicy,
    gamma: int,
    max_new_tokens: int,
    seed: int = 0,
    eos_id: int | None = None,
    audit_path: str | Path | None = None,
) -> DecodeStats:
    """Pooled decode statistics over a set of prompts."""
    spec = SpecConfig(gamma=gamma, policy=policy,
                      max_new_tokens=max_new_tokens, eos_id=eos_id)
    stats = DecodeStats(gamma=gamma, blocks=[])
    all_blocks = []
    for i, prompt in enumerate(prompts):
        rng = _child_seed(seed, i)
        session = start_session(draft, target, prompt, policy=policy, rng=rng)
        result = generate(session, spec)
        stats = stats.merged(result.stats)
        all_blocks.extend(result.blocks)
    if audit_path is not None:
        write_audit_log(audit_path, all_blocks)
    return stats


@dataclass
class Benchmark:
    name: str
    prompts: list[list[int]]


def _load_benchmark(spec: dict, tokenizer: ByteTokenizer, seed: int,
                    base_dir: Path) -> Benchmark:
    kind = spec.get("kind", "completion")
    n_tasks = int(spec.get("n_tasks", 8))
    if kind == "completion":
        corpus = load_corpus(base_dir / spec["corpus"])
        tasks = make_completion_tasks(corpus, tokenizer, n_tasks,
                                      int(spec.get("min_ctx", 4)), seed)
        prompts = [[tokenizer.bos_id] + t.context for t in tasks]
    elif kind == "instruction":
        samples = load_alignment_set(base_dir / spec["alignment"], tokenizer)
        rng = np.random.default_rng(seed)
        order = rng.permutation(len(samples))[:n_tasks]
        prompts = [chat_prompt(tokenizer, samples[int(i)].instruction) for i in order]
    else:
        raise ConfigError(f"unknown benchmark kind {kind!r}")
    if not prompts:
        raise DataError(f"benchmark {spec.get('name')} produced no prompts")
    return Benchmark(name=spec["name"], prompts=prompts)


def _build_stage_batches(stage: dict, tokenizer: ByteTokenizer, schedule: TrainSchedule,
                         stage_seed: int, base_dir: Path, out_dir: Path,
                         target: ModelState | None, loss_spec: LossSpec):
    kind = stage.get("kind", "lm")
    if kind == "lm":
        if "mix" in stage:
            mix_cfg = stage["mix"]
            corpora = {cid: load_corpus(base_dir / path)
                       for cid, path in mix_cfg["corpora"].items()}
            spec = MixSpec(parts=tuple(MixPart(cid, int(b)) for cid, b in mix_cfg["parts"]),
                           seed=stage_seed)
            corpus = mix(spec, corpora)
        else:
            corpus = load_corpus(base_dir / stage["corpus"])
        epochs = int(stage.get("epochs", 1))
        iters = [lm_batches(corpus, tokenizer, schedule.batch_size, schedule.seq_len,
                            seed=stage_seed + e) for e in range(epochs)]
        return itertools.chain(*iters)
    if kind == "align":
        samples = load_alignment_set(base_dir / stage["alignment"], tokenizer)
        teacher_arrays = None
        k = stage.get("k")
        if loss_spec.needs_teacher:
            if target is None:
                raise ConfigError("distillation stages need a target checkpoint")
            k = int(k or 16)
            sfkd = out_dir / "distill" / f"{stage['name']}.sfkd"
            if "sparse_dataset" in stage:
                sfkd = base_dir / stage["sparse_dataset"]
            else:
                sequences = [chat_sequence(tokenizer, s)[0][:schedule.seq_len + 1]
                             for s in samples]
                write_sparse_dataset(
                    sfkd, extract_sparse_logits(target, sequences, k),
                    k=k, vocab_size=target.config.vocab_size)
            k_read, _, items = read_sparse_dataset(sfkd)
            k = k_read
            teacher_arrays = {i: records_to_arrays(recs)
                              for i, (_, recs) in enumerate(items)}
        return alignment_batches(samples, tokenizer, schedule.batch_size,
                                 schedule.seq_len, seed=stage_seed, epochs=None,
                                 teacher=teacher_arrays, k=k)
    raise ConfigError(f"unknown stage kind {kind!r}")


@dataclass
class ExperimentReport:
    out_dir: Path
    manifest: dict
    rows: list[MetricsRow] = field(default_factory=list)
    checkpoints: dict[str, Path] = field(default_factory=dict)
    arch_table: list[dict] = field(default_factory=list)


def _load_config(config: dict | str | Path) -> tuple[dict, Path]:
    if isinstance(config, (str, Path)):
        path = Path(config)
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f), path.parent
    return dict(config), Path.cwd()


def write_manifest(out_dir: Path, config: dict, seed: int) -> dict:
    manifest = {
        "config_hash": hashlib.sha256(canonical_json(config).encode()).hexdigest(),
        "config": config,
        "seed": seed,
        "versions": {
            "speclab": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "created_unix": time.time(),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
    return manifest


def run_training(config: dict | str | Path, out_dir: str | Path | None = None,
                 seed: int | None = None) -> ExperimentReport:
    """Execute the declared stages, writing one checkpoint per stage."""
    cfg, base_dir = _load_config(config)
    seed = int(cfg.get("seed", 0) if seed is None else seed)
    out = Path(out_dir or cfg.get("out_dir", "runs/experiment"))
    manifest = write_manifest(out, cfg, seed)
    tokenizer = ByteTokenizer()
    report = ExperimentReport(out_dir=out, manifest=manifest)

    target = None
    if cfg.get("target_checkpoint"):
        target = load_checkpoint(base_dir / cfg["target_checkpoint"])

    if cfg.get("draft_init_checkpoint"):
        state = load_checkpoint(base_dir / cfg["draft_init_checkpoint"])
    else:
        draft_cfg = ModelConfig.from_dict(cfg["draft"])
        if draft_cfg.vocab_size < tokenizer.vocab_size:
            raise ConfigError("draft vocab_size smaller than the tokenizer vocabulary")
        state = init_model(draft_cfg, seed)

    for si, stage in enumerate(cfg.get("stages", [])):
        name = stage["name"]
        schedule = TrainSchedule.from_dict(stage["schedule"])
        loss_spec = LossSpec.from_dict(stage.get("loss", {"CE": 1.0}))
        stage_seed = int(np.random.SeedSequence(entropy=seed, spawn_key=(si,))
                         .generate_state(1)[0])
        batches = _build_stage_batches(stage, tokenizer, schedule, stage_seed,
                                       base_dir, out, target, loss_spec)
        try:
            result = train_stage(state, batches, schedule, loss_spec)
        except Exception as exc:
            raise StageError(f"stage {name} failed: {exc}") from exc
        state = result.state
        ckpt = out / "checkpoints" / f"{name}.sfmd"
        save_checkpoint(state, ckpt)
        report.checkpoints[name] = ckpt
        losses_path = out / "losses" / f"{name}.json"
        losses_path.parent.mkdir(parents=True, exist_ok=True)
        with open(losses_path, "w", encoding="utf-8") as f:
            json.dump({"stage": name, "losses": result.losses,
                       "steps_run": result.steps_run}, f)
    return report


def run_evaluation(config: dict | str | Path, draft: ModelState,
                   out_dir: str | Path | None = None,
                   seed: int | None = None,
                   report: ExperimentReport | None = None) -> ExperimentReport:
    """Run the benchmark x mode x gamma grid against the target."""
    cfg, base_dir = _load_config(config)
    seed = int(cfg.get("seed", 0) if seed is None else seed)
    out = Path(out_dir or cfg.get("out_dir", "runs/experiment"))
    if report is None:
        report = ExperimentReport(out_dir=out, manifest=write_manifest(out, cfg, seed))
    ev = cfg.get("eval")
    if not ev:
        return report
    if not cfg.get("target_checkpoint"):
        raise ConfigError("evaluation requires a target_checkpoint")
    target = load_checkpoint(base_dir / cfg["target_checkpoint"])
    tokenizer = ByteTokenizer()

    temperature = float(ev.get("temperature", 0.6))
    modes = list(ev.get("modes", ["greedy", "multinomial"]))
    gammas = [int(g) for g in ev.get("gammas", [3, 5])]
    max_new = int(ev.get("max_new_tokens", 32))
    eos = tokenizer.eos_id if ev.get("stop_at_eos", True) else None

    c_hat_mode = ev.get("c_hat_mode", "total")
    exclude = c_hat_mode == "excluded"
    c_hat = (param_count(draft.config, exclude) / param_count(target.config, exclude))

    lat_cfg = ev.get("latency", {})
    profiles: dict[int, LatencyProfile] = {}
    for gamma in gammas:
        profiles[gamma], _ = build_latency_profile(
            draft, target, gamma,
            warmup=int(lat_cfg.get("warmup", 2)),
            reps=int(lat_cfg.get("reps", 5)),
            seed=seed)

    benchmarks = [
        _load_benchmark(b, tokenizer,
                        int(np.random.SeedSequence(entropy=seed, spawn_key=(100 + bi,))
                            .generate_state(1)[0]),
                        base_dir)
        for bi, b in enumerate(ev.get("benchmarks", []))
    ]

    for bi, bench in enumerate(benchmarks):
        for mi, mode in enumerate(modes):
            for gamma in gammas:
                policy = _policy(mode, temperature)
                audit = out / "audit" / f"{bench.name}_{mode}_g{gamma}.jsonl"
                stats = evaluate_acceptance(
                    draft, target, bench.prompts, policy, gamma, max_new,
                    seed=int(np.random.SeedSequence(
                        entropy=seed, spawn_key=(200 + bi, mi, gamma))
                        .generate_state(1)[0]),
                    eos_id=eos, audit_path=audit)
                report.rows.append(metrics_row(
                    bench.name, mode, temperature if mode == "multinomial" else 0.0,
                    stats, c_hat, profiles[gamma]))

    write_report(report.rows, out / "metrics.csv", out / "metrics.json")
    return report


def run_arch_table(config: dict | str | Path, draft: ModelState,
                   report: ExperimentReport,
                   seed: int | None = None) -> list[dict]:
    """Emit the plot-ready speedup-vs-architecture table.

    Speedup uses the simplified estimator tau / (c * gamma + 1) with each
    candidate's measured single-token latency; tau comes from the main
    draft's evaluation unless candidates are trained and evaluated directly.
    """
    cfg, base_dir = _load_config(config)
    seed = int(cfg.get("seed", 0) if seed is None else seed)
    ac = cfg.get("arch_search")
    if not ac:
        return []
    base = draft.config
    budget = int(ac.get("budget") or param_count(base, exclude_embedding_tables=True))
    spec = BudgetSearchSpec(
        budget=budget,
        hidden_candidates=tuple(int(h) for h in ac["hidden_candidates"]),
        base_config=base)
    candidates = budget_search(spec)
    gamma = int(ac.get("gamma", 3))

    tau = None
    bench_name = ac.get("benchmark")
    for row in report.rows:
        if (row.gamma == gamma and (bench_name is None or row.benchmark == bench_name)):
            tau = row.tau
            break
    target_l1 = None
    target = None
    if cfg.get("target_checkpoint"):
        target = load_checkpoint(base_dir / cfg["target_checkpoint"])
        target_l1 = measure_latency(target, 1, warmup=2, reps=5, seed=seed).median

    table = []
    for cand in candidates:
        entry: dict = {
            "hidden_size": cand.hidden_size,
            "n_layers": cand.n_layers,
            "achieved_params_excl": cand.achieved,
            "deviation": cand.deviation,
            "feasible": cand.feasible,
            "reason": cand.reason,
        }
        if cand.feasible and target is not None:
            lat = measure_latency(cand.config, 1, warmup=2, reps=5, seed=seed).median
            c = lat / target_l1
            c_hat = param_count(cand.config) / param_count(target.config)
            entry["latency_1tok"] = lat
            entry["c"] = c
            entry["c_hat"] = c_hat
            if tau is not None:
                entry["tau"] = tau
                entry["speedup_est"] = expected_speedup(
                    SpeedupInputs(c=c, c_hat=c_hat), gamma, tau)
                entry["mbsu"] = mbsu(tau, c_hat, gamma)
        table.append(entry)

    out_json = report.out_dir / "arch_search.json"
    with open(out_json, "w", encoding="utf-8") as f:
        json.dump(table, f, indent=2)
    out_csv = report.out_dir / "arch_search.csv"
    keys = sorted({k for row in table for k in row})
    with open(out_csv, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=keys)
        w.writeheader()
        for row in table:
            w.writerow(row)
    report.arch_table = table
    return table


@dataclass
class AlignmentStudyResult:
    """Held-out acceptance rates from the alignment-direction study."""
    pt_ar: float
    ft_target_ar: list[float]    # one per seed
    ft_original_ar: list[float]

    @property
    def mean_ft_target(self) -> float:
        return sum(self.ft_target_ar) / len(self.ft_target_ar)

    @property
    def mean_ft_original(self) -> float:
        return sum(self.ft_original_ar) / len(self.ft_original_ar)


def alignment_direction_study(
    seeds: tuple[int, ...] = (0, 1, 2),
    n_topics: int = 32,
    n_ft_topics: int = 24,
    gamma: int = 3,
    eval_mode: str = "greedy",
    temperature: float = 0.6,
    verbose: bool = False,
) -> AlignmentStudyResult:
    """Fine-tune a pre-trained draft on target-generated vs. original
    responses and compare held-out acceptance rates against a fixed tiny
    target trained to memorize a synthetic topic world.

    The target's own phrasing of each fact differs from the "original"
    dataset's phrasing, so drafts tuned on the target's answers align
    measurably better, mirroring the effect at full scale.
    """
    from .synthetic import TopicWorld

    tokenizer = ByteTokenizer()
    world = TopicWorld(n_topics=n_topics, seed=0)
    target_cfg = ModelConfig(hidden_size=64, intermediate_size=128, n_layers=2,
                             n_heads=4, n_kv_heads=4, vocab_size=264, max_seq_len=96)
    draft_cfg = ModelConfig(hidden_size=32, intermediate_size=64, n_layers=2,
                            n_heads=4, n_kv_heads=4, vocab_size=264, max_seq_len=96)

    target_sched = TrainSchedule(peak_lr=3e-3, total_steps=600, batch_size=16, seq_len=64)
    target = train_stage(
        init_model(target_cfg, seed=1),
        alignment_batches(world.target_training_samples(), tokenizer,
                          target_sched.batch_size, target_sched.seq_len,
                          seed=11, epochs=None, mask_mode="full"),
        target_sched, LossSpec(ce=1.0)).state

    pt_sched = TrainSchedule(peak_lr=3e-3, total_steps=120, batch_size=16, seq_len=64)
    pt_corpus = world.pretrain_corpus(repeats=30, seed=3)
    pt_batches = itertools.chain(*[
        lm_batches(pt_corpus, tokenizer, 16, 64, seed=4 + e) for e in range(3)])
    draft_pt = train_stage(init_model(draft_cfg, seed=2), pt_batches,
                           pt_sched, LossSpec(ce=1.0)).state

    ft_topics = list(range(n_ft_topics))
    eval_topics = list(range(n_ft_topics, n_topics))
    prompts = [chat_prompt(tokenizer, list(world.instruction(k))) for k in eval_topics]
    policy = _policy(eval_mode, temperature)

    def held_out_ar(draft: ModelState, seed: int) -> float:
        stats = evaluate_acceptance(draft, target, prompts, policy, gamma,
                                    max_new_tokens=32, seed=seed,
                                    eos_id=tokenizer.eos_id)
        return acceptance_rate(stats)

    pt_ar = held_out_ar(draft_pt, 0)
    ft_sched = TrainSchedule(peak_lr=2e-3, total_steps=250, batch_size=16, seq_len=64)
    ft_target_ar, ft_original_ar = [], []
    for seed in seeds:
        generated = generate_alignment_set(
            target, tokenizer, world.seed_instructions(ft_topics),
            temperatures=[temperature], include_greedy=False,
            seed=100 + seed, max_new_tokens=48)
        original = world.original_samples(ft_topics)
        ft_t = train_stage(
            draft_pt, alignment_batches(generated, tokenizer, 16, 64, seed=200 + seed),
            ft_sched, LossSpec(ce=1.0)).state
        ft_o = train_stage(
            draft_pt, alignment_batches(original, tokenizer, 16, 64, seed=200 + seed),
            ft_sched, LossSpec(ce=1.0)).state
        ft_target_ar.append(held_out_ar(ft_t, 300 + seed))
        ft_original_ar.append(held_out_ar(ft_o, 300 + seed))
        if verbose:
            print(f"seed {seed}: FT-target AR {ft_target_ar[-1]:.3f}  "
                  f"FT-original AR {ft_original_ar[-1]:.3f}")
    return AlignmentStudyResult(pt_ar=pt_ar, ft_target_ar=ft_target_ar,
                                ft_original_ar=ft_original_ar)


def run_experiment(config: dict | str | Path, out_dir: str | Path | None = None,
                   seed: int | None = None) -> ExperimentReport:
    """Stages, then the evaluation grid, then optional architecture tables."""
    cfg, _ = _load_config(config)
    seed = int(cfg.get("seed", 0) if seed is None else seed)
    report = run_training(config, out_dir=out_dir, seed=seed)
    draft = None
    if report.checkpoints:
        last = list(report.checkpoints.values())[-1]
        draft = load_checkpoint(last)
    else:
        base_dir = _load_config(config)[1]
        if cfg.get("draft_init_checkpoint"):
            draft = load_checkpoint(base_dir / cfg["draft_init_checkpoint"])
        elif cfg.get("draft"):
            draft = init_model(ModelConfig.from_dict(cfg["draft"]), seed)
    if draft is not None and cfg.get("eval"):
        report = run_evaluation(config, draft, out_dir=out_dir, seed=seed, report=report)
        run_arch_table(config, draft, report, seed=seed)
    return report
