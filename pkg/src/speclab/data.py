"""Corpus handling: ingestion, token-budget subsampling and mixing,
completion-task construction, synthetic alignment-set generation, and the
batch builders that feed training.

Corpora are JSON-lines files of {"text": ..., "tag": ...}; alignment sets
are JSON-lines of {"instruction", "response", "source", "temperature"}.
Every operation is a deterministic function of its inputs and seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .model import ModelState
from .sampling import SamplingPolicy, autoregressive_decode
from .tokenizer import ByteTokenizer
from .training import Batch

TAGS = ("text", "code", "instruction")


@dataclass(frozen=True)
class Document:
    text: bytes
    tag: str

    def __post_init__(self) -> None:
        if self.tag not in TAGS:
            raise DataError(f"unknown document tag {self.tag!r}")


@dataclass
class Corpus:
    documents: list[Document]
    token_count: int = field(init=False)

    def __post_init__(self) -> None:
        # byte-level tokenization: one token per byte
        self.token_count = sum(len(d.text) for d in self.documents)

    def __len__(self) -> int:
        return len(self.documents)

    def tag_token_counts(self) -> dict[str, int]:
        counts = {t: 0 for t in TAGS}
        for d in self.documents:
            counts[d.tag] += len(d.text)
        return counts


def load_corpus(path: str | Path) -> Corpus:
    docs = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            docs.append(Document(
                text=rec["text"].encode("utf-8", errors="surrogateescape"),
                tag=rec.get("tag", "text"),
            ))
    return Corpus(documents=docs)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for d in corpus.documents:
            f.write(json.dumps({
                "text": d.text.decode("utf-8", errors="surrogateescape"),
                "tag": d.tag,
            }) + "\n")


def subsample(corpus: Corpus, token_budget: int, seed: int) -> Corpus:
    """Uniform documents without replacement until the budget is first met
    or exceeded; the last document is kept whole."""
    if token_budget < 0:
        raise DataError("token budget must be nonnegative")
    if token_budget > corpus.token_count:
        raise DataError(
            f"budget {token_budget} exceeds corpus size {corpus.token_count}")
    if token_budget == 0:
        return Corpus(documents=[])
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(corpus.documents))
    picked: list[Document] = []
    total = 0
    for idx in order:
        doc = corpus.documents[int(idx)]
        picked.append(doc)
        total += len(doc.text)
        if total >= token_budget:
            break
    return Corpus(documents=picked)


@dataclass(frozen=True)
class MixPart:
    corpus_id: str
    token_budget: int


@dataclass(frozen=True)
class MixSpec:
    parts: tuple[MixPart, ...]
    seed: int = 0

    def __post_init__(self) -> None:
        if sum(p.token_budget for p in self.parts) <= 0:
            raise ConfigError("mix budgets must sum to a positive number")


def mix(spec: MixSpec, corpora: dict[str, Corpus]) -> Corpus:
    """Subsample each part to its budget, then interleave with a
    deterministic shuffle; tag ratios match budgets within one document."""
    docs: list[Document] = []
    for i, part in enumerate(spec.parts):
        if part.corpus_id not in corpora:
            raise DataError(f"unknown corpus id {part.corpus_id!r}")
        sub = subsample(corpora[part.corpus_id], part.token_budget, seed=spec.seed + i)
        docs.extend(sub.documents)
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(len(docs))
    return Corpus(documents=[docs[int(i)] for i in order])


@dataclass
class CompletionTask:
    context: list[int]
    reference: list[int]


def make_completion_tasks(
    corpus: Corpus,
    tokenizer: ByteTokenizer,
    n_tasks: int,
    min_ctx: int,
    seed: int,
) -> list[CompletionTask]:
    """Split documents at a uniform random position >= min_ctx; the prefix
    becomes the decode context, the remainder the reference continuation."""
    if n_tasks < 0:
        raise DataError("n_tasks must be nonnegative")
    eligible = [d for d in corpus.documents if len(d.text) > min_ctx]
    if n_tasks and not eligible:
        raise DataError(f"no document longer than min_ctx={min_ctx}")
    rng = np.random.default_rng(seed)
    tasks = []
    for _ in range(n_tasks):
        doc = eligible[int(rng.integers(len(eligible)))]
        ids = tokenizer.encode(doc.text)
        split = int(rng.integers(min_ctx, len(ids)))
        tasks.append(CompletionTask(context=ids[:split], reference=ids[split:]))
    return tasks


@dataclass
class AlignmentSample:
    """One instruction/response pair for draft alignment.

    source records who produced the response; instruction_source records
    whether the instruction came from the seed corpus or was solicited from
    the model itself; truncated marks responses cut at the length limit
    before an eos appeared.
    """
    instruction: list[int]
    response: list[int]
    source: str                      # "original" | "target_generated"
    temperature: float | None = None  # None means greedy
    instruction_source: str = "corpus"  # "corpus" | "model"
    truncated: bool = False


def save_alignment_set(samples: list[AlignmentSample], path: str | Path,
                       tokenizer: ByteTokenizer) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for s in samples:
            f.write(json.dumps({
                "instruction": tokenizer.decode_bytes(s.instruction).decode(
                    "utf-8", errors="surrogateescape"),
                "response": tokenizer.decode_bytes(s.response).decode(
                    "utf-8", errors="surrogateescape"),
                "source": s.source,
                "temperature": s.temperature,
                "instruction_source": s.instruction_source,
                "truncated": s.truncated,
            }) + "\n")


def load_alignment_set(path: str | Path, tokenizer: ByteTokenizer) -> list[AlignmentSample]:
    samples = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            samples.append(AlignmentSample(
                instruction=tokenizer.encode(
                    rec["instruction"].encode("utf-8", errors="surrogateescape")),
                response=tokenizer.encode(
                    rec["response"].encode("utf-8", errors="surrogateescape")),
                source=rec["source"],
                temperature=rec.get("temperature"),
                instruction_source=rec.get("instruction_source", "corpus"),
                truncated=rec.get("truncated", False),
            ))
    return samples


def chat_prompt(tokenizer: ByteTokenizer, instruction: list[int]) -> list[int]:
    return [tokenizer.bos_id, tokenizer.inst_id] + list(instruction) + [tokenizer.resp_id]


def chat_sequence(tokenizer: ByteTokenizer, sample: AlignmentSample) -> tuple[list[int], int]:
    """Full training sequence and the index where the response begins."""
    prompt = chat_prompt(tokenizer, sample.instruction)
    return prompt + list(sample.response) + [tokenizer.eos_id], len(prompt)


def generate_alignment_set(
    target: ModelState,
    tokenizer: ByteTokenizer,
    seed_instructions: list[list[int]],
    temperatures: list[float],
    include_greedy: bool = True,
    self_prompt_count: int = 0,
    seed: int = 0,
    max_new_tokens: int = 64,
) -> list[AlignmentSample]:
    """Solicit responses from the target for every seed instruction under
    each sampling configuration, plus optional self-prompted samples where
    the target writes the instruction too."""
    if not temperatures and not include_greedy:
        raise ConfigError("need at least one sampling configuration")
    configs: list[float | None] = ([None] if include_greedy else []) + list(temperatures)
    ss = np.random.SeedSequence(seed)
    n_total = len(seed_instructions) * len(configs) + self_prompt_count
    children = ss.spawn(n_total)
    samples: list[AlignmentSample] = []
    idx = 0
    for instr in seed_instructions:
        for temp in configs:
            rng = np.random.default_rng(children[idx]); idx += 1
            policy = (SamplingPolicy("greedy") if temp is None
                      else SamplingPolicy("multinomial", temperature=temp))
            out = autoregressive_decode(
                target, chat_prompt(tokenizer, instr), policy,
                max_new_tokens, rng=rng, eos_id=tokenizer.eos_id)
            truncated = tokenizer.eos_id not in out
            response = out[:-1] if not truncated else out
            samples.append(AlignmentSample(
                instruction=list(instr), response=response,
                source="target_generated", temperature=temp,
                instruction_source="corpus", truncated=truncated))
    base_temp = temperatures[0] if temperatures else None
    for _ in range(self_prompt_count):
        rng = np.random.default_rng(children[idx]); idx += 1
        policy = (SamplingPolicy("greedy") if base_temp is None
                  else SamplingPolicy("multinomial", temperature=base_temp))
        # the model writes the instruction from the bare separator prefix
        instr_out = autoregressive_decode(
            target, [tokenizer.bos_id, tokenizer.inst_id], policy,
            max_new_tokens, rng=rng, eos_id=tokenizer.resp_id)
        instr_truncated = tokenizer.resp_id not in instr_out
        instr = instr_out[:-1] if not instr_truncated else instr_out
        out = autoregressive_decode(
            target, chat_prompt(tokenizer, instr), policy,
            max_new_tokens, rng=rng, eos_id=tokenizer.eos_id)
        truncated = tokenizer.eos_id not in out
        response = out[:-1] if not truncated else out
        samples.append(AlignmentSample(
            instruction=instr, response=response,
            source="target_generated", temperature=base_temp,
            instruction_source="model", truncated=truncated or instr_truncated))
    return samples


def lm_token_stream(corpus: Corpus, tokenizer: ByteTokenizer, seed: int) -> np.ndarray:
    """Shuffle documents and concatenate them, eos-separated, into one
    id stream for next-token pre-training."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(corpus.documents))
    ids: list[int] = []
    for i in order:
        ids.extend(tokenizer.encode(corpus.documents[int(i)].text))
        ids.append(tokenizer.eos_id)
    return np.asarray(ids, dtype=np.int64)


def lm_batches(corpus: Corpus, tokenizer: ByteTokenizer, batch_size: int,
               seq_len: int, seed: int):
    """Non-overlapping (batch, seq_len) next-token batches; one epoch."""
    stream = lm_token_stream(corpus, tokenizer, seed)
    step_tokens = batch_size * (seq_len + 1)
    n_steps = len(stream) // step_tokens
    for s in range(n_steps):
        chunk = stream[s * step_tokens:(s + 1) * step_tokens]
        rows = chunk.reshape(batch_size, seq_len + 1)
        yield Batch(
            inputs=rows[:, :-1].copy(),
            targets=rows[:, 1:].copy(),
            mask=np.ones((batch_size, seq_len), dtype=np.float32),
        )


def _pad_rows(rows: list[np.ndarray], pad_id: int, width: int) -> np.ndarray:
    out = np.full((len(rows), width), pad_id, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, :len(r)] = r
    return out


def alignment_batches(
    samples: list[AlignmentSample],
    tokenizer: ByteTokenizer,
    batch_size: int,
    seq_len: int,
    seed: int,
    epochs: int | None = None,
    teacher: dict[int, tuple[np.ndarray, np.ndarray]] | None = None,
    k: int | None = None,
    mask_mode: str = "response",
):
    """Fine-tuning batches with the loss masked to response tokens.

    The mask covers exactly the positions whose target is a response token
    or the closing eos, never the instruction; mask_mode="full" instead
    supervises the whole sequence (used when training a target model that
    must also model instructions). With `teacher`, per-sample (ids, logits)
    top-k arrays are laid out alongside for distillation.
    """
    if mask_mode not in ("response", "full"):
        raise ConfigError(f"unknown mask_mode {mask_mode!r}")
    if not samples:
        raise DataError("no alignment samples")
    sequences = []
    for si, s in enumerate(samples):
        seq, resp_start = chat_sequence(tokenizer, s)
        seq = seq[:seq_len + 1]
        if len(seq) < resp_start + 1:
            continue  # response truncated away entirely
        sequences.append((si, np.asarray(seq, dtype=np.int64), resp_start))
    if not sequences:
        raise DataError("all alignment samples shorter than the loss boundary")
    rng = np.random.default_rng(seed)
    epoch = 0
    while epochs is None or epoch < epochs:
        order = rng.permutation(len(sequences))
        for b0 in range(0, len(order), batch_size):
            chosen = [sequences[int(i)] for i in order[b0:b0 + batch_size]]
            width = max(len(seq) for _, seq, _ in chosen)
            inputs = _pad_rows([seq[:-1] for _, seq, _ in chosen], tokenizer.pad_id, width - 1)
            targets = _pad_rows([seq[1:] for _, seq, _ in chosen], tokenizer.pad_id, width - 1)
            mask = np.zeros_like(inputs, dtype=np.float32)
            for i, (_, seq, resp_start) in enumerate(chosen):
                # position j predicts seq[j+1]; responses start at resp_start
                lo = 0 if mask_mode == "full" else resp_start - 1
                mask[i, lo:len(seq) - 1] = 1.0
            if teacher is None:
                yield Batch(inputs=inputs, targets=targets, mask=mask)
            else:
                # masked positions still need distinct ids; arange is inert
                t_ids = np.tile(np.arange(k, dtype=np.int64), (len(chosen), width - 1, 1))
                t_log = np.zeros((len(chosen), width - 1, k), dtype=np.float32)
                for i, (si, seq, _) in enumerate(chosen):
                    ids_arr, log_arr = teacher[si]
                    n = min(len(seq) - 1, ids_arr.shape[0])
                    t_ids[i, :n] = ids_arr[:n]
                    t_log[i, :n] = log_arr[:n]
                yield Batch(inputs=inputs, targets=targets, mask=mask,
                            teacher_ids=t_ids, teacher_logits=t_log)
        epoch += 1
