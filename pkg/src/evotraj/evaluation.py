"""Recall@k evaluation with teacher forcing over private-mutation trajectories.

Each private mutation becomes one prediction step: the predictor sees the
prefix, the variant mutations, and all earlier private mutations, and its
top-k candidates are checked against the true next mutation. A sequence's
recall is the mean over its steps; aggregates are reported unweighted and
weighted by representativeness.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .genome import AaMutation, SpikeMap, SpikeState
from .tokenizer import PREFIX_LENGTH, TokenizedSample, Tokenizer
from .tree import Trajectory, spike_aa_steps
from .model.ranking import strip_location
from .pipeline import write_atomic
from .model.transformer import Transformer


class NtPredictor(Protocol):
    def rank_at_positions(
        self, tokens: Sequence[int], positions: Sequence[int], k: int
    ) -> list[tuple[int, ...]]:
        """Top-k mutation tokens for each context end position."""


class ModelPredictor:
    """Ranks with a trained model; one forward pass serves every step of a
    sequence because the distributions at all positions are causal."""

    def __init__(self, model: Transformer, tokenizer: Tokenizer, use_location: bool = True):
        self.model = model
        self.tokenizer = tokenizer
        self.use_location = use_location

    @property
    def max_context(self) -> int:
        return self.model.config.max_seq

    def rank_at_positions(self, tokens, positions, k):
        tokens = list(tokens)
        if not self.use_location:
            tokens = strip_location(self.tokenizer, tokens)
        probs = self.model.forward(np.asarray(tokens, dtype=np.int64))[0]
        lo, hi = self.tokenizer.mutation_block
        out = []
        for pos in positions:
            row = probs[pos, lo:hi].copy()
            for t in tokens[PREFIX_LENGTH : pos + 1]:
                if lo <= t < hi:
                    row[t - lo] = -1.0
            k_eff = min(k, row.size)
            top = np.argpartition(row, -k_eff)[-k_eff:]
            top = top[np.argsort(row[top])[::-1]]
            top = top[row[top] >= 0.0]
            out.append(tuple(int(t) + lo for t in top))
        return out


class StaticPredictor:
    """Context-independent ranking (a baseline table): the same candidate list
    answers every step."""

    def __init__(self, ranked_tokens: Sequence[int]):
        self.ranked_tokens = tuple(ranked_tokens)

    def rank_at_positions(self, tokens, positions, k):
        return [self.ranked_tokens[:k] for _ in positions]


class RandomPredictor:
    """Uniform draws from a fixed candidate pool, without replacement."""

    def __init__(self, candidate_tokens: Sequence[int], seed: int = 0):
        self.candidates = np.asarray(candidate_tokens)
        self.rng = np.random.default_rng(seed)

    def rank_at_positions(self, tokens, positions, k):
        k_eff = min(k, self.candidates.size)
        return [
            tuple(int(t) for t in self.rng.choice(self.candidates, size=k_eff, replace=False))
            for _ in positions
        ]


class StaticAaPredictor:
    """Context-independent spike amino-acid ranking from an aa-form table."""

    def __init__(self, ranked_aa: Sequence[AaMutation]):
        self.ranked_aa = tuple(ranked_aa)

    def rank_aa_at_steps(self, n_steps: int, k: int) -> list[tuple[AaMutation, ...]]:
        return [self.ranked_aa[:k] for _ in range(n_steps)]


def nucleotide_candidate_count(genome_length: int) -> int:
    """Single-mutation candidate space: each site can change to any of the
    four states it does not currently hold."""
    return genome_length * 4


@dataclass
class SequenceRecall:
    recall: float
    n_steps: int


def nucleotide_recall_at_k(
    sample: TokenizedSample, predictor: NtPredictor, k: int, max_context: int | None = None
) -> SequenceRecall | None:
    """Teacher-forced recall over a tokenized sample's private mutations.

    Returns None when the longest context would exceed max_context; the caller
    counts and reports such exclusions.
    """
    n_var = sample.split_index
    n_priv = len(sample.trajectory_tokens) - n_var
    if n_priv < 1:
        raise ValueError("sequence has no private mutations to predict")
    tokens = list(sample.tokens)
    context = tokens[:-1]
    if max_context is not None and len(context) > max_context:
        return None
    base = PREFIX_LENGTH + n_var
    positions = [base + i - 1 for i in range(n_priv)]
    ranked = predictor.rank_at_positions(context, positions, k)
    hits = sum(
        tokens[base + i] in ranked[i] for i in range(n_priv)
    )
    return SequenceRecall(recall=hits / n_priv, n_steps=n_priv)


def spike_recall_at_k(
    trajectory: Trajectory,
    sample: TokenizedSample,
    predictor,
    k: int,
    tokenizer: Tokenizer,
    spike_map: SpikeMap,
    max_context: int | None = None,
) -> SequenceRecall | None:
    """Teacher-forced spike recall: a step for each private mutation that
    changes a spike residue.

    A nucleotide predictor's candidates are mapped through the codon context
    in force at the step; an amino-acid predictor (rank_aa_at_steps) is
    matched directly.
    """
    steps = spike_aa_steps(trajectory, spike_map)
    if not steps:
        raise ValueError("sequence has no private spike amino-acid mutations")
    tokens = list(sample.tokens)
    context = tokens[:-1]
    if max_context is not None and len(context) > max_context:
        return None
    n_var = sample.split_index
    base = PREFIX_LENGTH + n_var

    if hasattr(predictor, "rank_aa_at_steps"):
        ranked_aa = predictor.rank_aa_at_steps(len(steps), k)
        hits = sum(
            target in ranked_aa[j] for j, (_, target) in enumerate(steps)
        )
        return SequenceRecall(recall=hits / len(steps), n_steps=len(steps))

    positions = [base + i - 1 for i, _ in steps]
    ranked = predictor.rank_at_positions(context, positions, k)

    state = SpikeState(spike_map)
    for m in trajectory.variant_mutations:
        state.apply(m)
    hits = 0
    step_iter = iter(zip(steps, ranked))
    pending = next(step_iter, None)
    for i, mut in enumerate(trajectory.sequence_mutations):
        if pending is not None and pending[0][0] == i:
            (_, target), candidates = pending
            for token in candidates:
                cand = tokenizer.mutation_of_token(token)
                ctx = state.context_for_site(cand.site)
                if ctx is None:
                    continue
                if spike_map.aa_mutation_of(cand, ctx) == target:
                    hits += 1
                    break
            pending = next(step_iter, None)
        state.apply(mut)
    return SequenceRecall(recall=hits / len(steps), n_steps=len(steps))


def aggregate(recalls: Sequence[float], weights: Sequence[float] | None = None) -> tuple[float, float]:
    """(macro mean, representativeness-weighted mean)."""
    if len(recalls) == 0:
        raise ValueError("nothing to aggregate")
    r = np.asarray(recalls, dtype=float)
    macro = float(r.mean())
    if weights is None:
        return macro, macro
    w = np.asarray(weights, dtype=float)
    if w.shape != r.shape:
        raise ValueError("weights and recalls must align")
    return macro, float((w * r).sum() / w.sum())


@dataclass(frozen=True, slots=True)
class RecallReport:
    task: str
    k: int
    slice_label: str
    macro_recall: float
    weighted_recall: float
    n_sequences: int


@dataclass
class EvalResult:
    task: str
    per_k: dict[int, list[float]]  # recall per evaluated sequence
    weights: list[float]
    months: list[int | None]
    reports: list[RecallReport] = field(default_factory=list)
    n_excluded_too_long: int = 0


def evaluate_sequences(
    trajectories: Sequence[Trajectory],
    samples: Sequence[TokenizedSample],
    predictor,
    ks: Sequence[int],
    task: str = "nucleotide",
    tokenizer: Tokenizer | None = None,
    spike_map: SpikeMap | None = None,
    weights: Sequence[float] | None = None,
    base_year: int = 2019,
    max_context: int | None = None,
) -> EvalResult:
    """Recall@k for every sequence, plus aggregate and per-month reports."""
    if task == "spike" and (spike_map is None or tokenizer is None):
        raise ValueError("spike task needs tokenizer and spike_map")
    if max_context is None and hasattr(predictor, "max_context"):
        max_context = predictor.max_context

    result = EvalResult(task=task, per_k={k: [] for k in ks}, weights=[], months=[])
    kept_weights: list[float] = []
    for idx, (traj, sample) in enumerate(zip(trajectories, samples)):
        per_seq: dict[int, SequenceRecall] = {}
        excluded = False
        for k in ks:
            if task == "nucleotide":
                r = nucleotide_recall_at_k(sample, predictor, k, max_context)
            else:
                r = spike_recall_at_k(
                    traj, sample, predictor, k, tokenizer, spike_map, max_context
                )
            if r is None:
                excluded = True
                break
            per_seq[k] = r
        if excluded:
            result.n_excluded_too_long += 1
            continue
        for k in ks:
            result.per_k[k].append(per_seq[k].recall)
        w = 1.0 if weights is None else float(weights[idx])
        result.weights.append(w)
        collected = traj.meta.collected
        result.months.append(
            None if collected is None else collected.month_index(base_year)
        )

    for k in ks:
        if not result.per_k[k]:
            continue
        macro, weighted = aggregate(result.per_k[k], result.weights)
        result.reports.append(
            RecallReport(task, k, "all", macro, weighted, len(result.per_k[k]))
        )
    result.reports.extend(slice_by_month(result))
    return result


def slice_by_month(result: EvalResult) -> list[RecallReport]:
    """One report per calendar month of collection; empty months are omitted."""
    out = []
    months = sorted({m for m in result.months if m is not None})
    for month in months:
        idxs = [i for i, m in enumerate(result.months) if m == month]
        for k, recalls in result.per_k.items():
            sub = [recalls[i] for i in idxs]
            w = [result.weights[i] for i in idxs]
            macro, weighted = aggregate(sub, w)
            out.append(
                RecallReport(result.task, k, f"month={month}", macro, weighted, len(sub))
            )
    return out


def write_report_csv(reports: Iterable[RecallReport], path: Path | str) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["task", "k", "slice", "macro_recall", "weighted_recall", "n_sequences"])
    for r in reports:
        writer.writerow(
            [r.task, r.k, r.slice_label, f"{r.macro_recall:.6f}",
             f"{r.weighted_recall:.6f}", r.n_sequences]
        )
    write_atomic(path, buf.getvalue())
