"""Ranking baseline from a deep-mutational-scanning estimator table.

Each table row carries an expected count c and a fitness score f for one
mutation; candidates are ranked by c, by f, or by the blend c * exp(alpha*f).
Rankings are static per table: the same list serves every evaluated sequence,
with per-clade table files selected by the sequence's variant when available.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .genome import AaMutation, NtMutation
from .tokenizer import Tokenizer

MODES = ("count", "fitness", "mixed")


@dataclass(frozen=True, slots=True)
class BloomRecord:
    mutation: str  # "C1000T" nucleotide form or "S:Q493E" spike form
    expected_count: float
    fitness: float

    def __post_init__(self):
        if self.expected_count < 0:
            raise ValueError("expected count must be non-negative")

    @property
    def is_aa(self) -> bool:
        return ":" in self.mutation


@dataclass(frozen=True)
class BloomTable:
    kind: str  # "nt" | "aa"
    records: tuple[BloomRecord, ...]

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.mutation in seen:
                raise ValueError(f"duplicate table row for {r.mutation}")
            seen.add(r.mutation)


def mixed_score(c: float, f: float, alpha: float = 1.0) -> float:
    return c * math.exp(alpha * f)


def record_score(record: BloomRecord, mode: str, alpha: float = 1.0) -> float:
    if mode == "count":
        return record.expected_count
    if mode == "fitness":
        return record.fitness
    if mode == "mixed":
        return mixed_score(record.expected_count, record.fitness, alpha)
    raise ValueError(f"unknown baseline mode {mode!r}")


def load_bloom_table(path: Path | str) -> BloomTable:
    records = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            records.append(
                BloomRecord(
                    mutation=row["mutation"],
                    expected_count=float(row["expected_count"]),
                    fitness=float(row["fitness"]),
                )
            )
    if not records:
        raise ValueError(f"{path}: empty baseline table")
    kinds = {r.is_aa for r in records}
    if len(kinds) != 1:
        raise ValueError(f"{path}: table mixes nucleotide and amino-acid rows")
    return BloomTable(kind="aa" if kinds.pop() else "nt", records=tuple(records))


def rank_nt_table(
    table: BloomTable, mode: str, k: int, tokenizer: Tokenizer, alpha: float = 1.0
) -> list[tuple[int, float]]:
    """Top-k (mutation token, score); ties broken by token id ascending."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if table.kind != "nt":
        raise ValueError("nucleotide ranking needs a nucleotide table")
    scored = []
    for r in table.records:
        m = NtMutation.parse(r.mutation)
        token = tokenizer.mutation_token(m.site, m.to)
        scored.append((token, record_score(r, mode, alpha)))
    scored.sort(key=lambda ts: (-ts[1], ts[0]))
    return scored[:k]


def rank_aa_table(
    table: BloomTable, mode: str, k: int, alpha: float = 1.0
) -> list[tuple[AaMutation, float]]:
    """Top-k (amino-acid mutation, score); ties broken by position then target."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if table.kind != "aa":
        raise ValueError("amino-acid ranking needs an amino-acid table")
    scored = [(AaMutation.parse(r.mutation), record_score(r, mode, alpha)) for r in table.records]
    scored.sort(key=lambda ms: (-ms[1], ms[0].pos, ms[0].to_aa, ms[0].from_aa))
    return scored[:k]


class BloomTableSet:
    """Per-clade tables with a default fallback."""

    def __init__(self, default: BloomTable, per_clade: dict[str, BloomTable] | None = None):
        self.default = default
        self.per_clade = per_clade or {}

    def for_variant(self, variant_name: str) -> BloomTable:
        return self.per_clade.get(variant_name, self.default)


def write_bloom_table(records: Iterable[BloomRecord], path: Path | str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["mutation", "expected_count", "fitness"])
        for r in records:
            writer.writerow([r.mutation, f"{r.expected_count:.10g}", f"{r.fitness:.10g}"])
