"""Deterministic distributed weighted sampling with per-worker accumulators.

Each epoch, the pool is shuffled by a seeded permutation and split into
contiguous worker shards. A worker walks its shard adding each sequence's
probability to a local accumulator; a sequence is selected once for every
integer boundary the accumulator crosses. Workers share no state, so the
selection is reproducible for any worker count.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .pipeline import write_atomic

PLAN_MAGIC = b"EVPL"
PLAN_VERSION = 1


@dataclass
class WorkerState:
    worker_id: int
    accumulator: float = 0.0

    def encounter(self, p: float) -> int:
        """Add one sequence's probability; return how many copies to select."""
        if p <= 0:
            raise ValueError(f"sampling probability must be positive, got {p}")
        before = self.accumulator
        self.accumulator = before + p
        return math.floor(self.accumulator) - math.floor(before)


@dataclass
class EpochSelection:
    """Ordered (sequence id, copies) per worker; copies >= 1."""

    seed: int
    per_worker: list[list[tuple[int, int]]]

    def flatten(self) -> list[int]:
        out = []
        for worker in self.per_worker:
            for seq_id, copies in worker:
                out.extend([seq_id] * copies)
        return out

    @property
    def total_copies(self) -> int:
        return sum(c for worker in self.per_worker for _, c in worker)


def shuffle_pool(n_sequences: int, seed: int) -> np.ndarray:
    """The epoch's seeded global permutation of sequence ids."""
    return np.random.default_rng(seed).permutation(n_sequences)


def shard(pool: Sequence[int] | np.ndarray, n_workers: int) -> list[np.ndarray]:
    """Contiguous split; first shards take the remainder."""
    if n_workers < 1:
        raise ValueError("need at least one worker")
    return [np.asarray(chunk) for chunk in np.array_split(np.asarray(pool), n_workers)]


def run_worker(
    partition: Iterable[int], probabilities: Sequence[float], worker_id: int = 0
) -> list[tuple[int, int]]:
    """One worker's pass over its shard; accumulator starts at zero."""
    state = WorkerState(worker_id)
    selected = []
    for seq_id in partition:
        copies = state.encounter(probabilities[seq_id])
        if copies:
            selected.append((int(seq_id), copies))
    return selected


def run_epoch(
    probabilities: Sequence[float], seed: int, n_workers: int = 1
) -> EpochSelection:
    """Deterministic epoch selection over the whole pool."""
    pool = shuffle_pool(len(probabilities), seed)
    shards = shard(pool, n_workers)
    return EpochSelection(
        seed=seed,
        per_worker=[run_worker(s, probabilities, w) for w, s in enumerate(shards)],
    )


def save_plan(selection: EpochSelection, path: Path | str, config_hash: str = "") -> None:
    """Binary plan: per worker, a list of (sequence id, copy count) pairs."""
    path = Path(path)
    chunks = [PLAN_MAGIC, struct.pack("<II", PLAN_VERSION, len(selection.per_worker))]
    for worker in selection.per_worker:
        chunks.append(struct.pack("<I", len(worker)))
        for seq_id, copies in worker:
            chunks.append(struct.pack("<II", seq_id, copies))
    write_atomic(path, b"".join(chunks))
    manifest = {"seed": selection.seed, "config_hash": config_hash}
    write_atomic(
        path.with_suffix(path.suffix + ".manifest.json"),
        json.dumps(manifest, sort_keys=True) + "\n",
    )


def load_plan(path: Path | str) -> EpochSelection:
    path = Path(path)
    with open(path, "rb") as f:
        if f.read(4) != PLAN_MAGIC:
            raise ValueError(f"{path}: not a sample-plan file")
        version, n_workers = struct.unpack("<II", f.read(8))
        if version != PLAN_VERSION:
            raise ValueError(f"{path}: unsupported plan version {version}")
        per_worker = []
        for _ in range(n_workers):
            (n,) = struct.unpack("<I", f.read(4))
            worker = [struct.unpack("<II", f.read(8)) for _ in range(n)]
            per_worker.append([(s, c) for s, c in worker])
    manifest_path = path.with_suffix(path.suffix + ".manifest.json")
    seed = 0
    if manifest_path.exists():
        seed = json.loads(manifest_path.read_text())["seed"]
    return EpochSelection(seed=seed, per_worker=per_worker)
