"""Mutation-annotated phylogenetic trees: JSONL parsing, trajectory extraction, date splits.

Tree files are line-oriented JSON, one node per line:

    {"id": "n1", "parent": null, "muts": ["C1000T", "241-"], "variant": "V1",
     "meta": {"name": "s1", "collected": "2025-03-05", "released": "2025-03-20",
              "country": "Germany", "region": null}}

Mutation strings may carry an origin base which is ignored on read. Dates are
ISO-8601 and may be truncated to year or year-month.
"""

from __future__ import annotations

import datetime
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from .genome import NtMutation, SpikeMap, SpikeState, AaMutation


class TreeFormatError(ValueError):
    """Malformed tree file; message names the offending line."""


@dataclass(frozen=True, slots=True)
class PartialDate:
    """A calendar date that may be truncated to year or year-month."""

    year: int
    month: int | None = None
    day: int | None = None

    def __post_init__(self):
        if self.month is not None and not 1 <= self.month <= 12:
            raise ValueError(f"month {self.month} out of range")
        if self.day is not None:
            if self.month is None:
                raise ValueError("day given without month")
            datetime.date(self.year, self.month, self.day)  # validates

    @property
    def is_full(self) -> bool:
        return self.month is not None and self.day is not None

    def to_date(self) -> datetime.date:
        if not self.is_full:
            raise ValueError(f"partial date {self.fmt()} has no day resolution")
        return datetime.date(self.year, self.month, self.day)

    def month_index(self, base_year: int) -> int | None:
        """Whole months since January of base_year; None if month unknown."""
        if self.month is None:
            return None
        return (self.year - base_year) * 12 + (self.month - 1)

    def fmt(self) -> str:
        if self.month is None:
            return f"{self.year:04d}"
        if self.day is None:
            return f"{self.year:04d}-{self.month:02d}"
        return f"{self.year:04d}-{self.month:02d}-{self.day:02d}"

    @classmethod
    def parse(cls, text: str) -> "PartialDate":
        parts = text.strip().split("-")
        if not 1 <= len(parts) <= 3 or not all(p.isdigit() for p in parts):
            raise ValueError(f"malformed date {text!r}")
        nums = [int(p) for p in parts]
        return cls(*nums)

    @classmethod
    def from_date(cls, d: datetime.date) -> "PartialDate":
        return cls(d.year, d.month, d.day)


@dataclass(frozen=True, slots=True)
class SequenceMeta:
    name: str
    collected: PartialDate | None = None
    released: PartialDate | None = None
    country: str | None = None
    region: str | None = None

    def __post_init__(self):
        if (
            self.collected is not None
            and self.released is not None
            and self.collected.is_full
            and self.released.is_full
            and self.released.to_date() < self.collected.to_date()
        ):
            raise ValueError(
                f"{self.name}: released {self.released.fmt()} precedes collected {self.collected.fmt()}"
            )


@dataclass(frozen=True, slots=True)
class TreeNode:
    node_id: str
    parent_id: str | None
    branch_mutations: tuple[NtMutation, ...] = ()
    variant_name: str | None = None
    leaf_meta: SequenceMeta | None = None


@dataclass(frozen=True, slots=True)
class Trajectory:
    """One sequence's evolutionary path: shared variant mutations plus private ones."""

    meta: SequenceMeta
    variant_name: str
    variant_mutations: tuple[NtMutation, ...]
    sequence_mutations: tuple[NtMutation, ...]

    @property
    def all_mutations(self) -> tuple[NtMutation, ...]:
        return self.variant_mutations + self.sequence_mutations


class PhyloTree:
    def __init__(self, nodes: dict[str, TreeNode], root_id: str):
        self.nodes = nodes
        self.root_id = root_id
        self._children: dict[str, list[str]] = {nid: [] for nid in nodes}
        for node in nodes.values():
            if node.parent_id is not None:
                self._children[node.parent_id].append(node.node_id)

    def __len__(self) -> int:
        return len(self.nodes)

    def children(self, node_id: str) -> list[str]:
        return self._children[node_id]

    def is_leaf(self, node_id: str) -> bool:
        return not self._children[node_id]

    def leaves(self) -> Iterator[TreeNode]:
        for nid, node in self.nodes.items():
            if not self._children[nid]:
                yield node

    def path_from_root(self, node_id: str) -> list[TreeNode]:
        """Nodes from root to node_id inclusive."""
        path = []
        nid: str | None = node_id
        while nid is not None:
            node = self.nodes[nid]
            path.append(node)
            nid = node.parent_id
        path.reverse()
        return path

    def depth(self, node_id: str) -> int:
        return len(self.path_from_root(node_id)) - 1


def _parse_meta(obj: dict) -> SequenceMeta:
    def opt_date(key):
        v = obj.get(key)
        return None if v is None else PartialDate.parse(str(v))

    return SequenceMeta(
        name=obj.get("name", ""),
        collected=opt_date("collected"),
        released=opt_date("released"),
        country=obj.get("country"),
        region=obj.get("region"),
    )


def parse_tree(source: Path | str | Iterable[str]) -> PhyloTree:
    """Parse a JSONL tree file, validating structure.

    Raises TreeFormatError naming the offending line for: duplicate ids,
    multiple roots, dangling parents, cycles, and malformed mutation strings.
    """
    if isinstance(source, (str, Path)):
        lines: Iterable[str] = Path(source).read_text().splitlines()
    else:
        lines = source

    nodes: dict[str, TreeNode] = {}
    line_of: dict[str, int] = {}
    root_id: str | None = None
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise TreeFormatError(f"line {lineno}: invalid JSON ({e.msg})") from None
        if "id" not in obj:
            raise TreeFormatError(f"line {lineno}: node missing 'id'")
        nid = str(obj["id"])
        if nid in nodes:
            raise TreeFormatError(f"line {lineno}: duplicate node id {nid!r}")
        parent = obj.get("parent")
        if parent is None:
            if root_id is not None:
                raise TreeFormatError(
                    f"line {lineno}: multiple roots ({root_id!r} and {nid!r})"
                )
            root_id = nid
        muts = []
        for m in obj.get("muts", []):
            try:
                muts.append(NtMutation.parse(m))
            except ValueError:
                raise TreeFormatError(
                    f"line {lineno}: malformed mutation string {m!r}"
                ) from None
        meta = None
        if obj.get("meta") is not None:
            try:
                meta = _parse_meta(obj["meta"])
            except ValueError as e:
                raise TreeFormatError(f"line {lineno}: bad metadata: {e}") from None
        nodes[nid] = TreeNode(
            node_id=nid,
            parent_id=None if parent is None else str(parent),
            branch_mutations=tuple(muts),
            variant_name=obj.get("variant"),
            leaf_meta=meta,
        )
        line_of[nid] = lineno

    if root_id is None:
        raise TreeFormatError("no root node (every node has a parent)")
    for nid, node in nodes.items():
        if node.parent_id is not None and node.parent_id not in nodes:
            raise TreeFormatError(
                f"line {line_of[nid]}: node {nid!r} has dangling parent {node.parent_id!r}"
            )

    # cycle check: every node must reach the root
    state: dict[str, int] = {}  # 0 in-progress, 1 done
    for start in nodes:
        chain = []
        nid: str | None = start
        while nid is not None and nid not in state:
            state[nid] = 0
            chain.append(nid)
            nid = nodes[nid].parent_id
        if nid is not None and state[nid] == 0:
            raise TreeFormatError(
                f"line {line_of[nid]}: cycle through node {nid!r}"
            )
        for c in chain:
            state[c] = 1

    return PhyloTree(nodes, root_id)


def serialize_tree(tree: PhyloTree) -> str:
    """Canonical JSONL form; parse(serialize(t)) == t and the bytes round-trip."""
    out = []
    for node in tree.nodes.values():
        obj: dict = {"id": node.node_id, "parent": node.parent_id}
        if node.branch_mutations:
            obj["muts"] = [m.fmt() for m in node.branch_mutations]
        if node.variant_name is not None:
            obj["variant"] = node.variant_name
        if node.leaf_meta is not None:
            m = node.leaf_meta
            meta: dict = {"name": m.name}
            if m.collected is not None:
                meta["collected"] = m.collected.fmt()
            if m.released is not None:
                meta["released"] = m.released.fmt()
            if m.country is not None:
                meta["country"] = m.country
            if m.region is not None:
                meta["region"] = m.region
            obj["meta"] = meta
        out.append(json.dumps(obj, separators=(",", ":")))
    return "\n".join(out) + "\n"


def extract_trajectory(
    tree: PhyloTree,
    leaf_id: str,
    variant_definitions: Mapping[str, Sequence[NtMutation]] | None = None,
) -> Trajectory:
    """Split the root-to-leaf mutation path at the nearest variant-tagged ancestor.

    When a refined definition exists for that variant, it replaces the raw
    root-to-variant-node path. Mutations keep path order; back-mutations stay
    as separate entries.
    """
    if leaf_id not in tree.nodes:
        raise KeyError(f"leaf {leaf_id!r} not in tree")
    if not tree.is_leaf(leaf_id):
        raise ValueError(f"node {leaf_id!r} is not a leaf")
    path = tree.path_from_root(leaf_id)
    variant_idx = None
    for i in range(len(path) - 1, -1, -1):
        if path[i].variant_name is not None:
            variant_idx = i
            break

    if variant_idx is None:
        variant_name = "root"
        variant_muts: tuple[NtMutation, ...] = ()
        seq_nodes = path
    else:
        variant_name = path[variant_idx].variant_name
        raw = tuple(m for node in path[: variant_idx + 1] for m in node.branch_mutations)
        if variant_definitions is not None and variant_name in variant_definitions:
            variant_muts = tuple(variant_definitions[variant_name])
        else:
            variant_muts = raw
        seq_nodes = path[variant_idx + 1 :]

    seq_muts = tuple(m for node in seq_nodes for m in node.branch_mutations)
    meta = path[-1].leaf_meta or SequenceMeta(name=leaf_id)
    return Trajectory(
        meta=meta,
        variant_name=variant_name,
        variant_mutations=variant_muts,
        sequence_mutations=seq_muts,
    )


def extract_all_trajectories(
    tree: PhyloTree,
    variant_definitions: Mapping[str, Sequence[NtMutation]] | None = None,
) -> list[Trajectory]:
    return [
        extract_trajectory(tree, node.node_id, variant_definitions)
        for node in tree.leaves()
    ]


def replay_genome_state(mutations: Iterable[NtMutation]) -> dict[int, str]:
    """Final per-site state after applying mutations in order (last one wins)."""
    state: dict[int, str] = {}
    for m in mutations:
        state[m.site] = m.to
    return state


def spike_aa_steps(
    trajectory: Trajectory, spike_map: SpikeMap
) -> list[tuple[int, AaMutation]]:
    """(index into sequence_mutations, amino-acid mutation) for each private
    mutation that produces a spike amino-acid change, replayed in path order."""
    state = SpikeState(spike_map)
    for m in trajectory.variant_mutations:
        state.apply(m)
    steps = []
    for i, m in enumerate(trajectory.sequence_mutations):
        effect = state.apply(m)
        if isinstance(effect, AaMutation):
            steps.append((i, effect))
    return steps


@dataclass
class SplitResult:
    train: list[Trajectory]
    eval: list[Trajectory]
    n_excluded_partial_dates: int = 0
    n_excluded_no_signal: int = 0


def split_train_eval(
    trajectories: Iterable[Trajectory],
    training_release_cutoff: datetime.date,
    eval_release_cutoff: datetime.date,
    task: str = "nucleotide",
    spike_map: SpikeMap | None = None,
) -> SplitResult:
    """Date-disjoint training/evaluation split.

    Train: released on or before the training cutoff. Eval: collected after the
    training cutoff, released on or before the eval cutoff, and carrying at
    least one private mutation for the task. Sequences without a full
    collection date are never placed in eval; their count is reported.
    """
    if not training_release_cutoff < eval_release_cutoff:
        raise ValueError("training cutoff must precede eval cutoff")
    if task not in ("nucleotide", "spike"):
        raise ValueError(f"unknown task {task!r}")
    if task == "spike" and spike_map is None:
        raise ValueError("spike task requires a spike_map")

    result = SplitResult(train=[], eval=[])
    for traj in trajectories:
        released = traj.meta.released
        if released is not None and released.is_full and released.to_date() <= training_release_cutoff:
            result.train.append(traj)
            continue
        if released is None or not released.is_full or released.to_date() > eval_release_cutoff:
            continue
        collected = traj.meta.collected
        if collected is None or not collected.is_full:
            result.n_excluded_partial_dates += 1
            continue
        if collected.to_date() <= training_release_cutoff:
            continue
        if task == "nucleotide":
            has_signal = len(traj.sequence_mutations) > 0
        else:
            has_signal = len(spike_aa_steps(traj, spike_map)) > 0
        if not has_signal:
            result.n_excluded_no_signal += 1
            continue
        result.eval.append(traj)
    return result
