"""Run configuration, content hashing, and stage manifests.

Every pipeline stage writes its outputs atomically together with a config
snapshot and a manifest recording the sha256 of each input and output file.
Downstream stages refuse to run when a recorded input hash no longer matches
the file on disk, naming the stale artifact.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, fields
from pathlib import Path

CONFIG_HEADER = "evotraj-config v1"


class StaleArtifactError(RuntimeError):
    pass


@dataclass
class PipelineConfig:
    """Flat key-value run configuration; defaults mirror the production
    constants where they are fixed, desk-scale values elsewhere."""

    genome_length: int = 29_903
    base_year: int = 2019
    # weighting
    d0: float = 0.1
    d1: float = 10.0
    d2: float = 10_000.0
    m: float = 10.0
    r0: float = 100.0
    lam: float = 0.1
    temporal_weighting: bool = True
    representative_weighting: bool = True
    subnational: str = "China,India,United States"
    # date split (ISO dates)
    train_cutoff: str = "2025-02-12"
    eval_cutoff: str = "2025-07-16"
    # model (desk scale)
    layers: int = 2
    hidden: int = 64
    heads: int = 4
    max_seq: int = 256
    # training
    steps: int = 1000
    batch_size: int = 32
    lr_start: float = 1e-4
    lr_end: float = 1e-5
    schedule: str = "linear"
    # sampling
    workers: int = 1
    epochs: int = 8
    # evaluation
    ks: str = "1,10,100"
    task: str = "nucleotide"
    baseline_mode: str = "mixed"
    alpha: float = 1.0
    # synthetic data
    synth_depth: int = 6
    synth_variant_prob: float = 0.6
    synth_private_mut_rate: float = 2.0
    synth_month_advance: float = 0.4
    synth_collection_lag: float = 1.0
    synth_noise_rate: float = 0.0
    synth_shift_month: int = -1  # -1 disables the spectrum shift
    synth_ramp_months: int = 1
    seed: int = 0

    def set(self, key: str, value: str) -> None:
        field_map = {f.name: f for f in fields(self)}
        if key not in field_map:
            raise KeyError(f"unknown config key {key!r}")
        f = field_map[key]
        if f.type in ("int", int):
            parsed: object = int(value)
        elif f.type in ("float", float):
            parsed = float(value)
        elif f.type in ("bool", bool):
            parsed = value.lower() in ("1", "true", "yes", "on")
        else:
            parsed = value
        setattr(self, key, parsed)

    def to_text(self) -> str:
        lines = [CONFIG_HEADER]
        for f in fields(self):
            lines.append(f"{f.name} {getattr(self, f.name)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_file(cls, path: Path | str) -> "PipelineConfig":
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0] != CONFIG_HEADER:
            raise ValueError(f"{path}: not a pipeline config file")
        config = cls()
        for line in lines[1:]:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition(" ")
            config.set(key, value)
        return config

    @property
    def k_list(self) -> tuple[int, ...]:
        return tuple(int(k) for k in str(self.ks).split(",") if k)

    def config_hash(self) -> str:
        return sha256_bytes(self.to_text().encode())


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: Path | str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_atomic(path: Path | str, data: bytes | str) -> None:
    """Write via a temp file in the same directory plus rename."""
    path = Path(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@contextmanager
def atomic_output(path: Path | str):
    """Yield a temp path for a writer, renaming onto ``path`` on success."""
    path = Path(path)
    tmp = path.parent / f".{path.name}.tmp{os.getpid()}"
    try:
        yield tmp
        os.replace(tmp, path)
    except BaseException:
        if tmp.exists():
            tmp.unlink()
        raise


def write_manifest(
    out_dir: Path | str,
    stage: str,
    config: PipelineConfig,
    inputs: dict[str, Path | str],
    outputs: dict[str, Path | str],
) -> Path:
    """Record input/output hashes and snapshot the config next to the outputs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    snapshot = out_dir / "config.txt"
    write_atomic(snapshot, config.to_text())
    manifest = {
        "stage": stage,
        "config_hash": config.config_hash(),
        "inputs": {name: {"path": str(p), "sha256": sha256_file(p)} for name, p in inputs.items()},
        "outputs": {name: {"path": str(p), "sha256": sha256_file(p)} for name, p in outputs.items()},
    }
    path = out_dir / "manifest.json"
    write_atomic(path, json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def load_manifest(out_dir: Path | str) -> dict:
    return json.loads((Path(out_dir) / "manifest.json").read_text())


def verify_against_manifest(out_dir: Path | str) -> dict:
    """Re-hash a stage's recorded outputs; raise naming any stale artifact."""
    manifest = load_manifest(out_dir)
    for name, entry in manifest["outputs"].items():
        actual = sha256_file(entry["path"])
        if actual != entry["sha256"]:
            raise StaleArtifactError(
                f"artifact {name!r} at {entry['path']} is stale: "
                f"recorded {entry['sha256'][:12]}, found {actual[:12]}"
            )
    return manifest


def require_hash_match(label: str, expected: str, actual: str) -> None:
    if expected and expected != actual:
        raise StaleArtifactError(
            f"hash mismatch for {label}: expected {expected[:12]}, found {actual[:12]}"
        )
