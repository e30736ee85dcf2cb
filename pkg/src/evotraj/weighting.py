"""Sequence weights from regional sampling density.

Density d is sequences per million population per month for a region. The
representative weight r (persons) follows a piecewise curve of d, the epoch
sampling probability grows with log(r), and probabilities are adjusted by
sample age in months. Large countries configured for sub-national densities
use their region as the density key.
"""

from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .pipeline import write_atomic
from .tree import Trajectory

PER_MILLION = 1e6

# countries dense enough that country-level density would wash out regional
# differences; density is tracked per sub-region for these
DEFAULT_SUBNATIONAL = ("China", "India", "United States")


@dataclass(frozen=True)
class WeightConfig:
    d0: float = 0.1
    d1: float = 10.0
    d2: float = 10_000.0
    m: float = 10.0
    r0: float = 100.0
    lam: float = 0.1
    t0_month: int = 0  # training-set release month, as a month index
    subnational_countries: tuple[str, ...] = DEFAULT_SUBNATIONAL

    def __post_init__(self):
        if not 0 < self.d0 < self.d1 < self.d2:
            raise ValueError("need 0 < d0 < d1 < d2")
        if self.m <= 0 or self.r0 <= 0:
            raise ValueError("m and r0 must be positive")


@dataclass(frozen=True, slots=True)
class DensityRecord:
    region_key: str
    month: int  # month index
    n: int
    population: float

    @property
    def density(self) -> float:
        """Sequences per million population per month."""
        if self.population <= 0:
            raise ValueError(f"{self.region_key}: population must be positive")
        return self.n / (self.population / PER_MILLION)


@dataclass(frozen=True, slots=True)
class SequenceWeight:
    r: float  # persons represented
    p: float  # epoch sampling probability (may exceed 1)
    p_adjusted: float


def representative_weight(d: float, config: WeightConfig = WeightConfig()) -> float:
    """Persons represented by one sequence at sample density d.

    Piecewise in d: capped at 1e6 persons below d0, a square-root easing
    between d0 and d1, inverse density between d1 and d2, floored at 100
    persons above d2 (with default thresholds).
    """
    if d < 0:
        raise ValueError("density must be non-negative")
    c = config
    if d <= c.d0:
        per_million = 1.0 / math.sqrt(c.d0 * c.d1)
    elif d <= c.d1:
        per_million = 1.0 / math.sqrt(d * c.d1)
    elif d <= c.d2:
        per_million = 1.0 / d
    else:
        per_million = 1.0 / c.d2
    return PER_MILLION * per_million


def sampling_probability(r: float, config: WeightConfig = WeightConfig()) -> float:
    """Epoch sampling probability, proportional to log representativeness."""
    if r < config.r0 / math.e:
        raise ValueError(f"representativeness {r} gives non-positive probability")
    return (math.log(r / config.r0) + 1.0) / config.m


def temporal_adjust(p: float, sample_month: int, config: WeightConfig) -> float:
    """Scale p by (age in months)^lam, age measured against the training-set
    release month; the sample must predate it."""
    age = config.t0_month - sample_month
    if age < 1:
        raise ValueError(
            f"sample month {sample_month} not before cutoff month {config.t0_month}"
        )
    return p * age**config.lam


def weight_for(
    density: float, sample_month: int, config: WeightConfig, temporal: bool = True
) -> SequenceWeight:
    r = representative_weight(density, config)
    p = sampling_probability(r, config)
    p_adj = temporal_adjust(p, sample_month, config) if temporal else p
    return SequenceWeight(r=r, p=p, p_adjusted=p_adj)


def density_key(country: str | None, region: str | None, config: WeightConfig) -> str:
    """Country name, or 'country/region' for configured sub-national countries."""
    if country is None:
        return "unknown"
    if country in config.subnational_countries and region:
        return f"{country}/{region}"
    return country


def aggregate_densities(
    trajectories: Iterable[Trajectory],
    populations: Mapping[str, float],
    config: WeightConfig,
    base_year: int = 2019,
    default_population: float = 1e6,
) -> dict[tuple[str, int], DensityRecord]:
    """Count sequences per (region key, collection month) and attach populations.

    Sequences lacking a collection month are skipped (they can never be
    weighted by recency anyway).
    """
    counts: Counter[tuple[str, int]] = Counter()
    for traj in trajectories:
        collected = traj.meta.collected
        month = None if collected is None else collected.month_index(base_year)
        if month is None:
            continue
        key = density_key(traj.meta.country, traj.meta.region, config)
        counts[(key, month)] += 1
    return {
        (key, month): DensityRecord(
            region_key=key,
            month=month,
            n=n,
            population=populations.get(key, default_population),
        )
        for (key, month), n in counts.items()
    }


def load_population_table(path: Path | str) -> dict[str, float]:
    with open(path, newline="") as f:
        return {row["region_key"]: float(row["population"]) for row in csv.DictReader(f)}


def write_density_report(
    records: Mapping[tuple[str, int], DensityRecord],
    path: Path | str,
    config: WeightConfig = WeightConfig(),
) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["region_key", "month", "n", "P", "d", "r"])
    for (key, month), rec in sorted(records.items()):
        d = rec.density
        writer.writerow(
            [key, month, rec.n, f"{rec.population:g}", f"{d:.6g}",
             f"{representative_weight(d, config):.6g}"]
        )
    write_atomic(path, buf.getvalue())
