"""Shared types, stopping rules and the per-trial randomness contract."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

MASK64 = (1 << 64) - 1
MAX_DIM = 4


class ModelId(str, enum.Enum):
    M1 = "m1"
    M2 = "m2"
    M3 = "m3"
    S1 = "s1"
    S2 = "s2"
    S3 = "s3"

    @property
    def spatial(self) -> bool:
        return self.value.startswith("s")

    @property
    def rule(self) -> int:
        """Immune-response rule shared by Mk and Sk (1, 2 or 3)."""
        return int(self.value[1])

    @classmethod
    def parse(cls, value) -> "ModelId":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown model {value!r}; expected one of "
                             f"{', '.join(m.value for m in cls)}") from None


class Verdict(str, enum.Enum):
    EXTINCT = "extinct"
    SURVIVED_PROXY = "survived_proxy"


class StopReason(str, enum.Enum):
    POPULATION_CAP = "population_cap"
    TIME_HORIZON = "time_horizon"
    EVENT_CAP = "event_cap"


@dataclass(frozen=True)
class StopRule:
    """Finite stand-in for "alive at all times".

    A run halts at extinction or at the first bound reached.
    """

    max_population: int = 10_000
    max_time: float = 1000.0
    max_events: int = 10**8

    def __post_init__(self):
        if int(self.max_population) != self.max_population or self.max_population < 1:
            raise ValueError(f"max_population must be a positive integer, got {self.max_population!r}")
        if not (self.max_time > 0) or math.isnan(self.max_time):
            raise ValueError(f"max_time must be positive, got {self.max_time!r}")
        if int(self.max_events) != self.max_events or self.max_events < 1:
            raise ValueError(f"max_events must be a positive integer, got {self.max_events!r}")


@dataclass(frozen=True)
class SimParams:
    model: ModelId
    lam: float
    r: float
    dim: Optional[int] = None
    stop: StopRule = field(default_factory=StopRule)

    def __post_init__(self):
        object.__setattr__(self, "model", ModelId.parse(self.model))
        if not (self.lam > 0) or math.isinf(self.lam):
            raise ValueError(f"lambda must be a positive finite real, got {self.lam!r}")
        if not (0.0 <= self.r <= 1.0):
            raise ValueError(f"r must lie in [0, 1], got {self.r!r}")
        if self.model.spatial:
            if self.dim is None:
                raise ValueError(f"model {self.model.value} needs a lattice dimension")
            if int(self.dim) != self.dim or not (1 <= self.dim <= MAX_DIM):
                raise ValueError(f"dim must be an integer in [1, {MAX_DIM}], got {self.dim!r}")
            object.__setattr__(self, "dim", int(self.dim))
        elif self.dim is not None:
            raise ValueError(f"model {self.model.value} is non-spatial and takes no dimension")

    def replace(self, **changes) -> "SimParams":
        kw = dict(model=self.model, lam=self.lam, r=self.r, dim=self.dim, stop=self.stop)
        kw.update(changes)
        return SimParams(**kw)


@dataclass(frozen=True)
class RunOptions:
    """What a run records besides its verdict.

    ``stride`` is the sampling interval of the time series in simulated time.
    ``stop_at_root_death`` ends the run when type 1 is killed; useful for
    collecting independent type-1 lifetimes.
    """

    series: bool = False
    stride: float = 0.5
    genealogy: bool = False
    stop_at_root_death: bool = False

    def __post_init__(self):
        if not (self.stride > 0):
            raise ValueError(f"stride must be positive, got {self.stride!r}")


@dataclass
class GenealogyRecord:
    """Per-type records, row ``i`` describing type ``type_id[i]``.

    ``parent_type`` is 0 for the root type 1; ``death_time`` is NaN while the
    type is alive (open record).
    """

    type_id: np.ndarray
    parent_type: np.ndarray
    birth_time: np.ndarray
    death_time: np.ndarray
    mutant_offspring: np.ndarray
    max_size: np.ndarray

    def __len__(self):
        return len(self.type_id)

    @property
    def completed(self) -> np.ndarray:
        return ~np.isnan(self.death_time)

    def to_dict(self) -> dict:
        rows = []
        for i in range(len(self)):
            dt = self.death_time[i]
            rows.append({
                "type_id": int(self.type_id[i]),
                "parent_type": int(self.parent_type[i]) or None,
                "birth_time": float(self.birth_time[i]),
                "death_time": None if math.isnan(dt) else float(dt),
                "mutant_offspring_count": int(self.mutant_offspring[i]),
                "max_simultaneous_size": int(self.max_size[i]),
            })
        return {"types": rows}


@dataclass
class Outcome:
    verdict: Verdict
    reason: Optional[StopReason]
    time: float
    final_population: int
    final_type_count: int
    events: int
    series: Optional[np.ndarray] = None
    genealogy: Optional[GenealogyRecord] = None

    @property
    def survived(self) -> bool:
        """True for a survival-proxy verdict reached by population or time."""
        return self.verdict is Verdict.SURVIVED_PROXY and self.reason is not StopReason.EVENT_CAP

    @property
    def event_cap_hit(self) -> bool:
        return self.reason is StopReason.EVENT_CAP

    def to_dict(self) -> dict:
        out = {
            "verdict": self.verdict.value,
            "reason": None if self.reason is None else self.reason.value,
            "time": float(self.time),
            "final_population": int(self.final_population),
            "final_type_count": int(self.final_type_count),
            "events": int(self.events),
        }
        if self.series is not None:
            out["series"] = [[float(row[0])] + [int(v) for v in row[1:]] for row in self.series]
        if self.genealogy is not None:
            out["genealogy"] = self.genealogy.to_dict()
        return out


def mix64(x: int) -> int:
    """SplitMix64 finalizer: a bijective avalanche mix of a 64-bit word."""
    x &= MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def derive_seed(master_seed: int, index: int) -> int:
    """64-bit child seed of ``(master_seed, index)``.

    Both words pass through the finalizer, so adjacent seeds or indices land
    on unrelated outputs.
    """
    if index < 0:
        raise ValueError(f"index must be nonnegative, got {index}")
    return mix64(mix64(master_seed & MASK64) ^ mix64((index + 0x9E3779B97F4A7C15) & MASK64))


def derive_trial_rng(master_seed: int, trial_index: int) -> np.random.Generator:
    """Per-trial generator: a pure function of (master_seed, trial_index)."""
    return np.random.Generator(np.random.PCG64(derive_seed(master_seed, trial_index)))
