"""Immutable datasets for the Cox and partly linear models, plus CSV I/O.

Cox CSV files have header ``y,delta,z1[,z2,...]``; partly linear files use
``c,delta,w,z``.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Union

import numpy as np

from .core import DomainError

__all__ = [
    "CoxData",
    "CoxObservation",
    "Dataset",
    "PartlyLinearData",
    "PartlyLinearObservation",
    "read_dataset",
    "write_dataset",
]


class CoxObservation(NamedTuple):
    y: float
    delta: int
    z: tuple[float, ...]


class PartlyLinearObservation(NamedTuple):
    c: float
    delta: int
    w: float
    z: float


def _frozen(arr, dtype=float):
    out = np.array(arr, dtype=dtype)
    out.flags.writeable = False
    return out


def _check_delta(delta):
    if not np.all((delta == 0) | (delta == 1)):
        raise DomainError("delta entries must be 0 or 1")


@dataclass(frozen=True, eq=False)
class CoxData:
    """Observations ``(y, delta, z)``; ``y`` is an event/censoring or examination time."""

    y: np.ndarray
    delta: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        y = _frozen(np.ravel(self.y))
        delta = _frozen(np.ravel(self.delta), dtype=np.int64)
        z = np.asarray(self.z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        z = _frozen(z)
        n = y.shape[0]
        if n < 1:
            raise DomainError("dataset must contain at least one observation")
        if delta.shape[0] != n or z.shape[0] != n:
            raise DomainError("y, delta and z must have the same length")
        if not np.all(np.isfinite(y)) or np.any(y < 0):
            raise DomainError("times must be finite and nonnegative")
        if not np.all(np.isfinite(z)):
            raise DomainError("covariates must be finite")
        _check_delta(delta)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "z", z)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.z.shape[1]

    @property
    def observations(self) -> list[CoxObservation]:
        return [CoxObservation(float(y), int(d), tuple(map(float, z)))
                for y, d, z in zip(self.y, self.delta, self.z)]

    @classmethod
    def from_observations(cls, obs) -> CoxData:
        obs = [CoxObservation(*o) for o in obs]
        if not obs:
            raise DomainError("dataset must contain at least one observation")
        z = [np.atleast_1d(o.z) for o in obs]
        return cls([o.y for o in obs], [o.delta for o in obs], np.vstack(z))

    @cached_property
    def sorted_index(self) -> np.ndarray:
        """Stable order by (y, original index)."""
        return np.argsort(self.y, kind="stable")

    @cached_property
    def risk_layout(self) -> dict:
        """Sorted arrays and tie structure shared by repeated profile evaluations."""
        order = self.sorted_index
        y = self.y[order]
        delta = self.delta[order]
        ev = np.flatnonzero(delta == 1)
        times, counts = np.unique(y[ev], return_counts=True)
        # position of the first observation tied with each distinct event time
        risk_start = np.searchsorted(y, times, side="left")
        return {
            "order": order,
            "y": y,
            "delta": delta,
            "z": np.ascontiguousarray(self.z[order]),
            "events": ev,
            "times": times,
            "counts": counts,
            "risk_start": risk_start,
            "tie_const": float(np.sum(counts * np.log(counts))),
        }


@dataclass(frozen=True, eq=False)
class PartlyLinearData:
    """Current-status observations ``(c, delta, w, z)`` of ``Y = theta*W + k(Z) + xi``."""

    c: np.ndarray
    delta: np.ndarray
    w: np.ndarray
    z: np.ndarray
    support: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        c = _frozen(np.ravel(self.c))
        delta = _frozen(np.ravel(self.delta), dtype=np.int64)
        w = _frozen(np.ravel(self.w))
        z = _frozen(np.ravel(self.z))
        n = c.shape[0]
        if n < 1:
            raise DomainError("dataset must contain at least one observation")
        if not (delta.shape[0] == w.shape[0] == z.shape[0] == n):
            raise DomainError("c, delta, w and z must have the same length")
        for name, arr in (("c", c), ("w", w), ("z", z)):
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"{name} must be finite")
        lo, hi = self.support
        if np.any(z < lo) or np.any(z > hi):
            raise DomainError(f"z outside declared support [{lo}, {hi}]")
        _check_delta(delta)
        for name, arr in (("c", c), ("delta", delta), ("w", w), ("z", z)):
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "support", (float(lo), float(hi)))

    @property
    def n(self) -> int:
        return self.c.shape[0]

    @property
    def observations(self) -> list[PartlyLinearObservation]:
        return [PartlyLinearObservation(float(c), int(d), float(w), float(z))
                for c, d, w, z in zip(self.c, self.delta, self.w, self.z)]

    @classmethod
    def from_observations(cls, obs, support=(0.0, 1.0)) -> PartlyLinearData:
        obs = [PartlyLinearObservation(*o) for o in obs]
        if not obs:
            raise DomainError("dataset must contain at least one observation")
        cols = list(zip(*obs))
        return cls(*cols, support=support)


Dataset = Union[CoxData, PartlyLinearData]


def write_dataset(data: Dataset, path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if isinstance(data, CoxData):
            writer.writerow(["y", "delta"] + [f"z{j + 1}" for j in range(data.n_covariates)])
            for y, d, z in zip(data.y, data.delta, data.z):
                writer.writerow([repr(float(y)), int(d)] + [repr(float(v)) for v in z])
        else:
            writer.writerow(["c", "delta", "w", "z"])
            for row in zip(data.c, data.delta, data.w, data.z):
                writer.writerow([repr(float(row[0])), int(row[1]),
                                 repr(float(row[2])), repr(float(row[3]))])


def read_dataset(path: str | os.PathLike, support=(0.0, 1.0)) -> Dataset:
    """Read either CSV layout; the variant is chosen from the header."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DomainError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    if not rows:
        raise DomainError(f"{path}: no observations")
    table = np.array(rows, dtype=float)
    if table.shape[1] < 2 or not np.all(np.isin(table[:, 1], (0.0, 1.0))):
        raise DomainError(f"{path}: delta column must hold 0/1 values")
    if header[:2] == ["y", "delta"] and len(header) >= 3 and all(
            h == f"z{j + 1}" for j, h in enumerate(header[2:])):
        return CoxData(table[:, 0], table[:, 1].astype(np.int64), table[:, 2:])
    if header == ["c", "delta", "w", "z"]:
        return PartlyLinearData(table[:, 0], table[:, 1].astype(np.int64),
                                table[:, 2], table[:, 3], support=support)
    raise DomainError(f"{path}: unrecognised header {','.join(header)}")
