"""Compliance ratios over item sets, purpose agreement, evidence coverage.

Ratios with an empty denominator are ``None`` rather than 0 or 1.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import AbstractSet, Iterable

import numpy as np

from .taxonomy import N_PURPOSES, is_compliance_relevant

Ratio = float | None


def item_set(counts, include_generic: bool = False) -> frozenset[int]:
    """Rows with any non-zero cell, restricted to compliance-relevant items."""
    grid = np.asarray(getattr(counts, "counts", counts))
    present = np.flatnonzero(grid.sum(axis=1) > 0)
    return frozenset(int(j) for j in present if is_compliance_relevant(int(j), include_generic))


def _ratio(num: int, den: int) -> Ratio:
    return None if den == 0 else num / den


def pp_compliance(pp: AbstractSet[int], ds: AbstractSet[int]) -> Ratio:
    """Share of declared DS items that the policy also discloses."""
    return _ratio(len(pp & ds), len(ds))


def ds_compliance(pp: AbstractSet[int], ds: AbstractSet[int]) -> Ratio:
    """Share of policy-disclosed items that the DS also declares."""
    return _ratio(len(pp & ds), len(pp))


def evidence_compliance(evidence: AbstractSet[int], against: AbstractSet[int]) -> Ratio:
    return _ratio(len(evidence & against), len(evidence))


class PurposeContractError(ValueError):
    pass


def purpose_agreement(pp_counts, ds_grid, j: int) -> list[tuple[bool, bool]]:
    """(in_pp, in_ds) per purpose column for an item present on both sides."""
    pp = np.asarray(getattr(pp_counts, "counts", pp_counts))
    ds = np.asarray(ds_grid)
    if not is_compliance_relevant(j) or not pp[j].any() or not ds[j].any():
        raise PurposeContractError(f"item {j} is not present in both PP and DS")
    return [(bool(pp[j, k] > 0), bool(ds[j, k] > 0)) for k in range(N_PURPOSES)]


def mean_ratio(values: Iterable[Ratio]) -> Ratio:
    present = [v for v in values if v is not None]
    return sum(present) / len(present) if present else None


@dataclass(frozen=True)
class ComplianceScores:
    pp_collect: Ratio = None
    pp_share: Ratio = None
    ds_collect: Ratio = None
    ds_share: Ratio = None
    evidence_vs_pp: Ratio = None
    evidence_vs_ds: Ratio = None

    def __post_init__(self) -> None:
        for name, v in asdict(self).items():
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    def to_dict(self) -> dict[str, Ratio]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ComplianceScores":
        return cls(**{k: d.get(k) for k in cls.__dataclass_fields__})


def score_sets(
    pp_collect: AbstractSet[int] | None,
    pp_share: AbstractSet[int] | None,
    ds_collect: AbstractSet[int] | None,
    ds_share: AbstractSet[int] | None,
    evidence: AbstractSet[int] | None = None,
) -> ComplianceScores:
    """A side given as None is unavailable and yields NA for its scores."""

    def both(fn, pp, ds):
        return None if pp is None or ds is None else fn(pp, ds)

    pp_all = None if pp_collect is None else set(pp_collect) | set(pp_share or ())
    ds_all = None if ds_collect is None else set(ds_collect) | set(ds_share or ())
    return ComplianceScores(
        pp_collect=both(pp_compliance, pp_collect, ds_collect),
        pp_share=both(pp_compliance, pp_share, ds_share),
        ds_collect=both(ds_compliance, pp_collect, ds_collect),
        ds_share=both(ds_compliance, pp_share, ds_share),
        evidence_vs_pp=both(evidence_compliance, evidence, pp_all),
        evidence_vs_ds=both(evidence_compliance, evidence, ds_all),
    )
