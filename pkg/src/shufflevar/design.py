"""Balanced experimental designs and the ANOVA mean-square contrasts.

A design assigns one stimulus label (and optionally one block label) to each
of ``T`` time slots.  Every stimulus must appear the same number of times;
the two quadratic contrasts computed here, :func:`ms_between` and
:func:`ms_within`, are the raw ingredients of every variance estimator in
this package.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Optional, Sequence

import numpy as np


class DesignError(ValueError):
    """Base class for invalid design input."""


class UnbalancedDesign(DesignError):
    """Stimulus repeat counts are not all equal."""


class DegenerateDesign(DesignError):
    """Fewer than two distinct stimuli."""


class NoReplication(DesignError):
    """Within-stimulus contrast requested but each stimulus appears once."""


class MissingBlocks(DesignError):
    """Operation requires an explicit block structure."""


@dataclass(frozen=True)
class DesignSchedule:
    """A validated, balanced stimulus schedule.

    Attributes
    ----------
    labels :
        Stimulus label shown at each time slot, length ``T``.
    block_labels :
        Block (session) label of each time slot, length ``T``.
    stimulus_index :
        0-based stimulus index per slot (first-appearance order).
    block_index :
        0-based block index per slot.
    has_blocks :
        True iff block labels were supplied explicitly (rather than the
        single-block default).
    """

    labels: tuple
    block_labels: tuple
    stimulus_index: np.ndarray = field(repr=False)
    block_index: np.ndarray = field(repr=False)
    has_blocks: bool

    @property
    def T(self) -> int:
        return len(self.labels)

    @property
    def m(self) -> int:
        """Number of distinct stimuli."""
        return int(self.stimulus_index.max()) + 1

    @property
    def n(self) -> int:
        """Repeats per stimulus."""
        return self.T // self.m

    @property
    def n_blocks(self) -> int:
        return int(self.block_index.max()) + 1

    def stimulus_groups(self) -> list:
        """Index arrays of the slots assigned to each stimulus."""
        order = np.argsort(self.stimulus_index, kind="stable")
        return np.split(order, np.arange(self.n, self.T, self.n))

    def block_groups(self) -> list:
        """Index arrays of the slots assigned to each block."""
        idx = self.block_index
        return [np.flatnonzero(idx == b) for b in range(self.n_blocks)]

    def averaging_matrix(self) -> np.ndarray:
        """Dense T x T matrix replacing each entry by its treatment average.

        Intended for diagnostics and tests only; the contrast functions
        below never materialize it.
        """
        ind = np.equal.outer(self.stimulus_index, self.stimulus_index)
        return ind.astype(float) / self.n

    def global_matrix(self) -> np.ndarray:
        """Dense T x T global-averaging matrix (all entries 1/T)."""
        return np.full((self.T, self.T), 1.0 / self.T)


@dataclass(frozen=True)
class MeasurementSeries:
    """One response vector aligned to a design."""

    values: np.ndarray
    series_id: str = ""

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1:
            raise ValueError("measurement series must be one-dimensional")
        if not np.all(np.isfinite(vals)):
            raise ValueError(
                f"series {self.series_id!r} contains non-finite values"
            )
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.values)


def build_design(
    schedule: Sequence[Hashable],
    block_ids: Optional[Sequence[Hashable]] = None,
) -> DesignSchedule:
    """Validate a stimulus schedule and return a :class:`DesignSchedule`.

    Parameters
    ----------
    schedule :
        Stimulus label per time slot.
    block_ids :
        Optional block label per time slot.  Defaults to a single block.

    Raises
    ------
    UnbalancedDesign
        If stimuli have unequal repeat counts.
    DegenerateDesign
        If fewer than two distinct stimuli appear.
    """
    labels = tuple(schedule)
    T = len(labels)
    if T == 0:
        raise DegenerateDesign("empty schedule")

    stim_order: dict = {}
    for lab in labels:
        if lab not in stim_order:
            stim_order[lab] = len(stim_order)
    h = np.array([stim_order[lab] for lab in labels], dtype=np.intp)

    m = len(stim_order)
    if m < 2:
        raise DegenerateDesign(f"need at least 2 distinct stimuli, got {m}")
    counts = np.bincount(h, minlength=m)
    if counts.min() != counts.max():
        raise UnbalancedDesign(
            f"repeat counts range from {counts.min()} to {counts.max()}"
        )

    has_blocks = block_ids is not None
    if block_ids is None:
        blocks = tuple(0 for _ in labels)
    else:
        blocks = tuple(block_ids)
        if len(blocks) != T:
            raise DesignError(
                f"block_ids length {len(blocks)} != schedule length {T}"
            )
    blk_order: dict = {}
    for lab in blocks:
        if lab not in blk_order:
            blk_order[lab] = len(blk_order)
    beta = np.array([blk_order[lab] for lab in blocks], dtype=np.intp)

    h.setflags(write=False)
    beta.setflags(write=False)
    return DesignSchedule(
        labels=labels,
        block_labels=blocks,
        stimulus_index=h,
        block_index=beta,
        has_blocks=has_blocks,
    )


def _aligned_values(y, design: DesignSchedule) -> np.ndarray:
    vals = y.values if isinstance(y, MeasurementSeries) else np.asarray(y, dtype=float)
    if len(vals) != design.T:
        raise ValueError(
            f"series length {len(vals)} does not match design T={design.T}"
        )
    return vals


def treatment_averages(y, design: DesignSchedule) -> np.ndarray:
    """Mean response per stimulus, in first-appearance order (length m)."""
    vals = _aligned_values(y, design)
    sums = np.bincount(design.stimulus_index, weights=vals, minlength=design.m)
    return sums / design.n


def ms_between(y, design: DesignSchedule) -> float:
    """Between-treatment mean square: sample variance of the treatment averages.

    Equal to ``||(B - G) y||^2 / ((m - 1) n)`` where ``B`` averages within
    treatments and ``G`` averages globally.
    """
    vals = _aligned_values(y, design)
    avgs = treatment_averages(vals, design)
    return float(np.sum((avgs - avgs.mean()) ** 2) / (design.m - 1))


def ms_within(y, design: DesignSchedule) -> float:
    """Within-treatment mean square, normalized by ``m (n - 1)``.

    Unbiased for the per-measurement noise variance when the noise is
    uncorrelated within treatments.
    """
    if design.n < 2:
        raise NoReplication("within-treatment contrast needs n >= 2")
    vals = _aligned_values(y, design)
    avgs = treatment_averages(vals, design)
    resid = vals - avgs[design.stimulus_index]
    return float(np.sum(resid**2) / (design.m * (design.n - 1)))
