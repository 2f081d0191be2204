"""Monte Carlo sweep harness: grids of signal variance x replicates.

Each sweep draws synthetic experiments for every signal-variance grid
point, runs the requested estimators per replicate, and aggregates per
(grid point, estimator) summaries.  Replicates use disjoint RNG substreams
keyed by (seed, grid index, replicate index), so results are identical for
any worker count.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from . import estimators as est
from .design import DesignSchedule, build_design
from .noise import (
    CovarianceModel,
    make_truth,
    noise_level,
    psd_cholesky,
    substream,
)
from .permutations import PermutationSpec, alpha, block_random_perm, reverse_perm
from .reml import AllStartsFailed, reml_estimate

DEFAULT_GRID = tuple(round(0.1 * i, 1) for i in range(10))


@dataclass(frozen=True)
class SweepConfig:
    """Parameters of one Monte Carlo sweep."""

    m: int = 120
    n: int = 15
    n_blocks: int = 20
    sigma2_A_grid: Tuple[float, ...] = DEFAULT_GRID
    replicates: int = 1000
    seed: int = 0
    threads: int = 1
    estimators: Tuple[str, ...] = ("shuffle",)
    # block noise
    sigma2_block: float = 0.5
    sigma2_unit: float = 0.7
    # time-series noise
    lam1: float = 0.7
    lam2: float = 30.0
    sigma2_eps: float = 1.0
    # REML options
    reml_family: str = "exp_nugget"
    reml_starts: int = 5
    reml_max_evals: int = 2000
    reml_xatol: float = 1e-8

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("need at least one replicate")
        if not self.sigma2_A_grid:
            raise ValueError("signal-variance grid must be nonempty")


@dataclass(frozen=True)
class SweepRow:
    """Summary of one (grid point, estimator) cell."""

    sigma2_A_true: float
    estimator: str
    mean_sigma2_A: float
    bias: float
    sd: float
    q25: float
    q75: float
    mean_omega2: float
    omega2_true: float
    n_fail: int
    n_reps: int
    alpha_realized: float


@dataclass(frozen=True)
class SweepResult:
    rows: Tuple[SweepRow, ...]
    config: SweepConfig


def make_block_schedule(m: int, n: int, n_blocks: int, rng) -> DesignSchedule:
    """Blocked schedule: stimuli partitioned across blocks, order random
    within each block, all repeats of a stimulus inside one block."""
    if m % n_blocks:
        raise ValueError(f"m={m} not divisible by n_blocks={n_blocks}")
    per_block = m // n_blocks
    labels = []
    blocks = []
    for b in range(n_blocks):
        stims = np.repeat(np.arange(b * per_block, (b + 1) * per_block), n)
        stims = rng.permutation(stims)
        labels.extend(f"s{j:04d}" for j in stims)
        blocks.extend([f"b{b:03d}"] * len(stims))
    return build_design(labels, blocks)


def make_random_schedule(m: int, n: int, rng) -> DesignSchedule:
    """Fully randomized single-block schedule."""
    stims = rng.permutation(np.repeat(np.arange(m), n))
    return build_design([f"s{j:04d}" for j in stims])


def _summarize(
    sigma2_A_true: float,
    estimator: str,
    raws: Sequence[float],
    omegas: Sequence[float],
    omega2_true: float,
    n_fail: int,
    n_reps: int,
    alpha_realized: float,
) -> SweepRow:
    raws = np.asarray(raws, dtype=float)
    omegas = np.asarray(omegas, dtype=float)
    mean = float(raws.mean()) if raws.size else float("nan")
    sd = float(raws.std(ddof=1)) if raws.size > 1 else float("nan")
    if raws.size:
        q25, q75 = (float(q) for q in np.quantile(raws, [0.25, 0.75]))
    else:
        q25 = q75 = float("nan")
    return SweepRow(
        sigma2_A_true=sigma2_A_true,
        estimator=estimator,
        mean_sigma2_A=mean,
        bias=mean - sigma2_A_true,
        sd=sd,
        q25=q25,
        q75=q75,
        mean_omega2=float(omegas.mean()) if omegas.size else float("nan"),
        omega2_true=omega2_true,
        n_fail=n_fail,
        n_reps=n_reps,
        alpha_realized=alpha_realized,
    )


def _run_grid(
    cfg: SweepConfig,
    design: DesignSchedule,
    perm: Optional[PermutationSpec],
    level: float,
    sampler: Callable,
) -> SweepResult:
    """Shared grid/replicate loop.  ``sampler(gi, r, s2A)`` returns Y values."""
    a = alpha(design, perm) if perm is not None else float("nan")
    names = tuple(cfg.estimators)

    def one_replicate(gi: int, r: int, s2A: float):
        y = sampler(gi, r, s2A)
        out = {}
        for name in names:
            if name == "shuffle":
                out[name] = est.shuffle_estimate(y, design, perm)
            elif name == "mom":
                out[name] = est.mom_estimate(y, design)
            elif name.startswith("reml"):
                try:
                    _, e = reml_estimate(
                        y,
                        design,
                        family=cfg.reml_family,
                        n_starts=cfg.reml_starts,
                        max_evals=cfg.reml_max_evals,
                        xatol=cfg.reml_xatol,
                        seed=r,
                    )
                    out[name] = e
                except AllStartsFailed:
                    out[name] = None
            else:
                raise ValueError(f"unknown estimator {name!r}")
        return out

    rows = []
    for gi, s2A in enumerate(cfg.sigma2_A_grid):
        results = [None] * cfg.replicates
        if cfg.threads > 1:
            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                futures = {
                    pool.submit(one_replicate, gi, r, s2A): r
                    for r in range(cfg.replicates)
                }
                for fut, r in futures.items():
                    results[r] = fut.result()
        else:
            for r in range(cfg.replicates):
                results[r] = one_replicate(gi, r, s2A)

        truth = make_truth(s2A, level)
        for name in names:
            raws, omegas, n_fail = [], [], 0
            for res in results:
                e = res[name]
                if e is None or "non_converged" in e.flags:
                    n_fail += 1
                if e is not None:
                    raws.append(e.sigma2_A_raw)
                    omegas.append(e.omega2)
            rows.append(
                _summarize(
                    s2A, name, raws, omegas, truth.omega2, n_fail,
                    cfg.replicates, a if name.startswith("shuffle") else float("nan"),
                )
            )
    return SweepResult(rows=tuple(rows), config=cfg)


def run_block_sweep(cfg: SweepConfig) -> SweepResult:
    """Sweep with additive block-effect noise and a within-block random shuffle."""
    setup_rng = substream(cfg.seed, 0)
    design = make_block_schedule(cfg.m, cfg.n, cfg.n_blocks, setup_rng)
    perm = block_random_perm(design, substream(cfg.seed, 1))
    # Noise level without the dense covariance: every stimulus sits inside
    # one block, so each treatment average carries its full block effect.
    blk = design.block_index
    blk_sizes = np.bincount(blk)
    var_global = cfg.sigma2_block * float(np.sum(blk_sizes**2)) / design.T**2 + (
        cfg.sigma2_unit / design.T
    )
    var_avg = cfg.sigma2_block + cfg.sigma2_unit / design.n
    level = (design.m * (var_avg - var_global)) / (design.m - 1)
    h = design.stimulus_index

    def sampler(gi, r, s2A):
        rng = substream(cfg.seed, 2, gi, r)
        effects = rng.normal(0.0, np.sqrt(s2A), design.m)
        block_fx = rng.normal(0.0, np.sqrt(cfg.sigma2_block), design.n_blocks)
        unit = rng.normal(0.0, np.sqrt(cfg.sigma2_unit), design.T)
        return effects[h] + block_fx[blk] + unit

    return _run_grid(cfg, design, perm, level, sampler)


def run_timeseries_sweep(cfg: SweepConfig) -> SweepResult:
    """Sweep with stationary decaying noise and the order-reversing shuffle."""
    setup_rng = substream(cfg.seed, 0)
    design = make_random_schedule(cfg.m, cfg.n, setup_rng)
    perm = reverse_perm(design.T)
    Sigma = CovarianceModel.exp_nugget(cfg.lam1, cfg.lam2).materialize(design)
    level = noise_level(Sigma, design, cfg.sigma2_eps)
    chol = psd_cholesky(Sigma) * np.sqrt(cfg.sigma2_eps)
    h = design.stimulus_index

    def sampler(gi, r, s2A):
        rng = substream(cfg.seed, 2, gi, r)
        effects = rng.normal(0.0, np.sqrt(s2A), design.m)
        return effects[h] + chol @ rng.standard_normal(design.T)

    return _run_grid(cfg, design, perm, level, sampler)


def run_reml_comparison(cfg: SweepConfig) -> SweepResult:
    """Shuffle vs. REML on time-series noise, both per replicate."""
    cfg = replace(cfg, estimators=tuple(cfg.estimators) or ("shuffle", "reml"))
    if not any(n.startswith("reml") for n in cfg.estimators):
        cfg = replace(cfg, estimators=cfg.estimators + ("reml",))
    return run_timeseries_sweep(cfg)


@dataclass(frozen=True)
class PredictionConfig:
    """Monte Carlo check that the noise level and explainable variance
    bound the accuracy of the oracle prediction rule."""

    population_size: int = 2000
    m: int = 120
    n: int = 4
    sigma2_A: float = 0.4
    sigma2_eps: float = 1.0
    noise: CovarianceModel = field(default_factory=CovarianceModel.iid)
    replicates: int = 2000
    seed: int = 0
    perturbation_sd: float = 0.3


@dataclass(frozen=True)
class PredictionSummary:
    mean_mspe: float
    se_mspe: float
    mean_corr2: float
    se_corr2: float
    mean_mspe_perturbed: float
    se_mspe_perturbed: float
    noise_level_true: float
    omega2_true: float
    m: int
    replicates: int


def run_prediction_check(cfg: PredictionConfig) -> PredictionSummary:
    """Sample population effects, draw a validation sample without
    replacement, and score the oracle predictor and a perturbed variant."""
    if cfg.m > cfg.population_size:
        raise ValueError("sample size exceeds population size")
    design = make_random_schedule(cfg.m, cfg.n, substream(cfg.seed, 0))
    Sigma = cfg.noise.materialize(design)
    level = noise_level(Sigma, design, cfg.sigma2_eps)
    chol = psd_cholesky(Sigma) * np.sqrt(cfg.sigma2_eps)
    truth = make_truth(cfg.sigma2_A, level)
    h = design.stimulus_index
    M = cfg.population_size

    mspe = np.empty(cfg.replicates)
    corr2 = np.empty(cfg.replicates)
    mspe_pert = np.empty(cfg.replicates)
    for r in range(cfg.replicates):
        rng = substream(cfg.seed, 1, r)
        mu = rng.standard_normal(M)
        mu -= mu.mean()
        if cfg.sigma2_A > 0:
            mu *= np.sqrt(cfg.sigma2_A * (M - 1) / np.sum(mu**2))
        else:
            mu[:] = 0.0
        sample = rng.choice(M, size=cfg.m, replace=False)
        effects = mu[sample]
        y = effects[h] + chol @ rng.standard_normal(design.T)
        avgs = np.bincount(h, weights=y, minlength=cfg.m) / design.n

        resid = effects - avgs
        mspe[r] = np.sum(resid**2) / (cfg.m - 1)
        if np.std(effects) > 0 and np.std(avgs) > 0:
            corr2[r] = np.corrcoef(effects, avgs)[0, 1] ** 2
        else:
            corr2[r] = 0.0
        perturbed = effects + rng.normal(0.0, cfg.perturbation_sd, cfg.m)
        mspe_pert[r] = np.sum((perturbed - avgs) ** 2) / (cfg.m - 1)

    def mean_se(x):
        return float(x.mean()), float(x.std(ddof=1) / np.sqrt(len(x)))

    m_mspe, se_mspe = mean_se(mspe)
    m_c2, se_c2 = mean_se(corr2)
    m_p, se_p = mean_se(mspe_pert)
    return PredictionSummary(
        mean_mspe=m_mspe,
        se_mspe=se_mspe,
        mean_corr2=m_c2,
        se_corr2=se_c2,
        mean_mspe_perturbed=m_p,
        se_mspe_perturbed=se_p,
        noise_level_true=truth.noise_level,
        omega2_true=truth.omega2,
        m=cfg.m,
        replicates=cfg.replicates,
    )


SWEEP_COLUMNS = (
    "sigma2_A_true",
    "estimator",
    "mean_sigma2_A",
    "bias",
    "sd",
    "q25",
    "q75",
    "mean_omega2",
    "omega2_true",
    "n_fail",
    "n_reps",
    "alpha_realized",
)


def emit_sweep_table(result: SweepResult, path) -> None:
    """Write one CSV row per (grid point, estimator)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for row in result.rows:
            writer.writerow(
                [
                    _fmt(row.sigma2_A_true),
                    row.estimator,
                    _fmt(row.mean_sigma2_A),
                    _fmt(row.bias),
                    _fmt(row.sd),
                    _fmt(row.q25),
                    _fmt(row.q75),
                    _fmt(row.mean_omega2),
                    _fmt(row.omega2_true),
                    row.n_fail,
                    row.n_reps,
                    _fmt(row.alpha_realized),
                ]
            )


def read_sweep_table(path) -> Tuple[SweepRow, ...]:
    """Parse a sweep CSV back into rows (round-trip check)."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            rows.append(
                SweepRow(
                    sigma2_A_true=float(rec["sigma2_A_true"]),
                    estimator=rec["estimator"],
                    mean_sigma2_A=float(rec["mean_sigma2_A"]),
                    bias=float(rec["bias"]),
                    sd=float(rec["sd"]),
                    q25=float(rec["q25"]),
                    q75=float(rec["q75"]),
                    mean_omega2=float(rec["mean_omega2"]),
                    omega2_true=float(rec["omega2_true"]),
                    n_fail=int(rec["n_fail"]),
                    n_reps=int(rec["n_reps"]),
                    alpha_realized=float(rec["alpha_realized"]),
                )
            )
    return tuple(rows)


def _fmt(x: float) -> str:
    return f"{x:.17g}"
