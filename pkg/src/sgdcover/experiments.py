"""Empirical validation harness: gap estimation against certificates, the
alternating soft-clustering update and its mixture-likelihood equivalence,
the 1-D stability gap reproduction, and Hoeffding sanity checks."""

from __future__ import annotations

import csv
import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bounds import BoundCertificate, bound_strongly_convex
from .core import Box, ConvexDomain, hoeffding_tail, substream
from .losses import Dataset, Distribution, LossFamily, stability_counterexample_1d
from .sgd import Trajectory, contraction_factor


def _run_indexed(fn, count: int, threads: int = 1) -> list:
    """Evaluate fn(0..count-1), aggregating in index order regardless of the
    worker count (tasks draw their randomness from per-index substreams)."""
    if threads <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(count)))


# ---------------------------------------------------------------------------
# Gap estimation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GapEstimate:
    """Empirical vs population risk at one trajectory endpoint."""

    empirical_risk: float
    population_risk: float | None
    gap: float | None
    mc_standard_error: float
    exact_population: bool
    t: int
    seed: int | None
    indices_digest: str
    flags: tuple[str, ...] = ()


def empirical_risk(family: LossFamily, dataset: Dataset, theta) -> float:
    return float(np.mean([family.value(theta, z) for z in dataset.samples]))


def population_risk(
    family: LossFamily,
    distribution: Distribution | None,
    theta,
    m: int = 100_000,
    rng: np.random.Generator | None = None,
) -> tuple[float | None, float, bool]:
    """(risk, standard error, exact?) — exact enumeration for finite support,
    otherwise a Monte Carlo estimate from m fresh draws."""
    if distribution is None:
        return None, 0.0, False
    if distribution.finite:
        vals = np.array([family.value(theta, z) for z in distribution.support])
        return float(vals @ distribution.probs), 0.0, True
    if rng is None:
        rng = np.random.default_rng(0)
    draws = distribution.draw(rng, m)
    vals = np.array([family.value(theta, z) for z in draws])
    se = float(vals.std(ddof=1) / math.sqrt(m)) if m > 1 else float("inf")
    return float(vals.mean()), se, False


def estimate_gap(
    family: LossFamily,
    dataset: Dataset,
    trajectory: Trajectory,
    m: int = 100_000,
    seed: int = 0,
) -> GapEstimate:
    """Empirical risk over the dataset minus population risk at the endpoint.

    Population risk is enumerated exactly when the generator has finite
    support and estimated from m fresh i.i.d. draws (with reported standard
    error) otherwise; with no generator only the empirical side is returned.
    """
    theta = trajectory.endpoint
    f_hat = empirical_risk(family, dataset, theta)
    digest = hashlib.sha256(np.ascontiguousarray(trajectory.indices).tobytes()).hexdigest()[:16]
    f_pop, se, exact = population_risk(
        family, dataset.distribution, theta, m=m, rng=substream(seed)
    )
    flags = () if dataset.distribution is not None else ("population_risk_unavailable",)
    gap = None if f_pop is None else f_hat - f_pop
    return GapEstimate(
        empirical_risk=f_hat, population_risk=f_pop, gap=gap,
        mc_standard_error=se, exact_population=exact,
        t=trajectory.steps, seed=seed, indices_digest=digest, flags=flags,
    )


# ---------------------------------------------------------------------------
# Certificate validation by resampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Scenario:
    """A named experimental setup: family, sampling distribution, feasible
    set, step size, and dataset size."""

    name: str
    family: LossFamily
    distribution: Distribution
    domain: ConvexDomain
    eta: float
    n: int


@dataclass(frozen=True, eq=False)
class ValidationReport:
    scenario: str
    resamplings: int
    violations: int
    certificate_total: float
    max_observed_gap: float
    delta: float
    passed: bool
    max_gaps: tuple[float, ...]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["resampling", "max_abs_gap", "violated"])
            for r, g in enumerate(self.max_gaps):
                writer.writerow([r, repr(float(g)), int(g > self.certificate_total)])


def validate_bound(
    scenario: Scenario,
    resamplings: int,
    trials: int,
    delta: float,
    seed: int = 0,
    certificate: BoundCertificate | None = None,
    shrink: float = 1.0,
    t_band: int = 50,
    threads: int = 1,
) -> ValidationReport:
    """Resample the dataset, run many trajectories (random start, random
    t in [T, T + t_band]), and PASS iff the fraction of datasets whose worst
    endpoint gap exceeds the certificate is at most delta.

    ``shrink`` divides the certificate (a shrink of 50 gives the negative
    control that must FAIL).  Population risk must be exactly enumerable.
    delta = 1 makes the acceptance rule vacuous and needs an explicit
    certificate, since the calculators require delta < 1.
    """
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    if delta == 1 and certificate is None:
        raise ValueError("delta = 1 needs an explicit certificate")
    fam = scenario.family
    c = fam.constants
    if c.alpha is None or c.beta is None or c.B is None or c.L is None or c.R is None:
        raise ValueError("scenario family must declare alpha, beta, L, B, R")
    if not 0 < scenario.eta < 2.0 / c.beta:
        raise ValueError(
            f"hypothesis violated: eta={scenario.eta} outside (0, {2.0 / c.beta})"
        )
    if not scenario.distribution.finite:
        raise ValueError("validation needs a finitely supported distribution")
    gamma = contraction_factor(c.alpha, c.beta, scenario.eta)
    if certificate is None:
        certificate = bound_strongly_convex(scenario.n, delta, c.B, c.L, c.R, gamma)
    threshold = certificate.total / shrink
    T = int(certificate.inputs.get("T", 0))

    support = scenario.distribution.support
    probs = scenario.distribution.probs
    n = scenario.n

    def pop_risk(theta):
        return sum(p * fam.value(theta, z) for p, z in zip(probs, support))

    def one_resampling(r: int) -> float:
        rng = substream(seed, r)
        samples = scenario.distribution.draw(rng, n)
        worst = 0.0
        for _ in range(trials):
            theta = scenario.domain.sample(rng)
            t = int(rng.integers(T, T + t_band + 1))
            for i in rng.integers(0, n, size=t):
                theta = scenario.domain.project(
                    theta - scenario.eta * fam.grad(theta, samples[i])
                )
            f_hat = float(np.mean([fam.value(theta, z) for z in samples]))
            worst = max(worst, abs(f_hat - float(pop_risk(theta))))
        return worst

    max_gaps = tuple(_run_indexed(one_resampling, resamplings, threads))
    violations = sum(g > threshold for g in max_gaps)
    return ValidationReport(
        scenario=scenario.name,
        resamplings=resamplings,
        violations=violations,
        certificate_total=threshold,
        max_observed_gap=max(max_gaps),
        delta=delta,
        passed=violations / resamplings <= delta,
        max_gaps=max_gaps,
    )


# ---------------------------------------------------------------------------
# Soft clustering: alternating update and mixture-likelihood equivalence
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EMStepResult:
    weights: np.ndarray   # (n, K), rows sum to 1
    centers: np.ndarray   # (K, d)
    held_fixed: tuple[int, ...]


def _soft_weights(centers: np.ndarray, samples: np.ndarray, zeta: float) -> np.ndarray:
    d2 = np.sum((samples[:, None, :] - centers[None, :, :]) ** 2, axis=-1)
    a = -zeta * d2
    a -= a.max(axis=1, keepdims=True)
    w = np.exp(a)
    return w / w.sum(axis=1, keepdims=True)


def em_step(theta, dataset: Dataset, zeta: float) -> EMStepResult:
    """One alternating update: soft labels from the current centers, then
    each center moves to its label-weighted sample mean.

    A center whose total weight underflows to zero is held fixed and its
    index reported in ``held_fixed``.
    """
    if not zeta > 0:
        raise ValueError("zeta must be positive")
    centers = np.atleast_2d(np.asarray(theta, dtype=float))
    samples = np.vstack([np.atleast_1d(np.asarray(z, dtype=float)) for z in dataset.samples])
    w = _soft_weights(centers, samples, zeta)
    totals = w.sum(axis=0)
    new = centers.copy()
    held = []
    for j in range(centers.shape[0]):
        if totals[j] > 0.0:
            new[j] = (w[:, j] @ samples) / totals[j]
        else:
            held.append(j)
    return EMStepResult(weights=w, centers=new, held_fixed=tuple(held))


def run_em(theta0, dataset: Dataset, zeta: float, max_iters: int = 10_000,
           tol: float = 0.0) -> tuple[np.ndarray, int]:
    """Iterate em_step until the centers move at most ``tol`` (default: until
    they stop changing bitwise) or the iteration budget runs out."""
    centers = np.atleast_2d(np.asarray(theta0, dtype=float))
    for it in range(1, max_iters + 1):
        new = em_step(centers, dataset, zeta).centers
        if np.abs(new - centers).max() <= tol:
            return new, it
        centers = new
    return centers, max_iters


@dataclass(frozen=True)
class EMEquivalenceReport:
    gmm_log_likelihood: float
    affine_image: float
    residual: float
    slope: float
    intercept: float
    passed: bool


def verify_em_equivalence(theta, dataset: Dataset, zeta: float,
                          K: int | None = None, d: int | None = None,
                          tol: float = 1e-8) -> EMEquivalenceReport:
    """Check that the equal-weight Gaussian-mixture log-likelihood with
    componentwise variance 1/(2*zeta) is an affine image of the soft
    clustering objective:

        gmm_ll(theta) = -zeta * n * F_hat(theta) + n * log((zeta/pi)^(d/2) / K)

    Both sides are evaluated directly; the report carries the relative
    residual and the affine coefficients.
    """
    centers = np.atleast_2d(np.asarray(theta, dtype=float))
    samples = np.vstack([np.atleast_1d(np.asarray(z, dtype=float)) for z in dataset.samples])
    if K is not None and centers.shape[0] != K:
        raise ValueError(f"theta has {centers.shape[0]} centers, expected K={K}")
    if d is not None and centers.shape[1] != d:
        raise ValueError(f"theta blocks have dimension {centers.shape[1]}, expected d={d}")
    K = centers.shape[0]
    d = centers.shape[1]
    n = samples.shape[0]

    d2 = np.sum((samples[:, None, :] - centers[None, :, :]) ** 2, axis=-1)
    a = -zeta * d2
    m = a.max(axis=1)
    lse = m + np.log(np.exp(a - m[:, None]).sum(axis=1))

    intercept_per_sample = 0.5 * d * math.log(zeta / math.pi) - math.log(K)
    gmm_ll = float(np.sum(lse + intercept_per_sample))

    f_hat = float(np.mean(-lse / zeta))  # soft clustering objective
    slope = -zeta * n
    intercept = n * intercept_per_sample
    image = slope * f_hat + intercept
    residual = abs(gmm_ll - image) / max(1.0, abs(gmm_ll), abs(image))
    return EMEquivalenceReport(
        gmm_log_likelihood=gmm_ll, affine_image=image, residual=residual,
        slope=slope, intercept=intercept, passed=residual <= tol,
    )


# ---------------------------------------------------------------------------
# 1-D stability gap experiment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StabilityReport:
    mean_identical: float      # all-zeros dataset
    mean_swapped: float        # one sample swapped to z = 1
    separation: float
    converged_fraction: float
    basin_respected: bool
    eta: float
    steps: int
    inits: int
    n_samples: int
    seed: int


def _stability_sgd(x: np.ndarray, z: np.ndarray, eta: float) -> np.ndarray:
    """Vectorized projected step of the two-sample 1-D family."""
    left = (x - 1.0) ** 2
    right = 0.5 + 0.5 * (x - 3.0) ** 2
    grad0 = np.where(left < right, 2.0 * (x - 1.0), np.where(right < left, x - 3.0, 2.0))
    grad = np.where(z == 1, 2.0 * (x - 1.0), grad0)
    return np.clip(x - eta * grad, 0.0, 4.0)


def stability_experiment(
    eta: float = 1.0 / 3.0,
    inits: int = 10_000,
    steps: int = 200,
    seed: int = 0,
    n_samples: int = 10,
) -> StabilityReport:
    """Run constant-step SGD on the two-basin 1-D family for the all-zeros
    dataset and the dataset with a single swapped sample, from uniform
    starts on [0, 4], and report the mean of f(endpoint; 1) for each.

    Deterministic descent on the all-zeros data converges to 1 or 3
    depending on the side of x = 2, giving a limit of 2; a single use of the
    swapped sample pulls the iterate into [0, 2], giving a limit of 0.
    """
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    if inits < 1 or steps < 1 or n_samples < 1:
        raise ValueError("inits, steps, n_samples must be positive")

    datasets = {
        "identical": np.zeros(n_samples, dtype=np.int64),
        "swapped": np.concatenate([[1], np.zeros(n_samples - 1, dtype=np.int64)]),
    }
    means = {}
    converged = 0
    for tag, (label, data) in enumerate(datasets.items()):
        rng = substream(seed, tag)
        x = rng.uniform(0.0, 4.0, size=inits)
        idx = rng.integers(0, n_samples, size=(steps, inits))
        for t in range(steps):
            x = _stability_sgd(x, data[idx[t]], eta)
        means[label] = float(np.mean((x - 1.0) ** 2))
        converged += int(np.sum((np.abs(x - 1.0) <= 1e-6) | (np.abs(x - 3.0) <= 1e-6)))

    # deterministic basin check on the all-zeros data
    grid = np.concatenate([np.linspace(0.0, 2.0, 21), np.linspace(2.0 + 1e-9, 4.0, 21)])
    xg = grid.copy()
    for _ in range(steps):
        xg = _stability_sgd(xg, np.zeros_like(xg, dtype=np.int64), eta)
    basin = bool(np.all(np.abs(xg[:21] - 1.0) <= 1e-6) and np.all(np.abs(xg[21:] - 3.0) <= 1e-6))

    return StabilityReport(
        mean_identical=means["identical"],
        mean_swapped=means["swapped"],
        separation=means["identical"] - means["swapped"],
        converged_fraction=converged / (2.0 * inits),
        basin_respected=basin,
        eta=eta, steps=steps, inits=inits, n_samples=n_samples, seed=seed,
    )


def stability_domain() -> Box:
    return stability_counterexample_1d().domain


# ---------------------------------------------------------------------------
# Hoeffding sanity check
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HoeffdingCell:
    n: int
    epsilon: float
    empirical_rate: float
    bound: float
    ok: bool


@dataclass(frozen=True, eq=False)
class HoeffdingReport:
    cells: tuple[HoeffdingCell, ...]
    resamplings: int
    passed: bool


def hoeffding_check(
    family: LossFamily,
    theta,
    n_grid: Sequence[int],
    epsilon_grid: Sequence[float],
    resamplings: int,
    distribution: Distribution,
    seed: int = 0,
) -> HoeffdingReport:
    """At a fixed parameter, compare the empirical frequency of
    |sample mean - true mean| >= eps against the two-sided tail bound on an
    (n, eps) grid, allowing three-sigma binomial noise on the frequency."""
    if not distribution.finite:
        raise ValueError("the check needs a finitely supported distribution")
    if resamplings < 1:
        raise ValueError("resamplings must be positive")
    values = np.array([family.value(theta, z) for z in distribution.support])
    mean = float(values @ distribution.probs)
    width = float(values.max() - values.min())
    if width == 0.0:
        raise ValueError("loss is constant over the support; the tail bound is vacuous")

    cells = []
    for gi, n in enumerate(n_grid):
        rng = substream(seed, gi)
        draws = rng.choice(values.size, size=(resamplings, int(n)), p=distribution.probs)
        means = values[draws].mean(axis=1)
        dev = np.abs(means - mean)
        for eps in epsilon_grid:
            rate = float(np.mean(dev >= eps))
            # eps = 0 makes the tail bound vacuously 1
            bound = 1.0 if eps == 0 else hoeffding_tail(int(n), float(eps), width)
            noise = 3.0 * math.sqrt(bound * (1.0 - bound) / resamplings)
            cells.append(HoeffdingCell(
                n=int(n), epsilon=float(eps), empirical_rate=rate,
                bound=bound, ok=rate <= bound + noise,
            ))
    return HoeffdingReport(
        cells=tuple(cells), resamplings=resamplings,
        passed=all(c.ok for c in cells),
    )
