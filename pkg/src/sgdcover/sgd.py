"""Constant-step projected SGD engine, synchronous coupling, and the
closed-form contraction factor for strongly convex and smooth losses."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .core import ConvexDomain, DETERMINISTIC_TOL, as_point, substream
from .losses import Dataset, LossFamily

SCHEMES = ("explicit", "uniform", "without_replacement", "shuffle")


@dataclass(frozen=True, eq=False)
class SGDStep:
    """One projected gradient update theta -> Pi(theta - eta grad f(theta; z)).

    ``project=False`` runs the raw update (used by the clustering families,
    which rely on boundedness holding empirically instead of via projection).
    """

    family: LossFamily
    eta: float
    domain: ConvexDomain | None = None
    project: bool = True

    def __post_init__(self):
        if not self.eta >= 0:
            raise ValueError("eta must be nonnegative")
        if self.project and self.domain is None and self.family.domain is None:
            raise ValueError("projection requested but no domain available")

    @property
    def effective_domain(self) -> ConvexDomain | None:
        return self.domain if self.domain is not None else self.family.domain

    def apply(self, theta: np.ndarray, z) -> np.ndarray:
        g = np.asarray(self.family.grad(theta, z), dtype=float)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient")
        out = theta - self.eta * g
        if self.project:
            out = self.effective_domain.project(out)
        return out


@dataclass(frozen=True, eq=False)
class CustomMap:
    """An arbitrary iterative update g(theta; z)."""

    fn: Callable[[np.ndarray, object], np.ndarray]
    domain: ConvexDomain | None = None

    @property
    def effective_domain(self) -> ConvexDomain | None:
        return self.domain

    def apply(self, theta: np.ndarray, z) -> np.ndarray:
        out = np.asarray(self.fn(theta, z), dtype=float)
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("update produced non-finite values")
        return out


UpdateMap = Union[SGDStep, CustomMap]


@dataclass(frozen=True, eq=False)
class SGDConfig:
    """Run configuration: start point, step count, and index sampling scheme.

    ``indices`` is required for the "explicit" scheme and may be a flat
    sequence (batch size 1) or one row of indices per step.  For the seeded
    schemes, a ``seed`` makes the realized index sequence reproducible.
    """

    init: np.ndarray
    steps: int
    eta: float | None = None
    scheme: str = "uniform"
    indices: Sequence | None = None
    seed: int | None = None
    batch_size: int = 1

    def __post_init__(self):
        object.__setattr__(self, "init", as_point(self.init))
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be a positive integer")
        if self.scheme == "explicit":
            if self.indices is None:
                raise ValueError("explicit scheme needs an index sequence")
        elif self.indices is not None:
            raise ValueError("indices are only accepted with the explicit scheme")
        if self.eta is not None and not self.eta >= 0:
            raise ValueError("eta must be nonnegative")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """All iterates of one run plus the realized index sequence."""

    points: np.ndarray   # (steps + 1, dim)
    indices: np.ndarray  # (steps, batch_size)
    scheme: str
    seed: int | None = None

    @property
    def steps(self) -> int:
        return self.points.shape[0] - 1

    @property
    def endpoint(self) -> np.ndarray:
        return self.points[-1]

    def to_csv(self, path) -> None:
        """Dump as CSV with stable columns step,index,x0,...; batches join
        their indices with '|' and the step-0 row carries an empty index."""
        d = self.points.shape[1]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "index"] + [f"x{j}" for j in range(d)])
            writer.writerow([0, ""] + [repr(float(v)) for v in self.points[0]])
            for t in range(self.steps):
                label = "|".join(str(int(i)) for i in self.indices[t])
                writer.writerow([t + 1, label] + [repr(float(v)) for v in self.points[t + 1]])


def contraction_factor(alpha: float, beta: float, eta: float) -> float:
    """Closed-form coupling ratio sqrt(1 - 2*alpha*eta + alpha*beta*eta^2)
    of one gradient step on an alpha-strongly-convex, beta-smooth loss.

    Requires 0 < alpha <= beta and 0 < eta < 2/beta, which keeps the value
    in [0, 1); a slightly negative radicand from rounding is clamped to 0.
    """
    if not (0 < alpha <= beta):
        raise ValueError("need 0 < alpha <= beta")
    if not 0 < eta < 2.0 / beta:
        raise ValueError("step size must satisfy 0 < eta < 2/beta for this certificate")
    radicand = 1.0 - 2.0 * alpha * eta + alpha * beta * eta**2
    if radicand < -DETERMINISTIC_TOL:
        raise ValueError(f"negative radicand {radicand}")
    return math.sqrt(max(radicand, 0.0))


def sgd_step(update: UpdateMap, theta, sample_index: int, dataset: Dataset) -> np.ndarray:
    """Apply one update using sample ``sample_index`` of the dataset."""
    theta = as_point(theta)
    if not 0 <= sample_index < dataset.n:
        raise IndexError(f"sample index {sample_index} out of range [0, {dataset.n})")
    return update.apply(theta, dataset.samples[sample_index])


def _batch_apply(update: UpdateMap, theta: np.ndarray, batch, dataset: Dataset) -> np.ndarray:
    if len(batch) == 1:
        return sgd_step(update, theta, int(batch[0]), dataset)
    # mini-batch: average the single-sample updates (an average of
    # gamma-contractive maps is gamma-contractive)
    acc = np.zeros_like(theta)
    for i in batch:
        acc += sgd_step(update, theta, int(i), dataset)
    return acc / len(batch)


def draw_indices(config: SGDConfig, n: int) -> np.ndarray:
    """Realize the (steps, batch_size) index array for a run over n samples."""
    t, b = config.steps, config.batch_size
    if config.scheme == "explicit":
        idx = np.asarray(config.indices, dtype=np.int64)
        if idx.ndim == 1:
            idx = idx[:, None]
        if idx.shape != (t, b):
            raise ValueError(f"explicit indices must have shape ({t}, {b})")
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise ValueError("explicit indices out of range")
        return idx
    rng = substream(config.seed if config.seed is not None else 0)
    if config.scheme == "uniform":
        return rng.integers(0, n, size=(t, b))
    if b != 1:
        raise ValueError(f"scheme {config.scheme!r} supports batch_size 1 only")
    if config.scheme == "without_replacement":
        if t > n:
            raise ValueError("cannot draw more without-replacement steps than samples")
        return rng.permutation(n)[:t][:, None]
    # shuffle: concatenated independent passes over the data
    passes = []
    while sum(len(p) for p in passes) < t:
        passes.append(rng.permutation(n))
    return np.concatenate(passes)[:t][:, None]


def run_trajectory(
    update: UpdateMap,
    config: SGDConfig,
    dataset: Dataset,
    invariant_domain: ConvexDomain | None = None,
) -> Trajectory:
    """Run ``config.steps`` updates, recording every iterate.

    Deterministic given (config, dataset): seeded schemes derive their index
    stream from ``config.seed`` alone.  If ``invariant_domain`` is given,
    every iterate must stay inside it (used by the projection-free clustering
    runs, whose boundedness is an empirical contract).
    """
    if isinstance(update, SGDStep) and config.eta is not None and config.eta != update.eta:
        raise ValueError(f"config.eta={config.eta} disagrees with the update map's eta={update.eta}")
    indices = draw_indices(config, dataset.n)
    dim = config.init.shape[0]
    points = np.empty((config.steps + 1, dim))
    points[0] = config.init
    theta = config.init
    for t in range(config.steps):
        theta = _batch_apply(update, theta, indices[t], dataset)
        if invariant_domain is not None and not invariant_domain.contains(theta):
            raise RuntimeError(
                f"iterate left the declared invariant domain at step {t + 1}: {theta}"
            )
        points[t + 1] = theta
    return Trajectory(points=points, indices=indices, scheme=config.scheme, seed=config.seed)


@dataclass(frozen=True, eq=False)
class CouplingReport:
    """Per-step distance ratios of two synchronously coupled runs.

    ``distances[t]`` is the pair distance before step t; ratios measured at
    tiny distances carry rounding noise of order eps_machine / distance.
    """

    ratios: np.ndarray
    distances: np.ndarray
    coalesced: bool
    coalesce_step: int | None

    @property
    def max_ratio(self) -> float:
        live = self.ratios if self.coalesce_step is None else self.ratios[: self.coalesce_step]
        return float(live.max()) if live.size else 0.0

    def max_measurable_ratio(self, min_distance: float) -> float:
        """Largest ratio among steps whose starting distance is at least
        ``min_distance`` (the regime where rounding noise is negligible)."""
        stop = len(self.ratios) if self.coalesce_step is None else self.coalesce_step
        live = self.ratios[:stop][self.distances[:stop] >= min_distance]
        return float(live.max()) if live.size else 0.0


def coupled_contraction_ratio(
    update: UpdateMap,
    theta_a,
    theta_b,
    indices: Sequence[int],
    dataset: Dataset,
) -> CouplingReport:
    """Drive two starting points with identical sample indices and report
    ||g(a) - g(b)|| / ||a - b|| at every step.

    Once the pair agrees to within 1e-14 times the domain scale the ratio is
    0/0; remaining ratios are reported as 0 and the report is flagged.
    """
    a = as_point(theta_a)
    b = as_point(theta_b, dim=a.shape[0])
    dist = float(np.linalg.norm(a - b))
    if dist == 0.0:
        raise ValueError("coupled starting points must differ")
    domain = update.effective_domain
    scale = domain.bounding_radius() if domain is not None else math.inf
    if not math.isfinite(scale):
        scale = max(1.0, dist)
    coalesce_tol = 1e-14 * scale

    ratios = np.zeros(len(indices))
    distances = np.zeros(len(indices))
    coalesce_step = None
    for t, i in enumerate(indices):
        if dist <= coalesce_tol:
            coalesce_step = t
            break
        distances[t] = dist
        a = sgd_step(update, a, int(i), dataset)
        b = sgd_step(update, b, int(i), dataset)
        new_dist = float(np.linalg.norm(a - b))
        ratios[t] = new_dist / dist
        dist = new_dist
    return CouplingReport(ratios=ratios, distances=distances,
                          coalesced=coalesce_step is not None,
                          coalesce_step=coalesce_step)
