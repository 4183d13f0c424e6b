"""Localized epsilon-cover enumeration and verification, piecewise
strongly-convex quadratic surrogates with a lattice anchor construction, and
iterated-function-system dimension tooling.

The cover of horizon T enumerates every composition of T single-sample
updates applied to the origin.  For contractive updates with ratio gamma and
a domain inside the radius-R ball, any iterate after t >= T steps from any
start lies within gamma^T * R of one of these points, so the enumeration is
an epsilon-cover of the reachable set for epsilon >= gamma^T * R.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .core import ConvexDomain, as_point, ceil_int, substream
from .losses import Dataset
from .sgd import UpdateMap, sgd_step

DEFAULT_CAP = 10**7


class EnumerationCapExceeded(ValueError):
    """Raised before enumeration when the entry count would exceed the cap."""

    def __init__(self, required: int, cap: int):
        self.required = required
        self.cap = cap
        super().__init__(
            f"enumeration needs {required} entries but the cap is {cap}; "
            f"rerun with cap >= {required}"
        )


def cover_horizon(R: float, epsilon: float, gamma: float) -> int:
    """Smallest certified horizon T = max(ceil(log(R/eps)/log(1/gamma)), 0).

    After T contraction steps the reachable set shrinks to radius
    gamma^T * R <= epsilon; epsilon >= R needs no steps at all.
    """
    if not (R > 0 and epsilon > 0):
        raise ValueError("R and epsilon must be positive")
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    if epsilon >= R:
        return 0
    return max(ceil_int(math.log(R / epsilon) / math.log(1.0 / gamma)), 0)


@dataclass(frozen=True, eq=False)
class CoverEntry:
    """One enumerated composition: its index sequence, endpoint, and the set
    of sample indices the endpoint depends on."""

    seq: tuple[int, ...]
    point: np.ndarray
    deps: frozenset[int]
    pieces: tuple[int, ...] | None = None

    def to_json(self) -> str:
        rec = {"seq": list(self.seq)}
        if self.pieces is not None:
            rec["pieces"] = list(self.pieces)
        rec["point"] = [float(v) for v in self.point]
        rec["deps"] = sorted(self.deps)
        return json.dumps(rec, sort_keys=False)


@dataclass(frozen=True, eq=False)
class CoverSet:
    """Enumerated cover anchored at the origin, in canonical lexicographic
    order of the (index, piece) choice sequences."""

    horizon: int
    anchor: np.ndarray
    entries: tuple[CoverEntry, ...]
    n_samples: int
    epsilon: float | None = None
    pieces_per_sample: int | None = None
    deduped: bool = False

    def __len__(self) -> int:
        return len(self.entries)

    def points_array(self) -> np.ndarray:
        return np.vstack([e.point for e in self.entries])

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for entry in self.entries:
                fh.write(entry.to_json() + "\n")


def _enumerate_tree(
    apply_choice: Callable[[np.ndarray, int], np.ndarray],
    anchor: np.ndarray,
    n_choices: int,
    T: int,
    threads: int = 1,
) -> list[tuple[tuple[int, ...], np.ndarray]]:
    """All n_choices^T compositions in lexicographic order of the choice
    sequence (first applied choice is most significant).

    Parallelism splits on the first choice: each subtree occupies a disjoint
    contiguous block of the output, so the order never depends on scheduling.
    """

    def subtree(start_point, prefix):
        out = []
        stack = [(start_point, prefix)]
        while stack:
            point, seq = stack.pop()
            if len(seq) == T:
                out.append((seq, point))
                continue
            # push children in reverse so they pop in ascending choice order
            for c in range(n_choices - 1, -1, -1):
                stack.append((apply_choice(point, c), seq + (c,)))
        return out

    if T == 0:
        return [((), anchor.copy())]
    if threads <= 1 or n_choices == 1:
        return subtree(anchor, ())
    with ThreadPoolExecutor(max_workers=min(threads, n_choices)) as pool:
        blocks = pool.map(
            lambda c: subtree(apply_choice(anchor, c), (c,)), range(n_choices)
        )
        out: list = []
        for block in blocks:  # map() preserves submission order
            out.extend(block)
        return out


def _resolve_dim(update: UpdateMap, dataset: Dataset, dim: int | None) -> int:
    if dim is not None:
        return dim
    domain = update.effective_domain
    if domain is not None:
        return domain.dim
    fam_dim = getattr(getattr(update, "family", None), "dim", None)
    if fam_dim is not None:
        return fam_dim
    raise ValueError("cannot infer the parameter dimension; pass dim explicitly")


def enumerate_cover(
    update: UpdateMap,
    dataset: Dataset,
    T: int,
    cap: int = DEFAULT_CAP,
    dedupe: bool = False,
    epsilon: float | None = None,
    dim: int | None = None,
    threads: int = 1,
) -> CoverSet:
    """Enumerate all n^T compositions of the per-sample updates applied to
    the origin, with their index sequences and dependency sets.

    Refuses outright (no partial output) when n^T exceeds the cap.  With
    ``dedupe`` the first (lexicographically smallest) sequence reaching each
    exact endpoint is kept; counts then no longer equal n^T.
    """
    if T < 0:
        raise ValueError("T must be nonnegative")
    n = dataset.n
    required = n**T
    if required > cap:
        raise EnumerationCapExceeded(required, cap)
    d = _resolve_dim(update, dataset, dim)
    anchor = np.zeros(d)

    raw = _enumerate_tree(
        lambda point, i: sgd_step(update, point, i, dataset), anchor, n, T, threads
    )
    entries = [CoverEntry(seq=seq, point=pt, deps=frozenset(seq)) for seq, pt in raw]
    if dedupe:
        seen = set()
        kept = []
        for e in entries:
            key = e.point.tobytes()
            if key not in seen:
                seen.add(key)
                kept.append(e)
        entries = kept
    return CoverSet(
        horizon=T, anchor=anchor, entries=tuple(entries), n_samples=n,
        epsilon=epsilon, deduped=dedupe,
    )


def enumerate_piecewise_cover(
    approx_for: Callable[[object], "PiecewiseQuadraticApprox"],
    dataset: Dataset,
    eta: float,
    T: int,
    cap: int = DEFAULT_CAP,
    epsilon: float | None = None,
    threads: int = 1,
) -> CoverSet:
    """Enumerate compositions over index AND piece choices of the surrogate
    update g_{i,p}(theta) = theta - eta * grad h_p(theta; z_i), where h_p is
    the p-th strongly convex quadratic piece of the per-sample surrogate.

    The piece gradient formula is applied globally (not restricted to its
    cell), producing all (n*P)^T candidate endpoints.  P must be common to
    every sample.  Reduces entrywise to ``enumerate_cover`` when P = 1.
    """
    if T < 0:
        raise ValueError("T must be nonnegative")
    if not eta >= 0:
        raise ValueError("eta must be nonnegative")
    n = dataset.n
    approxes = [approx_for(z) for z in dataset.samples]
    P = approxes[0].piece_count
    if any(a.piece_count != P for a in approxes):
        raise ValueError("all per-sample surrogates must expose the same piece count")
    required = (n * P) ** T
    if required > cap:
        raise EnumerationCapExceeded(required, cap)
    d = approxes[0].dim
    anchor = np.zeros(d)

    def apply_choice(point, c):
        i, p = divmod(c, P)
        return point - eta * approxes[i].piece_grad(p, point)

    raw = _enumerate_tree(apply_choice, anchor, n * P, T, threads)
    entries = []
    for seq, pt in raw:
        idx = tuple(c // P for c in seq)
        pieces = tuple(c % P for c in seq)
        entries.append(CoverEntry(seq=idx, point=pt, deps=frozenset(idx), pieces=pieces))
    return CoverSet(
        horizon=T, anchor=anchor, entries=tuple(entries), n_samples=n,
        epsilon=epsilon, pieces_per_sample=P,
    )


def replay_entry(update: UpdateMap, dataset: Dataset, entry: CoverEntry,
                 anchor: np.ndarray) -> np.ndarray:
    """Re-run an entry's recorded sequence from the anchor (bitwise identical
    to enumeration when the dataset agrees on the entry's dependency set)."""
    point = anchor.copy()
    for i in entry.seq:
        point = sgd_step(update, point, i, dataset)
    return point


@dataclass(frozen=True, eq=False)
class CoverVerification:
    """Empirical soundness report: random restarts against the cover."""

    trials: int
    failures: int
    max_min_distance: float
    epsilon: float
    passed: bool
    horizon: int


def verify_cover(
    cover: CoverSet,
    update: UpdateMap,
    dataset: Dataset,
    trials: int,
    max_extra_steps: int,
    epsilon: float,
    seed: int = 0,
) -> CoverVerification:
    """Run ``trials`` trajectories from random starts for random t in
    [T, T + max_extra_steps] and report the worst distance to the cover.

    Passes only if every endpoint lands within epsilon of some cover point.
    """
    if trials < 1 or max_extra_steps < 0:
        raise ValueError("need trials >= 1 and max_extra_steps >= 0")
    domain = update.effective_domain
    if domain is None:
        raise ValueError("verification needs a bounded domain to sample starts from")
    tree = cKDTree(cover.points_array())
    T = cover.horizon
    n = dataset.n
    failures = 0
    worst = 0.0
    for k in range(trials):
        rng = substream(seed, k)
        theta = domain.sample(rng)
        t = int(rng.integers(T, T + max_extra_steps + 1))
        for i in rng.integers(0, n, size=t):
            theta = sgd_step(update, theta, int(i), dataset)
        dist = float(tree.query(theta)[0])
        worst = max(worst, dist)
        if dist > epsilon:
            failures += 1
    return CoverVerification(
        trials=trials, failures=failures, max_min_distance=worst,
        epsilon=epsilon, passed=failures == 0, horizon=T,
    )


# ---------------------------------------------------------------------------
# Piecewise strongly convex quadratic surrogates
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SmoothPiece:
    """One smooth piece: value and gradient, evaluable on the whole domain."""

    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class PiecewiseSmoothFunction:
    """A function equal to pieces[q] on cell q of a finite partition, with a
    common second-derivative bound beta_prime across pieces."""

    pieces: tuple[SmoothPiece, ...]
    piece_of: Callable[[np.ndarray], int]
    beta_prime: float

    def __post_init__(self):
        if not self.pieces:
            raise ValueError("need at least one smooth piece")
        if self.beta_prime < 0:
            raise ValueError("beta_prime must be nonnegative")

    @property
    def Q(self) -> int:
        return len(self.pieces)

    def value(self, theta) -> float:
        return float(self.pieces[self.piece_of(theta)].value(theta))

    def grad(self, theta) -> np.ndarray:
        return np.asarray(self.pieces[self.piece_of(theta)].grad(theta), dtype=float)


def smooth_function(value, grad, beta_prime: float) -> PiecewiseSmoothFunction:
    """Wrap a globally smooth function as a single-piece instance."""
    return PiecewiseSmoothFunction((SmoothPiece(value, grad),), lambda theta: 0, beta_prime)


def _bounding_box(domain: ConvexDomain) -> tuple[np.ndarray, np.ndarray]:
    from .core import Ball, Box, ProductOfBalls

    if isinstance(domain, Ball):
        return domain.center - domain.radius, domain.center + domain.radius
    if isinstance(domain, Box):
        return domain.lower, domain.upper
    if isinstance(domain, ProductOfBalls):
        r = np.full(domain.dim, domain.radius)
        return -r, r
    raise ValueError("anchor lattice needs a bounded domain")


@dataclass(frozen=True, eq=False)
class PiecewiseQuadraticApprox:
    """Piecewise quadratic surrogate h built from anchor points.

    On the cell of smooth piece q assigned to anchor phi_p the surrogate is
        h_{q,p}(theta) = f(phi_p) + grad_q(phi_p).(theta - phi_p)
                         + (curvature/2) ||theta - phi_p||^2,
    which is curvature-strongly-convex and curvature-smooth by construction.
    Cells are nearest-anchor regions inside each smooth piece, ties broken
    toward the lowest anchor index.  When the anchors form an eps-cover of
    the domain with eps = xi / (curvature + beta_prime), the surrogate
    gradient tracks the true gradient to within xi everywhere.
    """

    source: PiecewiseSmoothFunction
    anchors: np.ndarray        # (m, d)
    anchor_values: np.ndarray  # (Q, m)
    anchor_grads: np.ndarray   # (Q, m, d)
    strong_convexity: float
    curvature: float
    xi: float
    spacing_epsilon: float
    domain: ConvexDomain

    @property
    def dim(self) -> int:
        return self.anchors.shape[1]

    @property
    def anchor_count(self) -> int:
        return self.anchors.shape[0]

    @property
    def piece_count(self) -> int:
        return self.source.Q * self.anchor_count

    def closed_form_piece_bound(self) -> float:
        """The closed-form anchor-count bound Q*(3*(beta+beta')*R/xi)^d."""
        if self.xi == 0:
            return math.inf
        R = self.domain.bounding_radius()
        total = self.curvature + self.source.beta_prime
        return self.source.Q * (3.0 * total * R / self.xi) ** self.dim

    def anchor_index(self, theta) -> int:
        theta = as_point(theta, dim=self.dim)
        d2 = np.sum((self.anchors - theta[None, :]) ** 2, axis=1)
        return int(np.argmin(d2))  # argmin takes the lowest index on ties

    def piece_index(self, theta) -> int:
        q = self.source.piece_of(theta)
        return q * self.anchor_count + self.anchor_index(theta)

    def piece_grad(self, flat_index: int, theta) -> np.ndarray:
        """Gradient formula of piece ``flat_index`` applied globally."""
        q, p = divmod(int(flat_index), self.anchor_count)
        theta = as_point(theta, dim=self.dim)
        return self.anchor_grads[q, p] + self.curvature * (theta - self.anchors[p])

    def grad(self, theta) -> np.ndarray:
        return self.piece_grad(self.piece_index(theta), theta)

    def value(self, theta) -> float:
        theta = as_point(theta, dim=self.dim)
        q = self.source.piece_of(theta)
        p = self.anchor_index(theta)
        diff = theta - self.anchors[p]
        return float(
            self.anchor_values[q, p]
            + self.anchor_grads[q, p] @ diff
            + 0.5 * self.curvature * diff @ diff
        )


def _anchor_lattice(domain: ConvexDomain, epsilon: float, cap: int) -> np.ndarray:
    """Axis-aligned lattice whose points eps-cover the domain, projected in.

    Spacing 2*eps/sqrt(d) puts every point of the bounding box within eps of
    a lattice node; projecting nodes onto the domain preserves that cover
    property because projection is nonexpansive.
    """
    lo, hi = _bounding_box(domain)
    d = lo.shape[0]
    spacing = 2.0 * epsilon / math.sqrt(d)
    axes = []
    total = 1
    for j in range(d):
        k = max(1, ceil_int((hi[j] - lo[j]) / spacing))
        total *= k
        if total > cap:
            raise EnumerationCapExceeded(total, cap)
        mid = 0.5 * (lo[j] + hi[j])
        axes.append(mid + (np.arange(k) - (k - 1) / 2.0) * spacing)
    grid = np.stack([g.reshape(-1) for g in np.meshgrid(*axes, indexing="ij")], axis=1)

    anchors = []
    seen = set()
    slack = epsilon * (1 + 1e-12)
    for p in grid:
        proj = domain.project(p)
        if np.linalg.norm(proj - p) > slack:
            continue  # node serves no domain point
        key = proj.tobytes()
        if key not in seen:
            seen.add(key)
            anchors.append(proj)
    return np.vstack(anchors)


def build_piecewise_approx(
    fn: PiecewiseSmoothFunction,
    domain: ConvexDomain,
    xi: float,
    strong_convexity_smoothness: tuple[float, float],
    cap: int = DEFAULT_CAP,
    anchors: Sequence | None = None,
) -> PiecewiseQuadraticApprox:
    """Build the quadratic surrogate with gradient error at most xi.

    Anchors default to a lattice eps-cover with eps = xi/(beta + beta');
    explicit ``anchors`` override the lattice (required when xi = 0, e.g. to
    represent an exact quadratic with a single anchor at its center).
    """
    alpha, beta = strong_convexity_smoothness
    if not (0 < alpha <= beta):
        raise ValueError("need strong convexity 0 < alpha <= smoothness beta")
    if xi < 0:
        raise ValueError("xi must be nonnegative")
    if anchors is not None:
        anchor_arr = np.vstack([as_point(a, dim=domain.dim) for a in anchors])
        epsilon = math.inf
    else:
        if xi == 0:
            raise ValueError("xi = 0 requires explicit anchors")
        epsilon = xi / (beta + fn.beta_prime)
        anchor_arr = _anchor_lattice(domain, epsilon, cap)

    m = anchor_arr.shape[0]
    values = np.empty((fn.Q, m))
    grads = np.empty((fn.Q, m, domain.dim))
    for q, piece in enumerate(fn.pieces):
        for p in range(m):
            values[q, p] = piece.value(anchor_arr[p])
            grads[q, p] = np.asarray(piece.grad(anchor_arr[p]), dtype=float)
    return PiecewiseQuadraticApprox(
        source=fn, anchors=anchor_arr, anchor_values=values, anchor_grads=grads,
        strong_convexity=alpha, curvature=beta, xi=xi,
        spacing_epsilon=epsilon, domain=domain,
    )


# ---------------------------------------------------------------------------
# Iterated function systems and fractal dimension
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class IFSModel:
    """n affine maps g_i(theta) = gamma*theta + (1-gamma)*c_i with a common
    contraction ratio gamma, acting on the radius-R ball around the origin.

    These are exactly the no-projection gradient maps of the squared-distance
    loss at step size 1 - gamma, with fixed points at the centers c_i.
    """

    centers: np.ndarray
    gamma: float
    radius: float

    def __post_init__(self):
        centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if np.any(np.linalg.norm(centers, axis=1) > self.radius * (1 + 1e-12)):
            raise ValueError("all fixed points must lie inside the radius-R ball")
        object.__setattr__(self, "centers", centers)

    @property
    def n_maps(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def apply(self, i: int, theta) -> np.ndarray:
        theta = as_point(theta, dim=self.dim)
        return self.gamma * theta + (1.0 - self.gamma) * self.centers[i]

    def min_center_distance(self) -> float:
        if self.n_maps < 2:
            return math.inf
        c = self.centers
        d2 = np.sum((c[:, None, :] - c[None, :, :]) ** 2, axis=-1)
        return float(np.sqrt(d2[np.triu_indices(self.n_maps, k=1)].min()))

    def center_criterion_ok(self) -> bool:
        """Fixed points pairwise at least 2*gamma*R apart."""
        return self.min_center_distance() >= 2.0 * self.gamma * self.radius * (1 - 1e-12)

    def images_disjoint(self) -> bool:
        """Interiors of the ball images are pairwise disjoint (the images are
        balls of radius gamma*R centered at (1-gamma)*c_i, so this holds iff
        (1-gamma)*||c_i - c_j|| >= 2*gamma*R)."""
        gap = (1.0 - self.gamma) * self.min_center_distance()
        return gap >= 2.0 * self.gamma * self.radius * (1 - 1e-12)

    def sample_attractor(self, n_points: int, seed: int = 0, burn_in: int = 64) -> np.ndarray:
        """Chaos-game orbit: iterate uniformly random maps from the origin."""
        if n_points < 1:
            raise ValueError("n_points must be positive")
        rng = substream(seed)
        theta = np.zeros(self.dim)
        choices = rng.integers(0, self.n_maps, size=burn_in + n_points)
        for i in choices[:burn_in]:
            theta = self.apply(int(i), theta)
        out = np.empty((n_points, self.dim))
        for k, i in enumerate(choices[burn_in:]):
            theta = self.apply(int(i), theta)
            out[k] = theta
        return out


@dataclass(frozen=True)
class IFSDimension:
    """log n / log(1/gamma), certified only under the separation checks."""

    dimension: float
    certified: bool
    warning: str | None = None


def ifs_dimension(model: IFSModel) -> IFSDimension:
    """Similarity dimension log n / log(1/gamma) of the attractor.

    The closed form is certified when the fixed points satisfy the pairwise
    distance criterion >= 2*gamma*R and the ball images are actually
    disjoint; otherwise the value is returned with a warning flag.
    """
    value = math.log(model.n_maps) / math.log(1.0 / model.gamma)
    criterion = model.center_criterion_ok()
    disjoint = model.images_disjoint()
    if criterion and disjoint:
        return IFSDimension(value, True)
    parts = []
    if not criterion:
        parts.append("fixed-point distance criterion fails")
    if not disjoint:
        parts.append("ball images overlap")
    return IFSDimension(value, False, "; ".join(parts) + ": formula not certified")


@dataclass(frozen=True, eq=False)
class BoxCountFit:
    """Least-squares box-counting estimate with its per-scale counts."""

    dimension: float
    scales: np.ndarray
    counts: np.ndarray


def box_counting_dimension(points, scales: Sequence[float]) -> BoxCountFit:
    """Slope of log(box count) vs log(1/scale) over the given scales.

    Requires at least 10^3 points and at least 4 scales spanning two or more
    decades.  A cloud of identical points occupies one box at every scale
    and so estimates dimension 0.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] == pts.size:  # a flat vector of scalars
        pts = pts.reshape(-1, 1)
    if pts.shape[0] < 1000:
        raise ValueError("box counting needs at least 1000 points")
    scales = np.asarray(sorted(scales, reverse=True), dtype=float)
    if scales.size < 4 or np.any(scales <= 0):
        raise ValueError("need at least 4 positive scales")
    if scales.max() / scales.min() < 100.0:
        raise ValueError("scales must span at least two decades")
    lo = pts.min(axis=0)

    counts = np.empty(scales.size)
    for k, s in enumerate(scales):
        idx = np.floor((pts - lo) / s).astype(np.int64)
        counts[k] = np.unique(idx, axis=0).shape[0]
    slope = float(np.polyfit(np.log(1.0 / scales), np.log(counts), 1)[0])
    return BoxCountFit(dimension=slope, scales=scales, counts=counts)
