"""Cover enumeration/verification, quadratic surrogates, and IFS dimension."""

import itertools
import json
import math

import numpy as np
import pytest

from sgdcover.core import Ball
from sgdcover.cover import (
    EnumerationCapExceeded,
    IFSModel,
    box_counting_dimension,
    build_piecewise_approx,
    cover_horizon,
    enumerate_cover,
    enumerate_piecewise_cover,
    ifs_dimension,
    replay_entry,
    smooth_function,
    verify_cover,
)
from sgdcover.losses import Dataset, quadratic_centers
from sgdcover.sgd import CustomMap, SGDStep

CENTERS = [np.array([0.8, 0.0]), np.array([-0.4, 0.6]), np.array([-0.2, -0.7])]


def quadratic_cover_setup(eta=0.5):
    fam = quadratic_centers(CENTERS, R=1.0)
    ds = Dataset(tuple(CENTERS))
    return fam, ds, SGDStep(fam, eta, domain=fam.domain)


class TestCoverHorizon:
    def test_large_epsilon_needs_no_steps(self):
        assert cover_horizon(1.0, 1.0, 0.5) == 0
        assert cover_horizon(1.0, 2.0, 0.9) == 0

    def test_frozen_values(self):
        assert cover_horizon(1.0, 0.01, 0.5) == 7
        assert cover_horizon(1.0, 1.0 / 200.0, 0.5) == 8  # eps = 1/(2*L*R*n), L=1, n=100
        assert cover_horizon(1.0, 1.0 / 6.0, 0.5) == 3

    def test_exact_power_boundary(self):
        # log(8)/log(2) is an exact integer; float noise must not bump it to 4
        assert cover_horizon(1.0, 0.125, 0.5) == 3

    def test_rejects_bad_gamma(self):
        with pytest.raises(ValueError):
            cover_horizon(1.0, 0.1, 1.0)
        with pytest.raises(ValueError):
            cover_horizon(1.0, 0.1, 0.0)


class TestEnumerateCover:
    def test_zero_horizon_is_origin(self):
        _, ds, update = quadratic_cover_setup()
        cov = enumerate_cover(update, ds, T=0)
        assert len(cov) == 1
        np.testing.assert_array_equal(cov.entries[0].point, np.zeros(2))
        assert cov.entries[0].seq == ()

    def test_counts(self):
        fam = quadratic_centers(CENTERS[:2], R=1.0)
        ds2 = Dataset(tuple(CENTERS[:2]))
        cov = enumerate_cover(SGDStep(fam, 0.5, domain=fam.domain), ds2, T=2)
        assert len(cov) == 4
        _, ds3, update = quadratic_cover_setup()
        assert len(enumerate_cover(update, ds3, T=3)) == 27

    def test_lexicographic_order_and_points(self):
        _, ds, update = quadratic_cover_setup()
        cov = enumerate_cover(update, ds, T=2)
        expected_seqs = list(itertools.product(range(3), repeat=2))
        assert [e.seq for e in cov.entries] == expected_seqs
        for e in cov.entries:
            np.testing.assert_array_equal(
                e.point, replay_entry(update, ds, e, np.zeros(2))
            )
            assert e.deps == frozenset(e.seq) and len(e.deps) <= 2

    def test_threads_do_not_change_output(self):
        _, ds, update = quadratic_cover_setup()
        a = enumerate_cover(update, ds, T=3, threads=1)
        b = enumerate_cover(update, ds, T=3, threads=4)
        assert [e.seq for e in a.entries] == [e.seq for e in b.entries]
        for ea, eb in zip(a.entries, b.entries):
            np.testing.assert_array_equal(ea.point, eb.point)

    def test_cap_refusal_is_total(self):
        _, ds, update = quadratic_cover_setup()
        with pytest.raises(EnumerationCapExceeded) as exc:
            enumerate_cover(update, ds, T=10, cap=100)
        assert exc.value.required == 3**10

    def test_dedupe_collapses_coincident_points(self):
        # a map that jumps straight to the sampled point makes every
        # composition equal its last choice, so only n points remain
        _, ds, _ = quadratic_cover_setup()
        jump = CustomMap(lambda t, z: np.asarray(z, dtype=float), Ball(np.zeros(2), 1.0))
        plain = enumerate_cover(jump, ds, T=2)
        deduped = enumerate_cover(jump, ds, T=2, dedupe=True)
        assert len(plain) == 9 and plain.deduped is False
        assert len(deduped) == 3 and deduped.deduped is True
        # first (lexicographically smallest) sequence per point is kept
        assert [e.seq for e in deduped.entries] == [(0, 0), (0, 1), (0, 2)]

    def test_dependency_bit_for_bit(self):
        """Perturbing samples outside an entry's dependency set leaves its
        replayed point unchanged bitwise; perturbing inside moves it."""
        fam, ds, update = quadratic_cover_setup()
        cov = enumerate_cover(update, ds, T=2)
        entry = next(e for e in cov.entries if e.deps == frozenset({0, 1}))
        modified = list(CENTERS)
        modified[2] = np.array([0.3, 0.3])  # outside deps
        ds_mod = Dataset(tuple(modified))
        np.testing.assert_array_equal(
            replay_entry(update, ds_mod, entry, np.zeros(2)), entry.point
        )
        inside = list(CENTERS)
        inside[0] = np.array([0.3, 0.3])
        assert not np.array_equal(
            replay_entry(update, Dataset(tuple(inside)), entry, np.zeros(2)), entry.point
        )

    def test_jsonl_serialization(self, tmp_path):
        _, ds, update = quadratic_cover_setup()
        cov = enumerate_cover(update, ds, T=2, epsilon=1.0 / 6.0)
        path = tmp_path / "cover.jsonl"
        cov.write_jsonl(path)
        lines = path.read_text().strip().split("\n")
        assert len(lines) == 9
        first = json.loads(lines[0])
        assert first["seq"] == [0, 0] and sorted(first["deps"]) == [0]
        np.testing.assert_allclose(first["point"], cov.entries[0].point)


class TestVerifyCover:
    def test_anchor_trajectory_is_a_cover_point(self):
        """A T-step run from the anchor replays an enumerated composition."""
        _, ds, update = quadratic_cover_setup()
        cov = enumerate_cover(update, ds, T=3)
        rng = np.random.default_rng(31)
        for _ in range(20):
            idx = tuple(int(i) for i in rng.integers(0, 3, 3))
            theta = np.zeros(2)
            for i in idx:
                theta = update.apply(theta, ds.samples[i])
            match = next(e for e in cov.entries if e.seq == idx)
            np.testing.assert_array_equal(theta, match.point)

    def test_soundness_and_negative_control(self):
        _, ds, update = quadratic_cover_setup()
        eps = 1.0 / 6.0  # 1/(2 L n) with L = 1, n = 3
        T = cover_horizon(1.0, eps, 0.5)
        cov = enumerate_cover(update, ds, T=T, epsilon=eps)
        ok = verify_cover(cov, update, ds, trials=1000, max_extra_steps=50,
                          epsilon=eps, seed=2)
        assert ok.passed and ok.failures == 0
        assert ok.max_min_distance <= 0.5**T * 1.0 + 1e-12
        bad = verify_cover(cov, update, ds, trials=1000, max_extra_steps=50,
                           epsilon=eps / 100.0, seed=2)
        assert not bad.passed and bad.failures > 0

    def test_soundness_across_contractive_families(self):
        """Covers built at eps = 1/(2 L n) stay sound for every strongly
        convex and smooth family in the matrix, not just unit quadratics."""
        from sgdcover.losses import LossConstants, LossFamily, multi_index, squared_error_link
        from sgdcover.sgd import contraction_factor

        A = np.array([[2.0, 0.0], [0.0, 1.0]])
        aniso = LossFamily(
            name="aniso", constants=LossConstants(alpha=1.0, beta=2.0, L=1.0, R=1.0),
            sample_space="targets",
            value=lambda t, z: 0.5 * float((t - z) @ A @ (t - z)),
            grad=lambda t, z: A @ (t - z),
            dim=2, domain=Ball(np.zeros(2), 1.0),
        )

        # regularized single-index least squares: Hessian x x^T + lam I has
        # eigenvalues in [lam, R_x^2 + lam]
        lam, R_x = 0.5, 1.0
        lsq = multi_index(squared_error_link(), lam=lam, R=1.0, R_x=R_x, K=1, d=2)
        lsq = LossFamily(
            name=lsq.name,
            constants=LossConstants(alpha=lam, beta=R_x**2 + lam, L=1.0, R=1.0,
                                    lam=lam, R_x=R_x, K=1, Q=1),
            sample_space=lsq.sample_space, value=lsq.value, grad=lsq.grad,
            dim=2, domain=Ball(np.zeros(2), 1.0),
        )
        lsq_data = Dataset(((0.4, np.array([0.8, 0.2])),
                            (-0.3, np.array([-0.5, 0.6])),
                            (0.1, np.array([0.1, -0.9]))))

        fam_q = quadratic_centers(CENTERS, R=1.0)
        matrix = [
            (fam_q, Dataset(tuple(CENTERS)), 0.5),
            (aniso, Dataset(tuple(CENTERS)), 0.5),
            (lsq, lsq_data, 0.6),
        ]
        for fam, ds, eta in matrix:
            c = fam.constants
            gamma = contraction_factor(c.alpha, c.beta, eta)
            n = ds.n
            eps = 1.0 / (2.0 * c.L * n)
            T = cover_horizon(fam.domain.bounding_radius(), eps, gamma)
            update = SGDStep(fam, eta, domain=fam.domain)
            cov = enumerate_cover(update, ds, T=T, cap=10**6, epsilon=eps)
            out = verify_cover(cov, update, ds, trials=500, max_extra_steps=30,
                               epsilon=eps, seed=7)
            assert out.passed, (fam.name, out.max_min_distance, eps)


def _per_sample_quadratic_approx(z, beta=1.0, anchors=None):
    fn = smooth_function(
        lambda t, z=z: 0.5 * float(np.sum((t - z) ** 2)),
        lambda t, z=z: t - np.asarray(z, dtype=float),
        beta_prime=0.0,
    )
    dom = Ball(np.zeros(np.atleast_1d(z).shape[0]), 1.0)
    return build_piecewise_approx(fn, dom, xi=0.0, strong_convexity_smoothness=(beta, beta),
                                  anchors=anchors if anchors is not None else [z])


class TestPiecewiseCover:
    def test_single_piece_reduces_to_plain(self):
        centers = [np.array([0.5]), np.array([-0.5])]
        ds = Dataset(tuple(centers))
        pc = enumerate_piecewise_cover(_per_sample_quadratic_approx, ds, eta=0.5, T=2)
        raw = CustomMap(lambda t, z: t - 0.5 * (t - np.asarray(z)), Ball(np.zeros(1), 1.0))
        plain = enumerate_cover(raw, ds, T=2)
        assert len(pc) == len(plain) == 4
        for a, b in zip(pc.entries, plain.entries):
            assert a.seq == b.seq and a.pieces == (0, 0)
            np.testing.assert_array_equal(a.point, b.point)

    def test_choice_counting(self):
        centers = [np.array([0.5]), np.array([-0.5])]
        ds = Dataset(tuple(centers))

        def two_piece(z):
            return _per_sample_quadratic_approx(z, anchors=[z, np.array([0.0])])

        pc = enumerate_piecewise_cover(two_piece, ds, eta=0.5, T=2)
        assert len(pc) == 16  # (n * P)^T with n = P = T = 2
        assert pc.pieces_per_sample == 2

    def test_affine_composition_oracle(self):
        """Quadratic pieces make every update affine; the enumerated points
        must match the closed-form affine recursion."""
        centers = [np.array([0.7]), np.array([-0.3])]
        ds = Dataset(tuple(centers))
        eta, beta = 0.4, 1.0

        def two_piece(z):
            return _per_sample_quadratic_approx(z, beta=beta, anchors=[z, np.array([0.1])])

        pc = enumerate_piecewise_cover(two_piece, ds, eta=eta, T=3)
        approxes = [two_piece(z) for z in ds.samples]
        for entry in pc.entries:
            x = 0.0
            for i, p in zip(entry.seq, entry.pieces):
                ap = approxes[i]
                g0 = float(ap.anchor_grads[0, p][0])
                phi = float(ap.anchors[p][0])
                # theta <- theta - eta * (g0 + beta * (theta - phi))
                x = (1.0 - eta * beta) * x - eta * (g0 - beta * phi)
            np.testing.assert_allclose(entry.point, [x], rtol=1e-12, atol=1e-15)

    def test_mismatched_piece_counts_rejected(self):
        centers = [np.array([0.5]), np.array([-0.5])]
        ds = Dataset(tuple(centers))

        def ragged(z):
            anchors = [z] if float(z[0]) > 0 else [z, np.array([0.0])]
            return _per_sample_quadratic_approx(z, anchors=anchors)

        with pytest.raises(ValueError):
            enumerate_piecewise_cover(ragged, ds, eta=0.5, T=1)


class TestPiecewiseApprox:
    def test_exact_quadratic_single_anchor(self):
        """A curvature-matched quadratic with one anchor at its center is
        represented exactly, for any xi >= 0."""
        beta = 1.5
        center = np.array([0.2, -0.1])
        fn = smooth_function(
            lambda t: 0.5 * beta * float(np.sum((t - center) ** 2)),
            lambda t: beta * (t - center),
            beta_prime=beta,
        )
        dom = Ball(np.zeros(2), 1.0)
        ap = build_piecewise_approx(fn, dom, xi=0.0,
                                    strong_convexity_smoothness=(beta, beta),
                                    anchors=[center])
        rng = np.random.default_rng(41)
        for _ in range(50):
            t = dom.sample(rng)
            np.testing.assert_allclose(ap.grad(t), fn.grad(t), atol=1e-15)
            np.testing.assert_allclose(ap.value(t), fn.value(t), atol=1e-15)

    def test_one_dimensional_piece_bound(self):
        # beta = beta' = 1, R = 1, xi = 6 -> bound (3*2*1/6)^1 = 1
        fn = smooth_function(lambda t: math.cos(t[0]), lambda t: np.array([-math.sin(t[0])]),
                             beta_prime=1.0)
        dom = Ball(np.zeros(1), 1.0)
        ap = build_piecewise_approx(fn, dom, xi=6.0, strong_convexity_smoothness=(1.0, 1.0))
        assert ap.piece_count == 1
        assert ap.closed_form_piece_bound() == pytest.approx(1.0)

    def test_sin_cos_grid_error(self):
        fn = smooth_function(
            lambda t: math.sin(t[0]) + math.cos(t[1]),
            lambda t: np.array([math.cos(t[0]), -math.sin(t[1])]),
            beta_prime=1.0,
        )
        dom = Ball(np.zeros(2), 1.0)
        ap = build_piecewise_approx(fn, dom, xi=0.5, strong_convexity_smoothness=(1.0, 1.0))
        axis = np.linspace(-1.0, 1.0, 60)
        worst = 0.0
        for x in axis:
            for y in axis:
                p = np.array([x, y])
                if np.linalg.norm(p) > 1.0:
                    continue
                worst = max(worst, float(np.linalg.norm(fn.grad(p) - ap.grad(p))))
        assert worst <= 0.5
        assert ap.piece_count <= ap.closed_form_piece_bound()

    def test_anchor_cover_property(self):
        """Every domain point is within the lattice spacing epsilon of an anchor."""
        fn = smooth_function(lambda t: 0.0, lambda t: np.zeros(2), beta_prime=1.0)
        dom = Ball(np.zeros(2), 1.0)
        ap = build_piecewise_approx(fn, dom, xi=0.3, strong_convexity_smoothness=(1.0, 1.0))
        rng = np.random.default_rng(42)
        for _ in range(2000):
            p = dom.sample(rng)
            d = np.sqrt(np.sum((ap.anchors - p) ** 2, axis=1).min())
            assert d <= ap.spacing_epsilon * (1 + 1e-12)

    def test_xi_zero_needs_anchors(self):
        fn = smooth_function(lambda t: 0.0, lambda t: np.zeros(1), beta_prime=1.0)
        with pytest.raises(ValueError):
            build_piecewise_approx(fn, Ball(np.zeros(1), 1.0), 0.0, (1.0, 1.0))

    def test_lattice_cap(self):
        fn = smooth_function(lambda t: 0.0, lambda t: np.zeros(2), beta_prime=1.0)
        with pytest.raises(EnumerationCapExceeded):
            build_piecewise_approx(fn, Ball(np.zeros(2), 1.0), 1e-4, (1.0, 1.0), cap=100)

    def test_invalid_curvature_pair(self):
        fn = smooth_function(lambda t: 0.0, lambda t: np.zeros(1), beta_prime=1.0)
        with pytest.raises(ValueError):
            build_piecewise_approx(fn, Ball(np.zeros(1), 1.0), 0.5, (2.0, 1.0))


class TestIFS:
    def test_single_map_dimension_zero(self):
        model = IFSModel(np.array([[0.5]]), gamma=0.5, radius=1.0)
        out = ifs_dimension(model)
        assert out.dimension == 0.0 and out.certified

    def test_cantor_dimension(self):
        model = IFSModel(np.array([[1.0], [-1.0]]), gamma=1.0 / 3.0, radius=1.0)
        out = ifs_dimension(model)
        assert out.dimension == pytest.approx(0.6309297535714574, rel=1e-12)
        assert out.certified

    def test_half_ratio_line_dimension_one(self):
        model = IFSModel(np.array([[1.0], [-1.0]]), gamma=0.5, radius=1.0)
        assert ifs_dimension(model).dimension == pytest.approx(1.0, rel=1e-12)

    def test_separation_warning(self):
        close = IFSModel(np.array([[0.3], [-0.3]]), gamma=0.5, radius=1.0)
        out = ifs_dimension(close)
        assert not out.certified and "criterion" in out.warning

    def test_criterion_met_but_images_overlap(self):
        # pairwise distance 1.22 >= 2*gamma*R = 1.2, yet the shrunken images
        # centered at (1-gamma)*c overlap: the flag must catch it
        model = IFSModel(np.array([[0.61], [-0.61]]), gamma=0.6, radius=1.0)
        assert model.center_criterion_ok()
        assert not model.images_disjoint()
        assert not ifs_dimension(model).certified

    def test_attractor_orbit_stays_in_ball(self):
        model = IFSModel(np.array([[1.0], [-1.0]]), gamma=1.0 / 3.0, radius=1.0)
        pts = model.sample_attractor(5000, seed=5)
        assert np.all(np.abs(pts) <= 1.0 + 1e-12)


class TestBoxCounting:
    def test_line_segment_dimension(self):
        rng = np.random.default_rng(51)
        t = rng.uniform(0, 1, 20_000)
        pts = np.stack([2.0 * t - 1.0, (2.0 * t - 1.0) * 0.5], axis=1)
        fit = box_counting_dimension(pts, np.geomspace(0.5, 0.004, 6))
        assert abs(fit.dimension - 1.0) <= 0.1

    def test_identical_points_have_dimension_zero(self):
        pts = np.zeros((2000, 2))
        fit = box_counting_dimension(pts, [1.0, 0.1, 0.01, 0.001])
        assert fit.dimension == 0.0

    def test_cantor_orbit(self):
        model = IFSModel(np.array([[1.0], [-1.0]]), gamma=1.0 / 3.0, radius=1.0)
        pts = model.sample_attractor(60_000, seed=6)
        scales = [2.0 / 3.0**k for k in range(1, 8)]
        fit = box_counting_dimension(pts, scales)
        assert abs(fit.dimension - math.log(2) / math.log(3)) <= 0.05

    def test_preconditions(self):
        pts = np.random.default_rng(0).uniform(size=(500, 2))
        with pytest.raises(ValueError):
            box_counting_dimension(pts, [1.0, 0.1, 0.01, 0.001])  # too few points
        pts = np.random.default_rng(0).uniform(size=(2000, 2))
        with pytest.raises(ValueError):
            box_counting_dimension(pts, [1.0, 0.5, 0.2, 0.1])  # under two decades
        with pytest.raises(ValueError):
            box_counting_dimension(pts, [1.0, 0.01, 0.001])  # too few scales
