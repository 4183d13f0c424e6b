"""SGD engine: step semantics, trajectory determinism, coupled contraction."""

import csv
import math

import numpy as np
import pytest

from sgdcover.core import Ball, ProductOfBalls, WholeSpace
from sgdcover.losses import (
    Dataset,
    LossConstants,
    LossFamily,
    hard_kmeans,
    multi_index,
    quadratic_centers,
    zero_link,
)
from sgdcover.sgd import (
    CustomMap,
    SGDConfig,
    SGDStep,
    contraction_factor,
    coupled_contraction_ratio,
    draw_indices,
    run_trajectory,
    sgd_step,
)

CENTERS = [np.array([0.6, -0.2]), np.array([-0.5, 0.5]), np.array([0.1, 0.7])]


def quadratic_setup(eta, domain=None, project=True):
    fam = quadratic_centers(CENTERS, R=1.0)
    ds = Dataset(tuple(CENTERS))
    update = SGDStep(fam, eta, domain=domain, project=project)
    return fam, ds, update


class TestSgdStep:
    def test_full_step_reaches_minimizer(self):
        _, ds, update = quadratic_setup(eta=1.0)
        out = sgd_step(update, np.array([0.9, 0.1]), 1, ds)
        np.testing.assert_allclose(out, CENTERS[1], rtol=1e-15)

    def test_zero_step_is_identity(self):
        _, ds, update = quadratic_setup(eta=0.0)
        theta = np.array([0.3, -0.3])
        np.testing.assert_array_equal(sgd_step(update, theta, 0, ds), theta)

    def test_half_step_by_hand(self):
        fam = quadratic_centers([[0.0]], R=1.0)
        ds = Dataset((np.array([0.0]),))
        update = SGDStep(fam, 0.5, domain=Ball(np.zeros(1), 2.0))
        np.testing.assert_array_equal(sgd_step(update, np.array([1.0]), 0, ds), [0.5])

    def test_index_out_of_range(self):
        _, ds, update = quadratic_setup(eta=0.5)
        with pytest.raises(IndexError):
            sgd_step(update, np.array([0.0, 0.0]), 3, ds)

    def test_non_finite_gradient_rejected(self):
        bad = LossFamily(
            name="bad", constants=LossConstants(), sample_space="unit",
            value=lambda t, z: 0.0, grad=lambda t, z: np.array([np.inf]), dim=1,
        )
        update = SGDStep(bad, 0.1, domain=WholeSpace(1), project=False)
        with pytest.raises(FloatingPointError):
            update.apply(np.array([0.0]), None)

    def test_projection_needs_a_domain(self):
        bad = LossFamily(
            name="nodomain", constants=LossConstants(), sample_space="unit",
            value=lambda t, z: 0.0, grad=lambda t, z: np.zeros(1), dim=1,
        )
        with pytest.raises(ValueError):
            SGDStep(bad, 0.1)


class TestTrajectories:
    def test_zero_steps(self):
        _, ds, update = quadratic_setup(eta=0.5)
        config = SGDConfig(init=np.array([0.2, 0.2]), steps=0, scheme="uniform", seed=1)
        traj = run_trajectory(update, config, ds)
        assert traj.points.shape == (1, 2)
        np.testing.assert_array_equal(traj.endpoint, [0.2, 0.2])

    def test_explicit_indices_compose(self):
        _, ds, update = quadratic_setup(eta=0.5)
        theta = np.array([0.0, 0.0])
        config = SGDConfig(init=theta, steps=3, scheme="explicit", indices=[1, 1, 1])
        traj = run_trajectory(update, config, ds)
        manual = theta
        for _ in range(3):
            manual = sgd_step(update, manual, 1, ds)
        np.testing.assert_array_equal(traj.endpoint, manual)

    def test_seed_reproducibility(self):
        _, ds, update = quadratic_setup(eta=0.5)
        config = SGDConfig(init=np.array([0.1, -0.1]), steps=40, scheme="uniform", seed=77)
        t1 = run_trajectory(update, config, ds)
        t2 = run_trajectory(update, config, ds)
        np.testing.assert_array_equal(t1.points, t2.points)
        np.testing.assert_array_equal(t1.indices, t2.indices)

    def test_realized_indices_determine_the_run(self):
        """Replaying a seeded run's indices explicitly gives the same points."""
        _, ds, update = quadratic_setup(eta=0.5)
        seeded = run_trajectory(
            update, SGDConfig(init=np.array([0.1, 0.3]), steps=25, scheme="uniform", seed=5), ds
        )
        replay = run_trajectory(
            update,
            SGDConfig(init=np.array([0.1, 0.3]), steps=25, scheme="explicit",
                      indices=seeded.indices),
            ds,
        )
        np.testing.assert_array_equal(seeded.points, replay.points)

    def test_sampling_schemes_cover_expected_index_sets(self):
        config = SGDConfig(init=np.zeros(1), steps=3, scheme="without_replacement", seed=3)
        idx = draw_indices(config, 3).ravel()
        assert sorted(idx) == sorted(set(idx))
        config = SGDConfig(init=np.zeros(1), steps=6, scheme="shuffle", seed=3)
        idx = draw_indices(config, 3).ravel()
        assert sorted(idx[:3]) == [0, 1, 2] and sorted(idx[3:]) == [0, 1, 2]
        with pytest.raises(ValueError):
            draw_indices(SGDConfig(init=np.zeros(1), steps=4,
                                   scheme="without_replacement", seed=0), 3)

    def test_domain_invariance_under_projection(self):
        _, ds, update = quadratic_setup(eta=0.5)
        config = SGDConfig(init=np.array([0.9, 0.0]), steps=60, scheme="uniform", seed=9)
        traj = run_trajectory(update, config, ds)
        dom = update.effective_domain
        assert all(dom.contains(p) for p in traj.points)

    def test_eta_mismatch_detected(self):
        _, ds, update = quadratic_setup(eta=0.5)
        config = SGDConfig(init=np.zeros(2), steps=1, eta=0.25, scheme="uniform", seed=0)
        with pytest.raises(ValueError):
            run_trajectory(update, config, ds)

    def test_invariant_domain_violation_raises(self):
        # eta = 0.9 can throw hard-clustering iterates out of the ball
        fam = hard_kmeans(K=1, R=1.0, d=1)
        ds = Dataset((np.array([-1.0]),))
        update = SGDStep(fam, 0.9, domain=WholeSpace(1), project=False)
        config = SGDConfig(init=np.array([1.0]), steps=5, scheme="uniform", seed=0)
        with pytest.raises(RuntimeError):
            run_trajectory(update, config, ds, invariant_domain=Ball(np.zeros(1), 1.0))

    def test_csv_dump(self, tmp_path):
        _, ds, update = quadratic_setup(eta=0.5)
        config = SGDConfig(init=np.array([0.1, 0.2]), steps=4, scheme="uniform", seed=2)
        traj = run_trajectory(update, config, ds)
        path = tmp_path / "traj.csv"
        traj.to_csv(path)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["step", "index", "x0", "x1"]
        assert len(rows) == 6
        np.testing.assert_allclose(
            [float(rows[-1][2]), float(rows[-1][3])], traj.endpoint, rtol=1e-15
        )


class TestContractionFactor:
    def test_closed_form_values(self):
        assert contraction_factor(1.0, 1.0, 1.0) == 0.0
        assert contraction_factor(1.0, 1.0, 0.1) == pytest.approx(0.9, abs=1e-15)
        assert contraction_factor(1.0, 2.0, 0.5) == pytest.approx(0.7071067811865476, rel=1e-15)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            contraction_factor(1.0, 1.0, 2.0)  # eta >= 2/beta
        with pytest.raises(ValueError):
            contraction_factor(2.0, 1.0, 0.1)  # alpha > beta
        with pytest.raises(ValueError):
            contraction_factor(0.0, 1.0, 0.1)


class TestCoupledContraction:
    def test_unit_quadratic_ratio_identity(self):
        """Unprojected coupling contracts at exactly |1 - eta| every step."""
        fam, ds, _ = quadratic_setup(eta=0.5)
        rng = np.random.default_rng(21)
        for eta in (0.1, 0.5, 1.5):
            update = SGDStep(fam, eta, domain=WholeSpace(2), project=False)
            g = abs(1.0 - eta)
            steps = min(20, max(1, int(math.log(0.01) / math.log(g))))
            a, b = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
            report = coupled_contraction_ratio(update, a, b, rng.integers(0, 3, steps), ds)
            np.testing.assert_allclose(report.ratios, g, atol=1e-12)

    def test_full_step_coalesces(self):
        # both points land on the sampled target up to rounding; ratios
        # after the coalescence cut are reported as exactly 0
        fam, ds, _ = quadratic_setup(eta=1.0)
        update = SGDStep(fam, 1.0, domain=Ball(np.zeros(2), 1.0))
        report = coupled_contraction_ratio(
            update, np.array([0.5, 0.0]), np.array([-0.5, 0.1]), [0, 1, 2], ds
        )
        assert report.ratios[0] <= 1e-12
        assert report.coalesced and report.coalesce_step == 1
        np.testing.assert_array_equal(report.ratios[1:], 0.0)

    def test_identical_starts_rejected(self):
        _, ds, update = quadratic_setup(eta=0.5)
        x = np.array([0.1, 0.1])
        with pytest.raises(ValueError):
            coupled_contraction_ratio(update, x, x.copy(), [0], ds)

    def test_certificate_over_family_matrix(self):
        """Projected coupled ratios never exceed the closed-form factor.

        Step sizes keep gamma >= 0.9 so that 100 coupled steps leave the
        pair distance far above the rounding-noise floor where ratios stop
        being measurable (the coalescence cut protects only below 1e-14).
        """
        rng = np.random.default_rng(22)
        matrix = []

        fam = quadratic_centers(CENTERS, R=1.0)
        matrix.append((fam, Dataset(tuple(CENTERS)), fam.domain, 0.1))

        # anisotropic quadratic with curvature between 0.5 and 2.0
        A = np.array([[2.0, 0.0], [0.0, 0.5]])
        aniso = LossFamily(
            name="aniso", constants=LossConstants(alpha=0.5, beta=2.0, R=1.0),
            sample_space="targets",
            value=lambda t, z: 0.5 * float((t - z) @ A @ (t - z)),
            grad=lambda t, z: A @ (t - z),
            dim=2, domain=Ball(np.zeros(2), 1.0),
        )
        matrix.append((aniso, Dataset(tuple(CENTERS)), aniso.domain, 0.05))

        ridge = multi_index(zero_link(2), lam=0.8, R=1.0, R_x=1.0, K=2, d=1)
        ridge_data = Dataset(((0, np.array([0.3])), (1, np.array([-0.4]))))
        matrix.append((ridge, ridge_data, ProductOfBalls(2, 1, 1.0), 0.125))

        for fam, ds, dom, eta in matrix:
            gamma = contraction_factor(fam.constants.alpha, fam.constants.beta, eta)
            assert gamma >= 0.9
            update = SGDStep(fam, eta, domain=dom, project=True)
            checked = 0
            while checked < 1000:
                a, b = dom.sample(rng), dom.sample(rng)
                if np.linalg.norm(a - b) < 0.1:
                    continue
                checked += 1
                idx = rng.integers(0, ds.n, 100)
                report = coupled_contraction_ratio(update, a, b, idx, ds)
                assert report.max_ratio <= gamma + 1e-9

    def test_minibatch_average_still_contracts(self):
        """An average of gamma-contractive maps is gamma-contractive."""
        fam, ds, _ = quadratic_setup(eta=0.7)
        dom = Ball(np.zeros(2), 1.0)
        update = SGDStep(fam, 0.7, domain=dom)
        gamma = contraction_factor(1.0, 1.0, 0.7)
        rng = np.random.default_rng(23)
        for _ in range(300):
            a, b = dom.sample(rng), dom.sample(rng)
            dist = np.linalg.norm(a - b)
            if dist < 1e-8:
                continue
            for _ in range(30):
                batch = rng.integers(0, ds.n, 4)
                a_next = np.mean([sgd_step(update, a, int(i), ds) for i in batch], axis=0)
                b_next = np.mean([sgd_step(update, b, int(i), ds) for i in batch], axis=0)
                new_dist = np.linalg.norm(a_next - b_next)
                assert new_dist <= gamma * dist + 1e-9
                a, b, dist = a_next, b_next, new_dist
                if dist < 1e-12:
                    break

    def test_batched_trajectory_runs(self):
        _, ds, update = quadratic_setup(eta=0.5)
        config = SGDConfig(init=np.zeros(2), steps=10, scheme="uniform", seed=4, batch_size=3)
        traj = run_trajectory(update, config, ds)
        assert traj.indices.shape == (10, 3)

    def test_custom_map(self):
        halver = CustomMap(lambda t, z: 0.5 * t, domain=Ball(np.zeros(1), 1.0))
        ds = Dataset((np.array([0.0]),))
        report = coupled_contraction_ratio(halver, np.array([1.0]), np.array([-1.0]), [0, 0], ds)
        np.testing.assert_allclose(report.ratios, 0.5, rtol=1e-15)
