import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recourse_mi.data import SyntheticSpec, generate_synthetic, standardize
from recourse_mi.nn import (
    DimensionMismatchError,
    TrainConfig,
    predict_proba,
    train_vae,
)
from recourse_mi.recourse import (
    CostFn,
    RecoursePreconditionError,
    ScfeParams,
    SearchParams,
    cchvae,
    cost,
    growing_spheres,
    scfe,
    uniform_l1_ball_sample,
)

from conftest import make_logistic
from reference import grid_cheapest_valid_logistic


class TestCost:
    def test_identity_is_zero(self):
        x = np.array([1.0, -2.0, 3.0])
        assert cost(x, x, CostFn("l1")) == 0.0
        assert cost(x, x, CostFn("l2")) == 0.0

    def test_unit_square_corner(self):
        x, xp = np.zeros(2), np.ones(2)
        assert cost(x, xp, CostFn("l1")) == 2.0
        assert cost(x, xp, CostFn("l2")) == pytest.approx(np.sqrt(2.0), abs=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            cost(np.zeros(2), np.zeros(3), CostFn("l1"))

    def test_bad_norm_rejected(self):
        with pytest.raises(ValueError):
            CostFn("linf")

    @given(st.integers(1, 10), st.integers(0, 2**31))
    @settings(max_examples=50, deadline=None)
    def test_norm_inequalities(self, d, seed):
        rng = np.random.default_rng(seed)
        x, xp = rng.normal(size=d), rng.normal(size=d)
        l1 = cost(x, xp, CostFn("l1"))
        l2 = cost(x, xp, CostFn("l2"))
        assert l2 <= l1 + 1e-12
        assert l1 <= np.sqrt(d) * l2 + 1e-12

    @given(st.integers(1, 6), st.integers(0, 2**31))
    @settings(max_examples=50, deadline=None)
    def test_symmetry_and_triangle(self, d, seed):
        rng = np.random.default_rng(seed)
        x, y, z = rng.normal(size=(3, d))
        for fn in (CostFn("l1"), CostFn("l2")):
            assert cost(x, y, fn) == cost(y, x, fn)
            assert cost(x, z, fn) <= cost(x, y, fn) + cost(y, z, fn) + 1e-12


class TestUniformL1Ball:
    def test_all_points_inside(self):
        for d in (1, 2, 5, 20):
            pts = uniform_l1_ball_sample(np.zeros(d), 0.7, 2000, seed=d)
            norms = np.abs(pts).sum(axis=1)
            # exact at the math level; allow float-roundoff headroom
            assert norms.max() <= 0.7 * (1 + 1e-9)

    def test_inside_with_offset_center(self):
        center = np.array([3.0, -2.0, 11.0])
        pts = uniform_l1_ball_sample(center, 0.5, 5000, seed=4)
        norms = np.abs(pts - center).sum(axis=1)
        assert norms.max() <= 0.5 * (1 + 1e-9)

    def test_1d_mean_distance(self):
        # 1-d l1 ball is the interval [c-r, c+r]; E|p-c| = r/2
        pts = uniform_l1_ball_sample(np.array([2.0]), 1.0, 100_000, seed=7)
        mean_dist = np.abs(pts[:, 0] - 2.0).mean()
        assert mean_dist == pytest.approx(0.5, rel=0.01)

    def test_2d_volume_scaling(self):
        # P(||p|| <= r/2) = (1/2)^d = 1/4 in two dimensions
        pts = uniform_l1_ball_sample(np.zeros(2), 1.0, 100_000, seed=8)
        frac = np.mean(np.abs(pts).sum(axis=1) <= 0.5)
        assert frac == pytest.approx(0.25, abs=0.02)

    def test_deterministic(self):
        a = uniform_l1_ball_sample(np.zeros(3), 1.0, 50, seed=5)
        b = uniform_l1_ball_sample(np.zeros(3), 1.0, 50, seed=5)
        assert np.array_equal(a, b)

    def test_rejects_nonpositive_radius(self):
        with pytest.raises(ValueError):
            uniform_l1_ball_sample(np.zeros(2), 0.0, 10, seed=0)


class TestScfe:
    def test_precondition(self):
        m = make_logistic([1.0], 0.0)
        with pytest.raises(RecoursePreconditionError):
            scfe(m, np.array([5.0]), ScfeParams(), CostFn("l1"))

    def test_matches_grid_oracle_on_shifted_halfspace(self):
        # theta=(1,0), b=-2: boundary at x1=2; from the origin the optimal
        # counterfactual sits just past (2, 0).
        m = make_logistic([1.0, 0.0], -2.0)
        x = np.array([0.0, 0.0])
        res = scfe(m, x, ScfeParams(lam=0.05), CostFn("l2"))
        assert res.valid
        assert res.counterfactual[0] == pytest.approx(2.0, abs=0.2)
        assert abs(res.counterfactual[1]) < 0.2
        assert res.cost == pytest.approx(2.0, abs=0.2)

        # brute-force recourse optimum: cheapest grid point the model flips
        oracle_pt, oracle_cost = grid_cheapest_valid_logistic(
            np.array([1.0, 0.0]), -2.0, x, "l2",
            bounds=((0.0, 4.0), (-1.0, 1.0)), resolution=401)
        assert oracle_cost == pytest.approx(2.0, abs=0.02)
        assert abs(res.cost - oracle_cost) <= 0.05 * oracle_cost + 0.05

    def test_validity_when_reachable(self):
        m = make_logistic([2.0, -1.0], 0.3)
        x = np.array([-1.0, 0.5])
        assert predict_proba(m, x) < 0.5
        res = scfe(m, x, ScfeParams(), CostFn("l1"))
        assert res.valid
        assert predict_proba(m, res.counterfactual) >= 0.5
        # recomputing the cost from the stored vectors gives the stored cost
        assert res.cost == cost(x, res.counterfactual, CostFn("l1"))

    def test_deterministic(self):
        m = make_logistic([1.0, 1.0], -3.0)
        x = np.array([0.0, 0.0])
        r1 = scfe(m, x, ScfeParams(), CostFn("l1"), seed=9)
        r2 = scfe(m, x, ScfeParams(), CostFn("l1"), seed=9)
        assert np.array_equal(r1.counterfactual, r2.counterfactual)
        assert r1.cost == r2.cost and r1.trace == r2.trace

    def test_lambda_decay_on_hard_budget(self):
        # enormous lambda freezes x' at x; retries must decay it until the
        # loss term wins and a valid point appears
        m = make_logistic([1.0], -1.0)
        res = scfe(m, np.array([0.0]),
                   ScfeParams(lam=1e6, lam_decay=0.01, max_iters=300, max_retries=5),
                   CostFn("l1"))
        assert res.valid
        assert res.trace["retries_used"] >= 1

    def test_unreachable_returns_invalid(self):
        # all-zero model predicts exactly 0.5 everywhere... use a strongly
        # negative bias with zero weights: p constant < 0.5, no recourse exists
        m = make_logistic([0.0, 0.0], -3.0)
        res = scfe(m, np.array([0.0, 0.0]),
                   ScfeParams(max_iters=50, max_retries=1), CostFn("l1"))
        assert not res.valid
        assert res.cost == 0.0


class TestGrowingSpheres:
    def test_halfspace_boundary_band(self, halfspace_2d):
        x = np.array([0.0, 0.0])
        res = growing_spheres(halfspace_2d, x, SearchParams(seed=3), CostFn("l1"))
        assert res.valid
        # true boundary distance is exactly 1; sampled cost cannot beat it
        assert 1.0 <= res.cost <= 1.5
        assert res.trace["radius"] >= res.cost - 1e-12

    def test_positive_model_rejected_then_near_boundary_first_radius(self):
        m = make_logistic([0.0, 0.0], 5.0)  # positive everywhere
        with pytest.raises(RecoursePreconditionError):
            growing_spheres(m, np.array([4.0, 4.0]), SearchParams(seed=0), CostFn("l1"))
        # boundary at x1=-0.005 with the query just below it: the first
        # radius already contains a large valid region
        near = make_logistic([100.0, 0.0], 0.5)
        res = growing_spheres(near, np.array([-0.02, 0.0]),
                              SearchParams(seed=1), CostFn("l1"))
        assert res.valid and res.trace["radii_tried"] == 1

    def test_exhausted_radius_returns_invalid(self):
        m = make_logistic([1.0, 0.0], -100.0)  # boundary at x1=100
        res = growing_spheres(m, np.zeros(2),
                              SearchParams(max_radius=2.0, seed=2), CostFn("l1"))
        assert not res.valid

    def test_deterministic(self, halfspace_2d):
        x = np.array([0.0, 0.0])
        r1 = growing_spheres(halfspace_2d, x, SearchParams(seed=11), CostFn("l2"))
        r2 = growing_spheres(halfspace_2d, x, SearchParams(seed=11), CostFn("l2"))
        assert np.array_equal(r1.counterfactual, r2.counterfactual)
        assert r1.trace == r2.trace


@pytest.fixture(scope="module")
def vae_setup():
    ds = generate_synthetic(SyntheticSpec(d=8, n_per_class=300, seed=21,
                                          class_separation=2.0))
    std, _ = standardize(ds)
    vae = train_vae(std, TrainConfig(learning_rate=1e-3, epochs=300, seed=2))
    return std, vae


class TestCchvae:
    def test_counterfactual_reconstructs_from_latent(self, vae_setup):
        std, vae = vae_setup
        m = make_logistic([1.0, 0, 0, 0, 0, 0, 0, 0], -0.5)
        neg = next(x for x in std.features if predict_proba(m, x) < 0.5)
        res = cchvae(m, vae, neg, SearchParams(max_radius=20.0, seed=4), CostFn("l1"))
        assert res.valid
        z = np.array(res.trace["latent_point"])
        assert np.array_equal(vae.decode(z), res.counterfactual)
        assert predict_proba(m, res.counterfactual) >= 0.5

    def test_exhausted_radius_invalid(self, vae_setup):
        std, vae = vae_setup
        m = make_logistic([1.0, 0, 0, 0, 0, 0, 0, 0], -1e6)
        neg = std.features[0]
        res = cchvae(m, vae, neg, SearchParams(max_radius=0.5, seed=5), CostFn("l1"))
        assert not res.valid

    def test_deterministic(self, vae_setup):
        std, vae = vae_setup
        m = make_logistic([1.0, 0, 0, 0, 0, 0, 0, 0], -0.5)
        neg = next(x for x in std.features if predict_proba(m, x) < 0.5)
        r1 = cchvae(m, vae, neg, SearchParams(seed=6), CostFn("l1"))
        r2 = cchvae(m, vae, neg, SearchParams(seed=6), CostFn("l1"))
        assert np.array_equal(r1.counterfactual, r2.counterfactual)


class TestImmutableMask:
    def test_scfe_respects_mask(self):
        # boundary reachable through either coordinate; freeze the second
        m = make_logistic([1.0, 1.0], -2.0)
        x = np.array([0.0, 0.0])
        res = scfe(m, x, ScfeParams(immutable=(1,)), CostFn("l1"))
        assert res.valid
        assert res.counterfactual[1] == 0.0
        assert res.counterfactual[0] > 0.0

    def test_growing_spheres_respects_mask(self, halfspace_2d):
        x = np.array([0.0, -3.0])
        res = growing_spheres(halfspace_2d, x,
                              SearchParams(seed=4, immutable=(1,)), CostFn("l1"))
        assert res.valid
        assert res.counterfactual[1] == -3.0

    def test_cchvae_mask_pins_coordinates(self, vae_setup):
        std, vae = vae_setup
        m = make_logistic([1.0, 0, 0, 0, 0, 0, 0, 0], -0.5)
        neg = next(x for x in std.features if predict_proba(m, x) < 0.5)
        res = cchvae(m, vae, neg, SearchParams(seed=6, immutable=(3, 5)),
                     CostFn("l1"))
        if res.valid:
            assert res.counterfactual[3] == neg[3]
            assert res.counterfactual[5] == neg[5]
            # reconstruction is project(decode(z)) under a mask
            z = np.array(res.trace["latent_point"])
            rebuilt = vae.decode(z)
            rebuilt[[3, 5]] = neg[[3, 5]]
            assert np.array_equal(rebuilt, res.counterfactual)
