import numpy as np
import pytest
from scipy.stats import multivariate_normal

from radarfuse.mixture import (
    COV_EIG_FLOOR,
    DensityGrid,
    GaussianComponent,
    GaussianMixture,
    GridSpec,
    choose_components,
    cluster_moments,
    eval_on_grid,
    fit_em,
    grid_from_csv,
    grid_to_csv,
    kl_divergence,
)
from radarfuse.sensor import ClusterResult

SPEC = GridSpec(0.0, 8.0, 0.0, 8.0, 0.1)


def component(mean, cov, weight=1.0, count=0):
    return GaussianComponent(weight, np.asarray(mean, float), np.asarray(cov, float), count)


def iso_cov(s2):
    return np.eye(3) * s2


# ------------------------------------------------------ component count


def test_choose_components():
    assert choose_components(ClusterResult(np.zeros(9, int), 3), 8) == 3
    assert choose_components(ClusterResult(np.empty(0, int), 0), 8) == 0
    assert choose_components(ClusterResult(np.zeros(20, int), 12), 8) == 8


# ---------------------------------------------------------------- fit_em


def test_single_component_is_moment_matching():
    rng = np.random.default_rng(0)
    pts = rng.normal([1.0, 2.0, 0.5], [0.3, 0.2, 0.4], (500, 3))
    mix = fit_em(pts, 1, pts.mean(axis=0, keepdims=True))
    comp = mix.components[0]
    assert comp.weight == pytest.approx(1.0)
    assert np.allclose(comp.mean, pts.mean(axis=0), atol=1e-9)
    sample_cov = np.cov(pts.T, bias=True)
    floored = sample_cov.copy()  # floor is below the sample variances here
    assert np.allclose(comp.cov, floored, atol=1e-9)
    assert comp.point_count == 500


def test_two_blob_fit_matches_membership_oracle():
    # Oracle: per-blob moments computed from ground-truth membership.
    rng = np.random.default_rng(1)
    a = rng.normal([0, 0, 0], 0.1, (200, 3))
    b = rng.normal([10, 0, 0], 0.1, (200, 3))
    pts = np.concatenate([a, b])
    init = np.array([a.mean(axis=0), b.mean(axis=0)])
    mix = fit_em(pts, 2, init)
    means = sorted((c.mean[0], c) for c in mix.components)
    for (_, comp), blob in zip(means, (a, b)):
        assert np.linalg.norm(comp.mean - blob.mean(axis=0)) < 0.05
    weights = sorted(c.weight for c in mix.components)
    assert abs(weights[0] - 0.5) < 0.05 and abs(weights[1] - 0.5) < 0.05


def test_weights_sum_to_one_and_counts_close():
    rng = np.random.default_rng(2)
    for trial in range(20):
        m = int(rng.integers(1, 5))
        centers = rng.uniform(0, 8, (m, 3))
        pts = np.concatenate([rng.normal(c, 0.2, (rng.integers(20, 80), 3)) for c in centers])
        mix = fit_em(pts, m, centers)
        assert abs(sum(c.weight for c in mix.components) - 1.0) <= 1e-9
        assert sum(c.point_count for c in mix.components) == len(pts)


def test_log_likelihood_nondecreasing():
    rng = np.random.default_rng(3)
    for trial in range(50):
        m = int(rng.integers(1, 4))
        pts = rng.normal(0, 1.0, (100, 3)) + rng.uniform(-2, 2, 3)
        init = pts[rng.choice(100, m, replace=False)]
        _, trace = fit_em(pts, m, init, return_trace=True)
        diffs = np.diff(trace)
        assert np.all(diffs >= -1e-9 * np.maximum(1.0, np.abs(trace[:-1])))


def test_component_reduction_and_empty_input():
    pts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    mix = fit_em(pts, 5, np.tile(pts.mean(axis=0), (5, 1)))
    assert mix.n_components <= 2
    empty = fit_em(np.empty((0, 3)), 1, np.zeros((1, 3)))
    assert empty.is_empty() and empty.total_points == 0


def test_covariances_stay_floored_and_pd():
    rng = np.random.default_rng(4)
    # nearly coplanar points would collapse an eigenvalue without the floor
    pts = rng.normal(0, 0.5, (100, 3))
    pts[:, 2] = 0.0
    mix = fit_em(pts, 2, pts[:2])
    for comp in mix.components:
        vals = np.linalg.eigvalsh(comp.cov)
        assert vals[0] >= COV_EIG_FLOOR - 1e-12
        assert np.allclose(comp.cov, comp.cov.T)


def test_weighted_fit_with_equal_weights_matches_unweighted():
    rng = np.random.default_rng(5)
    pts = rng.normal([2, 2, 1], 0.3, (150, 3))
    init = pts[:2]
    plain = fit_em(pts, 2, init)
    weighted = fit_em(pts, 2, init, point_weights=np.full(150, 0.37))
    for a, b in zip(plain.components, weighted.components):
        assert np.allclose(a.mean, b.mean)
        assert np.allclose(a.cov, b.cov)
        assert a.weight == pytest.approx(b.weight)


def test_cluster_moments_keeps_largest():
    pts = np.concatenate(
        [np.random.default_rng(6).normal(c, 0.05, (n, 3)) for c, n in [([0, 0, 0], 30), ([5, 0, 0], 10), ([0, 5, 0], 20)]]
    )
    labels = np.array([0] * 30 + [1] * 10 + [2] * 20)
    means, covs, counts = cluster_moments(pts, labels, 3, keep=2)
    assert len(means) == 2
    assert set(counts) == {30.0, 20.0}


# ----------------------------------------------------------- eval_on_grid


def test_unimodal_peak_location():
    mix = GaussianMixture([component([3.0, 5.0, 1.0], iso_cov(0.04))], 100)
    grid = eval_on_grid(mix, SPEC)
    # the mean lies on a cell edge, so either adjacent cell may win
    assert np.all(np.abs(grid.argmax_center() - [3.0, 5.0]) <= SPEC.resolution / 2 + 1e-9)
    assert grid.mass.sum() == pytest.approx(1.0, abs=1e-9)


def test_empty_mixture_is_uniform():
    grid = eval_on_grid(GaussianMixture.empty(), SPEC)
    assert np.allclose(grid.mass, 1.0 / SPEC.n_cells)


def test_bimodal_grid_matches_density_oracle():
    # Oracle: direct density evaluation with scipy's multivariate normal.
    comps = [
        component([2.0, 2.0, 1.0], iso_cov(0.09), weight=0.5),
        component([6.0, 6.0, 1.0], iso_cov(0.09), weight=0.5),
    ]
    mix = GaussianMixture(comps, 100)
    grid = eval_on_grid(mix, SPEC)

    gx, gy = np.meshgrid(SPEC.x_centers(), SPEC.y_centers())
    cells = np.column_stack([gx.ravel(), gy.ravel()])
    dens = np.zeros(len(cells))
    for c in comps:
        dens += c.weight * multivariate_normal(c.mean[:2], c.cov[:2, :2]).pdf(cells)
    oracle = (dens / dens.sum()).reshape(SPEC.ny, SPEC.nx)
    assert np.max(np.abs(oracle - grid.mass)) < 1e-6


def test_density_integrates_to_one_on_enlarged_grid():
    rng = np.random.default_rng(7)
    pts = np.concatenate([rng.normal([3, 3, 1], 0.3, (80, 3)), rng.normal([5, 5, 1], 0.2, (80, 3))])
    mix = fit_em(pts, 2, np.array([[3, 3, 1.0], [5, 5, 1.0]]))
    big = GridSpec(-4.0, 12.0, -4.0, 12.0, 0.05)
    total = 0.0
    cells = np.column_stack([g.ravel() for g in np.meshgrid(big.x_centers(), big.y_centers())])
    for c in mix.components:
        total += c.weight * multivariate_normal(c.mean[:2], c.cov[:2, :2]).pdf(cells).sum() * big.cell_area
    assert abs(total - 1.0) < 1e-3


# ------------------------------------------------------------ divergence


def test_kl_of_identical_grids_is_zero():
    mix = GaussianMixture([component([4.0, 4.0, 1.0], iso_cov(0.25))], 10)
    p = eval_on_grid(mix, SPEC)
    assert kl_divergence(p, p) < 1e-12


def test_kl_matches_gaussian_closed_form():
    # Oracle: KL(N(0,1) || N(1,1)) = 0.5; y marginals identical, fine grid.
    spec = GridSpec(-8.0, 9.0, -8.0, 9.0, 0.1)
    sigma = np.diag([1.0, 1.0, 1.0])
    p = eval_on_grid(GaussianMixture([component([0.0, 0.0, 0.0], sigma)], 1), spec)
    q = eval_on_grid(GaussianMixture([component([1.0, 0.0, 0.0], sigma)], 1), spec)
    assert kl_divergence(p, q) == pytest.approx(0.5, rel=0.01)


def test_disjoint_supports_stay_finite():
    spec = GridSpec(0.0, 8.0, 0.0, 8.0, 0.2)
    p = DensityGrid(spec, np.zeros((spec.ny, spec.nx)))
    q = DensityGrid(spec, np.zeros((spec.ny, spec.nx)))
    p.mass[0, 0] = 1.0
    q.mass[-1, -1] = 1.0
    d = kl_divergence(p, q, floor=1e-12)
    assert np.isfinite(d) and d > 10.0


def test_kl_nonnegative_on_random_grids():
    rng = np.random.default_rng(8)
    spec = GridSpec(0.0, 2.0, 0.0, 2.0, 0.1)
    for _ in range(50):
        p = DensityGrid(spec, rng.random((spec.ny, spec.nx))).normalized()
        q = DensityGrid(spec, rng.random((spec.ny, spec.nx))).normalized()
        assert kl_divergence(p, q) >= 0.0


def test_mismatched_grids_raise():
    p = DensityGrid.uniform(SPEC)
    q = DensityGrid.uniform(GridSpec(0.0, 8.0, 0.0, 8.0, 0.2))
    with pytest.raises(ValueError):
        kl_divergence(p, q)


# ------------------------------------------------------------------ csv


def test_grid_csv_round_trip(tmp_path):
    mix = GaussianMixture([component([2.5, 3.5, 1.0], iso_cov(0.2))], 5)
    grid = eval_on_grid(mix, SPEC)
    path = tmp_path / "grid.csv"
    grid_to_csv(grid, path)
    back = grid_from_csv(path)
    assert back.spec == grid.spec
    assert np.array_equal(back.mass, grid.mass)
