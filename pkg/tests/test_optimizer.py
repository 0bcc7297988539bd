import numpy as np
import pytest

from parmis import optimizer as opt
from parmis import socsim
from parmis.errors import InputError
from parmis.pareto import dominated_hypervolume, pareto_front, reference_point


def zdt_like(theta):
    u, v = (np.asarray(theta) + 1) / 2
    g = 1 + 9 * v
    return np.array([u, g * (1 - np.sqrt(u / g))])


def branin_currin(theta):
    x1, x2 = (np.asarray(theta) + 1) / 2
    a, b = 15 * x1 - 5, 15 * x2
    branin = (b - 5.1 / (4 * np.pi**2) * a**2 + 5 / np.pi * a - 6) ** 2 + 10 * (1 - 1 / (8 * np.pi)) * np.cos(a) + 10
    x2 = max(x2, 1e-12)
    currin = (1 - np.exp(-1 / (2 * x2))) * (2300 * x1**3 + 1900 * x1**2 + 2092 * x1 + 60) / (
        100 * x1**3 + 500 * x1**2 + 4 * x1 + 20
    )
    return np.array([branin, currin])


def concave(theta):
    # true front f2 = 1 - f1^2 at v = 0: no interior point minimizes any weighted sum
    u, v = (np.asarray(theta) + 1) / 2
    return np.array([u, (1 - u**2) + 2 * v])


FAST = dict(front_population=20, front_generations=15, candidate_budget=256, polish_steps=10)


def small_cfg(**kw):
    return opt.ParmisConfig(**{**FAST, "round_float32": False, **kw})


def replay_front_ok(rec):
    ok = rec.successful
    expected = pareto_front(rec.values[ok], ids=ok.tolist())
    return expected.member_ids == rec.front.member_ids and np.array_equal(expected.points, rec.front.points)


class TestParmis:
    def test_init_only(self):
        rec = opt.run_parmis(zdt_like, 2, small_cfg(max_iters=0, seed=1))
        assert rec.n_evals == 10 and set(rec.phases) == {"init"}
        assert replay_front_ok(rec)
        assert rec.phv[-1] == pytest.approx(dominated_hypervolume(rec.front.points, rec.reference))

    def test_deterministic(self):
        a = opt.run_parmis(zdt_like, 2, small_cfg(max_iters=8, seed=3))
        b = opt.run_parmis(zdt_like, 2, small_cfg(max_iters=8, seed=3))
        assert a.same_result(b)

    def test_curve_non_decreasing_and_replay(self):
        rec = opt.run_parmis(zdt_like, 2, small_cfg(max_iters=20, seed=0))
        assert np.all(np.diff(rec.phv) >= 0)
        assert replay_front_ok(rec)
        np.testing.assert_array_equal(rec.phv, rec.phv_curve(rec.reference))

    def test_beats_random_on_toy(self):
        wins = 0
        for seed in range(5):
            p = opt.run_parmis(branin_currin, 2, small_cfg(max_iters=50, seed=seed, stop_on_convergence=False))
            r = opt.run_random_search(branin_currin, 2, 60, seed=seed, round_float32=False)
            assert p.n_evals == r.n_evals == 60
            ref = reference_point(p.front.points, r.front.points)
            wins += p.final_phv(ref) >= r.final_phv(ref)
        assert wins >= 4

    def test_float32_rounding(self):
        rec = opt.run_parmis(zdt_like, 2, opt.ParmisConfig(**FAST, max_iters=3))
        assert np.array_equal(rec.thetas, rec.thetas.astype(np.float32).astype(float))

    def test_convergence_stop(self):
        rec = opt.run_parmis(lambda t: np.array([1.0, 2.0]), 2,
                             small_cfg(max_iters=40, convergence_window=5, seed=0))
        assert rec.stop_reason == "converged" and rec.n_evals == 10 + 5
        assert rec.converged_at == rec.n_evals

    def test_failures_quarantined(self):
        def flaky(theta):
            if theta[0] > 0.5:
                raise RuntimeError("sensor dropout")
            return zdt_like(theta)

        rec = opt.run_parmis(flaky, 2, small_cfg(max_iters=15, seed=2))
        bad = np.flatnonzero(rec.failed)
        assert np.all(np.isnan(rec.values[bad]))
        assert all(rec.thetas[i][0] > 0.5 for i in bad)
        assert replay_front_ok(rec)
        assert rec.n_evals == 25

    def test_abort_after_consecutive_failures(self):
        calls = []

        def broken(theta):
            calls.append(1)
            if len(calls) > 10:
                return np.array([np.nan, 1.0])
            return zdt_like(theta)

        with pytest.raises(opt.OptimizationAborted, match="10 consecutive") as info:
            opt.run_parmis(broken, 2, small_cfg(max_iters=30, seed=0))
        assert info.value.record is not None and info.value.record.n_evals == 20

    @pytest.mark.parametrize("kw", [dict(init_samples=1), dict(max_iters=-1), dict(front_population=5)])
    def test_config_validated(self, kw):
        with pytest.raises(InputError):
            opt.ParmisConfig(**kw)


class TestRandom:
    def test_budget_one(self):
        rec = opt.run_random_search(zdt_like, 2, 1, seed=0)
        assert len(rec.front) == 1

    def test_larger_budget_never_lowers_phv(self):
        small = opt.run_random_search(zdt_like, 2, 20, seed=4)
        large = opt.run_random_search(zdt_like, 2, 40, seed=4)
        np.testing.assert_array_equal(small.thetas, large.thetas[:20])
        ref = reference_point(small.front.points, large.front.points)
        assert large.final_phv(ref) >= small.final_phv(ref)

    def test_replay(self):
        rec = opt.run_random_search(zdt_like, 2, 50, seed=9)
        assert replay_front_ok(rec) and np.all(np.diff(rec.phv) >= 0)


class TestScalarized:
    def test_axis_weights_find_extremes(self):
        rec = opt.run_scalarized(zdt_like, 2, [(1, 0), (0, 1)], 25, seed=0, config=small_cfg())
        assert rec.values[:, 0].min() < 0.02
        # second objective is minimized at u = 1, v = 0 where it equals 0
        assert rec.values[:, 1].min() < 0.05

    def test_misses_concave_region_that_parmis_finds(self):
        weights, per_weight = opt.simplex_grid(5), 20

        def incumbents(rec):
            # best weighted-sum point of each weight's own segment, normalized as the run does
            out = []
            for i, w in enumerate(weights):
                seg = rec.values[i * per_weight:(i + 1) * per_weight]
                lo, hi = seg[:10].min(0), seg[:10].max(0)
                out.append(seg[np.argmin((seg - lo) / np.where(hi > lo, hi - lo, 1.0) @ w)])
            return np.array(out)

        def interior_on_front(pts):
            mid = pts[(pts[:, 0] > 0.25) & (pts[:, 0] < 0.75)]
            return int(np.sum(mid[:, 1] - (1 - mid[:, 0] ** 2) < 0.02))

        found = 0
        for seed in range(5):
            s = opt.run_scalarized(concave, 2, weights, per_weight, seed=seed, config=small_cfg())
            p = opt.run_parmis(concave, 2, small_cfg(max_iters=90, seed=seed, stop_on_convergence=False))
            assert s.n_evals == p.n_evals == 100
            assert interior_on_front(incumbents(s)) == 0
            found += interior_on_front(p.front.points) > 0
        assert found >= 4

    def test_deterministic(self):
        a = opt.run_scalarized(zdt_like, 2, opt.simplex_grid(3), 14, seed=1, config=small_cfg())
        b = opt.run_scalarized(zdt_like, 2, opt.simplex_grid(3), 14, seed=1, config=small_cfg())
        assert a.same_result(b) and a.n_evals == 42 and replay_front_ok(a)

    @pytest.mark.parametrize("weights", [[(1, 0)], [(0.5, 0.6), (1, 0)], [(-0.5, 1.5), (1, 0)]])
    def test_weights_validated(self, weights):
        with pytest.raises(InputError):
            opt.run_scalarized(zdt_like, 2, weights, 12)


def test_expected_improvement_matches_closed_form():
    ei = opt.expected_improvement(np.array([0.0, 1.0]), np.array([1.0, 0.0]), best=0.0)
    assert ei[0] == pytest.approx(1 / np.sqrt(2 * np.pi))
    assert ei[1] == 0.0


class TestNsga2Direct:
    def test_accounting_and_replay(self):
        rec = opt.run_nsga2_direct(zdt_like, 2, 20, 5, seed=0)
        assert rec.n_evals == 120
        assert replay_front_ok(rec) and np.all(np.diff(rec.phv) >= 0)

    def test_deterministic(self):
        a = opt.run_nsga2_direct(zdt_like, 2, 8, 3, seed=2)
        b = opt.run_nsga2_direct(zdt_like, 2, 8, 3, seed=2)
        assert a.same_result(b)


class TestSocsimGlue:
    def test_governor_points(self):
        pts = dict(opt.governor_points(socsim.load_suite()))
        assert list(pts) == ["ondemand", "interactive", "performance", "powersave"]
        assert min(pts, key=lambda n: pts[n][0]) == "performance"

    def test_objective_closure(self):
        apps = [socsim.load_workload("sha")]
        f = opt.socsim_objective(apps, ("ppw", "time"))
        theta = np.zeros(1073)
        np.testing.assert_array_equal(f(theta), socsim.evaluate(theta, apps, ("ppw", "time")))

    def test_short_parmis_on_simulator(self):
        f = opt.socsim_objective([socsim.load_workload("qsort")])
        rec = opt.run_parmis(f, 1073, opt.ParmisConfig(**FAST, max_iters=5, seed=0))
        assert rec.n_evals == 15 and replay_front_ok(rec)


class TestCopulaWarp:
    def test_monotone_per_column(self):
        y = np.random.default_rng(0).lognormal(size=(40, 2))
        z = opt.copula_warp(y)
        for j in range(2):
            order = np.argsort(y[:, j])
            assert np.all(np.diff(z[order, j]) > 0)

    def test_front_unchanged(self):
        y = np.random.default_rng(1).lognormal(size=(60, 2))
        assert pareto_front(y).member_ids == pareto_front(opt.copula_warp(y)).member_ids

    def test_ties_share_score_and_scores_symmetric(self):
        z = opt.copula_warp(np.array([[1.0], [1.0], [5.0], [7.0]]))
        assert z[0, 0] == z[1, 0]
        np.testing.assert_allclose(opt.copula_warp(np.arange(5.0)[:, None]).sum(), 0.0, atol=1e-12)


class TestTrustRegion:
    def test_contributions_match_leave_one_out_boxes(self):
        pts = np.array([[1.0, 3.0], [2.0, 2.0], [3.0, 1.0]])
        # exclusive boxes under reference (4, 4): each point owns a 1 x 1 square
        np.testing.assert_allclose(opt.hv_contributions(pts, np.array([4.0, 4.0])), [1.0, 1.0, 1.0])

    def test_center_is_largest_contributor(self):
        x = np.array([[0.0, 0.0], [0.5, 0.5], [-0.5, -0.5]])
        y = np.array([[1.0, 3.0], [1.5, 1.5], [3.0, 1.0]])
        tr = opt._TrustRegion(opt.ParmisConfig(tr_length_init=0.1))
        b = tr.bounds(x, y, np.array([4.0, 4.0]), opt._box(2, 1.0))
        np.testing.assert_allclose(b.mean(axis=1), [0.5, 0.5])
        np.testing.assert_allclose(b[:, 1] - b[:, 0], 0.2)

    def test_box_clipped_to_domain(self):
        tr = opt._TrustRegion(opt.ParmisConfig(tr_length_init=0.5))
        b = tr.bounds(np.array([[1.0, -1.0]]), np.array([[1.0, 1.0]]), np.array([2.0, 2.0]), opt._box(2, 1.0))
        np.testing.assert_allclose(b, [[0.5, 1.0], [-1.0, -0.5]])

    def test_length_schedule(self):
        cfg = opt.ParmisConfig(tr_length_init=0.2, tr_length_min=0.05, tr_success_tol=2, tr_failure_tol=3)
        tr = opt._TrustRegion(cfg)
        for _ in range(2):
            tr.update(True)
        assert tr.length == 0.4
        lengths = []
        for _ in range(12):
            tr.update(False)
            lengths.append(tr.length)
        # halves every third miss, restarts once below the minimum
        assert lengths[2::3] == [0.2, 0.1, 0.05, 0.2]
        assert lengths[:2] == [0.4, 0.4]

    def test_length_capped_at_full_box(self):
        tr = opt._TrustRegion(opt.ParmisConfig(tr_length_init=0.8, tr_success_tol=1))
        for _ in range(3):
            tr.update(True)
        assert tr.length == 1.0

    def test_auto_switch(self):
        cfg = opt.ParmisConfig()
        assert not cfg.uses_trust_region(2) and cfg.uses_trust_region(1073)
        assert opt.ParmisConfig(trust_region="on").uses_trust_region(2)

    def test_forced_on_toy_stays_in_box_and_replays(self):
        rec = opt.run_parmis(branin_currin, 2, small_cfg(max_iters=15, seed=0, trust_region="on"))
        assert np.all(np.abs(rec.thetas) <= 1.0) and replay_front_ok(rec)
        assert np.all(np.diff(rec.phv) >= 0)

    @pytest.mark.parametrize("kw", [dict(trust_region="maybe"), dict(tr_length_init=0.0),
                                    dict(tr_length_min=0.5, tr_length_init=0.2), dict(output_warping="log")])
    def test_config_validated(self, kw):
        with pytest.raises(InputError):
            opt.ParmisConfig(**kw)
