"""Randomized checks of every module invariant (at least 100 examples each)."""

import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bayesfp.data import from_arrays, load_csv, schema_of, split, write_csv
from bayesfp.evidence import Evidence, EvidenceEvaluator, Model, PriorConfig, log_model_prior, pic
from bayesfp.likelihoods import (FitResult, RankDeficiencyError, cox_gradient, cox_loglik, fit_cox,
                                 fit_gaussian, fit_logistic, logistic_gradient, logistic_loglik)
from bayesfp.metrics import (CensoringModel, SelectionTruth, classification_metrics, concordance_index,
                             integrated_brier_score, regression_metrics, selection_rates)
from bayesfp.posterior import predict, renormalize
from bayesfp.search import (FP_OPERATORS, JumpParams, Population, SearchConfig, VisitLog, evolve_population,
                            feature_universe, run_mjmcmc)
from bayesfp.transforms import ALL_TRANSFORMS, Feature, Transform, apply_transform, parse_feature, required_shift

PROPS = settings(max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow])

seeds = st.integers(0, 2 ** 32 - 1)
VARS = ("x1", "x2", "x3")
single = st.builds(lambda v, t: Feature.single(v, t), st.sampled_from(VARS), st.sampled_from(ALL_TRANSFORMS))
models = st.lists(single, max_size=5, unique=True).map(Model)


def finite_diff(f, beta, h=1e-6):
    g = np.empty_like(beta)
    for k in range(len(beta)):
        e = np.zeros_like(beta)
        e[k] = h
        g[k] = (f(beta + e) - f(beta - e)) / (2 * h)
    return g


def random_gaussian(seed, n=30):
    rng = np.random.default_rng(seed)
    X = {v: rng.uniform(0.2, 4.0, n) for v in VARS}
    return from_arrays(X, X["x1"] + rng.normal(0, 1, n))


# data -----------------------------------------------------------------------

class TestDataProperties:
    @PROPS
    @given(seeds, st.integers(3, 25))
    def test_csv_round_trip_bitwise(self, tmp_path_factory, seed, n):
        rng = np.random.default_rng(seed)
        X = {"a": rng.normal(0, 1e3, n) * 10.0 ** rng.integers(-30, 30, n), "b": rng.uniform(-1, 1, n)}
        ds = from_arrays(X, rng.normal(size=n))
        path = str(tmp_path_factory.mktemp("rt") / "d.csv")
        write_csv(ds, path)
        back = load_csv(path, schema_of(ds), "y")
        for c in ds.columns:
            assert np.array_equal(back.column(c.name).values, c.values)
        assert np.array_equal(back.response.y, ds.response.y)

    @PROPS
    @given(seeds, st.integers(10, 60), st.floats(0.25, 0.75))
    def test_split_is_reproducible_partition(self, seed, n, frac):
        ds = from_arrays({"a": np.arange(n, dtype=float)}, np.zeros(n))
        tr, te = split(ds, frac, seed)
        tr2, _ = split(ds, frac, seed)
        a, b = tr.column("a").values, te.column("a").values
        assert sorted(np.concatenate([a, b])) == list(range(n))
        assert not set(a) & set(b)
        assert np.array_equal(a, tr2.column("a").values)


# transforms -----------------------------------------------------------------

class TestTransformProperties:
    @PROPS
    # values rounded to 8 decimals, the precision of real data files
    @given(arrays(float, st.integers(1, 30), elements=st.floats(-1e3, 1e3).map(lambda v: round(v, 8))),
           st.sampled_from(ALL_TRANSFORMS))
    def test_every_transform_finite_after_shift(self, x, t):
        out = apply_transform(x, t, required_shift(x))
        assert np.all(np.isfinite(out))

    @PROPS
    @given(arrays(float, st.integers(1, 30), elements=st.floats(-1e6, 1e6)))
    def test_identity(self, x):
        assert np.array_equal(apply_transform(x, Transform(1.0), 0.0), x)

    @PROPS
    @given(st.lists(single, min_size=2, max_size=3, unique=True), st.randoms())
    def test_product_order_invariant(self, feats, rnd):
        a = feats[0]
        for f in feats[1:]:
            a = a * f
        shuffled = list(feats)
        rnd.shuffle(shuffled)
        b = shuffled[0]
        for f in shuffled[1:]:
            b = b * f
        assert a == b and hash(a) == hash(b) and str(a) == str(b)
        assert parse_feature(str(a)) == a


# likelihoods ----------------------------------------------------------------

class TestLikelihoodProperties:
    @PROPS
    @given(seeds)
    def test_logistic_gradient_matches_finite_difference(self, seed):
        rng = np.random.default_rng(seed)
        X = np.column_stack([np.ones(20), rng.normal(size=(20, 2))])
        y = (rng.uniform(size=20) < 0.5).astype(float)
        beta = rng.normal(size=3)
        fd = finite_diff(lambda b: logistic_loglik(b, X, y), beta)
        assert np.allclose(logistic_gradient(beta, X, y), fd, atol=1e-5)

    @PROPS
    @given(seeds)
    def test_cox_gradient_matches_finite_difference(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(15, 2))
        times = rng.integers(1, 8, 15).astype(float)
        status = (rng.uniform(size=15) < 0.7).astype(float)
        status[0] = 1.0
        beta = rng.normal(size=2)
        fd = finite_diff(lambda b: cox_loglik(b, X, times, status), beta)
        assert np.allclose(cox_gradient(beta, X, times, status), fd, atol=1e-5)

    @PROPS
    @given(seeds)
    def test_score_vanishes_at_optimum(self, seed):
        rng = np.random.default_rng(seed)
        X = np.column_stack([np.ones(60), rng.normal(size=60)])
        y = (rng.uniform(size=60) < 1 / (1 + np.exp(-X[:, 1]))).astype(float)
        fit = fit_logistic(X, y)
        if fit.converged:
            g = logistic_gradient(fit.coefficients, X, y)
            assert np.max(np.abs(g)) < 1e-6 * (1 + abs(fit.loglik))
        times = rng.exponential(1.0, 60)
        status = (rng.uniform(size=60) < 0.8).astype(float)
        cfit = fit_cox(X[:, 1:], times, status)
        if cfit.converged:
            g = cox_gradient(cfit.coefficients, X[:, 1:], times, status)
            assert np.max(np.abs(g)) < 1e-6 * (1 + abs(cfit.loglik))

    @PROPS
    @given(seeds, st.integers(8, 40))
    def test_gaussian_closed_form(self, seed, n):
        rng = np.random.default_rng(seed)
        X = np.column_stack([np.ones(n), rng.normal(size=(n, 2))])
        y = rng.normal(size=n)
        beta = np.linalg.solve(X.T @ X, X.T @ y)
        rss = float(np.sum((y - X @ beta) ** 2))
        closed = -0.5 * n * (math.log(2 * math.pi) + math.log(rss / n) + 1)
        assert fit_gaussian(X, y).loglik == pytest.approx(closed, rel=1e-12, abs=1e-10)

    @PROPS
    @given(seeds)
    def test_zero_column_rejected(self, seed):
        rng = np.random.default_rng(seed)
        X = np.column_stack([np.ones(12), rng.normal(size=12), np.zeros(12)])
        with pytest.raises(RankDeficiencyError):
            fit_gaussian(X, rng.normal(size=12))


# evidence -------------------------------------------------------------------

class TestEvidenceProperties:
    @PROPS
    @given(models, single, st.integers(2, 10 ** 6))
    def test_prior_monotone(self, m, f, n):
        if f in m.features:
            return
        cfg = PriorConfig(q=100, d=100)
        bigger = Model(m.features + (f,))
        assert log_model_prior(bigger, cfg, n) < log_model_prior(m, cfg, n)

    @PROPS
    @given(seeds, st.lists(models, min_size=2, max_size=6))
    def test_pic_posterior_duality(self, seed, ms):
        ds = random_gaussian(seed)
        cfg = PriorConfig()
        ev = EvidenceEvaluator(ds, cfg)
        scored = [(m, ev.evaluate(m)) for m in ms]
        scored = [(m, e) for m, e in scored if math.isfinite(e.log_posterior)]
        if not scored:
            return
        for m, e in scored:
            assert pic(e.fit, m, cfg, ds.n) == pytest.approx(-2 * e.log_posterior, rel=1e-12)
        best_pic = min(scored, key=lambda me: pic(me[1].fit, me[0], cfg, ds.n))
        best_lp = max(scored, key=lambda me: me[1].log_posterior)
        assert best_pic[1].log_posterior == best_lp[1].log_posterior


# search ---------------------------------------------------------------------

def random_log(seed, k):
    rng = np.random.default_rng(seed)
    feats = [Feature.single(v, t) for v in VARS for t in ALL_TRANSFORMS[:4]]
    log = VisitLog()
    for _ in range(k):
        m = Model(feats[i] for i in rng.choice(len(feats), rng.integers(0, 4), replace=False))
        # evidence is a pure function of the model, as in a real run
        lp = -float(sum(abs(hash(str(f))) % 97 for f in m.features)) / 10
        log.add(m, Evidence(0.0, lp, None))
    return log


class TestSearchProperties:
    @PROPS
    @given(seeds, seeds, seeds)
    def test_merge_idempotent_and_order_invariant(self, a, b, c):
        la, lb, lc = random_log(a, 8), random_log(b, 8), random_log(c, 8)
        abc = VisitLog.union([la, lb, lc])
        cba = VisitLog.union([lc, lb, la])
        assert set(abc.entries) == set(cba.entries)
        wa = dict((m.signature, w) for m, w in renormalize(abc).models)
        wb = dict((m.signature, w) for m, w in renormalize(cba).models)
        assert wa.keys() == wb.keys() and all(wa[k] == pytest.approx(wb[k], abs=1e-15) for k in wa)
        assert set(VisitLog.union([abc, abc]).entries) == set(abc.entries)
        assert len(VisitLog().merge(la).merge(lb)) >= len(la)

    @PROPS
    @given(seeds, st.integers(1, 30), st.floats(0.0, 1.0))
    def test_run_is_deterministic(self, seed, n_iter, rho):
        ds = random_gaussian(seed % 50)
        ev = EvidenceEvaluator(ds, PriorConfig())
        pop = Population([parse_feature(t) for t in ("x1", "log(x2)", "x3^(2)", "x1^(-1)")])
        a, sa, _ = run_mjmcmc(pop, ev.evaluate, n_iter, JumpParams(rho), rng=np.random.default_rng(seed))
        b, sb, _ = run_mjmcmc(pop, ev.evaluate, n_iter, JumpParams(rho), rng=np.random.default_rng(seed))
        assert list(a.entries) == list(b.entries) and sa == sb
        assert all(e.log_prior > -math.inf for _, e in a.items())

    @PROPS
    @given(seeds, arrays(float, 6, elements=st.floats(0.0, 1.0)), st.integers(0, 5))
    def test_evolution_keeps_pins_and_order_one(self, seed, weights, pin_idx):
        ds = random_gaussian(0)
        cfg = SearchConfig()
        uni = feature_universe(ds, cfg)
        rng = np.random.default_rng(seed)
        pop = Population([uni[int(i)] for i in rng.choice(len(uni), 6, replace=False)])
        pin = pop.features[pin_idx]
        new, keep = evolve_population(pop, weights, uni, FP_OPERATORS, cfg.prior, rng, pinned=[pin])
        assert pin in new.features
        assert all(f.order == 1 for f in new.features)
        assert len(set(new.features)) == len(new.features) == 6
        assert all(new.features[i] == pop.features[i] for i in keep)


# posterior ------------------------------------------------------------------

class TestPosteriorProperties:
    @PROPS
    @given(arrays(float, st.integers(1, 12), elements=st.floats(-1e4, 1e4)), st.floats(-1e6, 1e6))
    def test_weights_normalized_and_shift_invariant(self, lps, c):
        feats = [parse_feature(f"x{i}") for i in range(len(lps))]
        items = [(Model([f]), Evidence(0.0, float(v), None)) for f, v in zip(feats, lps)]
        shifted = [(m, Evidence(0.0, e.log_marglik + c, None)) for m, e in items]
        a, b = renormalize(items), renormalize(shifted)
        assert sum(w for _, w in a.models) == pytest.approx(1.0, abs=1e-12)
        for m, w in a.models:
            assert b.weight_of(m) == pytest.approx(w, abs=1e-9)
        assert all(0.0 <= p <= 1.0 for p in a.inclusion.values())

    @PROPS
    @given(seeds, st.floats(0.05, 0.95))
    def test_prediction_linear_under_duplication(self, seed, split_at):
        rng = np.random.default_rng(seed)
        new = from_arrays({"x1": rng.uniform(0.5, 2, 5), "x2": rng.uniform(0.5, 2, 5)}, np.zeros(5))
        fa = FitResult(rng.normal(size=2), 1.0, 0.0, 1, True, 0, "gaussian")
        fb = FitResult(rng.normal(size=2), 1.0, 0.0, 1, True, 0, "gaussian")
        ma, mb = Model([parse_feature("x1")]), Model([parse_feature("log(x2)")])
        base = renormalize([(ma, Evidence(0.0, 0.0, fa)), (mb, Evidence(0.0, -0.7, fb))])
        # same models, with ma's mass split across two entries
        dup = renormalize([(ma, Evidence(0.0, 0.0, fa)), (mb, Evidence(0.0, -0.7, fb))])
        wa = dup.weight_of(ma)
        dup.models = [(ma, wa * split_at), (ma, wa * (1 - split_at)), (mb, dup.weight_of(mb))]
        assert np.allclose(predict(base, new), predict(dup, new), atol=1e-12)

    @PROPS
    @given(seeds)
    def test_bernoulli_probabilities_in_unit_interval(self, seed):
        rng = np.random.default_rng(seed)
        new = from_arrays({"x1": rng.normal(0, 50, 8)}, np.zeros(8))
        items = []
        for k in range(3):
            fit = FitResult(rng.normal(0, 20, 2), 1.0, 0.0, 1, True, 0, "bernoulli")
            items.append((Model([parse_feature("x1")] if k else []),
                          Evidence(0.0, float(rng.normal()), fit if k else
                                   FitResult(rng.normal(0, 20, 1), 1.0, 0.0, 0, True, 0, "bernoulli"))))
        p = predict(renormalize(items[:1] + items[1:2]), new, family="bernoulli")
        assert np.all((p >= 0) & (p <= 1))


# metrics --------------------------------------------------------------------

class TestMetricProperties:
    @PROPS
    @given(st.lists(single, max_size=6, unique=True), st.lists(single, min_size=1, max_size=6, unique=True))
    def test_selection_levels(self, selected, truth_feats):
        truth = SelectionTruth(truth_feats)
        tf, ff = selection_rates(selected, truth, "functional")
        tv, fv = selection_rates(selected, truth, "variable")
        assert tv >= tf
        assert all(0.0 <= v <= 1.0 for v in (tf, ff, tv, fv))

    @PROPS
    @given(seeds, st.integers(2, 30))
    def test_classification_in_range(self, seed, n):
        rng = np.random.default_rng(seed)
        y = rng.integers(0, 2, n)
        y[:2] = [0, 1]
        acc, fnr, fpr = classification_metrics(rng.integers(0, 2, n), y)
        assert all(0.0 <= v <= 1.0 for v in (acc, fnr, fpr))
        rmse, mae, _ = regression_metrics(rng.normal(size=n), rng.normal(size=n))
        assert rmse >= mae >= 0

    @PROPS
    @given(seeds, st.integers(4, 25), st.sampled_from(["exp", "cube", "affine", "arctan"]))
    def test_cindex_monotone_invariant_and_bounded(self, seed, n, kind):
        rng = np.random.default_rng(seed)
        times = rng.integers(1, 10, n).astype(float)
        status = (rng.uniform(size=n) < 0.7).astype(float)
        status[np.argmin(times)] = 1.0
        if not np.any(times > times.min()):
            times[0] = times.min() + 1
        lp = np.round(rng.normal(size=n), 1)
        g = CensoringModel(times, status)
        f = {"exp": np.exp, "cube": lambda v: v ** 3, "affine": lambda v: 3 * v - 2, "arctan": np.arctan}[kind]
        try:
            c = concordance_index(lp, times, status, g)
        except ValueError:
            return
        assert 0.0 <= c <= 1.0
        assert concordance_index(f(lp), times, status, g) == pytest.approx(c, abs=1e-12)

    @PROPS
    @given(seeds, st.integers(3, 20))
    def test_ibs_nonnegative(self, seed, n):
        rng = np.random.default_rng(seed)
        times = rng.uniform(0.5, 10, n)
        status = (rng.uniform(size=n) < 0.7).astype(float)
        grid = np.linspace(0, times.max(), 7)
        surv = np.sort(rng.uniform(size=(n, 7)), axis=1)[:, ::-1]
        assert integrated_brier_score(surv, times, status, CensoringModel(times, status), grid) >= 0.0
