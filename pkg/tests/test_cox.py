import math

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from predictimands import cox
from predictimands.data import (
    CountingProcessDataset,
    CovariateSchema,
    Episode,
    Status,
    SubjectRecord,
)
from predictimands.errors import MonotoneLikelihood, NoEvents, ProfileIncomplete
from tests.conftest import one_episode_subject

SQRT2 = math.sqrt(2.0)


def d1_hand_loglik(beta):
    """Direct risk-set enumeration for D1: risk sets {1,2,3,4}, {2,3,4}, {4}."""
    u = math.exp(beta)
    return beta - math.log(2 * u + 2) - math.log(u + 2)


def random_dataset(rng, n_max=30, p=2, with_ties=False, multi_episode=False):
    """Small random counting-process dataset for oracle comparisons."""
    n = rng.integers(4, n_max + 1)
    subjects = []
    for i in range(n):
        baseline = {f"x{j}": float(rng.normal()) for j in range(p)}
        if with_ties:
            stop = float(rng.integers(1, 6))
        else:
            stop = float(rng.uniform(0.5, 10.0))
        status = Status.EVENT if rng.random() < 0.7 else Status.CENSORED
        if multi_episode and rng.random() < 0.5 and stop > 1.0:
            cut = float(rng.uniform(0.2, stop - 0.2))
            eps = (Episode(0.0, cut, Status.CENSORED),
                   Episode(cut, stop, status))
        else:
            eps = (Episode(0.0, stop, status),)
        subjects.append(SubjectRecord(str(i + 1), eps, baseline))
    schema = CovariateSchema(baseline=tuple(f"x{j}" for j in range(p)))
    return CountingProcessDataset(tuple(subjects), schema)


def naive_loglik(ds, spec, beta):
    """Independent slow evaluation: scan every episode for every event time."""
    beta = np.asarray(beta, float)
    rows = []
    for sub, ep in ds.iter_episodes():
        x = np.array([sub.baseline[c] if c in ds.schema.baseline else ep.tv[c]
                      for c in spec.covariates])
        rows.append((ep.tstart, ep.tstop, ep.status == spec.event_code, x, 1.0))
    times = sorted({stop for _, stop, ev, _, _ in rows if ev})
    ll = 0.0
    for t in times:
        risk = [r for r in rows if r[0] < t <= r[1]]
        dead = [r for r in risk if r[1] == t and r[2]]
        d = len(dead)
        s0 = sum(w * math.exp(x @ beta) for _, _, _, x, w in risk)
        s0d = sum(w * math.exp(x @ beta) for _, _, _, x, w in dead)
        wd = sum(w for *_, w in dead)
        ll += sum(w * (x @ beta) for _, _, _, x, w in dead)
        if spec.ties == "efron":
            ll -= (wd / d) * sum(math.log(s0 - (j / d) * s0d) for j in range(d))
        else:
            ll -= wd * math.log(s0)
    return ll


class TestD1:
    def test_loglik_at_zero(self, d1):
        spec = cox.CoxSpec(covariates=("x",))
        expected = math.log(1 / 4) + math.log(1 / 3) + math.log(1.0)
        assert cox.partial_loglik(d1, spec, [0.0]) == pytest.approx(expected, abs=1e-12)

    def test_fit_matches_grid_search_oracle(self, d1):
        spec = cox.CoxSpec(covariates=("x",))
        model = cox.fit(d1, spec)
        oracle = minimize_scalar(lambda b: -d1_hand_loglik(b),
                                 bracket=(-2.0, 0.0, 2.0), method="golden",
                                 options={"xtol": 1e-12})
        assert model.beta[0] == pytest.approx(oracle.x, abs=1e-6)
        assert model.beta[0] == pytest.approx(0.5 * math.log(2.0), abs=1e-6)
        assert model.score_norm < 1e-8

    def test_breslow_baseline_closed_form(self, d1):
        model = cox.fit(d1, cox.CoxSpec(covariates=("x",), ties="breslow"))
        h0 = cox.baseline_cumhaz(model)
        assert h0(1.0) == pytest.approx(1 / (2 * SQRT2 + 2), abs=1e-9)
        assert h0(2.0) == pytest.approx(0.5, abs=1e-9)
        assert h0(0.5) == 0.0

    def test_predict_survival_profile(self, d1):
        model = cox.fit(d1, cox.CoxSpec(covariates=("x",)))
        curve = cox.predict_survival(model, {"x": 1.0})
        expected = math.exp(-(SQRT2 - 1) / 2 * SQRT2)
        assert curve(1.0) == pytest.approx(expected, abs=1e-9)
        assert round(float(curve(1.0)), 3) == 0.746

    def test_schoenfeld_residual_at_first_event(self, d1):
        model = cox.fit(d1, cox.CoxSpec(covariates=("x",)))
        res = cox.schoenfeld_residuals(model, d1)
        u = math.exp(model.beta[0])
        expected = 1.0 - (2 * u) / (2 * u + 2)
        assert res.times[0] == 1.0
        assert res.residuals[0, 0] == pytest.approx(expected, abs=1e-10)

    def test_profile_incomplete(self, d1):
        model = cox.fit(d1, cox.CoxSpec(covariates=("x",)))
        with pytest.raises(ProfileIncomplete):
            cox.predict_survival(model, {})


class TestTies:
    def test_d2_efron_vs_breslow_increment(self, d2):
        efron = cox.fit(d2, cox.CoxSpec(ties="efron"))
        breslow = cox.fit(d2, cox.CoxSpec(ties="breslow"))
        assert efron.baseline_times[0] == 1.0
        assert efron.baseline_increments[0] == pytest.approx(5 / 6, abs=1e-12)
        assert breslow.baseline_increments[0] == pytest.approx(2 / 3, abs=1e-12)
        # third subject alone at risk at t=2 under both methods
        assert efron.baseline_increments[1] == pytest.approx(1.0, abs=1e-12)

    def test_methods_agree_without_ties(self, d1):
        efron = cox.fit(d1, cox.CoxSpec(covariates=("x",), ties="efron"))
        breslow = cox.fit(d1, cox.CoxSpec(covariates=("x",), ties="breslow"))
        assert efron.beta[0] == pytest.approx(breslow.beta[0], abs=1e-12)
        np.testing.assert_allclose(efron.baseline_increments,
                                   breslow.baseline_increments, atol=1e-14)

    def test_loglik_matches_naive_enumeration_with_ties(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            ds = random_dataset(rng, with_ties=True, multi_episode=True)
            beta = rng.normal(size=2) * 0.7
            for ties in ("efron", "breslow"):
                spec = cox.CoxSpec(covariates=("x0", "x1"), ties=ties)
                assert cox.partial_loglik(ds, spec, beta) == pytest.approx(
                    naive_loglik(ds, spec, beta), rel=1e-10)


class TestDerivatives:
    @pytest.mark.parametrize("ties", ["efron", "breslow"])
    def test_score_matches_finite_differences(self, ties):
        rng = np.random.default_rng(42)
        for _ in range(15):
            ds = random_dataset(rng, with_ties=bool(rng.random() < 0.5),
                                multi_episode=True)
            spec = cox.CoxSpec(covariates=("x0", "x1"), ties=ties)
            beta = rng.normal(size=2) * 0.5
            an = cox.score(ds, spec, beta)
            h = 1e-5
            for j in range(2):
                e = np.zeros(2)
                e[j] = h
                fd = (cox.partial_loglik(ds, spec, beta + e)
                      - cox.partial_loglik(ds, spec, beta - e)) / (2 * h)
                assert abs(fd - an[j]) <= 1e-6 * max(1.0, abs(an[j]))

    @pytest.mark.parametrize("ties", ["efron", "breslow"])
    def test_information_matches_finite_differences(self, ties):
        rng = np.random.default_rng(43)
        for _ in range(10):
            ds = random_dataset(rng, with_ties=bool(rng.random() < 0.5))
            spec = cox.CoxSpec(covariates=("x0", "x1"), ties=ties)
            beta = rng.normal(size=2) * 0.5
            an = cox.information(ds, spec, beta)
            h = 1e-5
            for j in range(2):
                e = np.zeros(2)
                e[j] = h
                fd = -(cox.score(ds, spec, beta + e)
                       - cox.score(ds, spec, beta - e)) / (2 * h)
                np.testing.assert_allclose(fd, an[:, j], rtol=1e-5, atol=1e-7)

    def test_score_vanishes_at_fit(self, d1):
        spec = cox.CoxSpec(covariates=("x",))
        model = cox.fit(d1, spec)
        assert np.abs(cox.score(d1, spec, model.beta)).max() < 1e-8


class TestFitBehavior:
    def test_all_covariates_zero_gives_null_model(self):
        subjects = tuple(one_episode_subject(str(i), float(i), Status.EVENT, x=0.0)
                         for i in range(1, 5))
        ds = CountingProcessDataset(subjects, CovariateSchema(baseline=("x",)))
        model = cox.fit(ds, cox.CoxSpec(covariates=("x",)))
        assert model.beta[0] == 0.0
        assert model.degenerate
        null = cox.fit(ds, cox.CoxSpec())
        assert model.loglik == pytest.approx(null.loglik, abs=1e-12)

    def test_monotone_likelihood_detected(self):
        subjects = (
            one_episode_subject("1", 1.0, Status.EVENT, x=1.0),
            one_episode_subject("2", 2.0, Status.EVENT, x=1.0),
            one_episode_subject("3", 3.0, Status.CENSORED, x=0.0),
            one_episode_subject("4", 4.0, Status.CENSORED, x=0.0),
        )
        ds = CountingProcessDataset(subjects, CovariateSchema(baseline=("x",)))
        with pytest.raises(MonotoneLikelihood, match="x"):
            cox.fit(ds, cox.CoxSpec(covariates=("x",)))

    def test_no_events(self):
        ds = CountingProcessDataset(
            (one_episode_subject("1", 1.0, Status.CENSORED),), CovariateSchema())
        with pytest.raises(NoEvents):
            cox.fit(ds, cox.CoxSpec())

    def test_unit_weights_equal_unweighted_exactly(self, d1):
        class Ones:
            def lookup(self, sid, t):
                return 1.0

        plain = cox.fit(d1, cox.CoxSpec(covariates=("x",)))
        weighted = cox.fit(d1, cox.CoxSpec(covariates=("x",), weights=Ones()))
        assert weighted.beta[0] == plain.beta[0]
        assert weighted.loglik == plain.loglik
        np.testing.assert_array_equal(weighted.baseline_increments,
                                      plain.baseline_increments)

    def test_covariate_shift_invariance(self, d1):
        spec = cox.CoxSpec(covariates=("x",))
        model = cox.fit(d1, spec)
        shifted_subjects = tuple(
            SubjectRecord(s.subject_id, s.episodes, {"x": s.baseline["x"] + 3.0})
            for s in d1.subjects)
        shifted = CountingProcessDataset(shifted_subjects, d1.schema)
        model2 = cox.fit(shifted, spec)
        assert model2.beta[0] == pytest.approx(model.beta[0], abs=1e-9)
        scale = math.exp(-3.0 * model.beta[0])
        np.testing.assert_allclose(model2.baseline_increments,
                                   model.baseline_increments * scale, rtol=1e-9)

    def test_null_breslow_baseline_is_nelson_aalen(self, d3):
        model = cox.fit(d3, cox.CoxSpec(ties="breslow"))
        # hand Nelson-Aalen: 1/3 at t=1, 1/1 at t=3
        np.testing.assert_allclose(model.baseline_increments, [1 / 3, 1.0],
                                   atol=1e-15)

    def test_model_json_round_trip(self, tmp_path, d1):
        model = cox.fit(d1, cox.CoxSpec(covariates=("x",)))
        path = tmp_path / "model.json"
        model.to_json(path)
        again = cox.CoxModel.from_json(path)
        np.testing.assert_array_equal(again.beta, model.beta)
        np.testing.assert_array_equal(again.baseline_increments,
                                      model.baseline_increments)
        assert again.ties == model.ties

    def test_schoenfeld_sum_zero_in_balanced_null_design(self):
        subjects = (
            one_episode_subject("1", 1.0, Status.EVENT, x=1.0),
            one_episode_subject("2", 1.0, Status.EVENT, x=-1.0),
            one_episode_subject("3", 2.0, Status.EVENT, x=1.0),
            one_episode_subject("4", 2.0, Status.EVENT, x=-1.0),
        )
        ds = CountingProcessDataset(subjects, CovariateSchema(baseline=("x",)))
        model = cox.fit(ds, cox.CoxSpec(covariates=("x",)))
        res = cox.schoenfeld_residuals(model, ds)
        # direct summation oracle: risk-set means are 0 at both event times
        assert res.residuals.sum() == pytest.approx(0.0, abs=1e-10)
        np.testing.assert_allclose(res.residuals[:, 0], [1, -1, 1, -1], atol=1e-10)


def treated_subject(sid, v, t, status, treated_after=True):
    eps = (Episode(0.0, v, Status.TREATMENT_START),
           Episode(v, t, status, treated=treated_after))
    return SubjectRecord(sid, eps, {})


class TestTreatmentTerm:
    def fit_benefit_model(self, cuts=()):
        subjects = (
            treated_subject("1", 1.0, 9.0, Status.CENSORED),
            treated_subject("2", 1.5, 10.0, Status.CENSORED),
            treated_subject("3", 2.0, 8.0, Status.EVENT),
            one_episode_subject("4", 2.0, Status.EVENT),
            one_episode_subject("5", 3.0, Status.EVENT),
            one_episode_subject("6", 4.0, Status.EVENT),
            one_episode_subject("7", 10.0, Status.CENSORED),
        )
        ds = CountingProcessDataset(subjects, CovariateSchema())
        model = cox.fit(ds, cox.CoxSpec(treatment=cox.TreatmentTerm(cuts)))
        return ds, model

    def test_protective_treatment_orders_survival(self):
        _, model = self.fit_benefit_model()
        assert model.beta[0] < 0
        s0 = cox.predict_survival(model, {}, treatment_path=lambda t: 0)
        s1 = cox.predict_survival(model, {}, treatment_path=lambda t: 1)
        assert np.all(s1.surv >= s0.surv - 1e-12)

    def test_segment_columns_match_naive_scan(self):
        ds, _ = self.fit_benefit_model()
        spec = cox.CoxSpec(treatment=cox.TreatmentTerm((3.0, 6.0)))
        beta = np.array([-0.4, 0.2, -0.1])

        def naive_with_segments(beta):
            rows = []
            for sub, ep in ds.iter_episodes():
                rows.append((ep.tstart, ep.tstop,
                             ep.status == Status.EVENT, ep.treated))
            times = sorted({stop for _, stop, ev, _ in rows if ev})
            ll = 0.0
            for t in times:
                seg = 0 if t <= 3.0 else (1 if t <= 6.0 else 2)
                risk = [r for r in rows if r[0] < t <= r[1]]
                dead = [r for r in risk if r[1] == t and r[2]]
                s0 = sum(math.exp(beta[seg] * r[3]) for r in risk)
                s0d = sum(math.exp(beta[seg] * r[3]) for r in dead)
                d = len(dead)
                ll += sum(beta[seg] * r[3] for r in dead)
                ll -= sum(math.log(s0 - (j / d) * s0d) for j in range(d))
            return ll

        assert cox.partial_loglik(ds, spec, beta) == pytest.approx(
            naive_with_segments(beta), rel=1e-10)

    def test_cuts_beyond_follow_up_rejected(self):
        ds, _ = self.fit_benefit_model()
        from predictimands.errors import DataError
        with pytest.raises(DataError, match="follow-up"):
            cox.fit(ds, cox.CoxSpec(treatment=cox.TreatmentTerm((50.0,))))

    def test_prediction_uses_segment_active_at_jump(self):
        # treated deaths on both sides of the cut keep every segment finite
        subjects = (
            treated_subject("1", 1.0, 4.0, Status.EVENT),
            treated_subject("2", 1.5, 8.0, Status.EVENT),
            treated_subject("3", 2.0, 10.0, Status.CENSORED),
            one_episode_subject("4", 2.0, Status.EVENT),
            one_episode_subject("5", 3.0, Status.EVENT),
            one_episode_subject("6", 6.0, Status.EVENT),
            one_episode_subject("7", 10.0, Status.CENSORED),
        )
        ds = CountingProcessDataset(subjects, CovariateSchema())
        model = cox.fit(ds, cox.CoxSpec(treatment=cox.TreatmentTerm((5.0,))))
        always = cox.predict_survival(model, {}, treatment_path=lambda t: 1)
        g_early, g_late = model.beta
        h = model.baseline_increments
        expected = np.exp(-np.cumsum(
            h * np.exp(np.where(model.baseline_times <= 5.0, g_early, g_late))))
        np.testing.assert_allclose(always.surv, expected, rtol=1e-12)
