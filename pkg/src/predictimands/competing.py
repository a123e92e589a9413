"""Product-limit estimators and cause-specific cumulative incidence.

The while-untreated risk combines two cause-specific hazard models (event of
interest vs treatment start) through the Aalen-Johansen plug-in: overall
survival is the product integral of one minus the summed hazard increments,
so event mass, treatment mass and survivors add to one by construction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import cox
from .curves import RiskCurve
from .data import CountingProcessDataset, Status, split_at_treatment
from .errors import NoEvents

EVENT = Status.EVENT
TREATMENT = Status.TREATMENT_START


def _counting_arrays(ds: CountingProcessDataset, weights=None):
    start, stop, status, w = [], [], [], []
    for sub, ep in ds.iter_episodes():
        start.append(ep.tstart)
        stop.append(ep.tstop)
        status.append(int(ep.status))
        w.append(1.0 if weights is None else weights.lookup(sub.subject_id, ep.tstop))
    return (np.asarray(start, float), np.asarray(stop, float),
            np.asarray(status, int), np.asarray(w, float))


def _at_risk_and_deaths(start, stop, status, w, times, codes):
    """Weighted at-risk totals and per-cause event mass at each time.

    At risk at t means start < t <= stop, so the at-risk mass is the weight
    of rows with start < t minus the weight of rows with stop < t.
    """
    def below(values):
        order = np.argsort(values, kind="stable")
        cumw = np.concatenate([[0.0], np.cumsum(w[order])])
        return cumw[np.searchsorted(values[order], times, side="left")]

    n_at_risk = below(start) - below(stop)
    mass = {}
    for code in codes:
        rows = status == code
        idx = np.searchsorted(times, stop[rows])
        valid = (idx < times.size)
        valid[valid] &= times[idx[valid]] == stop[rows][valid]
        m = np.zeros(times.size)
        np.add.at(m, idx[valid], w[rows][valid])
        mass[code] = m
    return n_at_risk, mass


def km_risk(ds: CountingProcessDataset, event_code: Status = EVENT,
            weights=None, label: str = "", profile=None,
            t_hor: float | None = None) -> RiskCurve:
    """One minus the (optionally weighted) product-limit survival curve for
    the chosen event code; everything else counts as censoring."""
    start, stop, status, w = _counting_arrays(ds, weights)
    code = int(event_code)
    times = np.unique(stop[status == code])
    if times.size == 0:
        raise NoEvents(f"no episode carries event code {code}")
    n_at_risk, mass = _at_risk_and_deaths(start, stop, status, w, times, [code])
    surv = np.cumprod(1.0 - mass[code] / n_at_risk)
    curve = RiskCurve(times, 1.0 - surv, strategy=label,
                      profile=dict(profile or {}), horizon=t_hor)
    return curve.truncated(t_hor) if t_hor is not None else curve


@dataclass(frozen=True)
class CauseSpecificPair:
    """Cause-specific Cox models for the event of interest and for treatment
    start, fitted on the same censored-at-first-transition data.

    ``model_treatment`` is None when the data carry no treatment starts; the
    treatment hazard is then identically zero.
    """

    model_event: cox.CoxModel
    model_treatment: cox.CoxModel | None


def fit_cause_specific_pair(ds: CountingProcessDataset, covariates=(),
                            ties: str = "efron") -> CauseSpecificPair:
    """Fit both cause-specific models: each cause is the event while the
    other (plus administrative censoring) censors."""
    base = split_at_treatment(ds)
    model_event = cox.fit(base, cox.CoxSpec(event_code=EVENT,
                                            covariates=tuple(covariates),
                                            ties=ties))
    model_treatment = None
    if base.has_treatment_starts:
        model_treatment = cox.fit(base, cox.CoxSpec(event_code=TREATMENT,
                                                    covariates=tuple(covariates),
                                                    ties=ties))
    return CauseSpecificPair(model_event, model_treatment)


def _hazard_increments(model, profile, times):
    """dH(t | profile) of one cause-specific model on a shared time grid;
    model jump times beyond the grid (past the horizon) are dropped."""
    out = np.zeros(times.size)
    if model is None:
        return out
    lp = cox._profile_lp(model, profile)
    idx = np.searchsorted(times, model.baseline_times)
    valid = idx < times.size
    valid[valid] &= times[idx[valid]] == model.baseline_times[valid]
    out[idx[valid]] = model.baseline_increments[valid] * np.exp(lp)
    return out


def aalen_johansen(pair: CauseSpecificPair, profile=None, t_hor=None):
    """Times plus (F_event, F_treatment, S_overall) from the plug-in.

    S is carried as 1 - F_event - F_treatment so the three add to one
    exactly; a hazard increment overshooting the remaining mass is clipped
    with a warning.
    """
    profile = dict(profile or {})
    times = np.union1d(pair.model_event.baseline_times,
                       pair.model_treatment.baseline_times
                       if pair.model_treatment is not None else [])
    if t_hor is not None:
        times = times[times <= t_hor]
    dh_ev = _hazard_increments(pair.model_event, profile, times)
    dh_tr = _hazard_increments(pair.model_treatment, profile, times)
    f_ev = np.zeros(times.size)
    f_tr = np.zeros(times.size)
    s = 1.0
    for k in range(times.size):
        total = dh_ev[k] + dh_tr[k]
        if total > 1.0:
            warnings.warn("hazard increment exceeds remaining mass; "
                          "clipping the overall survival at zero",
                          RuntimeWarning, stacklevel=2)
            dh_ev[k] /= total
            dh_tr[k] /= total
        jump_ev = s * dh_ev[k]
        jump_tr = s * dh_tr[k]
        f_ev[k] = (f_ev[k - 1] if k else 0.0) + jump_ev
        f_tr[k] = (f_tr[k - 1] if k else 0.0) + jump_tr
        s = s - jump_ev - jump_tr
    return times, f_ev, f_tr, 1.0 - f_ev - f_tr


def aalen_johansen_nonparametric(ds: CountingProcessDataset, t_hor=None,
                                 weights=None):
    """Nonparametric cumulative incidences: increments are event mass over
    the at-risk total at each time where either cause fires."""
    base = split_at_treatment(ds)
    start, stop, status, w = _counting_arrays(base, weights)
    is_ev = status == int(EVENT)
    is_tr = status == int(TREATMENT)
    times = np.unique(stop[is_ev | is_tr])
    if t_hor is not None:
        times = times[times <= t_hor]
    n_at_risk, mass = _at_risk_and_deaths(start, stop, status, w, times,
                                          [int(EVENT), int(TREATMENT)])
    f_ev = np.zeros(times.size)
    f_tr = np.zeros(times.size)
    s = 1.0
    for k in range(times.size):
        jump_ev = s * mass[int(EVENT)][k] / n_at_risk[k]
        jump_tr = s * mass[int(TREATMENT)][k] / n_at_risk[k]
        f_ev[k] = (f_ev[k - 1] if k else 0.0) + jump_ev
        f_tr[k] = (f_tr[k - 1] if k else 0.0) + jump_tr
        s = s - jump_ev - jump_tr
    return times, f_ev, f_tr, 1.0 - f_ev - f_tr


def cuminc(pair: CauseSpecificPair, profile=None, t_hor=None,
           label: str = "while-untreated") -> RiskCurve:
    """Cumulative incidence of the event of interest before treatment."""
    times, f_ev, _, _ = aalen_johansen(pair, profile, t_hor)
    return RiskCurve(times, f_ev, strategy=label,
                     profile=dict(profile or {}), horizon=t_hor)


def composite_risk(ds: CountingProcessDataset, covariates=(),
                   ties: str = "efron", profile=None, t_hor=None,
                   label: str = "composite") -> RiskCurve:
    """Risk of the combined endpoint min(T, V).

    Nonparametric (no covariates) uses the product-limit curve so that the
    composite equals F_event + F_treatment exactly; with covariates the
    composed data are fit with a single Cox model.
    """
    from .data import compose_outcome

    composed = compose_outcome(ds)
    if not covariates:
        return km_risk(composed, EVENT, label=label, profile=profile,
                       t_hor=t_hor)
    model = cox.fit(composed, cox.CoxSpec(event_code=EVENT,
                                          covariates=tuple(covariates),
                                          ties=ties))
    surv = cox.predict_survival(model, dict(profile or {}))
    return RiskCurve.from_survival(surv, strategy=label, profile=profile,
                                   horizon=t_hor)
