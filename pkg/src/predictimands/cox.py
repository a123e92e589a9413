"""Cox proportional hazards on counting-process episodes.

Newton-Raphson maximization of the (optionally weighted) partial likelihood
with Efron or Breslow tie handling, nonparametric baseline cumulative hazard,
step-function time-varying treatment coefficients and Schoenfeld residuals.

Risk-set convention: a row with interval (tstart, tstop] is at risk at event
time t whenever tstart < t <= tstop; events happen at tstop.
"""

from __future__ import annotations

import json
from bisect import bisect_left
from dataclasses import dataclass, field

import numpy as np

from .curves import StepFunction, SurvivalCurve
from .data import CountingProcessDataset, Status
from .errors import (
    ConvergenceFailure,
    DataError,
    MonotoneLikelihood,
    NoEvents,
    ProfileIncomplete,
    SingularInformation,
)

#: Newton-Raphson stops when every score component is below this.
SCORE_TOL = 1e-9
#: fallback acceptance threshold when the log likelihood has stalled
SCORE_TOL_RELAXED = 1e-8
#: relative log-likelihood change treated as a stall
LOGLIK_RTOL = 1e-10
#: coefficients beyond this bound with a nonvanishing score flag divergence
BETA_BOUND = 15.0
MAX_ITER = 50


@dataclass(frozen=True)
class TreatmentTerm:
    """Include the treatment indicator, optionally with a step-function
    coefficient that jumps at ``tv_cuts``."""

    tv_cuts: tuple = ()

    def __post_init__(self):
        cuts = tuple(float(c) for c in self.tv_cuts)
        if any(b <= a for a, b in zip(cuts, cuts[1:])):
            raise DataError("tv_cuts must be strictly increasing")
        if any(c <= 0 for c in cuts):
            raise DataError("tv_cuts must be positive")
        object.__setattr__(self, "tv_cuts", cuts)

    def segment_names(self) -> list:
        if not self.tv_cuts:
            return ["treated"]
        edges = ["0"] + [repr(c) for c in self.tv_cuts] + ["inf"]
        return [f"treated:({lo},{hi}]" for lo, hi in zip(edges[:-1], edges[1:])]

    def segment_of(self, t: float) -> int:
        return bisect_left(self.tv_cuts, t)


@dataclass(frozen=True)
class CoxSpec:
    """What to fit: event code, covariate terms, optional treatment term,
    tie method and optional episode weights."""

    event_code: Status = Status.EVENT
    covariates: tuple = ()
    treatment: TreatmentTerm | None = None
    ties: str = "efron"
    weights: object = None  # WeightTable, duck-typed via .lookup()

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if self.ties not in ("efron", "breslow"):
            raise DataError(f"unknown tie method {self.ties!r}")


@dataclass
class _Design:
    start: np.ndarray
    stop: np.ndarray
    event: np.ndarray
    X: np.ndarray
    w: np.ndarray
    names: tuple
    subject_ids: list

    @property
    def n_events(self) -> int:
        return int(self.event.sum())


def _covariate_value(sub, ep, name, schema):
    if name in schema.baseline:
        return sub.baseline[name]
    if name in schema.time_varying:
        v = ep.tv.get(name)
        if v is None:
            raise DataError(
                f"subject {sub.subject_id}: missing value for {name!r} at "
                f"({ep.tstart}, {ep.tstop}] (impute first)")
        return v
    raise DataError(f"covariate {name!r} not in schema")


def _build_design(ds: CountingProcessDataset, spec: CoxSpec) -> _Design:
    schema = ds.schema
    cuts = spec.treatment.tv_cuts if spec.treatment else ()
    n_seg = len(cuts) + 1 if spec.treatment else 0
    names = tuple(spec.covariates) + tuple(
        spec.treatment.segment_names() if spec.treatment else ())

    start, stop, event, rows, w, sids = [], [], [], [], [], []
    for sub in ds.subjects:
        for ep in sub.episodes:
            base = [_covariate_value(sub, ep, name, schema)
                    for name in spec.covariates]
            # treated rows are split at the coefficient cut times so the
            # active segment is constant within each row
            if spec.treatment and ep.treated:
                bounds = [ep.tstart] + [c for c in cuts
                                        if ep.tstart < c < ep.tstop] + [ep.tstop]
            else:
                bounds = [ep.tstart, ep.tstop]
            for a, b in zip(bounds[:-1], bounds[1:]):
                x = list(base)
                if spec.treatment:
                    seg = [0.0] * n_seg
                    if ep.treated:
                        seg[spec.treatment.segment_of(b)] = 1.0
                    x.extend(seg)
                start.append(a)
                stop.append(b)
                event.append(b == ep.tstop and ep.status == spec.event_code)
                rows.append(x)
                weight = 1.0
                if spec.weights is not None:
                    weight = spec.weights.lookup(sub.subject_id, b)
                w.append(weight)
                sids.append(sub.subject_id)

    n = len(start)
    X = np.asarray(rows, dtype=float).reshape(n, len(names))
    return _Design(np.asarray(start, float), np.asarray(stop, float),
                   np.asarray(event, bool), X, np.asarray(w, float),
                   names, sids)


def _group_by(keys: np.ndarray, n_groups: int) -> list:
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    bounds = np.searchsorted(sorted_keys, np.arange(n_groups + 1))
    return [order[bounds[k]:bounds[k + 1]] for k in range(n_groups)]


class _RiskSets:
    """Unique event times plus the row indices entering, dying and exiting
    at each one (for a backward sweep)."""

    def __init__(self, design: _Design, ties: str = "efron"):
        self.design = design
        self.ties = ties
        event_times = design.stop[design.event]
        self.uft = np.unique(event_times)
        nuft = self.uft.size
        enter = np.searchsorted(self.uft, design.stop, side="right") - 1
        exit_ = np.searchsorted(self.uft, design.start, side="right")
        active = enter >= exit_
        self.enter_rows = _group_by(np.where(active, enter, nuft), nuft)
        self.exit_rows = _group_by(np.where(active, exit_, nuft), nuft)
        dead_key = np.where(design.event,
                            np.searchsorted(self.uft, design.stop), nuft)
        self.dead_rows = _group_by(dead_key, nuft)


def _sweep(rs: _RiskSets, beta: np.ndarray, order: int = 2,
           baseline: bool = False):
    """One backward pass over the unique event times.

    Returns (loglik, score, info, baseline_increments); entries beyond
    ``order`` are None. Weighted Efron handling spreads the tied event mass
    over within-tie reduced denominators.
    """
    d = rs.design
    p = d.X.shape[1]
    lp = d.X @ beta if p else np.zeros(d.X.shape[0])
    shift = lp.max(initial=0.0)
    r = d.w * np.exp(lp - shift)
    loglik = 0.0
    score = np.zeros(p) if order >= 1 else None
    info = np.zeros((p, p)) if order >= 2 else None
    dH = np.zeros(rs.uft.size) if baseline else None

    s0 = 0.0
    s1 = np.zeros(p)
    s2 = np.zeros((p, p))
    for k in range(rs.uft.size - 1, -1, -1):
        ix = rs.enter_rows[k]
        if ix.size:
            re = r[ix]
            s0 += re.sum()
            if p:
                V = d.X[ix]
                s1 += re @ V
                if order >= 2:
                    s2 += (V.T * re) @ V
        dead = rs.dead_rows[k]
        nd = dead.size
        if nd:
            wd = d.w[dead].sum()
            if rs.ties == "efron":
                frac = np.arange(nd) / nd
                rd = r[dead].sum()
                den = s0 - frac * rd
            else:
                frac = np.zeros(1)
                den = np.array([s0])
            loglik += float(d.w[dead] @ lp[dead]) - (wd / frac.size) * (
                np.log(den).sum() + frac.size * shift)
            if baseline:
                dH[k] = (wd / frac.size) * (np.exp(-shift) / den).sum()
            if p:
                if rs.ties == "efron":
                    s1d = r[dead] @ d.X[dead]
                    num1 = s1[None, :] - np.outer(frac, s1d)
                else:
                    num1 = s1[None, :]
                u = num1 / den[:, None]
                if order >= 1:
                    score += d.w[dead] @ d.X[dead] - (wd / frac.size) * u.sum(axis=0)
                if order >= 2:
                    if rs.ties == "efron":
                        Vd = d.X[dead]
                        s2d = (Vd.T * r[dead]) @ Vd
                        num2 = s2[None, :, :] - frac[:, None, None] * s2d[None, :, :]
                    else:
                        num2 = s2[None, :, :]
                    info += (wd / frac.size) * (
                        (num2 / den[:, None, None]).sum(axis=0)
                        - np.einsum("ki,kj->ij", u, u))
        ix = rs.exit_rows[k]
        if ix.size:
            re = r[ix]
            s0 -= re.sum()
            if p:
                V = d.X[ix]
                s1 -= re @ V
                if order >= 2:
                    s2 -= (V.T * re) @ V
    return loglik, score, info, dH


@dataclass
class CoxModel:
    """A fitted model: coefficients, observed information, nonparametric
    baseline cumulative hazard and the fitting diagnostics."""

    names: tuple
    beta: np.ndarray
    info: np.ndarray
    loglik: float
    baseline_times: np.ndarray
    baseline_increments: np.ndarray
    covariates: tuple
    treatment: TreatmentTerm | None
    ties: str
    event_code: int
    iterations: int
    score_norm: float
    degenerate: bool
    n_events: int
    weighted: bool
    schema_levels: dict = field(default_factory=dict)

    @property
    def coefficients(self) -> dict:
        return dict(zip(self.names, (float(b) for b in self.beta)))

    def baseline_cumhaz_function(self) -> StepFunction:
        return StepFunction(self.baseline_times,
                            np.cumsum(self.baseline_increments), initial=0.0)

    def to_dict(self) -> dict:
        return {
            "coefficients": self.coefficients,
            "covariates": list(self.covariates),
            "treatment_cuts": (list(self.treatment.tv_cuts)
                               if self.treatment else None),
            "ties": self.ties,
            "event_code": int(self.event_code),
            "baseline_cumhaz": [[float(t), float(h)] for t, h in
                                zip(self.baseline_times, self.baseline_increments)],
            "loglik": float(self.loglik),
            "iterations": self.iterations,
            "score_norm": float(self.score_norm),
            "degenerate": self.degenerate,
            "n_events": self.n_events,
            "weighted": self.weighted,
            "information": [[float(v) for v in row] for row in self.info],
            "schema_levels": {k: list(v) for k, v in self.schema_levels.items()},
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "CoxModel":
        names = tuple(d["coefficients"])
        treatment = (TreatmentTerm(tuple(d["treatment_cuts"]))
                     if d.get("treatment_cuts") is not None else None)
        base = np.asarray(d["baseline_cumhaz"], dtype=float).reshape(-1, 2)
        return cls(
            names=names,
            beta=np.asarray([d["coefficients"][n] for n in names], float),
            info=np.asarray(d["information"], float).reshape(len(names), len(names)),
            loglik=d["loglik"],
            baseline_times=base[:, 0],
            baseline_increments=base[:, 1],
            covariates=tuple(d["covariates"]),
            treatment=treatment,
            ties=d["ties"],
            event_code=d["event_code"],
            iterations=d["iterations"],
            score_norm=d["score_norm"],
            degenerate=d["degenerate"],
            n_events=d["n_events"],
            weighted=d["weighted"],
            schema_levels={k: tuple(v) for k, v in d.get("schema_levels", {}).items()},
        )

    @classmethod
    def from_json(cls, path) -> "CoxModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _prepared(ds, spec):
    design = _build_design(ds, spec)
    return design, _RiskSets(design, ties=spec.ties)


def partial_loglik(ds, spec: CoxSpec, beta) -> float:
    _, rs = _prepared(ds, spec)
    return _sweep(rs, np.asarray(beta, float), order=0)[0]


def score(ds, spec: CoxSpec, beta) -> np.ndarray:
    _, rs = _prepared(ds, spec)
    return _sweep(rs, np.asarray(beta, float), order=1)[1]


def information(ds, spec: CoxSpec, beta) -> np.ndarray:
    _, rs = _prepared(ds, spec)
    return _sweep(rs, np.asarray(beta, float), order=2)[2]


def fit(ds: CountingProcessDataset, spec: CoxSpec) -> CoxModel:
    """Newton-Raphson from beta = 0 with step-halving.

    Converges when every score component falls below 1e-9 (a stalled log
    likelihood is accepted at 1e-8); a coefficient passing +/-15 while the
    score has not vanished raises MonotoneLikelihood.
    """
    design, rs = _prepared(ds, spec)
    if design.n_events == 0:
        raise NoEvents(f"no episode carries event code {int(spec.event_code)}")
    if spec.treatment and spec.treatment.tv_cuts:
        last = float(design.stop.max())
        if spec.treatment.tv_cuts[-1] >= last:
            raise DataError(
                f"tv_cuts must lie within the observed follow-up "
                f"(last cut {spec.treatment.tv_cuts[-1]:g} >= end {last:g})")
    p = design.X.shape[1]
    beta = np.zeros(p)

    if p == 0:
        loglik, _, _, dH = _sweep(rs, beta, order=0, baseline=True)
        return CoxModel(
            names=(), beta=beta, info=np.zeros((0, 0)), loglik=loglik,
            baseline_times=rs.uft, baseline_increments=dH,
            covariates=spec.covariates, treatment=spec.treatment,
            ties=spec.ties, event_code=int(spec.event_code), iterations=0,
            score_norm=0.0, degenerate=False, n_events=design.n_events,
            weighted=spec.weights is not None,
            schema_levels=dict(ds.schema.levels))

    loglik, g, info, _ = _sweep(rs, beta, order=2)
    iterations = 0
    converged = False
    for iterations in range(1, MAX_ITER + 1):
        gmax = float(np.abs(g).max())
        if gmax < SCORE_TOL:
            converged = True
            iterations -= 1
            break
        try:
            step = np.linalg.solve(info, g)
        except np.linalg.LinAlgError:
            step, *_ = np.linalg.lstsq(info, g, rcond=None)
        if not np.all(np.isfinite(step)):
            raise SingularInformation("Newton step is not finite")
        new_beta, new_ll, accepted = beta, loglik, False
        factor = 1.0
        for _ in range(30):
            cand = beta + factor * step
            cand_ll = _sweep(rs, cand, order=0)[0]
            if np.isfinite(cand_ll) and cand_ll >= loglik - 1e-12 * (abs(loglik) + 1.0):
                new_beta, new_ll, accepted = cand, cand_ll, True
                break
            factor /= 2.0
        if not accepted:
            if gmax < SCORE_TOL_RELAXED:
                converged = True
                break
            raise ConvergenceFailure(
                f"step-halving stalled with max |score| = {gmax:.3g}")
        rel = abs(new_ll - loglik) / (abs(loglik) + 1e-10)
        beta, loglik = new_beta, new_ll
        _, g, info, _ = _sweep(rs, beta, order=2)
        gmax = float(np.abs(g).max())
        if np.any(np.abs(beta) > BETA_BOUND) and gmax > SCORE_TOL_RELAXED:
            j = int(np.abs(beta).argmax())
            raise MonotoneLikelihood(
                f"coefficient for {design.names[j]!r} diverges "
                f"(|beta| > {BETA_BOUND:g} with max |score| = {gmax:.3g})")
        if gmax < SCORE_TOL or (rel < LOGLIK_RTOL and gmax < SCORE_TOL_RELAXED):
            converged = True
            break
    if not converged:
        raise ConvergenceFailure(
            f"no convergence in {MAX_ITER} iterations "
            f"(max |score| = {float(np.abs(g).max()):.3g})")

    _, _, _, dH = _sweep(rs, beta, order=0, baseline=True)
    eig = np.linalg.eigvalsh(info) if p else np.array([1.0])
    degenerate = bool(eig.min() <= 1e-12 * max(1.0, eig.max()))
    return CoxModel(
        names=design.names, beta=beta, info=info, loglik=loglik,
        baseline_times=rs.uft, baseline_increments=dH,
        covariates=spec.covariates, treatment=spec.treatment, ties=spec.ties,
        event_code=int(spec.event_code), iterations=iterations,
        score_norm=float(np.abs(g).max()), degenerate=degenerate,
        n_events=design.n_events, weighted=spec.weights is not None,
        schema_levels=dict(ds.schema.levels))


def baseline_cumhaz(model: CoxModel) -> StepFunction:
    """Baseline cumulative hazard H0(t) as a step function, H0(0) = 0."""
    return model.baseline_cumhaz_function()


def _profile_lp(model: CoxModel, profile: dict) -> float:
    lp = 0.0
    for j, name in enumerate(model.covariates):
        if name not in profile:
            raise ProfileIncomplete(f"profile misses covariate {name!r}")
        lp += model.beta[j] * float(profile[name])
    return lp


def predict_survival(model: CoxModel, profile: dict,
                     treatment_path=None) -> SurvivalCurve:
    """S(t | profile) = exp(-sum dH0(t_k) exp(lp(t_k))).

    ``treatment_path`` maps t to the treatment indicator (default: never
    treated); the matching step-function coefficient enters the linear
    predictor whenever the path is 1.
    """
    lp0 = _profile_lp(model, profile)
    n_cov = len(model.covariates)
    times = model.baseline_times
    lp = np.full(times.shape, lp0)
    if model.treatment is not None and treatment_path is not None:
        for k, t in enumerate(times):
            if treatment_path(t):
                lp[k] += model.beta[n_cov + model.treatment.segment_of(t)]
    haz = model.baseline_increments * np.exp(lp)
    surv = np.exp(-np.cumsum(haz))
    return SurvivalCurve(times, surv)


@dataclass(frozen=True)
class SchoenfeldResiduals:
    """One row per event: observed covariates minus the risk-set weighted
    mean at the event time."""

    times: np.ndarray
    subject_ids: tuple
    names: tuple
    residuals: np.ndarray

    def to_csv(self, path):
        import csv as _csv
        with open(path, "w", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(["time", "id"] + list(self.names))
            for t, sid, row in zip(self.times, self.subject_ids, self.residuals):
                w.writerow([repr(float(t)), sid] + [repr(float(v)) for v in row])


def schoenfeld_residuals(model: CoxModel, ds: CountingProcessDataset
                         ) -> SchoenfeldResiduals:
    spec = CoxSpec(event_code=Status(model.event_code),
                   covariates=model.covariates, treatment=model.treatment,
                   ties=model.ties)
    design, rs = _prepared(ds, spec)
    p = design.X.shape[1]
    lp = design.X @ model.beta if p else np.zeros(design.X.shape[0])
    r = design.w * np.exp(lp - lp.max(initial=0.0))

    out_t, out_id, out_res = [], [], []
    s0, s1 = 0.0, np.zeros(p)
    for k in range(rs.uft.size - 1, -1, -1):
        ix = rs.enter_rows[k]
        if ix.size:
            s0 += r[ix].sum()
            s1 += r[ix] @ design.X[ix]
        dead = rs.dead_rows[k]
        if dead.size:
            xbar = s1 / s0
            for i in dead:
                out_t.append(rs.uft[k])
                out_id.append(design.subject_ids[i])
                out_res.append(design.X[i] - xbar)
        ix = rs.exit_rows[k]
        if ix.size:
            s0 -= r[ix].sum()
            s1 -= r[ix] @ design.X[ix]
    order = np.argsort(out_t, kind="stable")
    res = np.asarray(out_res, float).reshape(len(out_t), p)
    return SchoenfeldResiduals(
        times=np.asarray(out_t, float)[order],
        subject_ids=tuple(out_id[i] for i in order),
        names=design.names,
        residuals=res[order])
