"""Stabilized inverse-probability weights from treatment-hazard Cox models.

The stabilized weight for an episode ending at t is the ratio of two
staying-untreated probabilities, numerator model over denominator model,
each evaluated as exp(-cumulative hazard) accumulated over the treatment
model's event-time grid along the subject's own covariate path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import cox
from .data import CountingProcessDataset, Status, split_at_treatment
from .errors import DataError, NonPositiveProbability, NoTreatmentStarts


class WeightMode(str, Enum):
    #: weights attach to analyses that censor at treatment start
    IPCW = "ipcw"
    #: weights attach to treatment-as-covariate analyses; frozen once
    #: treatment begins
    IPTW = "iptw"


@dataclass(frozen=True)
class WeightRow:
    subject_id: str
    tstart: float
    tstop: float
    weight: float


@dataclass(frozen=True)
class WeightTable:
    """Per-episode stabilized weights plus degeneracy diagnostics."""

    rows: tuple
    mode: WeightMode
    diagnostics: dict = field(default_factory=dict)
    truncation: tuple | None = None

    def __post_init__(self):
        index = {}
        for row in self.rows:
            index.setdefault(row.subject_id, []).append(row)
        compiled = {}
        for sid, rws in index.items():
            rws.sort(key=lambda r: r.tstop)
            compiled[sid] = (np.asarray([r.tstop for r in rws]),
                            np.asarray([r.weight for r in rws]))
        object.__setattr__(self, "_index", compiled)

    def lookup(self, subject_id: str, t: float) -> float:
        """Weight of the subject's episode containing t (tstart < t <= tstop);
        beyond follow-up the last weight carries forward."""
        stops, wvals = self._index[subject_id]
        idx = min(int(np.searchsorted(stops, t, side="left")), stops.size - 1)
        return float(wvals[idx])

    @property
    def values(self) -> np.ndarray:
        return np.asarray([r.weight for r in self.rows])

    def to_csv(self, path):
        import csv
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "tstart", "tstop", "weight"])
            for r in self.rows:
                w.writerow([r.subject_id, repr(r.tstart), repr(r.tstop),
                            repr(r.weight)])

    def diagnostics_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.diagnostics, fh, indent=2)


def fit_treatment_hazard(ds: CountingProcessDataset, covariates=(),
                         ties: str = "efron") -> cox.CoxModel:
    """Cox model for the treatment-start intensity; the event of interest and
    administrative censoring both censor. Empty covariates give the
    intercept-only numerator model."""
    base = split_at_treatment(ds)
    if not base.has_treatment_starts:
        raise NoTreatmentStarts("no subject ever starts treatment")
    return cox.fit(base, cox.CoxSpec(event_code=Status.TREATMENT_START,
                                     covariates=tuple(covariates), ties=ties))


def _survival_at_episode_ends(model: cox.CoxModel, sub, schema) -> list:
    """Staying-untreated probability at each episode end, accumulating the
    model's hazard increments over the subject's covariate path."""
    times = model.baseline_times
    incs = model.baseline_increments
    out = []
    cum = 0.0
    for ep in sub.episodes:
        lp = sum(model.beta[j] * cox._covariate_value(sub, ep, name, schema)
                 for j, name in enumerate(model.covariates))
        lo = np.searchsorted(times, ep.tstart, side="right")
        hi = np.searchsorted(times, ep.tstop, side="right")
        cum += float(incs[lo:hi].sum()) * float(np.exp(lp))
        out.append(float(np.exp(-cum)))
    return out


def stabilized_weights(ds: CountingProcessDataset, numerator: cox.CoxModel,
                       denominator: cox.CoxModel,
                       mode: WeightMode = WeightMode.IPCW,
                       truncation: tuple | None = None) -> WeightTable:
    """Per-episode stabilized weights w(t) = S_num(t) / S_den(t).

    IPCW rows follow the censored-at-treatment data; IPTW rows follow the
    full data with the weight frozen at its treatment-start value once a
    subject initiates treatment. Optional percentile truncation clamps the
    extremes.
    """
    mode = WeightMode(mode)
    if not set(numerator.covariates) <= set(denominator.covariates):
        raise DataError("numerator covariates must be a subset of the "
                        "denominator covariates")
    target = split_at_treatment(ds) if mode == WeightMode.IPCW else ds
    schema = target.schema

    rows = []
    for sub in target.subjects:
        s_num = _survival_at_episode_ends(numerator, sub, schema)
        s_den = _survival_at_episode_ends(denominator, sub, schema)
        frozen = None
        for ep, sn, sd in zip(sub.episodes, s_num, s_den):
            if frozen is not None:
                w = frozen
            else:
                if sd <= 0.0:
                    raise NonPositiveProbability(
                        f"subject {sub.subject_id}: staying-untreated "
                        f"probability underflowed at t={ep.tstop}")
                w = sn / sd
                if mode == WeightMode.IPTW and ep.status == Status.TREATMENT_START:
                    frozen = w
            rows.append(WeightRow(sub.subject_id, ep.tstart, ep.tstop, w))

    values = np.asarray([r.weight for r in rows])
    bounds = None
    if truncation is not None:
        lo, hi = truncation
        bounds = tuple(np.percentile(values, [lo, hi]))
        values = np.clip(values, *bounds)
        rows = [WeightRow(r.subject_id, r.tstart, r.tstop, float(v))
                for r, v in zip(rows, values)]

    diagnostics = _diagnostics(rows, values, denominator)
    return WeightTable(tuple(rows), mode, diagnostics, bounds)


def _diagnostics(rows, values, denominator) -> dict:
    diag = {
        "n_rows": int(values.size),
        "mean": float(values.mean()),
        "min": float(values.min()),
        "max": float(values.max()),
        "ess": float(values.sum() ** 2 / (values ** 2).sum()),
    }
    # mean weight among episodes at risk at each treatment event time;
    # values far from 1 signal misspecification or positivity trouble
    times = denominator.baseline_times
    if times.size:
        start = np.asarray([r.tstart for r in rows])
        stop = np.asarray([r.tstop for r in rows])

        def below(v, weights):
            order = np.argsort(v, kind="stable")
            cumw = np.concatenate([[0.0], np.cumsum(weights[order])])
            return cumw[np.searchsorted(v[order], times, side="left")]

        wsum = below(start, values) - below(stop, values)
        count = below(start, np.ones_like(values)) - below(stop, np.ones_like(values))
        ok = count > 0
        if ok.any():
            means = wsum[ok] / count[ok]
            diag["at_risk_mean_min"] = float(means.min())
            diag["at_risk_mean_max"] = float(means.max())
    return diag
