"""Shared data model for subjects, counting-process rows, fits, and metrics.

All containers are frozen dataclasses: once constructed they are safe to
share read-only across concurrent workers.  Times are dimensionless reals
(simulation) or days (observational data); nothing downstream interprets
the unit because the hazard engine is rank-based within risk sets.

Conventions:

- A subject's follow-up is (entry_time, end_time].  Events live in that
  half-open interval; an event exactly at end_time counts as an event.
- A counting-process row covers (start, stop] and is at risk at time t
  iff start < t <= stop.
- stratum_id = 0 means "unstratified"; event-number strata are >= 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


class PerrKitError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(PerrKitError, ValueError):
    """A record violates one of its structural invariants."""

    def __init__(self, subject_id, field_name, message):
        self.subject_id = subject_id
        self.field_name = field_name
        super().__init__(f"subject {subject_id!r}, field {field_name!r}: {message}")


class ConvergenceError(PerrKitError, RuntimeError):
    """A model fit failed to converge."""


@dataclass(frozen=True)
class SubjectRecord:
    """One person's follow-up history.

    event_times must be strictly increasing and contained in
    (entry_time, end_time].  treatment_time, when present, must lie in
    (entry_time, end_time); a person treated at or after their censoring
    time is stored with treatment_time = None.
    """

    id: str
    end_time: float
    treatment_time: float | None = None
    event_times: tuple[float, ...] = ()
    covariates: dict[str, float] = field(default_factory=dict)
    entry_time: float = 0.0

    @property
    def treated(self) -> bool:
        return self.treatment_time is not None


def validate_subject(record: SubjectRecord) -> SubjectRecord:
    """Check all SubjectRecord invariants; return the record unchanged.

    Raises ValidationError naming the subject and the offending field.
    """
    sid = record.id
    if not math.isfinite(record.end_time) or record.end_time <= record.entry_time:
        raise ValidationError(sid, "end_time", "must be finite and > entry_time")
    prev = record.entry_time
    for t in record.event_times:
        if not math.isfinite(t):
            raise ValidationError(sid, "event_times", f"non-finite event time {t!r}")
        if t <= prev:
            raise ValidationError(
                sid, "event_times",
                f"unsorted events: {t} does not exceed {prev}"
                " (event times must be strictly increasing and > entry_time)",
            )
        prev = t
    if record.event_times and record.event_times[-1] > record.end_time:
        raise ValidationError(
            sid, "event_times",
            f"event at {record.event_times[-1]} after end_time {record.end_time}",
        )
    if record.treatment_time is not None:
        if not math.isfinite(record.treatment_time):
            raise ValidationError(sid, "treatment_time", "non-finite")
        if record.treatment_time >= record.end_time:
            raise ValidationError(
                sid, "treatment_time",
                f"treatment at/after censoring ({record.treatment_time} >= {record.end_time});"
                " store never-treated subjects with treatment_time absent",
            )
        if record.treatment_time <= record.entry_time:
            raise ValidationError(
                sid, "treatment_time",
                f"treatment at/before entry ({record.treatment_time} <= {record.entry_time})",
            )
    return record


@dataclass(frozen=True)
class CountingRow:
    """One counting-process interval fed to the hazard engine.

    The row is at risk at event time t iff start < t <= stop and the
    stratum matches.  status = 1 means the interval closes with an event
    at stop.  cluster_id groups rows for frailty / robust variance
    (here always the subject id).
    """

    subject_id: str
    cluster_id: str
    stratum_id: int
    start: float
    stop: float
    status: int
    covariates: tuple[float, ...]

    def __post_init__(self):
        if not self.start < self.stop:
            raise ValidationError(self.subject_id, "start/stop",
                                  f"need start < stop, got ({self.start}, {self.stop})")
        if self.status not in (0, 1):
            raise ValidationError(self.subject_id, "status", f"must be 0/1, got {self.status}")
        if self.stratum_id < 0:
            raise ValidationError(self.subject_id, "stratum_id", "must be >= 0")

    @property
    def duration(self) -> float:
        return self.stop - self.start


@dataclass(frozen=True)
class DependenceSpec:
    """How past events feed back into the event intensity.

    kind = "none":      no feedback.
    kind = "constant":  each event permanently shifts the log rate;
                        cumulative effect value * ln(N(t-) + 1).
    kind = "transient": events shift the log rate by value, fading as
                        exp(-decay_rate * elapsed).  Inhibitory values
                        accumulate over all prior events; excitatory
                        values act through the most recent event only
                        (the accumulated excitatory form is supercritical
                        and explodes in finite time).
    """

    kind: str = "none"
    value: float = 0.0
    decay_rate: float = 0.5

    def __post_init__(self):
        if self.kind not in ("none", "constant", "transient"):
            raise ValueError(f"unknown dependence kind {self.kind!r}")
        if self.kind == "none" and self.value != 0.0:
            raise ValueError("dependence value must be absent/zero when kind='none'")
        if self.kind != "none" and self.value == 0.0:
            raise ValueError(f"dependence kind {self.kind!r} requires a nonzero value")


@dataclass(frozen=True)
class ScenarioConfig:
    """All parameters for one simulated scenario.

    log_hr is the log treatment effect (beta = ln HR).  beta0 sets the
    baseline event rate; the bundled scenario tables carry values
    calibrated so mean cohort event counts land on their targets.
    """

    k: float
    beta0: float
    log_hr: float
    dependence: DependenceSpec
    master_seed: int = 0
    n_pre_match: int = 600
    c0: float = -2.0
    sigma_omega_sq: float = 0.5
    u_variance: float = 0.1
    tau_range: tuple[float, float] = (1.0, 3.0)
    replicates: int = 500
    pooling_percentile: float = 0.95
    restriction_window: float | None = None

    def __post_init__(self):
        if self.k <= 0:
            raise ValueError("k must be > 0")
        a, b = self.tau_range
        if not 0 < a < b:
            raise ValueError("tau_range must satisfy 0 < a < b")
        if self.sigma_omega_sq < 0 or self.u_variance < 0:
            raise ValueError("variances must be >= 0")
        if not 0 < self.pooling_percentile <= 1:
            raise ValueError("pooling_percentile must be in (0, 1]")
        if self.restriction_window is not None and self.restriction_window <= 0:
            raise ValueError("restriction_window must be > 0")
        if self.n_pre_match <= 0:
            raise ValueError("n_pre_match must be > 0")


@dataclass(frozen=True)
class FitResult:
    """Output of one hazard-model fit.

    coefficients is aligned with names; model_variance is the inverse
    observed information.  theta is the frailty variance and is present
    iff a frailty model was fitted.
    """

    names: tuple[str, ...]
    coefficients: object            # np.ndarray, shape (p,)
    model_variance: object          # np.ndarray, shape (p, p)
    log_likelihood: float
    iterations: int
    converged: bool
    robust_variance: object | None = None
    theta: float | None = None

    def coef(self, name: str) -> float:
        return float(self.coefficients[self.names.index(name)])

    def se(self, name: str, robust: bool = False) -> float:
        var = self.robust_variance if robust else self.model_variance
        if var is None:
            raise ValueError("robust variance not computed for this fit")
        i = self.names.index(name)
        return math.sqrt(float(var[i, i]))


@dataclass(frozen=True)
class PerrEstimate:
    """Prior event rate ratio estimate with its uncertainty.

    hr_prior and hr_post are the group hazard ratios in the two periods;
    perr_hr = hr_post / hr_prior is the treatment-effect estimate.
    method is "AG" (unstratified recurrent-event fit, robust CI) or
    "CF" (event-number-stratified gamma-frailty fit, model-based CI).
    """

    hr_prior: float
    hr_post: float
    perr_hr: float
    ci_low: float
    ci_high: float
    p_value: float
    method: str


@dataclass(frozen=True)
class SimMetrics:
    """Replicate-aggregated performance of one estimator in one scenario."""

    r_bias_pct: float
    rmse: float
    cp_pct: float
    mean_n: float
    mean_events: float
    replicates_used: int


@dataclass(frozen=True)
class DrimResult:
    """Event-dependence diagnostic: lagged-response odds ratio and random-intercept SD."""

    lag_coefficient: float
    odds_ratio: float
    ci_low: float
    ci_high: float
    sigma_b: float
    converged: bool
