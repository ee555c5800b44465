"""Synthetic recurrent-event cohorts with confounding and event dependence.

Each subject carries a censoring time tau ~ Uniform(a, b), a latent binary
confounder x, an observed binary covariate z (both Bernoulli(0.5)), a
treatment-uptake frailty u and an event-rate frailty w (gamma, mean 1).

Treatment time comes from a Weibull(shape 0.5) hazard

    h_trt(t) = 0.5 t^{-0.5} u exp(c0 + 0.5 x + 0.5 z),

inverted in closed form: with E a unit exponential and
M = u exp(c0 + 0.5x + 0.5z), the cumulative hazard t^{0.5} M = E gives
t = (E / M)^2.  Subjects with t >= tau are stored never-treated.

Event times come from the intensity

    lam(t) = k t^{k-1} w exp(beta0 + beta P(t) + E(t) + 0.5 x + 0.5 z),

where P(t) = 1 on (treatment_time, tau] and E(t) is the event-dependence
feedback (see DependenceSpec).  Sampling uses thinning: per inter-event
gap j a constant envelope lam_bar_j >= lam(t) is built, candidates arrive
as an Exp(lam_bar_j) stream, and each candidate t* is accepted with
probability lam(t*) / lam_bar_j.  The envelope bound is asserted at every
candidate; a violation raises EnvelopeViolationError because it can only
mean the envelope construction is wrong.

The envelope takes the Weibull factor at t_sup = tau when k > 1 and at
the initial candidate origin 0.001 otherwise (the intensity is above the
envelope on (0, 0.001) when k < 1, but no candidate is ever placed
there), the treatment factor at beta * 1{beta > 0}, and the dependence
factor at its supremum over the gap: value * ln(j) for positive constant
feedback and value (the fresh-event maximum of the recent-event form)
for positive transient feedback, 0 otherwise (inhibitory feedback only
lowers the intensity).

Randomness is counter-based: the generator for replicate r of a scenario
is seeded from (master_seed, r) only, so serial and parallel runs produce
identical cohorts.
"""

from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np

from .types import DependenceSpec, PerrKitError, ScenarioConfig, SubjectRecord, validate_subject

# First thinning candidate accumulates from this origin; also the Weibull
# envelope anchor for k <= 1.
_CANDIDATE_ORIGIN = 1e-3
_ENVELOPE_SLACK = 1.0 + 1e-9


class EnvelopeViolationError(PerrKitError, AssertionError):
    """The thinning intensity exceeded its envelope: an implementation bug."""


def draw_frailty(variance: float, rng: np.random.Generator) -> float:
    """Gamma draw with mean 1 and the given variance; exactly 1 when variance = 0."""
    if variance < 0:
        raise ValueError(f"frailty variance must be >= 0, got {variance}")
    if variance == 0:
        return 1.0
    shape = 1.0 / variance
    return float(rng.gamma(shape, variance))


def treatment_time_from_exponential(e: float, u: float, x: float, z: float,
                                    c0: float) -> float:
    """Invert the treatment cumulative hazard t^{0.5} M at unit-exponential level e."""
    if u <= 0:
        raise ValueError(f"treatment frailty must be > 0, got {u}")
    m = u * math.exp(c0 + 0.5 * x + 0.5 * z)
    return (e / m) ** 2


def draw_treatment_time(x: float, z: float, u: float, c0: float,
                        rng: np.random.Generator) -> float:
    """Sample a treatment-initiation time from the Weibull uptake hazard."""
    return treatment_time_from_exponential(float(rng.standard_exponential()), u, x, z, c0)


def dependence_effect(history: Sequence[float], t: float, spec: DependenceSpec) -> float:
    """Log-rate shift contributed by the events in `history` before time t.

    constant:  value * ln(N(t-) + 1) with N(t-) the number of prior events.
    transient: inhibitory values (<= 0) accumulate over every prior event,
               sum_j value * exp(-decay_rate * (t - t_j)); excitatory values
               use the most recent event only, because the accumulated
               excitatory form is supercritical (events raise the rate,
               which begets events faster than the decay can damp, and the
               process explodes in finite time with positive probability).
    """
    if spec.kind == "none":
        return 0.0
    if spec.kind == "constant":
        n = 0
        for tj in history:
            if tj < t:
                n += 1
        return spec.value * math.log(n + 1)
    # transient
    if spec.value <= 0:
        return spec.value * sum(math.exp(-spec.decay_rate * (t - tj))
                                for tj in history if tj < t)
    t_last = None
    for tj in history:
        if tj < t:
            t_last = tj
    if t_last is None:
        return 0.0
    return spec.value * math.exp(-spec.decay_rate * (t - t_last))


def _dependence_sup(n_prior: int, spec: DependenceSpec) -> float:
    # Supremum of the dependence term over a gap following n_prior events.
    if spec.kind == "constant" and spec.value > 0:
        return spec.value * math.log(n_prior + 1.0)
    if spec.kind == "transient" and spec.value > 0:
        return spec.value if n_prior >= 1 else 0.0
    return 0.0


def thinning_simulate(k: float, beta0: float, log_hr: float, x: float, z: float,
                      w: float, treatment_time: float | None, tau: float,
                      spec: DependenceSpec, rng: np.random.Generator,
                      ) -> tuple[float, ...]:
    """Draw one subject's event times on (0, tau] by thinning.

    Returns the accepted event times in increasing order.  Candidate times
    accumulate from 0.001; the subject is censored once a candidate
    reaches tau.
    """
    if k <= 0 or w <= 0 or tau <= 0:
        raise ValueError("thinning requires k > 0, w > 0, tau > 0")
    fixed = 0.5 * x + 0.5 * z
    t_sup = tau if k > 1.0 else _CANDIDATE_ORIGIN
    log_env_base = (math.log(k) + (k - 1.0) * math.log(t_sup) + math.log(w)
                    + beta0 + (log_hr if log_hr > 0 else 0.0) + fixed)

    events: list[float] = []
    t = _CANDIDATE_ORIGIN
    while True:
        log_env = log_env_base + _dependence_sup(len(events), spec)
        lam_bar = math.exp(log_env)
        t += rng.exponential(1.0 / lam_bar)
        if t >= tau:
            return tuple(events)
        dep = dependence_effect(events, t, spec)
        treated_now = treatment_time is not None and treatment_time < t
        lam = math.exp(math.log(k) + (k - 1.0) * math.log(t) + math.log(w)
                       + beta0 + (log_hr if treated_now else 0.0) + dep + fixed)
        if lam > lam_bar * _ENVELOPE_SLACK:
            raise EnvelopeViolationError(
                f"intensity {lam} exceeds envelope {lam_bar} at t={t}"
                f" (events so far: {len(events)})")
        if rng.uniform() <= lam / lam_bar:
            events.append(t)


def _replicate_rng(master_seed: int, replicate_index: int, stream: int) -> np.random.Generator:
    """Deterministic per-replicate generator; stream separates cohort from matching."""
    return np.random.default_rng(
        np.random.SeedSequence([int(master_seed), int(replicate_index), int(stream)]))


def simulate_cohort(config: ScenarioConfig, replicate_index: int) -> list[SubjectRecord]:
    """Generate one pre-match cohort of config.n_pre_match subjects.

    Per subject, in draw order: tau, x, z, u, w, the treatment exponential,
    then the thinning stream.  The generator is a pure function of
    (config, replicate_index).
    """
    rng = _replicate_rng(config.master_seed, replicate_index, 0)
    a, b = config.tau_range
    subjects = []
    for i in range(config.n_pre_match):
        tau = float(rng.uniform(a, b))
        x = float(rng.integers(0, 2))
        z = float(rng.integers(0, 2))
        u = draw_frailty(config.u_variance, rng)
        w = draw_frailty(config.sigma_omega_sq, rng)
        t_trt = draw_treatment_time(x, z, u, config.c0, rng)
        treatment_time = t_trt if t_trt < tau else None
        events = thinning_simulate(config.k, config.beta0, config.log_hr, x, z, w,
                                   treatment_time, tau, config.dependence, rng)
        subjects.append(validate_subject(SubjectRecord(
            id=f"s{i:05d}",
            end_time=tau,
            treatment_time=treatment_time,
            event_times=events,
            covariates={"x": x, "z": z},
        )))
    return subjects
