"""Shared fixtures and small random-data generators for the test suite."""

import numpy as np
import pytest

from perrkit.types import CountingRow


def segment_subject(subject_id, end, events, covariate, stratified=False):
    """Turn one subject's follow-up into counting rows, cut at its event times."""
    rows = []
    prev = 0.0
    marks = sorted(events) + [end]
    n_seen = 0
    for t in marks:
        status = 1 if t in events else 0
        rows.append(CountingRow(
            subject_id=subject_id, cluster_id=subject_id,
            stratum_id=(n_seen + 1) if stratified else 0,
            start=prev, stop=t, status=status,
            covariates=tuple(np.atleast_1d(covariate).astype(float)),
        ))
        n_seen += status
        prev = t
    return rows


def random_tiny_rows(rng, max_subjects=6, max_total_events=4, stratified=False):
    """A small random counting-process cohort with a single binary covariate.

    Guarantees at least one event and both covariate levels (everyone is
    at risk from time 0, so the first event's risk set mixes the levels
    and the coefficient is identifiable).
    """
    while True:
        n_sub = int(rng.integers(3, max_subjects + 1))
        budget = int(rng.integers(1, max_total_events + 1))
        subjects = []
        total_events = 0
        for i in range(n_sub):
            end = float(rng.uniform(0.5, 3.0))
            room = budget - total_events
            n_ev = int(rng.integers(0, room + 1)) if room > 0 else 0
            events = sorted(float(t) for t in rng.uniform(0.05, end - 1e-6, size=n_ev))
            total_events += len(events)
            x = float(i % 2)
            subjects.append((f"t{i}", end, events, x))
        if total_events == 0:
            continue
        rows = []
        for sid, end, events, x in subjects:
            rows.extend(segment_subject(sid, end, events, x, stratified=stratified))
        return rows


def brute_force_loglik_grid(rows, grid):
    """Breslow partial log likelihood on a beta grid by explicit risk-set loops.

    Independent of the engine: risk sets are found by scanning every row
    for each event row (single covariate only).
    """
    grid = np.asarray(grid, dtype=float)
    ll = np.zeros_like(grid)
    for r in rows:
        if r.status != 1:
            continue
        t = r.stop
        ll = ll + r.covariates[0] * grid
        s0 = np.zeros_like(grid)
        for q in rows:
            if q.stratum_id == r.stratum_id and q.start < t <= q.stop:
                s0 += np.exp(q.covariates[0] * grid)
        ll = ll - np.log(s0)
    return ll


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
