"""Analysis-cohort construction: risk-set matching and counting-process rows.

Treated subjects are matched 1:1 to never-treated controls on exact
covariate keys; the control must still be under follow-up at the treated
subject's initiation time, which becomes the pair's index time.  Each
member's follow-up is then split into a prior period (up to the index)
and a post period (after it), optionally restricted to a window on either
side, and segmented at event times into (start, stop] rows carrying the
design [treated, post, treated x post].  The time origin is never reset:
post-period rows keep their calendar start/stop times.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .types import CountingRow, SubjectRecord

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MatchedPair:
    treated: SubjectRecord
    control: SubjectRecord
    index_time: float


@dataclass(frozen=True)
class AnalysisWindow:
    """One subject's analyzed span: prior (prior_start, index], post (index, post_end]."""

    prior_start: float
    index_time: float
    post_end: float


@dataclass(frozen=True)
class AnalyzedSubject:
    record: SubjectRecord
    treated: bool
    window: AnalysisWindow


def match_cohort(subjects: list[SubjectRecord], keys: list[str],
                 rng: np.random.Generator) -> list[MatchedPair]:
    """1:1 risk-set matching of treated subjects to never-treated controls.

    Treated subjects are processed in order of treatment time; eligible
    controls share the key values and are still under follow-up at that
    time.  Ties are broken uniformly at random; every control is used at
    most once.  Treated subjects without an eligible control (or with a
    treatment time equal to their entry time) are dropped with a warning.
    """
    for s in subjects:
        for key in keys:
            if key not in s.covariates:
                raise KeyError(f"subject {s.id!r} is missing matching key {key!r}")

    treated = [s for s in subjects if s.treated]
    if not treated:
        raise ValueError("no treated subjects to match")
    zero_prior = [s for s in treated if s.treatment_time <= s.entry_time]
    if zero_prior:
        logger.warning("dropping %d treated subject(s) with no prior exposure: %s",
                       len(zero_prior), [s.id for s in zero_prior])
        treated = [s for s in treated if s.treatment_time > s.entry_time]
    treated.sort(key=lambda s: (s.treatment_time, s.id))

    controls = sorted((s for s in subjects if not s.treated),
                      key=lambda s: (s.end_time, s.id))
    used = [False] * len(controls)

    pairs = []
    unmatched = []
    for t in treated:
        key_vals = tuple(t.covariates[k] for k in keys)
        eligible = [i for i, c in enumerate(controls)
                    if not used[i] and c.end_time > t.treatment_time
                    and tuple(c.covariates[k] for k in keys) == key_vals]
        if not eligible:
            unmatched.append(t.id)
            continue
        pick = eligible[int(rng.integers(len(eligible)))]
        used[pick] = True
        pairs.append(MatchedPair(treated=t, control=controls[pick],
                                 index_time=t.treatment_time))
    if unmatched:
        logger.warning("no eligible control for %d treated subject(s): %s",
                       len(unmatched), unmatched)
    return pairs


def split_periods(pair: MatchedPair, window: float | None = None,
                  ) -> tuple[AnalyzedSubject, AnalyzedSubject]:
    """Assign both pair members their prior/post analysis spans.

    With a restriction window w the prior period is
    (max(entry, index - w), index] and the post period
    (index, min(end, index + w)]; without one the full follow-up is used.
    """
    if window is not None and window <= 0:
        raise ValueError(f"restriction window must be > 0, got {window}")
    out = []
    for record, is_treated in ((pair.treated, True), (pair.control, False)):
        index = pair.index_time
        if not record.entry_time < index < record.end_time:
            raise ValueError(
                f"index time {index} outside subject {record.id!r}'s follow-up"
                f" ({record.entry_time}, {record.end_time})")
        prior_start = record.entry_time if window is None else max(record.entry_time,
                                                                   index - window)
        post_end = record.end_time if window is None else min(record.end_time,
                                                              index + window)
        out.append(AnalyzedSubject(record=record, treated=is_treated,
                                   window=AnalysisWindow(prior_start, index, post_end)))
    return out[0], out[1]


def _subject_rows(sub: AnalyzedSubject, restart_at_index: bool):
    """Segment one subject's analyzed span at its event times.

    Yields (start, stop, status, post_flag, raw_stratum) with raw_stratum =
    1 + number of analyzed events before the segment (reset at the index
    when restart_at_index is set).
    """
    w = sub.window
    events = set(t for t in sub.record.event_times if w.prior_start < t <= w.post_end)
    n_seen = 0
    for period_start, period_end, post in ((w.prior_start, w.index_time, 0),
                                           (w.index_time, w.post_end, 1)):
        if post and restart_at_index:
            n_seen = 0
        marks = sorted(t for t in events if period_start < t < period_end)
        marks.append(period_end)
        prev = period_start
        for t in marks:
            status = 1 if t in events else 0
            yield prev, t, status, post, n_seen + 1
            n_seen += status
            prev = t


def build_counting_rows(analyzed: list[AnalyzedSubject], stratify: bool = False,
                        pooling_percentile: float = 0.95,
                        restart_strata_at_index: bool = False) -> list[CountingRow]:
    """Expand analyzed subjects into counting-process rows.

    Covariates per row are [treated, post, treated*post].  When stratify
    is set, stratum_id is 1 + the subject's analyzed event count so far,
    with strata at or above the cohort percentile of per-subject event
    counts pooled into one; otherwise stratum_id = 0.
    """
    per_subject = []
    counts = []
    for sub in analyzed:
        segs = list(_subject_rows(sub, restart_strata_at_index))
        per_subject.append((sub, segs))
        counts.append(sum(s[2] for s in segs))

    if stratify:
        pool_at = max(1, int(np.quantile(np.asarray(counts), pooling_percentile,
                                         method="higher"))) if counts else 1
    rows = []
    for sub, segs in per_subject:
        trt = 1.0 if sub.treated else 0.0
        for start, stop, status, post, raw_stratum in segs:
            stratum = min(raw_stratum, pool_at) if stratify else 0
            rows.append(CountingRow(
                subject_id=sub.record.id,
                cluster_id=sub.record.id,
                stratum_id=stratum,
                start=start,
                stop=stop,
                status=status,
                covariates=(trt, float(post), trt * float(post)),
            ))
    return rows


@dataclass(frozen=True)
class RateCell:
    events: int
    person_time: float
    rate: float


def rate_table(rows: list[CountingRow]) -> dict[tuple[str, str], RateCell]:
    """Events, person-time and rate by group x period.

    Keys are (group, period) with group in {"treated", "control"} and
    period in {"prior", "post"}, read off each row's design covariates.
    """
    acc: dict[tuple[str, str], list[float]] = {}
    for row in rows:
        group = "treated" if row.covariates[0] == 1.0 else "control"
        period = "post" if row.covariates[1] == 1.0 else "prior"
        cell = acc.setdefault((group, period), [0, 0.0])
        cell[0] += row.status
        cell[1] += row.duration
    table = {}
    for key, (events, person_time) in acc.items():
        if person_time <= 0:
            raise ValueError(f"zero person-time in cell {key}")
        table[key] = RateCell(events=int(events), person_time=person_time,
                              rate=events / person_time)
    return table
