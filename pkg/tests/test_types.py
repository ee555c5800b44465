import pytest

from perrkit.types import (CountingRow, DependenceSpec, ScenarioConfig, SubjectRecord,
                           ValidationError, validate_subject)


class TestValidateSubject:
    def test_accepts_valid_record(self):
        rec = SubjectRecord(id="a", end_time=2.0, treatment_time=1.0,
                            event_times=(0.5, 1.2))
        assert validate_subject(rec) is rec

    def test_rejects_unsorted_events(self):
        rec = SubjectRecord(id="a", end_time=2.0, event_times=(1.2, 0.5))
        with pytest.raises(ValidationError, match="unsorted"):
            validate_subject(rec)

    def test_rejects_duplicate_events(self):
        rec = SubjectRecord(id="a", end_time=2.0, event_times=(0.5, 0.5))
        with pytest.raises(ValidationError, match="event_times"):
            validate_subject(rec)

    def test_rejects_treatment_at_censoring(self):
        rec = SubjectRecord(id="a", end_time=2.0, treatment_time=2.0)
        with pytest.raises(ValidationError, match="treatment"):
            validate_subject(rec)

    def test_rejects_nonpositive_follow_up(self):
        with pytest.raises(ValidationError, match="end_time"):
            validate_subject(SubjectRecord(id="a", end_time=0.0))

    def test_event_at_end_time_allowed(self):
        rec = SubjectRecord(id="a", end_time=2.0, event_times=(2.0,))
        assert validate_subject(rec) is rec

    def test_event_after_end_rejected(self):
        rec = SubjectRecord(id="a", end_time=2.0, event_times=(2.5,))
        with pytest.raises(ValidationError, match="event"):
            validate_subject(rec)

    def test_error_carries_subject_and_field(self):
        try:
            validate_subject(SubjectRecord(id="weird", end_time=2.0, treatment_time=2.5))
        except ValidationError as err:
            assert err.subject_id == "weird"
            assert err.field_name == "treatment_time"
        else:
            pytest.fail("expected ValidationError")


class TestCountingRow:
    def test_rejects_empty_interval(self):
        with pytest.raises(ValidationError):
            CountingRow("a", "a", 0, 1.0, 1.0, 0, (0.0,))

    def test_rejects_bad_status(self):
        with pytest.raises(ValidationError):
            CountingRow("a", "a", 0, 0.0, 1.0, 2, (0.0,))

    def test_duration(self):
        row = CountingRow("a", "a", 0, 0.5, 2.0, 1, (1.0,))
        assert row.duration == pytest.approx(1.5)


class TestDependenceSpec:
    def test_none_requires_zero_value(self):
        with pytest.raises(ValueError):
            DependenceSpec(kind="none", value=1.0)

    def test_constant_requires_value(self):
        with pytest.raises(ValueError):
            DependenceSpec(kind="constant")

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            DependenceSpec(kind="sometimes", value=1.0)


class TestScenarioConfig:
    def test_defaults(self):
        cfg = ScenarioConfig(k=0.8, beta0=-0.5, log_hr=0.0,
                             dependence=DependenceSpec())
        assert cfg.n_pre_match == 600
        assert cfg.c0 == -2.0
        assert cfg.sigma_omega_sq == 0.5
        assert cfg.u_variance == 0.1
        assert cfg.tau_range == (1.0, 3.0)
        assert cfg.replicates == 500
        assert cfg.pooling_percentile == 0.95
        assert cfg.restriction_window is None

    def test_rejects_bad_tau_range(self):
        with pytest.raises(ValueError):
            ScenarioConfig(k=1.0, beta0=0.0, log_hr=0.0,
                           dependence=DependenceSpec(), tau_range=(3.0, 1.0))

    def test_rejects_nonpositive_shape(self):
        with pytest.raises(ValueError):
            ScenarioConfig(k=0.0, beta0=0.0, log_hr=0.0, dependence=DependenceSpec())
