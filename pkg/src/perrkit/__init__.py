"""Prior event rate ratio toolkit for recurrent-event cohorts.

Estimates treatment effects as the ratio of post- to prior-period hazard
ratios in matched cohorts, with an event-number-stratified gamma-frailty
variant that reduces the bias caused by event dependence, a
random-intercept diagnostic for detecting that dependence, and a Monte
Carlo harness for studying estimator behavior.
"""

from .cohort import (AnalysisWindow, AnalyzedSubject, MatchedPair, RateCell,
                     build_counting_rows, match_cohort, rate_table, split_periods)
from .cox import (FitOptions, MonotoneLikelihoodError, estimate_perr_ag,
                  estimate_perr_cf, fit_cox, fit_gamma_frailty, partial_loglik,
                  robust_variance)
from .drim import PanelRow, discretize, fit_drim
from .harness import (DataError, ReplicateRecord, ScenarioError, ScenarioResult,
                      SuiteReport, calibrate_beta0, compute_metrics, ingest_subjects,
                      parse_scenario_config, read_counting_csv, records_csv,
                      run_scenario, scenario_suite, suite_tsv, table_rows,
                      write_events_csv, write_subjects_csv)
from .simulate import (EnvelopeViolationError, dependence_effect, draw_frailty,
                       draw_treatment_time, simulate_cohort, thinning_simulate)
from .types import (ConvergenceError, CountingRow, DependenceSpec, DrimResult,
                    FitResult, PerrEstimate, PerrKitError, ScenarioConfig,
                    SimMetrics, SubjectRecord, ValidationError, validate_subject)

__version__ = "0.1.0"
