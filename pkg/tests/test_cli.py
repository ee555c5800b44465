import math

import numpy as np
import pytest

from perrkit.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from perrkit.harness import write_events_csv, write_subjects_csv
from perrkit.simulate import simulate_cohort
from perrkit.types import DependenceSpec, ScenarioConfig

CONFIG = """
k = 0.8
beta0 = -0.5
log_hr = 0.6931471805599453
dependence = none
replicates = 1
master_seed = 5
n_pre_match = 200
"""


@pytest.fixture
def cohort_files(tmp_path):
    cfg = ScenarioConfig(k=0.8, beta0=-0.5, log_hr=math.log(2.0),
                         dependence=DependenceSpec(), master_seed=5, n_pre_match=200)
    subjects = simulate_cohort(cfg, 0)
    sub = tmp_path / "subjects.csv"
    ev = tmp_path / "events.csv"
    write_subjects_csv(subjects, str(sub))
    write_events_csv(subjects, str(ev))
    return str(sub), str(ev)


class TestCli:
    def test_usage_error_exit_code(self, capsys):
        assert main(["perr"]) == EXIT_USAGE
        assert "usage error" in capsys.readouterr().err

    def test_missing_file_is_data_error(self, capsys, tmp_path):
        rc = main(["perr", "--subjects", str(tmp_path / "nope.csv"),
                   "--events", str(tmp_path / "nope2.csv")])
        assert rc == EXIT_DATA

    def test_simulate_then_perr(self, tmp_path, capsys):
        cfg_path = tmp_path / "scenario.cfg"
        cfg_path.write_text(CONFIG)
        rc = main(["simulate", "--config", str(cfg_path),
                   "--subjects-out", str(tmp_path / "s.csv"),
                   "--events-out", str(tmp_path / "e.csv")])
        assert rc == EXIT_OK
        out = capsys.readouterr().out
        assert "wrote 200 subjects" in out

        rc = main(["perr", "--subjects", str(tmp_path / "s.csv"),
                   "--events", str(tmp_path / "e.csv"),
                   "--match-keys", "z", "--stratify"])
        assert rc == EXIT_OK
        out = capsys.readouterr().out
        assert "recurrent-event estimate" in out
        assert "frailty-adjusted estimate" in out
        assert "person-time" in out

    def test_perr_on_counting_rows(self, tmp_path, capsys, cohort_files):
        # expand one cohort to counting rows, write them, reanalyze
        from perrkit.cohort import build_counting_rows, match_cohort, split_periods
        from perrkit.harness import ingest_subjects
        subjects = ingest_subjects(*cohort_files)
        pairs = match_cohort(subjects, ["z"], np.random.default_rng(0))
        analyzed = [s for p in pairs for s in split_periods(p)]
        rows = build_counting_rows(analyzed)
        path = tmp_path / "counting.csv"
        with open(path, "w") as fh:
            fh.write("id,start,stop,status,trt,post,trt_post\n")
            for r in rows:
                fh.write(f"{r.subject_id},{r.start!r},{r.stop!r},{r.status},"
                         f"{r.covariates[0]},{r.covariates[1]},{r.covariates[2]}\n")
        rc = main(["perr", "--counting", str(path), "--stratify"])
        assert rc == EXIT_OK
        assert "recurrent-event estimate" in capsys.readouterr().out

    def test_counting_excludes_subjects(self, tmp_path, capsys):
        rc = main(["perr", "--counting", "x.csv", "--subjects", "y.csv",
                   "--events", "z.csv"])
        assert rc == EXIT_USAGE

    def test_drim_command(self, capsys, cohort_files):
        sub, ev = cohort_files
        rc = main(["drim", "--subjects", sub, "--events", ev,
                   "--interval", "0.25", "--nodes", "9"])
        assert rc == EXIT_OK
        assert "odds ratio" in capsys.readouterr().out

    def test_scenario_single_row_tsv(self, tmp_path, capsys):
        out_path = tmp_path / "metrics.tsv"
        rc = main(["scenario", "--table", "main", "--rows", "none_hr2.0",
                   "--replicates", "2", "--seed", "9", "--methods", "ag",
                   "--out", str(out_path),
                   "--records-out", str(tmp_path / "records.csv")])
        assert rc == EXIT_OK
        lines = out_path.read_text().splitlines()
        assert lines[0].split("\t")[0] == "scenario"
        assert lines[1].split("\t")[0] == "none_hr2.0"
        rec = (tmp_path / "records.csv").read_text()
        assert rec.startswith("# none_hr2.0")

    def test_scenario_unknown_row(self, capsys):
        rc = main(["scenario", "--rows", "of_cake"])
        assert rc == EXIT_USAGE

    def test_bad_config_key_is_data_error(self, tmp_path, capsys):
        cfg_path = tmp_path / "bad.cfg"
        cfg_path.write_text("k = 1\nbanana = 2\n")
        rc = main(["simulate", "--config", str(cfg_path),
                   "--subjects-out", "a.csv", "--events-out", "b.csv"])
        assert rc == EXIT_DATA
