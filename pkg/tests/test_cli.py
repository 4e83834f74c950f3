"""
Tests for the command-line front end.

Commands run in-process through main(argv, stdout, stderr).
"""

import io
import json
import math

import numpy as np
import pytest

from pbchernoff.cli import (
    EXIT_ASSERTION,
    EXIT_CONFIG,
    EXIT_DOMAIN,
    EXIT_OK,
    ConfigError,
    dumps_json,
    main,
    parse_lambda_grid,
)


def run(argv):
    """Run the CLI and return (exit code, stdout, stderr)."""
    stdout, stderr = io.StringIO(), io.StringIO()
    code = main(argv, stdout=stdout, stderr=stderr)
    return code, stdout.getvalue(), stderr.getvalue()


def csv_body(text):
    """Drop the generated_at comment line."""
    lines = text.splitlines()
    assert lines[0].startswith("# generated_at=")
    return lines[1:]


@pytest.fixture
def coverage_config(write_json):
    return write_json("coverage.json", {
        "environment": {"kind": "bernoulli_ensemble", "p": [0.1, 0.2, 0.3]},
        "bound_kind": "chernoff_kl",
        "posterior_rule": "prior",
        "n": 100,
        "delta": 0.05,
        "trials": 40,
        "seed": 7,
    })


class TestHelpers:
    """Output formatting and argument parsing."""

    def test_lambda_grid_range(self):
        """start:stop:step includes the stop value."""
        grid = parse_lambda_grid("0:5:0.05")
        assert grid.size == 101
        assert grid[-1] == pytest.approx(5.0)

    def test_lambda_grid_list(self):
        """Comma-separated values."""
        np.testing.assert_array_equal(parse_lambda_grid("0.5,1,2"), [0.5, 1.0, 2.0])

    def test_lambda_grid_invalid(self):
        """Garbage raises ConfigError."""
        with pytest.raises(ConfigError):
            parse_lambda_grid("1:0:0.1")
        with pytest.raises(ConfigError):
            parse_lambda_grid("a,b")

    def test_dumps_json_floats(self):
        """17 significant digits, infinities as strings."""
        document = json.loads(dumps_json({"x": 0.1, "y": math.inf, "flag": True, "items": [1, 2.5]}))
        assert document == {"x": 0.1, "y": "inf", "flag": True, "items": [1, 2.5]}


class TestBoundCommand:
    """bound compute / compare."""

    def test_compute_subgaussian(self, write_json):
        """Sub-Gaussian bound with an echoed config."""
        config = write_json("q.json", {
            "emp_gibbs_risk": 0.1, "kl_div": 0.0, "n": 101, "delta": 0.05,
            "kind": "subgaussian", "params": {"expected_sigma2": 0.25},
        })
        code, out, _ = run(["bound", "compute", "--config", str(config)])
        assert code == EXIT_OK
        document = json.loads(out)
        expected = 0.1 + math.sqrt(2 * 0.25 * math.log(101 / 0.05) / 100)
        assert document["report"]["value"] == pytest.approx(expected, rel=1e-12)
        assert document["config"]["n"] == 101

    def test_compute_default_kind_with_aliases(self, write_json):
        """risk/kl aliases and a psi descriptor."""
        config = write_json("q.json", {
            "risk": 0.1, "kl": 0.0, "n": 101, "delta": 0.05,
            "psi": {"kind": "subgaussian", "sigma2": 0.25},
        })
        code, out, _ = run(["bound", "compute", "--config", str(config)])
        assert code == EXIT_OK
        expected = 0.1 + math.sqrt(2 * 0.25 * math.log(101 / 0.05) / 100)
        assert json.loads(out)["report"]["value"] == pytest.approx(expected, rel=1e-6)

    def test_compare(self, write_json):
        """One report per requested kind."""
        config = write_json("q.json", {"emp_gibbs_risk": 0.1, "kl_div": 1.0, "n": 1000, "delta": 0.05})
        code, out, _ = run(["bound", "compare", "--config", str(config), "--kinds", "mcallester,seeger,chernoff_kl"])
        assert code == EXIT_OK
        reports = json.loads(out)["reports"]
        assert [r["kind"] for r in reports] == ["mcallester", "seeger", "chernoff_kl"]

    def test_compare_csv(self, write_json):
        """CSV output carries one row per kind."""
        config = write_json("q.json", {"emp_gibbs_risk": 0.1, "kl_div": 1.0, "n": 1000, "delta": 0.05})
        code, out, _ = run(["bound", "compare", "--config", str(config), "--kinds", "mcallester,seeger",
                            "--format", "csv"])
        assert code == EXIT_OK
        body = csv_body(out)
        assert body[0].startswith("kind,value")
        assert len(body) == 3

    def test_malformed_json(self, temp_dir):
        """Exit 2 with the line and column."""
        path = temp_dir / "q.json"
        path.write_text("{\n  \"n\": 5,\n")
        code, _, err = run(["bound", "compute", "--config", str(path)])
        assert code == EXIT_CONFIG
        assert "line" in err and "column" in err

    def test_missing_field(self, write_json):
        """Schema errors exit 2 and name the field."""
        config = write_json("q.json", {"emp_gibbs_risk": 0.1, "n": 10, "delta": 0.05})
        code, _, err = run(["bound", "compute", "--config", str(config)])
        assert code == EXIT_CONFIG
        assert "kl" in err

    def test_missing_file(self, temp_dir):
        """Unreadable config exits 2."""
        code, _, _ = run(["bound", "compute", "--config", str(temp_dir / "nope.json")])
        assert code == EXIT_CONFIG

    def test_non_utf8_config(self, temp_dir):
        """A config that is not UTF-8 exits 2."""
        path = temp_dir / "q.json"
        path.write_bytes(b"{\"n\": \xff\xfe}")
        code, _, err = run(["bound", "compute", "--config", str(path)])
        assert code == EXIT_CONFIG
        assert "cannot read" in err

    def test_domain_error(self, write_json):
        """delta outside (0, 1) exits 3."""
        config = write_json("q.json", {"emp_gibbs_risk": 0.1, "kl_div": 0.0, "n": 10, "delta": 1.5,
                                       "kind": "chernoff_kl"})
        code, _, err = run(["bound", "compute", "--config", str(config)])
        assert code == EXIT_DOMAIN
        assert "delta" in err


class TestPosteriorCommand:
    """posterior optimize."""

    @pytest.fixture
    def class_file(self, write_json):
        return write_json("class.json", {
            "n": 2,
            "models": [
                {"emp_risk": 0.2, "prior": 0.5, "psi": {"kind": "subgaussian", "sigma2": 0.2}},
                {"emp_risk": 0.4, "prior": 0.5, "psi": {"kind": "subgaussian", "sigma2": 0.0}},
            ],
        })

    def test_fixed_lambda(self, class_file):
        """rho* at lambda = 1 and its MAP model."""
        code, out, _ = run(["posterior", "optimize", "--class", str(class_file), "--delta", "0.05",
                            "--fixed-lambda", "1"])
        assert code == EXIT_OK
        document = json.loads(out)
        assert document["weights"][0] == pytest.approx(0.524979, abs=1e-6)
        assert document["map_index"] == 0

    def test_optimize(self, class_file):
        """Optimized run reports the bound and the evaluation count."""
        code, out, _ = run(["posterior", "optimize", "--class", str(class_file), "--delta", "0.05"])
        assert code == EXIT_OK
        document = json.loads(out)
        assert sum(document["weights"]) == pytest.approx(1.0)
        assert document["evaluations"] > 0

    def test_non_simplex_prior(self, write_json):
        """A prior that does not sum to one exits 3."""
        path = write_json("class.json", {
            "n": 10,
            "models": [
                {"emp_risk": 0.2, "prior": 0.7, "psi": {"kind": "subgaussian", "sigma2": 0.2}},
                {"emp_risk": 0.4, "prior": 0.7, "psi": {"kind": "subgaussian", "sigma2": 0.2}},
            ],
        })
        code, _, err = run(["posterior", "optimize", "--class", str(path), "--delta", "0.05"])
        assert code == EXIT_DOMAIN
        assert "sums to" in err

    def test_missing_class_file(self, temp_dir):
        """Missing class file exits 2."""
        code, _, _ = run(["posterior", "optimize", "--class", str(temp_dir / "none.json"), "--delta", "0.05"])
        assert code == EXIT_CONFIG


class TestValidateCommand:
    """validate coverage / lemma2 / expmoment."""

    def test_coverage_writes_csv_and_json(self, coverage_config, temp_dir):
        """Per-trial CSV with the fixed header plus a JSON summary."""
        out = temp_dir / "results" / "coverage"
        code, stdout, _ = run(["validate", "coverage", "--config", str(coverage_config), "--out", str(out)])
        assert code == EXIT_OK
        body = csv_body((temp_dir / "results" / "coverage.csv").read_text())
        assert body[0] == "trial_id,bound,gibbs_true_risk,gibbs_emp_risk,violated"
        assert len(body) == 41
        assert body[1].split(",")[-1] in ("0", "1")
        summary = json.loads((temp_dir / "results" / "coverage.json").read_text())
        assert summary["summary"]["trials"] == 40
        assert summary["config"]["seed"] == 7
        assert json.loads(stdout) == summary

    def test_coverage_worker_count_does_not_matter(self, coverage_config):
        """--workers 1 and 8 give the same violation count."""
        _, one, _ = run(["validate", "coverage", "--config", str(coverage_config), "--workers", "1"])
        _, eight, _ = run(["validate", "coverage", "--config", str(coverage_config), "--workers", "8"])
        assert json.loads(one)["summary"]["violations"] == json.loads(eight)["summary"]["violations"]

    def test_coverage_run_logs(self, coverage_config, tmp_path):
        """Run logs land under PBC_LOG_DIR."""
        code, out, _ = run(["validate", "coverage", "--config", str(coverage_config)])
        assert code == EXIT_OK
        run_id = json.loads(out)["run_id"]
        run_dir = tmp_path / "logs" / run_id
        assert len((run_dir / "trials.jsonl").read_text().splitlines()) == 40
        assert "RUN_END" in (run_dir / "run.log").read_text()

    def test_lemma2_zero_row(self, write_json):
        """c = 0 gives the row (0, 1, 1)."""
        config = write_json("lemma2.json", {
            "environment": {"kind": "bernoulli_ensemble", "p": [0.5]},
            "n": 50, "trials": 2000, "seed": 1, "c_grid": [0.0, 1.0],
        })
        code, out, _ = run(["validate", "lemma2", "--config", str(config), "--format", "csv"])
        assert code == EXIT_OK
        body = csv_body(out)
        assert body[0] == "c,survival,exp_neg_c,se"
        assert [float(v) for v in body[1].split(",")[:3]] == [0.0, 1.0, 1.0]

    def test_expmoment_m_at_least_n(self, write_json):
        """m >= n exits 3."""
        config = write_json("moment.json", {
            "environment": {"kind": "bernoulli_ensemble", "p": [0.3]},
            "n": 10, "trials": 100, "seed": 1, "m": 10,
        })
        code, _, err = run(["validate", "expmoment", "--config", str(config)])
        assert code == EXIT_DOMAIN
        assert "PreconditionError" in err

    def test_failed_assertion_exits_4(self, write_json):
        """A zero variance proxy turns the bound into the empirical risk and coverage fails."""
        config = write_json("coverage.json", {
            "environment": {"kind": "bernoulli_ensemble", "p": [0.5]},
            "bound_kind": "subgaussian",
            "params": {"expected_sigma2": 0.0},
            "n": 1000, "delta": 0.05, "trials": 200, "seed": 3,
        })
        code, out, _ = run(["validate", "coverage", "--config", str(config)])
        assert code == EXIT_ASSERTION
        assert json.loads(out)["summary"]["passed"] is False

    def test_unknown_environment_field(self, write_json):
        """Bad environment kinds are schema errors."""
        config = write_json("coverage.json", {
            "environment": {"kind": "gaussian"}, "n": 10, "trials": 1,
        })
        code, _, _ = run(["validate", "coverage", "--config", str(config)])
        assert code == EXIT_CONFIG


class TestCgfCommand:
    """cgf estimate / logsobolev."""

    def test_estimate_csv(self, temp_dir):
        """lambda,cgf rows on the requested grid."""
        samples = temp_dir / "losses.csv"
        samples.write_text("loss\n0\n1\n")
        code, out, _ = run(["cgf", "estimate", "--samples", str(samples), "--lambda-grid", "0:1:0.5"])
        assert code == EXIT_OK
        body = csv_body(out)
        assert body[0] == "lambda,cgf"
        rows = [[float(v) for v in line.split(",")] for line in body[1:]]
        assert [r[0] for r in rows] == [0.0, 0.5, 1.0]
        assert rows[0][1] == pytest.approx(0.0, abs=1e-15)
        assert rows[2][1] == pytest.approx(0.120115, abs=1e-6)

    def test_estimate_bad_csv(self, temp_dir):
        """Unparseable samples exit 2."""
        samples = temp_dir / "losses.csv"
        samples.write_text("loss\n0\nabc\n")
        code, _, _ = run(["cgf", "estimate", "--samples", str(samples)])
        assert code == EXIT_CONFIG

    def test_estimate_non_utf8_csv(self, temp_dir):
        """Samples with invalid UTF-8 bytes exit 2, not 3."""
        samples = temp_dir / "losses.csv"
        samples.write_bytes(b"loss\n0.5\n\xff\xfe\x80\n")
        code, _, err = run(["cgf", "estimate", "--samples", str(samples)])
        assert code == EXIT_CONFIG
        assert "cannot read samples CSV" in err

    def test_logsobolev(self, temp_dir):
        """Limit var / mean grad_norm2 in the JSON document."""
        samples = temp_dir / "pairs.csv"
        a = math.sqrt(3.58)
        losses = [1.0 if i % 2 == 0 else 1.0 + 2 * a for i in range(200)]
        rows = "\n".join(f"{loss!r},839" for loss in losses)
        samples.write_text("loss,grad_norm2\n" + rows + "\n")
        code, out, _ = run(["cgf", "logsobolev", "--samples", str(samples)])
        assert code == EXIT_OK
        document = json.loads(out)
        assert document["limit"] == pytest.approx(3.58 / 839.0, abs=1e-6)
        assert document["assumption_failure"] is False
        assert len(document["curve"]) == 61
