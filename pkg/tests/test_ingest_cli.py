"""CSV ingestion/emission and the command-line interface."""

import csv
import json
import math
import os

import numpy as np
import pytest

from opbayes.cli import main
from opbayes.errors import ValidationError
from opbayes.ingest import emit_counts, emit_losses, fmt, ingest_counts, ingest_losses

EXAMPLE_COUNTS = [0, 0, 0, 0, 1, 0, 1, 1, 1, 0, 2, 1, 1, 2, 0]


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def _counts_csv(tmp_path, counts=EXAMPLE_COUNTS, name="counts.csv"):
    lines = ["bank_id,year,count,exposure"] + [f"b1,{k},{n},1" for k, n in enumerate(counts, 1)]
    return _write(tmp_path / name, "\n".join(lines) + "\n")


def _config(tmp_path, obj, name="config.json"):
    return _write(tmp_path / name, json.dumps(obj))


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestIngest:
    def test_example_counts(self, tmp_path):
        panel = ingest_counts(_counts_csv(tmp_path))
        assert panel.n_banks == 1
        assert panel.banks[0].n_years == 15 and panel.banks[0].total_count == 10

    def test_negative_count_names_line(self, tmp_path):
        p = _write(tmp_path / "c.csv", "bank_id,year,count,exposure\nb,1,2,1\nb,2,-1,1\n")
        with pytest.raises(ValidationError, match=r"c\.csv:3"):
            ingest_counts(p)

    def test_malformed_rows(self, tmp_path):
        for body in ["b,1,x,1", "b,1,1.5,1", "b,1,1", "b,1,1,0"]:
            p = _write(tmp_path / "m.csv", "bank_id,year,count,exposure\n" + body + "\n")
            with pytest.raises(ValidationError, match=r"m\.csv:2"):
                ingest_counts(p)

    def test_missing_column(self, tmp_path):
        with pytest.raises(ValidationError, match="count"):
            ingest_counts(_write(tmp_path / "x.csv", "bank_id,year\nb,1\n"))
        with pytest.raises(ValidationError, match="amount"):
            ingest_losses(_write(tmp_path / "y.csv", "cell_id,year\nc,1\n"))

    def test_empty_file_warns(self, tmp_path):
        with pytest.warns(UserWarning):
            panel = ingest_counts(_write(tmp_path / "e.csv", "bank_id,year,count,exposure\n"))
        assert panel.n_banks == 0

    def test_cell_id_alias_and_default_exposure(self, tmp_path):
        panel = ingest_counts(_write(tmp_path / "a.csv", "cell_id,year,count\nc,1,3\nc,2,1\n"))
        np.testing.assert_array_equal(panel.banks[0].exposures, [1.0, 1.0])

    def test_losses_below_threshold_counted(self, tmp_path):
        p = _write(tmp_path / "l.csv", "cell_id,year,amount\nc,1,5\nc,1,0.5\nc,2,3\nd,1,2\n")
        out = ingest_losses(p, threshold=1.0)
        assert out["c"].n_below_threshold == 1
        np.testing.assert_array_equal(out["c"].amounts, [5.0, 3.0])
        with pytest.raises(ValidationError, match=r"l2\.csv:2"):
            ingest_losses(_write(tmp_path / "l2.csv", "cell_id,year,amount\nc,1,-4\n"))

    def test_round_trip_is_byte_identical(self, tmp_path):
        src = _write(tmp_path / "in.csv", "bank_id,year,count,exposure\n"
                     "x,2001,3,0.123456789012345\nx,2002,0,2\ny,2001,7,1e-3\n")
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        emit_counts(ingest_counts(src), a)
        emit_counts(ingest_counts(a), b)
        assert a.read_bytes() == b.read_bytes()
        lsrc = _write(tmp_path / "lin.csv", "cell_id,year,amount\nc,1,1234.5678901234\nc,2,0.1\n")
        la, lb = tmp_path / "la.csv", tmp_path / "lb.csv"
        emit_losses(ingest_losses(lsrc), la)
        emit_losses(ingest_losses(la), lb)
        assert la.read_bytes() == lb.read_bytes()

    def test_fmt(self):
        assert fmt(3.0) == "3" and fmt(math.inf) == "inf"
        assert fmt(1 / 3) == "0.333333333333"


class TestFitPrior:
    def test_poisson_gamma(self, tmp_path, capsys):
        cfg = _config(tmp_path, {"fit_prior": {"family": "poisson_gamma", "mean": 0.5,
                                               "interval": [0.25, 0.75], "prob": 2 / 3}})
        assert main(["fit-prior", "--config", cfg]) == 0
        res = json.loads(capsys.readouterr().out)
        assert round(res["params"]["alpha"], 3) == 3.407
        assert round(res["params"]["beta"], 3) == 0.147

    def test_pareto_gamma_with_out_file(self, tmp_path, capsys):
        cfg = _config(tmp_path, {"fit_prior": {"family": "pareto_gamma", "lower_bound": 2,
                                               "mean": 5, "interval": [4, 6]}})
        out = tmp_path / "prior.json"
        assert main(["fit-prior", "--config", cfg, "--out", str(out)]) == 0
        res = json.loads(out.read_text())
        assert abs(res["params"]["alpha"] - 23.086) < 0.02
        assert "alpha = 23.0" in capsys.readouterr().out

    def test_infeasible_exits_4(self, tmp_path, capsys):
        # with E[xi] = 5 and xi >= 2 the interval's mass cannot drop to 2/3
        cfg = _config(tmp_path, {"fit_prior": {"family": "pareto_gamma", "lower_bound": 2,
                                               "threshold": 1, "loss_interval": [1.2, 1.9], "companion": 5,
                                               "prob": 2 / 3}})
        assert main(["fit-prior", "--config", cfg]) == 4

    def test_unknown_family_exits_2(self, tmp_path):
        cfg = _config(tmp_path, {"fit_prior": {"family": "weibull"}})
        assert main(["fit-prior", "--config", cfg]) == 2

    def test_missing_config_exits_2(self, tmp_path):
        assert main(["fit-prior", "--config", str(tmp_path / "none.json")]) == 2


class TestUpdate:
    def test_example_counts_trajectory(self, tmp_path):
        cfg = _config(tmp_path, {"update": {"family": "poisson_gamma", "counts": _counts_csv(tmp_path),
                                            "prior": {"alpha": 3.407, "beta": 0.147}}})
        out = tmp_path / "traj.csv"
        assert main(["update", "--config", cfg, "--out", str(out)]) == 0
        rows = _read_csv(out)
        assert rows[0] == ["step", "alpha_hat", "beta_hat", "bayes_estimate", "mle_estimate"]
        assert len(rows) == 16
        assert abs(float(rows[1][3]) - 0.436) <= 0.001
        assert [float(r[4]) for r in rows[1:5]] == [0.0] * 4
        # Bayes mean is (alpha + sum N) beta / (1 + k beta)
        for k, r in enumerate(rows[1:], 1):
            ref = (3.407 + sum(EXAMPLE_COUNTS[:k])) * 0.147 / (1 + k * 0.147)
            assert float(r[3]) == pytest.approx(ref, rel=1e-11)

    def test_pareto_below_threshold(self, tmp_path):
        base = {"family": "pareto", "threshold": 2.0, "data": [3.0, 1.5, 4.0],
                "prior": {"alpha": 23.086, "beta": 0.217, "lower_trunc": 2.0}}
        assert main(["update", "--config", _config(tmp_path, {"update": base})]) == 2
        base["exclude_below_threshold"] = True
        out = tmp_path / "p.csv"
        assert main(["update", "--config", _config(tmp_path, {"update": base}), "--out", str(out)]) == 0
        assert len(_read_csv(out)) == 3

    def test_lognormal_mu(self, tmp_path, capsys):
        cfg = _config(tmp_path, {"update": {"family": "lognormal_mu", "sigma": 2.0,
                                            "prior": {"mu": 0.28, "sigma": 0.21},
                                            "data": [1.0, math.e]}})
        assert main(["update", "--config", cfg]) == 0
        rows = capsys.readouterr().out.strip().splitlines()
        assert rows[2].split(",")[4] == "0.5"


class TestCalibrate:
    def test_smoke(self, tmp_path):
        lines = ["bank_id,year,count,exposure"]
        rng = np.random.default_rng(2)
        for j in range(30):
            lam = rng.gamma(3.0, 0.5)
            for k in range(5):
                lines.append(f"b{j},{k},{rng.poisson(lam)},1")
        p = _write(tmp_path / "panel.csv", "\n".join(lines) + "\n")
        out = tmp_path / "cal.json"
        assert main(["calibrate", "--config", _config(tmp_path, {"calibrate": {"counts": p}}),
                     "--seed", "1", "--out", str(out)]) == 0
        res = json.loads(out.read_text())
        assert res["mle"]["method"] == "mle" and res["mom"]["method"] == "mom"
        assert len(res["posteriors"]) == 30

    def test_homogeneous_flag(self, tmp_path):
        p = _write(tmp_path / "h.csv", "bank_id,year,count\n" +
                   "".join(f"b{j},{k},2\n" for j in range(5) for k in range(4)))
        out = tmp_path / "h.json"
        assert main(["calibrate", "--config", _config(tmp_path, {"calibrate": {"counts": p}}),
                     "--seed", "0", "--out", str(out)]) == 0
        res = json.loads(out.read_text())
        assert res["mom"]["homogeneous"] and res["mle"]["boundary"]


SIM = {"simulate": {
    "cells": [
        {"cell_id": "a", "frequency": {"alpha": 3.407, "beta": 0.147},
         "severity": {"family": "lognormal", "mu": {"mu": 0.28, "sigma": 0.21}, "sigma": 2.0}},
        {"cell_id": "b", "frequency": {"rate": 2.0},
         "severity": {"family": "pareto", "xi": {"alpha": 23.086, "beta": 0.217, "lower_trunc": 2.0},
                      "threshold": 1.0}},
    ],
    "copula": {"kind": "gaussian", "correlation": [[1, 0.5], [0.5, 1]],
               "coupling": [["a", "frequency"], ["b", "severity"]]},
    "samples": 5000,
}}


class TestSimulate:
    def _run(self, tmp_path, name, *flags):
        out = tmp_path / name
        assert main(["simulate", "--config", _config(tmp_path, SIM), "--out", str(out), *flags]) == 0
        return {f: (out / f).read_bytes() for f in sorted(os.listdir(out))}

    def test_byte_identical_across_runs_and_workers(self, tmp_path):
        a = self._run(tmp_path, "r1", "--seed", "7", "--workers", "1")
        b = self._run(tmp_path, "r2", "--seed", "7", "--workers", "1")
        c = self._run(tmp_path, "r3", "--seed", "7", "--workers", "4")
        assert set(a) == {"cell_samples.csv", "total_samples.csv", "summary.json"}
        assert a == b == c
        d = self._run(tmp_path, "r4", "--seed", "8")
        assert d["total_samples.csv"] != a["total_samples.csv"]

    def test_summary_schema(self, tmp_path):
        s = json.loads(self._run(tmp_path, "s", "--seed", "3")["summary.json"])
        assert s["seed"] == 3 and s["samples"] == 5000 and s["quantile"] == 0.999
        assert {"total_quantile", "sum_of_quantiles", "cells"} <= set(s)

    def test_seed_defaults_with_warning_or_fails_in_audit(self, tmp_path, capsys):
        cfg = _config(tmp_path, SIM)
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "d")]) == 0
        assert "no seed" in capsys.readouterr().err
        assert main(["simulate", "--config", cfg, "--audit", "--out", str(tmp_path / "e")]) == 2

    def test_bad_quantile_exits_2(self, tmp_path):
        cfg = _config(tmp_path, SIM)
        assert main(["simulate", "--config", cfg, "--seed", "1", "--quantile", "1.5"]) == 2
