from __future__ import annotations

import json
import math
from dataclasses import replace

import pytest

from chemorad import harness
from chemorad.errors import ConfigError, SchemeError
from chemorad.harness import (
    RunConfig,
    RunRecord,
    SweepConfig,
    collect_records,
    estimate_blowup_threshold,
    parse_config,
    parse_sweep_config,
    record_path,
    run_single,
    run_sweep,
    timeseries_path,
)
from chemorad.model import InitialProfile, ProblemParams
from chemorad.stepper import StepperConfig

MINIMAL = """
[problem]
n = 3
R = 1
M = 1
m = 1
[initial]
kind = constant
amplitude = 3
[grid]
N = 128
"""


def template(tmp_path, **problem):
    return RunConfig(
        params=ProblemParams(n=3, **problem),
        u0=InitialProfile.gaussian(1.0, 0.0, 0.3),
        N=64,
        stepper=StepperConfig(t_end=0.5),
        out_dir=str(tmp_path),
    )


class TestParse:
    def test_minimal(self):
        cfg = parse_config(MINIMAL)
        assert cfg.params == ProblemParams(n=3, R=1.0, M=1.0, m=1.0)
        assert cfg.u0 == InitialProfile.constant(3.0)
        assert cfg.N == 128
        assert cfg.stepper == StepperConfig()
        assert cfg.cadence == 10.0

    def test_case_sensitive_keys(self):
        cfg = parse_config(MINIMAL.replace("M = 1", "M = 0.5").replace("m = 1", "m = 1.5"))
        assert (cfg.params.M, cfg.params.m) == (0.5, 1.5)

    def test_z_monitor_outside_window(self):
        text = MINIMAL.replace("M = 1", "M = 3") + "[monitors]\nbeta = 1.5\n"
        with pytest.raises(ConfigError, match=r"M < 2k_D/\(n-2\)"):
            parse_config(text)

    def test_large_M_without_z_monitor_is_fine(self):
        assert parse_config(MINIMAL.replace("M = 1", "M = 3")).setup()[2].beta is None

    def test_dimension_two(self):
        with pytest.raises(ConfigError) as exc:
            parse_config(MINIMAL.replace("n = 3", "n = 2"))
        assert exc.value.key == "n"

    @pytest.mark.parametrize(
        "text, key",
        [
            (MINIMAL + "[grid]\nNN = 3\n", None),
            (MINIMAL.replace("[grid]", "[grids]"), "grids"),
            (MINIMAL + "[stepper]\ncfl_max = 0.3\n", "cfl_max"),
            (MINIMAL.replace("N = 128", "N = many"), "N"),
            (MINIMAL.replace("N = 128", "N = 8"), "N"),
            (MINIMAL + "[stepper]\ncfl = 2\n", "cfl"),
            (MINIMAL.replace("amplitude = 3", "amplitude = 3\nwidth = 0.2"), "width"),
            (MINIMAL.replace("kind = constant", "kind = blob"), "kind"),
            (MINIMAL + "[monitors]\ngamma = 0.5\n", "gamma"),
            ("not a config", None),
        ],
    )
    def test_errors(self, text, key):
        with pytest.raises(ConfigError) as exc:
            parse_config(text)
        if key is not None:
            assert exc.value.key == key

    def test_digest_ignores_order_and_output_dir(self):
        a = parse_config(MINIMAL + "[output]\ndir = a\n")
        reordered = "[grid]\nN = 128\n[initial]\namplitude = 3\nkind = constant\n[problem]\nm = 1\nM = 1\nR = 1\nn = 3\n[output]\ndir = b\n"
        b = parse_config(reordered)
        assert a.digest == b.digest
        assert a.digest != parse_config(MINIMAL.replace("N = 128", "N = 64")).digest

    def test_sweep(self):
        sw = parse_sweep_config(MINIMAL + "[sweep]\nm_values = 0.5, 1.5\nM_values = 1\nworkers = 3\n")
        assert sw.m_values == (0.5, 1.5) and sw.M_values == (1.0,)
        assert sw.workers == 3 and not sw.bisect
        with pytest.raises(ConfigError):
            parse_sweep_config(MINIMAL + "[sweep]\nM_lo = 5\nM_hi = 1\n")
        with pytest.raises(ConfigError):
            parse_sweep_config(MINIMAL)

    def test_threads_env(self, monkeypatch):
        sw = SweepConfig(parse_config(MINIMAL), workers=2)
        monkeypatch.setenv("CHEMO_THREADS", "5")
        assert sw.effective_workers() == 5
        monkeypatch.setenv("CHEMO_THREADS", "x")
        with pytest.raises(ConfigError):
            sw.effective_workers()


class TestRunSingle:
    def test_bounded_run_writes_files(self, tmp_path):
        cfg = replace(template(tmp_path, m=1.5, M=1.0))
        rec = run_single(cfg)
        assert rec.outcome == "CompletedBounded"
        assert rec.t_final == pytest.approx(0.5)
        line = record_path(tmp_path, rec.digest).read_text().splitlines()
        assert len(line) == 1
        data = json.loads(line[0])
        for key in ("digest", "outcome", "t_final", "worst_residuals", "wall_ms", "scheme_version", "final"):
            assert key in data
        csv_lines = timeseries_path(tmp_path, rec.digest).read_text().splitlines()
        assert csv_lines[0].split(",")[0] == "t" and len(csv_lines) == 7
        assert all(v <= rec.tolerances[k] for k, v in rec.worst_residuals.items())
        assert not list(tmp_path.glob(".*tmp"))

    def test_repeat_is_identical(self, tmp_path):
        cfg = template(tmp_path / "a", m=0.5, M=2.0)
        r1 = run_single(cfg)
        first = timeseries_path(cfg.out_dir, r1.digest).read_bytes()
        r2 = run_single(cfg)
        assert r1.digest == r2.digest
        assert timeseries_path(cfg.out_dir, r2.digest).read_bytes() == first

    def test_blowup_run(self, tmp_path):
        cfg = replace(template(tmp_path, m=0.5, M=200.0), N=256, cadence=1e4)
        rec = run_single(cfg)
        assert rec.outcome == "BlowupDetected"
        assert math.isfinite(rec.t_final)
        assert rec.evidence["phi_slope"] > 0

    def test_scheme_error_recorded(self, tmp_path, monkeypatch):
        def boom(config):
            raise SchemeError("negative density")

        monkeypatch.setattr(harness, "execute", boom)
        rec = run_single(template(tmp_path, m=1.5))
        assert rec.outcome == "SchemeError"
        assert "negative" in rec.error
        assert RunRecord.from_json(record_path(tmp_path, rec.digest).read_text()).outcome == "SchemeError"

    def test_nonfinite_sanitised(self):
        rec = RunRecord("d", "X", math.inf, {"a": math.nan}, 1.0)
        data = json.loads(rec.to_json())
        assert data["t_final"] is None and data["worst_residuals"]["a"] is None


class TestSweep:
    def test_labels_and_resume(self, tmp_path, monkeypatch):
        sweep = SweepConfig(template(tmp_path), m_values=(0.5, 1.0, 1.5), M_values=(1.0,))
        diagram = run_sweep(sweep)
        assert diagram.label(1.0, 1.0) == "CompletedBounded"
        assert diagram.label(1.5, 1.0) == "CompletedBounded"
        assert len(diagram.cells) == 3
        before = (tmp_path / "phase_diagram.csv").read_bytes()

        victim = diagram.cells[1].record.digest
        record_path(tmp_path, victim).unlink()
        calls = []
        real = harness.run_single
        monkeypatch.setattr(harness, "run_single", lambda c, write=True: calls.append(c.digest) or real(c, write))
        run_sweep(sweep)
        assert calls == [victim]
        assert (tmp_path / "phase_diagram.csv").read_bytes() == before

    def test_parallel_matches_serial(self, tmp_path):
        outs = []
        for workers, sub in ((1, "serial"), (2, "parallel")):
            sweep = SweepConfig(template(tmp_path / sub), m_values=(0.5, 1.5), M_values=(1.0, 2.0), workers=workers)
            run_sweep(sweep)
            outs.append((tmp_path / sub / "phase_diagram.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_bad_cell_does_not_abort(self, tmp_path):
        sweep = SweepConfig(template(tmp_path), m_values=(-1.0, 1.5), M_values=(1.0,))
        diagram = run_sweep(sweep)
        assert diagram.label(-1.0, 1.0) == "ConfigError"
        assert diagram.label(1.5, 1.0) == "CompletedBounded"


class TestThreshold:
    def fake(self, monkeypatch, rule):
        seen = []

        def fake_run(cfg, write=True):
            M = cfg.params.M
            seen.append(M)
            return RunRecord(cfg.digest, rule(M), 1.0, {}, 0.0)

        monkeypatch.setattr(harness, "run_single", fake_run)
        return seen

    def test_bracket_width(self, tmp_path, monkeypatch):
        seen = self.fake(monkeypatch, lambda M: "BlowupDetected" if M > 37.0 else "CompletedBounded")
        est = estimate_blowup_threshold(0.5, template(tmp_path), 10.0, 110.0, tol_rel=0.01)
        k = est.bisections
        assert est.bracket[1] - est.bracket[0] == pytest.approx(100.0 / 2**k)
        assert est.bracket[0] <= 37.0 <= est.bracket[1]
        assert est.M_hat == pytest.approx(sum(est.bracket) / 2)
        assert est.anomaly is None and len(seen) == k + 2

    def test_widening(self, tmp_path, monkeypatch):
        self.fake(monkeypatch, lambda M: "BlowupDetected" if M > 300.0 else "CompletedBounded")
        est = estimate_blowup_threshold(0.5, template(tmp_path), 10.0, 100.0, tol_rel=0.05)
        assert est.widened == ["M_hi 100 -> 200", "M_hi 200 -> 400"]
        assert est.bracket[0] <= 300.0 <= est.bracket[1]

    def test_anomaly(self, tmp_path, monkeypatch):
        self.fake(monkeypatch, lambda M: "MaxStepsReached" if 40 < M < 70 else ("BlowupDetected" if M >= 70 else "CompletedBounded"))
        est = estimate_blowup_threshold(0.5, template(tmp_path), 10.0, 100.0, tol_rel=0.01)
        assert est.anomaly is not None and "inside the bracket" in est.anomaly
        assert len(est.records) >= 3

    def test_validation_probe(self, tmp_path, monkeypatch):
        self.fake(monkeypatch, lambda M: "BlowupDetected" if M > 37.0 else "CompletedBounded")
        est = estimate_blowup_threshold(0.5, template(tmp_path), 10.0, 110.0, tol_rel=0.05, validate=True)
        assert est.anomaly is None

    def test_real_threshold(self, tmp_path):
        tpl = replace(template(tmp_path), N=256, stepper=StepperConfig(t_end=2.0))
        est = estimate_blowup_threshold(0.5, tpl, 5.0, 1000.0, tol_rel=0.1, validate=True)
        assert est.anomaly is None
        assert 0 < est.M_hat < 1000
        assert est.settings["N"] == 256


def test_collect_records(tmp_path):
    run_single(template(tmp_path, m=1.5))
    recs = collect_records(tmp_path)
    assert len(recs) == 1 and recs[0].outcome == "CompletedBounded"
