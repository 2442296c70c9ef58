"""Command-line entry points and exit codes."""
import json
import subprocess
import sys
import threading
import time
from pathlib import Path

import numpy as np
import pytest

from pulseopt.cli import main, mock_nv_main
from pulseopt.exchange import (
    ExchangeMessage,
    await_reply,
    send_controls,
)
from pulseopt.mocknv import rectangular_pi_pulse

DATA = Path(__file__).parent / "data"


def write_quick_config(tmp_path, seed=5):
    doc = {
        "optimization_client_name": "cli_test",
        "algorithm_settings": {
            "algorithm_name": "dCRAB",
            "max_eval_total": 30,
            "random_number_generator": {"seed_number": seed},
            "dsm_settings": {
                "general_settings": {"dsm_algorithm_name": "NelderMead"},
                "stopping_criteria": {"xatol": 1e-3, "frtol": 1e-3},
            },
        },
        "pulses": [
            {
                "pulse_name": "drive",
                "time_name": "t",
                "upper_limit": 6.0,
                "lower_limit": -6.0,
                "bins_number": 8,
                "amplitude_variation": 1.0,
                "basis": {
                    "basis_name": "Fourier",
                    "basis_vector_number": 2,
                    "random_super_parameter_distribution": {
                        "distribution_name": "Uniform",
                        "lower_limit": 0.1,
                        "upper_limit": 2.0,
                    },
                },
            }
        ],
        "times": [{"time_name": "t", "initial_value": 1.0}],
        "parameters": [],
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path


class TestRunCommand:
    def test_builtin_qubit_run_succeeds(self, tmp_path, capsys):
        cfg = write_quick_config(tmp_path)
        code = main([
            "run", "--config", str(cfg), "--fom", "builtin:qubit",
            "--results-dir", str(tmp_path),
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert "best FoM" in out
        runs = list((tmp_path / "QOC_Results").iterdir())
        assert len(runs) == 1
        assert (runs[0] / "best_controls.json").exists()
        assert (runs[0] / "config.json").exists()
        assert (runs[0] / "history.csv").exists()
        assert (runs[0] / "version.txt").exists()
        assert (runs[0] / "optimization.log").exists()

    def test_config_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{")
        code = main(["run", "--config", str(bad), "--fom", "builtin:qubit"])
        assert code == 3

    def test_missing_config_file(self, tmp_path):
        code = main([
            "run", "--config", str(tmp_path / "nope.json"), "--fom", "builtin:qubit"
        ])
        assert code == 3

    def test_unknown_fom_source(self, tmp_path):
        cfg = write_quick_config(tmp_path)
        code = main(["run", "--config", str(cfg), "--fom", "network:1.2.3.4"])
        assert code == 3

    def test_grape_with_file_exchange_is_config_error(self, tmp_path):
        code = main([
            "run", "--config", str(DATA / "grape_benchmark_config.json"),
            "--fom", f"file-exchange:{tmp_path}",
        ])
        assert code == 3

    def test_evaluator_timeout_exit_code(self, tmp_path, monkeypatch):
        # nobody answers on the session directory; shrink the timeout
        import pulseopt.exchange as exchange

        monkeypatch.setattr(exchange, "DEFAULT_TIMEOUT_S", 0.2)
        cfg = write_quick_config(tmp_path)
        session = tmp_path / "session"
        session.mkdir()
        code = main([
            "run", "--config", str(cfg), "--fom", f"file-exchange:{session}",
            "--results-dir", str(tmp_path),
        ])
        assert code == 4

    def test_seed_override_changes_run(self, tmp_path):
        cfg = write_quick_config(tmp_path)
        for sub, seed in (("a", "1"), ("b", "2")):
            (tmp_path / sub).mkdir()
            code = main([
                "run", "--config", str(cfg), "--fom", "builtin:qubit",
                "--seed", seed, "--results-dir", str(tmp_path / sub),
            ])
            assert code == 0
        hist_a = next((tmp_path / "a" / "QOC_Results").iterdir()) / "history.csv"
        hist_b = next((tmp_path / "b" / "QOC_Results").iterdir()) / "history.csv"
        assert hist_a.read_bytes() != hist_b.read_bytes()


class TestMockNvCommand:
    def test_serves_until_terminate(self, tmp_path):
        session = tmp_path / "session"
        session.mkdir()
        result = {}

        def serve_thread():
            result["code"] = mock_nv_main([
                "--dir", str(session), "--inhomogeneity", "0", "--drift", "0",
                "--noise", "0", "--ensemble", "1", "--seed", "3", "--poll-ms", "2",
            ])

        thread = threading.Thread(target=serve_thread, daemon=True)
        thread.start()
        amp, phase, grid = rectangular_pi_pulse(16, 1.0)
        send_controls(
            session,
            ExchangeMessage(
                iteration=1,
                pulses={"amplitude": list(amp), "phase": list(phase)},
                timegrids={"t": list(grid)},
            ),
        )
        reply = await_reply(session, 1, timeout_s=10, poll_interval_ms=5)
        assert reply.FoM == pytest.approx(1.0, abs=1e-9)
        send_controls(session, ExchangeMessage(iteration=2, control_flag="terminate"))
        thread.join(timeout=10)
        assert result["code"] == 0

    def test_console_script_entry_point(self, tmp_path):
        # the installed binary must start and answer over a real subprocess
        session = tmp_path / "session"
        session.mkdir()
        proc = subprocess.Popen(
            [sys.executable, "-c",
             "from pulseopt.cli import mock_nv_main; raise SystemExit(mock_nv_main())",
             "--dir", str(session),
             "--inhomogeneity", "0", "--drift", "0", "--noise", "0",
             "--ensemble", "1", "--poll-ms", "2"],
            stdout=subprocess.PIPE, stderr=subprocess.PIPE,
        )
        try:
            amp, phase, grid = rectangular_pi_pulse(8, 1.0)
            send_controls(
                session,
                ExchangeMessage(
                    iteration=1,
                    pulses={"amplitude": list(amp), "phase": list(phase)},
                    timegrids={"t": list(grid)},
                ),
            )
            reply = await_reply(session, 1, timeout_s=15, poll_interval_ms=10)
            assert reply.FoM == pytest.approx(1.0, abs=1e-9)
            send_controls(session, ExchangeMessage(iteration=2, control_flag="terminate"))
            proc.wait(timeout=15)
            assert proc.returncode == 0
        finally:
            if proc.poll() is None:
                proc.kill()
