"""File-exchange protocol: atomicity, iteration echo, timeouts."""
import json
import threading
import time

import numpy as np
import pytest

from pulseopt.controls import ControlsSet
from pulseopt.exchange import (
    ExchangeMessage,
    ExchangeReply,
    ExchangeTimeout,
    FileExchangeEvaluator,
    ProtocolError,
    await_reply,
    send_controls,
    send_reply,
    try_read_controls,
    try_read_reply,
)


class TestSendControls:
    def test_payload_content(self, tmp_path):
        msg = ExchangeMessage(
            iteration=7,
            pulses={"u": [0.1, 0.2, 0.3, 0.4]},
            timegrids={"t": [0.125, 0.375, 0.625, 0.875]},
            parameters={"bias": 1.5},
        )
        send_controls(tmp_path, msg)
        doc = json.loads((tmp_path / "controls.json").read_text())
        assert doc["iteration"] == 7
        assert doc["control_flag"] == "evaluate"
        assert doc["pulses"]["u"] == [0.1, 0.2, 0.3, 0.4]
        assert doc["parameters"]["bias"] == 1.5

    def test_terminate_needs_no_pulses(self, tmp_path):
        send_controls(tmp_path, ExchangeMessage(iteration=9, control_flag="terminate"))
        msg = try_read_controls(tmp_path)
        assert msg.control_flag == "terminate"
        assert msg.pulses == {}

    def test_second_send_fully_replaces_first(self, tmp_path):
        send_controls(tmp_path, ExchangeMessage(iteration=1, pulses={"u": [1.0] * 500}))
        send_controls(tmp_path, ExchangeMessage(iteration=2, pulses={"u": [2.0, 2.0]}))
        msg = try_read_controls(tmp_path)
        assert msg.iteration == 2
        assert msg.pulses["u"] == [2.0, 2.0]
        # no stray temp files left behind
        assert [p.name for p in tmp_path.iterdir()] == ["controls.json"]

    def test_round_trip_preserves_floats_exactly(self, tmp_path):
        values = list(np.random.default_rng(0).normal(size=64))
        send_controls(tmp_path, ExchangeMessage(iteration=1, pulses={"u": values}))
        msg = try_read_controls(tmp_path)
        assert msg.pulses["u"] == values


class TestAwaitReply:
    def test_returns_matching_iteration(self, tmp_path):
        def delayed_reply():
            time.sleep(0.25)
            send_reply(tmp_path, ExchangeReply(iteration=7, FoM=0.9, std=0.01))

        threading.Thread(target=delayed_reply, daemon=True).start()
        t0 = time.monotonic()
        reply = await_reply(tmp_path, 7, timeout_s=5, poll_interval_ms=20)
        elapsed = time.monotonic() - t0
        assert reply.FoM == 0.9
        assert 0.2 < elapsed < 1.5

    def test_stale_reply_ignored(self, tmp_path):
        send_reply(tmp_path, ExchangeReply(iteration=6, FoM=0.1))

        def fresh_reply():
            time.sleep(0.15)
            send_reply(tmp_path, ExchangeReply(iteration=7, FoM=0.7))

        threading.Thread(target=fresh_reply, daemon=True).start()
        reply = await_reply(tmp_path, 7, timeout_s=5, poll_interval_ms=10)
        assert reply.iteration == 7
        assert reply.FoM == 0.7

    def test_timeout_raised(self, tmp_path):
        with pytest.raises(ExchangeTimeout):
            await_reply(tmp_path, 1, timeout_s=0.2, poll_interval_ms=20)

    def test_reply_from_future_is_protocol_error(self, tmp_path):
        send_reply(tmp_path, ExchangeReply(iteration=9, FoM=0.5))
        with pytest.raises(ProtocolError, match="future"):
            await_reply(tmp_path, 7, timeout_s=1, poll_interval_ms=10)

    def test_malformed_reply_is_protocol_error(self, tmp_path):
        (tmp_path / "fom.json").write_text("{torn")
        with pytest.raises(ProtocolError, match="malformed"):
            try_read_reply(tmp_path)


class TestFileExchangeEvaluator:
    def test_iteration_strictly_increasing(self, tmp_path):
        ev = FileExchangeEvaluator(
            tmp_path, pulse_names=["u"], time_names=["t"],
            timeout_s=2, poll_interval_ms=5,
        )
        grid = np.linspace(0, 1, 4)
        controls = ControlsSet(pulses=[np.zeros(4)], timegrids=[grid], parameters=[])

        seen = []

        def responder():
            last = 0
            deadline = time.monotonic() + 5
            while len(seen) < 3 and time.monotonic() < deadline:
                msg = try_read_controls(tmp_path)
                if msg is not None and msg.iteration > last:
                    last = msg.iteration
                    seen.append(msg.iteration)
                    send_reply(tmp_path, ExchangeReply(iteration=msg.iteration, FoM=0.5, std=0.1))
                time.sleep(0.005)

        t = threading.Thread(target=responder, daemon=True)
        t.start()
        for _ in range(3):
            r = ev.get_FoM(controls)
            assert r.FoM == 0.5
        t.join(timeout=5)
        assert seen == [1, 2, 3]

    def test_error_status_raises_for_retry(self, tmp_path):
        ev = FileExchangeEvaluator(
            tmp_path, pulse_names=["u"], time_names=["t"],
            timeout_s=2, poll_interval_ms=5,
        )
        controls = ControlsSet(
            pulses=[np.zeros(3)], timegrids=[np.linspace(0, 1, 3)], parameters=[]
        )

        def responder():
            deadline = time.monotonic() + 5
            while time.monotonic() < deadline:
                msg = try_read_controls(tmp_path)
                if msg is not None and msg.iteration == 1:
                    send_reply(tmp_path, ExchangeReply(iteration=1, FoM=0.0, status="error"))
                    return
                time.sleep(0.005)

        threading.Thread(target=responder, daemon=True).start()
        from pulseopt.problems import EvaluatorError

        with pytest.raises(EvaluatorError, match="error"):
            ev.get_FoM(controls)

    def test_abort_status_propagates(self, tmp_path):
        ev = FileExchangeEvaluator(
            tmp_path, pulse_names=["u"], time_names=["t"],
            timeout_s=2, poll_interval_ms=5,
        )
        controls = ControlsSet(
            pulses=[np.zeros(3)], timegrids=[np.linspace(0, 1, 3)], parameters=[]
        )

        def responder():
            deadline = time.monotonic() + 5
            while time.monotonic() < deadline:
                msg = try_read_controls(tmp_path)
                if msg is not None and msg.iteration == 1:
                    send_reply(tmp_path, ExchangeReply(iteration=1, FoM=0.2, status="abort"))
                    return
                time.sleep(0.005)

        threading.Thread(target=responder, daemon=True).start()
        assert ev.get_FoM(controls).status == "abort"

    def test_terminate_writes_flag(self, tmp_path):
        ev = FileExchangeEvaluator(tmp_path, pulse_names=["u"], time_names=["t"])
        ev.terminate()
        msg = try_read_controls(tmp_path)
        assert msg.control_flag == "terminate"
