"""File-based request/reply protocol between the optimizer and an evaluator.

The optimizer owns ``controls.json`` in the session directory, the evaluator
owns ``fom.json``.  Every write lands in a temporary file first and is moved
into place with an atomic rename, so a reader never sees a torn payload.  A
strictly increasing iteration counter, echoed back in each reply, is the
change signal; it is robust on filesystems with coarse timestamps and makes
stale replies trivially ignorable.
"""
from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .controls import ControlsSet
from .problems import EvaluatorError, FoMEvaluator, FoMResult

CONTROLS_FILE = "controls.json"
REPLY_FILE = "fom.json"
DEFAULT_TIMEOUT_S = 600.0
DEFAULT_POLL_MS = 100.0


class ProtocolError(EvaluatorError):
    """Malformed payload on the wire; indicates a broken writer."""


class ExchangeTimeout(EvaluatorError):
    """No matching reply arrived within the configured timeout."""


@dataclass
class ExchangeMessage:
    """One controls payload sent to the evaluator."""

    iteration: int
    pulses: dict[str, list[float]] = field(default_factory=dict)
    timegrids: dict[str, list[float]] = field(default_factory=dict)
    parameters: dict[str, float] = field(default_factory=dict)
    control_flag: str = "evaluate"  # evaluate | terminate


@dataclass
class ExchangeReply:
    """One figure-of-merit reply read back from the evaluator."""

    iteration: int
    FoM: float = float("nan")
    std: float | None = None
    status: str = "ok"  # ok | error | abort


def _atomic_write_json(directory: Path, final_name: str, payload: dict):
    tmp = directory / f".{final_name}.tmp-{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
    os.replace(tmp, directory / final_name)


def send_controls(session_dir, msg: ExchangeMessage) -> None:
    """Publish a controls payload, replacing any previous one atomically."""
    directory = Path(session_dir)
    if not directory.is_dir():
        raise FileNotFoundError(f"session directory does not exist: {directory}")
    payload = {
        "iteration": int(msg.iteration),
        "control_flag": msg.control_flag,
        "pulses": {k: [float(v) for v in vals] for k, vals in msg.pulses.items()},
        "timegrids": {k: [float(v) for v in vals] for k, vals in msg.timegrids.items()},
        "parameters": {k: float(v) for k, v in msg.parameters.items()},
    }
    _atomic_write_json(directory, CONTROLS_FILE, payload)


def try_read_controls(session_dir) -> ExchangeMessage | None:
    """Read the current controls payload, or None if none has been written."""
    path = Path(session_dir) / CONTROLS_FILE
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        return None
    except (json.JSONDecodeError, UnicodeDecodeError) as err:
        raise ProtocolError(f"malformed controls payload: {err}") from None
    try:
        return ExchangeMessage(
            iteration=int(doc["iteration"]),
            pulses={k: list(map(float, v)) for k, v in doc.get("pulses", {}).items()},
            timegrids={k: list(map(float, v)) for k, v in doc.get("timegrids", {}).items()},
            parameters={k: float(v) for k, v in doc.get("parameters", {}).items()},
            control_flag=doc.get("control_flag", "evaluate"),
        )
    except (KeyError, TypeError, ValueError) as err:
        raise ProtocolError(f"controls payload missing fields: {err}") from None


def send_reply(session_dir, reply: ExchangeReply) -> None:
    """Publish a figure-of-merit reply (evaluator side)."""
    payload = {
        "iteration": int(reply.iteration),
        "FoM": float(reply.FoM),
        "std": None if reply.std is None else float(reply.std),
        "status": reply.status,
    }
    _atomic_write_json(Path(session_dir), REPLY_FILE, payload)


def try_read_reply(session_dir) -> ExchangeReply | None:
    """Read the current reply, or None if none has been written yet."""
    path = Path(session_dir) / REPLY_FILE
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        return None
    except (json.JSONDecodeError, UnicodeDecodeError) as err:
        raise ProtocolError(f"malformed reply payload: {err}") from None
    try:
        return ExchangeReply(
            iteration=int(doc["iteration"]),
            FoM=float(doc["FoM"]),
            std=None if doc.get("std") is None else float(doc["std"]),
            status=doc.get("status", "ok"),
        )
    except (KeyError, TypeError, ValueError) as err:
        raise ProtocolError(f"reply payload missing fields: {err}") from None


def await_reply(
    session_dir,
    iteration: int,
    timeout_s: float = DEFAULT_TIMEOUT_S,
    poll_interval_ms: float = DEFAULT_POLL_MS,
    clock=time.monotonic,
    sleep=time.sleep,
) -> ExchangeReply:
    """Poll for the reply whose iteration echo matches; ignore stale ones."""
    deadline = clock() + timeout_s
    while True:
        reply = try_read_reply(session_dir)
        if reply is not None:
            if reply.iteration == iteration:
                return reply
            if reply.iteration > iteration:
                raise ProtocolError(
                    f"reply from the future: awaiting {iteration}, "
                    f"got {reply.iteration}"
                )
            # stale reply for an older iteration: keep waiting
        if clock() >= deadline:
            raise ExchangeTimeout(
                f"no reply for iteration {iteration} within {timeout_s:.0f} s"
            )
        sleep(poll_interval_ms / 1000.0)


class FileExchangeEvaluator(FoMEvaluator):
    """Figure-of-merit evaluator backed by an external process.

    Pulses, grids and parameters are labelled with the configured names so
    the remote side can address them symbolically.
    """

    provides_std = True

    def __init__(
        self,
        session_dir,
        pulse_names: list[str],
        time_names: list[str],
        parameter_names: list[str] | None = None,
        timeout_s: float = DEFAULT_TIMEOUT_S,
        poll_interval_ms: float = DEFAULT_POLL_MS,
    ):
        self.session_dir = Path(session_dir)
        self.session_dir.mkdir(parents=True, exist_ok=True)
        self.pulse_names = list(pulse_names)
        self.time_names = list(time_names)
        self.parameter_names = list(parameter_names or [])
        self.timeout_s = timeout_s
        self.poll_interval_ms = poll_interval_ms
        self.iteration = 0

    def get_FoM(self, controls: ControlsSet) -> FoMResult:
        self.iteration += 1
        msg = ExchangeMessage(
            iteration=self.iteration,
            pulses={
                name: np.asarray(p, dtype=float).tolist()
                for name, p in zip(self.pulse_names, controls.pulses)
            },
            timegrids={
                name: np.asarray(t, dtype=float).tolist()
                for name, t in zip(self.time_names, controls.timegrids)
            },
            parameters={
                name: float(v)
                for name, v in zip(self.parameter_names, controls.parameters)
            },
        )
        send_controls(self.session_dir, msg)
        reply = await_reply(
            self.session_dir, self.iteration, self.timeout_s, self.poll_interval_ms
        )
        if reply.status == "abort":
            return FoMResult(FoM=reply.FoM, std=reply.std, status="abort")
        if reply.status != "ok":
            raise EvaluatorError(f"evaluator reported status {reply.status!r}")
        return FoMResult(FoM=reply.FoM, std=reply.std)

    def terminate(self):
        """Tell the remote side the session is over; best effort."""
        self.iteration += 1
        try:
            send_controls(
                self.session_dir,
                ExchangeMessage(iteration=self.iteration, control_flag="terminate"),
            )
        except OSError:
            pass
