"""Non-intrusive quality metrics behind one scoring interface.

A metric maps a waveform (or a WAV path) to a `MetricScore` holding the raw
metric value and its monotone normalization into [0, 1]. The native
modulation-ratio metric lives in `srmr`; external black-box judges are
reached through a line-delimited stdio protocol or an equivalent HTTP POST
endpoint: request ``{"id": str, "path": str}``, response ``{"id": str,
"score": number}``, one response per request, anything else on the channel
is a protocol error.
"""
from __future__ import annotations

import json
import os
import selectors
import shlex
import subprocess
import tempfile
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dsp import Waveform, read_wav, write_wav
from .srmr import MetricError, SrmrConfig, srmr

DEFAULT_SRMR_CAP = 10.0


@dataclass
class MetricScore:
    raw: float
    normalized: float


def normalize(raw: float, kind: str = "srmr", *, srmr_cap: float = DEFAULT_SRMR_CAP,
              raw_range: tuple[float, float] | None = None) -> float:
    """Monotone map of a raw metric value into [0, 1].

    "srmr": clip(raw, 0, cap) / cap; the cap removes any incentive to push
    the ratio into its degenerate high region. "mos": (raw - 1) / 4 for the
    1-5 opinion scale. "range": linear over an explicit (min, max).
    """
    if not np.isfinite(raw):
        raise MetricError(f"cannot normalize non-finite value {raw}")
    if kind == "srmr":
        return float(np.clip(raw, 0.0, srmr_cap) / srmr_cap)
    if kind == "mos":
        return float(np.clip((raw - 1.0) / 4.0, 0.0, 1.0))
    if kind == "range":
        if raw_range is None:
            raise MetricError("range normalization needs raw_range")
        lo, hi = raw_range
        if not lo < hi:
            raise MetricError(f"invalid raw_range ({lo}, {hi})")
        return float(np.clip((raw - lo) / (hi - lo), 0.0, 1.0))
    raise MetricError(f"unknown metric kind '{kind}'")


class SrmrMetric:
    """Native modulation-energy-ratio metric."""

    name = "srmr"

    def __init__(self, config: SrmrConfig | None = None, cap: float = DEFAULT_SRMR_CAP):
        self.config = config or SrmrConfig()
        self.cap = cap

    def score(self, wave: Waveform) -> MetricScore:
        raw = srmr(wave, self.config)
        return MetricScore(raw=raw, normalized=normalize(raw, "srmr", srmr_cap=self.cap))

    def score_path(self, path) -> MetricScore:
        return self.score(read_wav(path))


@dataclass
class ExternalMetricConfig:
    """How to reach a black-box judge; exactly one of command/endpoint."""

    command: str | None = None
    endpoint: str | None = None
    timeout: float = 30.0
    raw_range: tuple[float, float] = (1.0, 5.0)

    def __post_init__(self):
        if bool(self.command) == bool(self.endpoint):
            raise MetricError("configure exactly one of command or endpoint")
        lo, hi = self.raw_range
        if not lo < hi:
            raise MetricError(f"invalid raw_range ({lo}, {hi})")


class ExternalMetric:
    """Adapter client for out-of-process metrics.

    Stdio adapters are spawned once and kept alive; requests are serialized
    per adapter instance. Waveforms are written to temporary 64-bit float
    WAV files so the judge sees bit-exact samples.
    """

    name = "external"

    def __init__(self, config: ExternalMetricConfig):
        self.config = config
        self._proc: subprocess.Popen | None = None
        self._stderr_path: str | None = None
        self._counter = 0

    # -- lifecycle -----------------------------------------------------
    def _ensure_process(self) -> subprocess.Popen:
        if self._proc is not None and self._proc.poll() is None:
            return self._proc
        stderr_fd, self._stderr_path = tempfile.mkstemp(prefix="adapter_err_")
        self._proc = subprocess.Popen(
            shlex.split(self.config.command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=stderr_fd,
            text=True,
            bufsize=1,
        )
        os.close(stderr_fd)
        return self._proc

    def close(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            try:
                self._proc.stdin.close()
                self._proc.wait(timeout=5)
            except Exception:
                self._proc.kill()
        if self._stderr_path and os.path.exists(self._stderr_path):
            os.unlink(self._stderr_path)
            self._stderr_path = None
        self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _stderr_tail(self) -> str:
        if self._stderr_path and os.path.exists(self._stderr_path):
            try:
                with open(self._stderr_path, errors="replace") as fh:
                    return fh.read()[-2000:].strip()
            except OSError:
                return ""
        return ""

    # -- scoring -------------------------------------------------------
    def _request_stdio(self, payload: dict) -> dict:
        proc = self._ensure_process()
        try:
            proc.stdin.write(json.dumps(payload) + "\n")
            proc.stdin.flush()
        except (BrokenPipeError, OSError):
            raise MetricError(
                f"adapter exited (code {proc.poll()}); stderr: {self._stderr_tail()}"
            )
        sel = selectors.DefaultSelector()
        sel.register(proc.stdout, selectors.EVENT_READ)
        ready = sel.select(timeout=self.config.timeout)
        sel.close()
        if not ready:
            self.close()
            raise MetricError(f"adapter timed out after {self.config.timeout}s")
        line = proc.stdout.readline()
        if not line:
            code = proc.wait()
            raise MetricError(f"adapter exited (code {code}); stderr: {self._stderr_tail()}")
        try:
            return json.loads(line)
        except json.JSONDecodeError:
            raise MetricError(f"protocol error: adapter sent non-record output {line!r}")

    def _request_http(self, payload: dict) -> dict:
        req = urllib.request.Request(
            self.config.endpoint,
            data=json.dumps(payload).encode("utf-8"),
            headers={"Content-Type": "application/json"},
        )
        try:
            with urllib.request.urlopen(req, timeout=self.config.timeout) as resp:
                return json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, json.JSONDecodeError, TimeoutError) as exc:
            raise MetricError(f"endpoint request failed: {exc}")

    def score_path(self, path) -> MetricScore:
        self._counter += 1
        payload = {"id": f"q{self._counter:06d}", "path": str(path)}
        reply = self._request_stdio(payload) if self.config.command else self._request_http(payload)
        if not isinstance(reply, dict) or set(reply) != {"id", "score"}:
            raise MetricError(f"protocol error: malformed response {reply!r}")
        if reply["id"] != payload["id"]:
            raise MetricError(
                f"protocol error: response id {reply['id']!r} != request id {payload['id']!r}"
            )
        raw = reply["score"]
        if not isinstance(raw, (int, float)) or not np.isfinite(raw):
            raise MetricError(f"protocol error: non-numeric score {raw!r}")
        return MetricScore(
            raw=float(raw),
            normalized=normalize(float(raw), "range", raw_range=self.config.raw_range),
        )

    def score(self, wave: Waveform) -> MetricScore:
        with tempfile.NamedTemporaryFile(suffix=".wav", delete=False) as tmp:
            tmp_path = tmp.name
        try:
            write_wav(tmp_path, wave, fmt="float64")
            return self.score_path(tmp_path)
        finally:
            os.unlink(tmp_path)


def make_metric(name: str, *, srmr_config: SrmrConfig | None = None,
                srmr_cap: float = DEFAULT_SRMR_CAP,
                external: ExternalMetricConfig | None = None):
    if name == "srmr":
        return SrmrMetric(srmr_config, cap=srmr_cap)
    if name == "external":
        if external is None:
            raise MetricError("external metric needs an ExternalMetricConfig")
        return ExternalMetric(external)
    raise MetricError(f"unknown metric '{name}'")


def parallel_map(fn, items, threads: int = 1) -> list:
    """Map preserving order; thread-parallel when threads > 1."""
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))
