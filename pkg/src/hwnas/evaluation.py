"""Objective evaluation: power-trace processing, device profiles, evaluators.

Real measurements are ingested as power traces (CSV ``t_ms,power_w``): the
trace is split into working/idle at a per-device wattage threshold, inference
time is the working-window length, and energy the trapezoidal integral of
power over it.  A deterministic synthetic evaluator supports desk-scale runs,
and a file-based adapter protocol connects external trainers/devices.
"""

from __future__ import annotations

import csv
import json
import shlex
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import MacroConfig, build_network
from .records import ObjectiveVector
from .search_space import CellGenome, encode


class TraceError(ValueError):
    """Malformed power trace or invalid integration window."""


class EvaluatorError(RuntimeError):
    """External evaluator invocation failure (timeout, exit code, bad response)."""


@dataclass(frozen=True)
class PowerTrace:
    """Sampled power curve: strictly increasing timestamps (ms), powers (W)."""

    t_ms: np.ndarray
    power_w: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.t_ms, dtype=float)
        p = np.asarray(self.power_w, dtype=float)
        object.__setattr__(self, "t_ms", t)
        object.__setattr__(self, "power_w", p)
        if t.ndim != 1 or p.shape != t.shape:
            raise TraceError("trace requires matching 1-D time and power arrays")
        if t.shape[0] < 2:
            raise TraceError("trace requires at least 2 samples")
        if not np.all(np.diff(t) > 0):
            raise TraceError("timestamps must be strictly increasing")
        if not np.all(np.isfinite(t)) or not np.all(np.isfinite(p)):
            raise TraceError("trace values must be finite")
        if np.any(p < 0):
            raise TraceError("power must be non-negative")

    @classmethod
    def from_samples(cls, samples) -> "PowerTrace":
        arr = np.asarray(list(samples), dtype=float)
        return cls(arr[:, 0], arr[:, 1])

    @classmethod
    def from_csv(cls, path: str | Path) -> "PowerTrace":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header[:2]] != ["t_ms", "power_w"]:
                raise TraceError(f"{path}: expected CSV header 't_ms,power_w'")
            rows = [(float(r[0]), float(r[1])) for r in reader if r]
        if not rows:
            raise TraceError(f"{path}: no samples")
        return cls.from_samples(rows)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t_ms", "power_w"])
            writer.writerows(zip(self.t_ms.tolist(), self.power_w.tolist()))


@dataclass(frozen=True)
class DeviceProfile:
    """Per-device trace threshold plus coefficients for the synthetic evaluator.

    The synthetic model is deliberately simple: time is MACs over throughput,
    energy is active power times time plus a per-parameter memory term, and
    error decays exponentially with parameter count.  The error coefficients
    are identical across built-in profiles because classification error does
    not depend on the inference device.
    """

    name: str
    threshold_w: float
    notes: str = ""
    throughput_macs: float = 1e12
    active_power_w: float = 100.0
    mem_energy_per_param_j: float = 1e-8
    error_floor: float = 0.05
    error_ceiling: float = 0.40
    error_scale_params: float = 1.5e6
    noise: float = 0.0

    def __post_init__(self) -> None:
        if self.threshold_w <= 0:
            raise ValueError("threshold_w must be positive")


BUILTIN_PROFILES = {
    "titanx": DeviceProfile(
        name="titanx",
        threshold_w=80.0,
        notes="GTX TITAN X: 3072 CUDA cores, 6.7 TFLOPS FP32, 12 GB GDDR5 @ 336.6 GB/s, 250 W",
        throughput_macs=2.0e12,
        active_power_w=180.0,
        mem_energy_per_param_j=2e-8,
    ),
    "jetson-tx2": DeviceProfile(
        name="jetson-tx2",
        threshold_w=1.0,
        notes="Jetson TX2: 256 CUDA cores, 1.5 TFLOPS FP32, 8 GB LPDDR4 @ 59.7 GB/s, 15 W",
        throughput_macs=2.5e11,
        active_power_w=10.0,
        mem_energy_per_param_j=5e-8,
    ),
    "movidius-ncs": DeviceProfile(
        name="movidius-ncs",
        threshold_w=0.45,
        notes="Movidius NCS: Myriad 2 VPU, 2 TFLOPS FP16, 4 Gbit LPDDR3 @ 4 Gbit/s, 1 W",
        throughput_macs=8.0e10,
        active_power_w=0.9,
        mem_energy_per_param_j=8e-8,
    ),
}


def get_profile(name: str) -> DeviceProfile:
    try:
        return BUILTIN_PROFILES[name]
    except KeyError:
        raise ValueError(
            f"unknown device profile {name!r}; built-ins: {sorted(BUILTIN_PROFILES)}"
        ) from None


def segment_trace(trace: PowerTrace, threshold_w: float) -> tuple[float, float]:
    """Timestamps (ms) of the first and last samples at or above the threshold."""
    above = np.nonzero(trace.power_w >= threshold_w)[0]
    if above.size == 0:
        raise TraceError(f"no sample reaches threshold {threshold_w} W")
    return float(trace.t_ms[above[0]]), float(trace.t_ms[above[-1]])


def integrate_energy(trace: PowerTrace, t1_ms: float, t2_ms: float) -> float:
    """Trapezoidal integral of power over [t1, t2], in joules.

    Window endpoints may fall between samples; power there is linearly
    interpolated, which keeps the integral additive over adjacent windows.
    """
    if not t1_ms < t2_ms:
        raise TraceError(f"integration window must satisfy t1 < t2, got [{t1_ms}, {t2_ms}]")
    if t1_ms < trace.t_ms[0] or t2_ms > trace.t_ms[-1]:
        raise TraceError(
            f"window [{t1_ms}, {t2_ms}] outside trace span "
            f"[{trace.t_ms[0]}, {trace.t_ms[-1]}]"
        )
    inside = (trace.t_ms > t1_ms) & (trace.t_ms < t2_ms)
    ts = np.concatenate(([t1_ms], trace.t_ms[inside], [t2_ms]))
    ps = np.concatenate(
        (
            [np.interp(t1_ms, trace.t_ms, trace.power_w)],
            trace.power_w[inside],
            [np.interp(t2_ms, trace.t_ms, trace.power_w)],
        )
    )
    joules_ms = float(np.sum(0.5 * (ps[1:] + ps[:-1]) * np.diff(ts)))
    return joules_ms / 1000.0


def measure_from_trace(trace: PowerTrace, profile: DeviceProfile) -> dict:
    """Segment at the profile threshold, then integrate: {time_s, energy_j, t1_ms, t2_ms}."""
    t1, t2 = segment_trace(trace, profile.threshold_w)
    return {
        "time_s": (t2 - t1) / 1000.0,
        "energy_j": integrate_energy(trace, t1, t2),
        "t1_ms": t1,
        "t2_ms": t2,
    }


def synthetic_evaluate(
    genome: CellGenome,
    macro: MacroConfig,
    profile: DeviceProfile,
    seed: int = 0,
) -> ObjectiveVector:
    """Deterministic desk-scale objectives derived from graph cost counts.

    A pure function of (genome, macro, profile, seed); the optional noise term
    is seeded from the genome encoding so repeated calls agree.
    """
    net = build_network(genome, macro)
    time_s = net.total_flops / profile.throughput_macs
    energy_j = time_s * profile.active_power_w + net.total_params * profile.mem_energy_per_param_j
    error = profile.error_floor + (profile.error_ceiling - profile.error_floor) * float(
        np.exp(-net.total_params / profile.error_scale_params)
    )
    if profile.noise > 0:
        rng = np.random.default_rng([int(seed)] + [v + 1 for v in encode(genome)])
        error += float(rng.uniform(-profile.noise, profile.noise))
        error = min(max(error, 0.0), 1.0)
    return ObjectiveVector(error=error, energy_j=energy_j, time_s=time_s)


_TRAINING_DEFAULTS = {
    "epochs": 10,
    "batch_size": 32,
    "optimizer": "rmsprop",
    "momentum": 0.9,
    "decay": 0.9,
    "lr": 0.01,
    "lr_decay": 0.94,
    "lr_decay_every_epochs": 2,
    "weight_decay": 0.00004,
}


@dataclass(frozen=True)
class EvaluationRequest:
    """Payload written to ``request.json`` for an external adapter."""

    genome: dict
    N: int
    F: int
    num_classes: int
    device: str
    training: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        training = dict(_TRAINING_DEFAULTS)
        training.update(self.training)
        return {
            "genome": self.genome,
            "N": self.N,
            "F": self.F,
            "num_classes": self.num_classes,
            "training": training,
            "device": self.device,
        }


def _parse_response(raw: dict, workdir: Path) -> ObjectiveVector:
    if "error" not in raw:
        raise EvaluatorError("response.json missing 'error'")
    error = float(raw["error"])
    direct = "energy_j" in raw and "time_s" in raw
    traced = "trace_path" in raw
    if direct == traced:
        raise EvaluatorError(
            "response.json must carry exactly one of {energy_j,time_s} or {trace_path,threshold_w}"
        )
    if direct:
        return ObjectiveVector(error=error, energy_j=float(raw["energy_j"]), time_s=float(raw["time_s"]))
    if "threshold_w" not in raw:
        raise EvaluatorError("trace response requires 'threshold_w'")
    trace_path = Path(raw["trace_path"])
    if not trace_path.is_absolute():
        trace_path = workdir / trace_path
    if not trace_path.exists():
        raise EvaluatorError(f"trace file not found: {trace_path}")
    trace = PowerTrace.from_csv(trace_path)
    t1, t2 = segment_trace(trace, float(raw["threshold_w"]))
    return ObjectiveVector(
        error=error,
        energy_j=integrate_energy(trace, t1, t2),
        time_s=(t2 - t1) / 1000.0,
    )


def external_evaluate(
    request: EvaluationRequest,
    command: str | list[str],
    workdir: str | Path,
    timeout_s: float = 3600.0,
) -> ObjectiveVector:
    """Run one external evaluation through the request/response file protocol.

    Writes ``<workdir>/request.json``, invokes the adapter command with the
    working directory set, then reads ``<workdir>/response.json``.  Exit code
    0 is required; stderr is surfaced on failure.
    """
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    (workdir / "request.json").write_text(
        json.dumps(request.to_json_dict(), indent=2), encoding="utf-8"
    )
    argv = shlex.split(command) if isinstance(command, str) else list(command)
    try:
        proc = subprocess.run(
            argv, cwd=workdir, capture_output=True, text=True, timeout=timeout_s
        )
    except subprocess.TimeoutExpired as exc:
        raise EvaluatorError(f"adapter timed out after {timeout_s}s: {argv}") from exc
    except OSError as exc:
        raise EvaluatorError(f"adapter could not be launched: {exc}") from exc
    if proc.returncode != 0:
        raise EvaluatorError(
            f"adapter exited with {proc.returncode}; stderr: {proc.stderr.strip()}"
        )
    response_path = workdir / "response.json"
    if not response_path.exists():
        raise EvaluatorError(f"adapter wrote no {response_path}")
    try:
        raw = json.loads(response_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise EvaluatorError(f"response.json is not valid JSON: {exc}") from exc
    try:
        return _parse_response(raw, workdir)
    except (ValueError, TraceError) as exc:
        raise EvaluatorError(f"malformed response: {exc}") from exc


def build_evaluator(spec: dict, macro: MacroConfig):
    """Turn an evaluator spec into ``(callable genome -> ObjectiveVector, device name)``.

    Synthetic: {"type": "synthetic", "profile": name, "seed": int, "noise": float}.
    External:  {"type": "external", "command": str|list, "workdir": path,
                "timeout_s": float, "device": name, "training": {...}}.
    """
    kind = spec.get("type", "synthetic")
    if kind == "synthetic":
        profile = get_profile(spec.get("profile", "movidius-ncs"))
        noise = float(spec.get("noise", profile.noise))
        if noise != profile.noise:
            profile = DeviceProfile(**{**profile.__dict__, "noise": noise})
        seed = int(spec.get("seed", 0))

        def evaluate(genome: CellGenome) -> ObjectiveVector:
            return synthetic_evaluate(genome, macro, profile, seed=seed)

        return evaluate, profile.name

    if kind == "external":
        if "command" not in spec or "workdir" not in spec:
            raise ValueError("external evaluator spec requires 'command' and 'workdir'")
        device = str(spec.get("device", "external"))
        training = dict(spec.get("training", {}))
        timeout_s = float(spec.get("timeout_s", 3600.0))

        def evaluate(genome: CellGenome) -> ObjectiveVector:
            request = EvaluationRequest(
                genome=genome.to_json_dict(),
                N=macro.N,
                F=macro.F,
                num_classes=macro.num_classes,
                device=device,
                training=training,
            )
            return external_evaluate(request, spec["command"], spec["workdir"], timeout_s)

        return evaluate, device

    raise ValueError(f"unknown evaluator type {kind!r}")
