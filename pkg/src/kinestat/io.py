"""Config and log files.

Config
    YAML mapping validated by :class:`Config`. Every key has a default, so an
    empty file is valid; unknown keys are rejected.

Sensor log
    CSV with a version line ``# kinestat-log v1``, a header row and one row
    per sample. Column groups are written as ``<name>_x, <name>_y,
    <name>_z``. Floats use the shortest round-trip representation and NaN is
    an empty field. Metadata lives in a JSON sidecar ``<path>.meta.json``.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .models import NoiseSpec
from .observability import ProbeConfig
from .pipeline import FilterSettings
from .sim import Sine, SensorLog, SensorSpec, TrajectorySpec, reference_uav_trajectory

LOG_VERSION = "# kinestat-log v1"
TABLE_VERSION = "# kinestat-table v1"
AXES = ("x", "y", "z")

MEASUREMENT_CHANNELS = ("w_m", "a_m", "p_m", "m_m", "a_m2")
TRUTH_CHANNELS = (
    "true_p", "true_v", "true_R", "true_a", "true_w", "true_tau",
    "true_b_a", "true_b_w", "true_b_a2",
)
KNOWN_CHANNELS = MEASUREMENT_CHANNELS + TRUTH_CHANNELS
# Channels sampled below the IMU rate; empty fields are legal there.
SPARSE_CHANNELS = ("p_m", "m_m")

MODE_CHANNELS = {
    "state": ("w_m", "a_m", "p_m", "m_m"),
    "input": ("w_m", "a_m", "p_m", "m_m"),
    "inter-imu": ("w_m", "a_m", "a_m2"),
}


class ConfigError(ValueError):
    """Invalid configuration file."""


class LogFormatError(ValueError):
    """Malformed log file; the message names the row and column."""


# ---------------------------------------------------------------------------
# Config schema


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


Vec3 = tuple[float, float, float]


class SineConfig(_Strict):
    axis: int = Field(ge=0, le=2)
    amplitude: float
    freq_hz: float = Field(gt=0)
    phase: float = 0.0


def _default_sines(kind: str) -> list[SineConfig]:
    ref = reference_uav_trajectory()
    src = ref.accel_sines if kind == "accel" else ref.gyro_sines
    return [SineConfig(axis=s.axis, amplitude=s.amplitude, freq_hz=s.freq_hz, phase=s.phase) for s in src]


class TrajectoryConfig(_Strict):
    """Flight profile; defaults give the 15 s takeoff/hover/landing run."""

    duration: float = Field(15.0, gt=0)
    rate_hz: float = Field(1000.0, gt=0)
    takeoff_time: float = 2.0
    takeoff_duration: float = Field(2.0, gt=0)
    hover_height: float = 5.0
    landing_time: float = 12.0
    landing_duration: float = Field(3.0, gt=0)
    accel_sines: list[SineConfig] = Field(default_factory=lambda: _default_sines("accel"))
    gyro_sines: list[SineConfig] = Field(default_factory=lambda: _default_sines("gyro"))
    p0: Vec3 = (0.0, 0.0, 0.0)
    R0: Vec3 = (0.0, 0.0, 0.0)


class NoiseConfig(_Strict):
    """White-noise standard deviations per sample and bias random walks."""

    pos: float = Field(0.005, ge=0)
    mag: float = Field(0.01, ge=0)
    acc: float = Field(0.05, ge=0)
    gyro: float = Field(0.005, ge=0)
    acc2: float = Field(0.05, ge=0)
    bias_acc_rw: float = Field(1e-6, ge=0)
    bias_gyro_rw: float = Field(1e-8, ge=0)


class SensorConfig(_Strict):
    c: Vec3 = (0.5, 0.5, 0.5)
    noise: NoiseConfig = NoiseConfig()
    bias_acc0: Vec3 = (0.0, 0.0, 0.0)
    bias_gyro0: Vec3 = (0.0, 0.0, 0.0)
    bias_acc2_0: Vec3 = (0.0, 0.0, 0.0)
    pos_rate_hz: float = Field(200.0, gt=0)
    dual_imu: bool = False
    c2: Vec3 = (0.1, 0.05, -0.02)
    R2: Vec3 = (0.0, 0.0, 0.0)
    e_ref: Vec3 = (1.0, 0.0, 0.0)
    gravity: Vec3 = (0.0, 0.0, -9.81)


class FilterConfig(_Strict):
    """Motion-model orders and intensities plus filter switches.

    ``q_*`` default to ones of the model order; an explicit list must have
    exactly ``order_*`` entries.
    """

    order_a: int = Field(4, ge=1)
    q_a: Optional[list[float]] = None
    order_w: int = Field(4, ge=1)
    q_w: Optional[list[float]] = None
    order_tau: int = Field(4, ge=1)
    q_tau: Optional[list[float]] = None
    init_cov: dict[str, float | list[float]] = Field(default_factory=dict)
    joseph: bool = False
    integrator: Literal["rk4", "euler"] = "rk4"
    burn_in: float = Field(3.0, ge=0)

    @model_validator(mode="after")
    def _q_lengths(self) -> "FilterConfig":
        for name in ("a", "w", "tau"):
            q = getattr(self, f"q_{name}")
            n = getattr(self, f"order_{name}")
            if q is not None and len(q) != n:
                raise ValueError(f"q_{name} has {len(q)} entries but order_{name} is {n}")
            if q is not None and any(v < 0 for v in q):
                raise ValueError(f"q_{name} entries must be nonnegative")
        return self

    def q(self, name: str) -> tuple:
        q = getattr(self, f"q_{name}")
        return tuple(q) if q is not None else (1.0,) * getattr(self, f"order_{name}")


class ObservabilityConfig(_Strict):
    order_a: int = Field(4, ge=1)
    order_w: int = Field(4, ge=1)
    order_tau: int = Field(4, ge=1)
    rank_tol: float = Field(1e-9, gt=0)
    perturbation: float = Field(1e-3, gt=0)
    c_inter: Vec3 = (0.1, 0.1, 0.1)
    trials: int = Field(100, ge=1)


class CompareConfig(_Strict):
    max_lag_s: float = Field(0.2, gt=0)


class Config(_Strict):
    """Top-level experiment configuration."""

    seed: int = 0
    trajectory: TrajectoryConfig = TrajectoryConfig()
    sensors: SensorConfig = SensorConfig()
    filter: FilterConfig = FilterConfig()
    observability: ObservabilityConfig = ObservabilityConfig()
    compare: CompareConfig = CompareConfig()

    @field_validator("seed")
    @classmethod
    def _seed(cls, v: int) -> int:
        if v < 0:
            raise ValueError("seed must be nonnegative")
        return v

    def trajectory_spec(self) -> TrajectorySpec:
        t = self.trajectory
        return TrajectorySpec(
            duration=t.duration, rate_hz=t.rate_hz,
            takeoff_time=t.takeoff_time, takeoff_duration=t.takeoff_duration,
            hover_height=t.hover_height, landing_time=t.landing_time,
            landing_duration=t.landing_duration,
            accel_sines=tuple(Sine(**s.model_dump()) for s in t.accel_sines),
            gyro_sines=tuple(Sine(**s.model_dump()) for s in t.gyro_sines),
            p0=t.p0, R0=t.R0,
        )

    def sensor_spec(self) -> SensorSpec:
        s, n = self.sensors, self.sensors.noise
        return SensorSpec(
            c=s.c, noise_pos=n.pos, noise_mag=n.mag, noise_acc=n.acc,
            noise_gyro=n.gyro, noise_acc2=n.acc2, bias_acc_rw=n.bias_acc_rw,
            bias_gyro_rw=n.bias_gyro_rw, bias_acc0=s.bias_acc0,
            bias_gyro0=s.bias_gyro0, bias_acc2_0=s.bias_acc2_0,
            pos_rate_hz=s.pos_rate_hz, dual_imu=s.dual_imu, c2=s.c2, R2=s.R2,
            e_ref=s.e_ref, gravity=s.gravity, seed=self.seed,
        )

    def noise_spec(self) -> NoiseSpec:
        return NoiseSpec(**self.sensors.noise.model_dump())

    def filter_settings(self) -> FilterSettings:
        f = self.filter
        return FilterSettings(
            order_a=f.order_a, q_a=f.q("a"), order_w=f.order_w, q_w=f.q("w"),
            order_tau=f.order_tau, q_tau=f.q("tau"), noise=self.noise_spec(),
            init_cov=dict(f.init_cov), joseph=f.joseph, integrator=f.integrator,
            burn_in=f.burn_in, gravity=self.sensors.gravity, e_ref=self.sensors.e_ref,
        )

    def probe_config(self) -> ProbeConfig:
        o = self.observability
        return ProbeConfig(
            order_a=o.order_a, order_w=o.order_w, order_tau=o.order_tau,
            seed=self.seed, rank_tol=o.rank_tol, perturbation=o.perturbation,
            c_inter=o.c_inter, gravity=self.sensors.gravity, e_ref=self.sensors.e_ref,
        )

    def with_seed(self, seed: int) -> "Config":
        return self.model_copy(update={"seed": int(seed)})


def _describe(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "; ".join(lines)


def parse_config(data: Any) -> Config:
    """Validate an already-loaded mapping (``None`` means all defaults)."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"<root>: expected a mapping, got {type(data).__name__}")
    try:
        return Config.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_describe(e)) from None


def read_config(path) -> Config:
    """Load and validate a YAML config file."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {p}: {e.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"{p}: invalid YAML ({e})") from None
    return parse_config(data)


def dump_config(cfg: Config) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)


def packaged_config(name: str) -> Path:
    """Path of a bundled config (``reference_uav`` or ``reference_shake``)."""
    p = Path(__file__).with_name("configs") / f"{name}.yaml"
    if not p.exists():
        raise ConfigError(f"no bundled config named {name!r}")
    return p


# ---------------------------------------------------------------------------
# Numbers


def fmt(x: float) -> str:
    """Shortest round-trip decimal; NaN becomes an empty field."""
    x = float(x)
    if math.isnan(x):
        return ""
    return repr(x)


def _parse(s: str, row: int, col: str, allow_empty: bool) -> float:
    s = s.strip()
    if s == "":
        if allow_empty:
            return math.nan
        raise LogFormatError(f"row {row}, column {col}: empty field")
    try:
        v = float(s)
    except ValueError:
        raise LogFormatError(f"row {row}, column {col}: not a number: {s!r}") from None
    if math.isnan(v):
        raise LogFormatError(f"row {row}, column {col}: literal NaN; leave the field empty")
    return v


# ---------------------------------------------------------------------------
# Sensor logs


def meta_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".meta.json")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_sensor_log(log: SensorLog, path) -> Path:
    """Write ``log`` and its metadata sidecar; returns the CSV path."""
    p = Path(path)
    names = [k for k in KNOWN_CHANNELS if k in log.channels]
    names += sorted(k for k in log.channels if k not in KNOWN_CHANNELS)
    header = ["t"]
    for k in names:
        arr = np.asarray(log.channels[k])
        if arr.ndim != 2 or arr.shape[0] != len(log):
            raise LogFormatError(f"channel {k} must be (n, k) with n = {len(log)}")
        if arr.shape[1] == 3:
            header += [f"{k}_{a}" for a in AXES]
        else:
            header += [f"{k}_{i}" for i in range(arr.shape[1])]
    extra_cols = list(log.extra)
    header += extra_cols
    cols = [np.asarray(log.t, dtype=float)[:, None]] + [
        np.asarray(log.channels[k], dtype=float) for k in names
    ]
    data = np.hstack(cols)
    with open(p, "w", newline="") as fh:
        fh.write(LOG_VERSION + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(data.shape[0]):
            w.writerow([fmt(v) for v in data[i]] + [log.extra[c][i] for c in extra_cols])
    meta_path(p).write_text(
        json.dumps(log.meta, indent=2, sort_keys=True, default=_json_default) + "\n"
    )
    return p


def _group_columns(header: list[str]) -> tuple[dict[str, list[int]], list[int]]:
    groups: dict[str, list[int]] = {}
    extra: list[int] = []
    pos = {h: i for i, h in enumerate(header)}
    used = set()
    for k in KNOWN_CHANNELS:
        cols = [f"{k}_{a}" for a in AXES]
        present = [c for c in cols if c in pos]
        if not present:
            continue
        if len(present) != 3:
            missing = [c for c in cols if c not in pos]
            raise LogFormatError(f"header: column {missing[0]} missing from group {k}")
        groups[k] = [pos[c] for c in cols]
        used.update(groups[k])
    for i, h in enumerate(header):
        if i != 0 and i not in used:
            extra.append(i)
    return groups, extra


def read_sensor_log(path, mode: Optional[str] = None) -> SensorLog:
    """Parse and validate a sensor log.

    Parameters
    ----------
    path : path-like
        CSV file; the ``.meta.json`` sidecar is read when present.
    mode : {"state", "input", "inter-imu"}, optional
        Require the channels that formulation needs.

    Notes
    -----
    Row numbers in error messages count data rows from 1.
    """
    p = Path(path)
    try:
        fh = open(p, newline="")
    except OSError as e:
        raise LogFormatError(f"cannot read log {p}: {e.strerror}") from None
    with fh:
        first = fh.readline().rstrip("\r\n")
        if first != LOG_VERSION:
            raise LogFormatError(f"line 1: expected version line {LOG_VERSION!r}, got {first!r}")
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LogFormatError("header row missing") from None
        if not header or header[0] != "t":
            raise LogFormatError("header: first column must be 't'")
        if len(set(header)) != len(header):
            dup = next(h for h in header if header.count(h) > 1)
            raise LogFormatError(f"header: duplicate column {dup}")
        groups, extra_idx = _group_columns(header)
        sparse = {i for k in SPARSE_CHANNELS if k in groups for i in groups[k]}
        numeric = [0] + [i for k in groups for i in groups[k]]
        rows: list[list[float]] = []
        extra_vals: list[list[str]] = []
        prev_t = -math.inf
        for r, fields in enumerate(reader, start=1):
            if len(fields) != len(header):
                raise LogFormatError(
                    f"row {r}: expected {len(header)} fields, found {len(fields)}"
                )
            vals = [0.0] * len(header)
            for i in numeric:
                vals[i] = _parse(fields[i], r, header[i], i in sparse)
            if not vals[0] > prev_t:
                raise LogFormatError(f"row {r}, column t: timestamp {vals[0]!r} is not increasing")
            prev_t = vals[0]
            rows.append(vals)
            extra_vals.append([fields[i] for i in extra_idx])
    if not rows:
        raise LogFormatError("log has no data rows")
    arr = np.array(rows, dtype=float)
    channels = {k: arr[:, idx] for k, idx in groups.items()}
    extra = {header[i]: [ev[j] for ev in extra_vals] for j, i in enumerate(extra_idx)}
    mp = meta_path(p)
    meta = json.loads(mp.read_text()) if mp.exists() else {}
    log = SensorLog(arr[:, 0].copy(), channels, meta, extra)
    if mode is not None:
        check_mode(log, mode)
    return log


def check_mode(log: SensorLog, mode: str) -> None:
    """Raise if ``log`` lacks a channel the given formulation reads."""
    if mode not in MODE_CHANNELS:
        raise LogFormatError(f"unknown mode {mode!r}; expected one of {sorted(MODE_CHANNELS)}")
    missing = [k for k in MODE_CHANNELS[mode] if k not in log.channels]
    if missing:
        cols = ", ".join(f"{k}_{a}" for k in missing for a in AXES)
        raise LogFormatError(f"{mode} mode requires columns {cols}")


# ---------------------------------------------------------------------------
# Tables and reports


def write_table(path, columns: dict[str, np.ndarray]) -> Path:
    """Write named 1-D or 2-D columns as a versioned CSV."""
    p = Path(path)
    header, blocks = [], []
    n = None
    for name, arr in columns.items():
        a = np.asarray(arr, dtype=float)
        a = a[:, None] if a.ndim == 1 else a.reshape(a.shape[0], -1)
        if n is None:
            n = a.shape[0]
        elif a.shape[0] != n:
            raise ValueError(f"column {name} has {a.shape[0]} rows, expected {n}")
        if a.shape[1] == 1:
            header.append(name)
        elif a.shape[1] == 3:
            header += [f"{name}_{x}" for x in AXES]
        else:
            header += [f"{name}_{i}" for i in range(a.shape[1])]
        blocks.append(a)
    data = np.hstack(blocks) if blocks else np.zeros((0, 0))
    with open(p, "w", newline="") as fh:
        fh.write(TABLE_VERSION + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in data:
            w.writerow([fmt(v) for v in row])
    return p


def read_table(path) -> dict[str, np.ndarray]:
    """Inverse of :func:`write_table` (columns returned flat, by header name)."""
    with open(path, newline="") as fh:
        first = fh.readline().rstrip("\r\n")
        if first != TABLE_VERSION:
            raise LogFormatError(f"line 1: expected {TABLE_VERSION!r}")
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[_parse(f, r, header[i], True) for i, f in enumerate(fields)]
                for r, fields in enumerate(reader, start=1)]
    arr = np.array(rows, dtype=float).reshape(-1, len(header))
    return {h: arr[:, i] for i, h in enumerate(header)}


def _flatten(d: dict, prefix: str = "") -> list[tuple[str, Any]]:
    out = []
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out += _flatten(v, key + ".")
        else:
            out.append((key, v))
    return out


def _scalar_text(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return fmt(v) if not math.isnan(float(v)) else "nan"
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(_scalar_text(x) for x in np.asarray(v, dtype=object).ravel())
    return str(v)


def report_text(report: dict) -> str:
    """``key = value`` lines with dotted keys for nested mappings."""
    return "".join(f"{k} = {_scalar_text(v)}\n" for k, v in _flatten(report))


def write_report(path, report: dict) -> tuple[Path, Path]:
    """Write ``<path>.txt`` (key = value) and ``<path>.json``; returns both."""
    base = Path(path)
    txt = base.with_suffix(".txt")
    js = base.with_suffix(".json")
    txt.write_text(report_text(report))
    js.write_text(json.dumps(report, indent=2, sort_keys=True, default=_json_default) + "\n")
    return txt, js
