"""Vital-sign series: ingestion, artifact cleaning, and synthetic cohorts.

A ``VitalSeries`` holds uniformly sampled MAP and SBP sequences for one
patient plus a per-sample validity mask. Series come either from the CSV
schema (``patient_id,timestamp_s,map_mmHg,sbp_mmHg``) or from the cohort
generator, which produces controllable hypotensive episodes for training
and evaluation at desk scale.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

MAP_RANGE = (20.0, 200.0)
SBP_RANGE = (30.0, 300.0)

CSV_HEADER = ["patient_id", "timestamp_s", "map_mmHg", "sbp_mmHg"]


class VitalsParseError(ValueError):
    """Malformed vitals CSV content; message carries the line number."""


@dataclass
class VitalSeries:
    """Uniformly sampled MAP/SBP sequences for one patient.

    map_mmHg, sbp_mmHg, and valid always have equal length; values at
    invalid positions are present but must not be trusted.
    """

    patient_id: str
    interval_s: float
    map_mmHg: np.ndarray
    sbp_mmHg: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.map_mmHg = np.asarray(self.map_mmHg, dtype=np.float64)
        self.sbp_mmHg = np.asarray(self.sbp_mmHg, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if not (len(self.map_mmHg) == len(self.sbp_mmHg) == len(self.valid)):
            raise ValueError(
                f"series arrays disagree in length: map={len(self.map_mmHg)}, "
                f"sbp={len(self.sbp_mmHg)}, valid={len(self.valid)}"
            )

    def __len__(self) -> int:
        return len(self.map_mmHg)


def compute_map(sbp, dbp):
    """Mean arterial pressure from systolic and diastolic pressure.

    MAP = DBP + (SBP - DBP) / 3. Accepts scalars or arrays; requires
    SBP >= DBP > 0.
    """
    sbp = np.asarray(sbp, dtype=np.float64)
    dbp = np.asarray(dbp, dtype=np.float64)
    if np.any(dbp <= 0):
        raise ValueError("DBP must be positive")
    if np.any(sbp < dbp):
        raise ValueError("SBP must be >= DBP")
    out = dbp + (sbp - dbp) / 3.0
    return float(out) if out.ndim == 0 else out


def in_valid_range(map_mmHg, sbp_mmHg):
    """Elementwise plausibility check for MAP/SBP pairs."""
    map_mmHg = np.asarray(map_mmHg, dtype=np.float64)
    sbp_mmHg = np.asarray(sbp_mmHg, dtype=np.float64)
    return (
        np.isfinite(map_mmHg)
        & np.isfinite(sbp_mmHg)
        & (map_mmHg >= MAP_RANGE[0])
        & (map_mmHg <= MAP_RANGE[1])
        & (sbp_mmHg >= SBP_RANGE[0])
        & (sbp_mmHg <= SBP_RANGE[1])
        & (sbp_mmHg >= map_mmHg)
    )


def ingest_csv(path, interval_s: float) -> list[VitalSeries]:
    """Read the vitals CSV schema and resample to a fixed interval.

    Samples are binned to ``interval_s`` by mean-within-bin; bins with no
    sample are marked invalid, as are bins whose binned values fall outside
    the plausibility ranges. Timestamps must be strictly increasing per
    patient.
    """
    rows_by_patient: dict[str, list[tuple[float, float, float]]] = {}
    order: list[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise VitalsParseError(f"{path}: empty file") from None
        if [h.strip() for h in header] != CSV_HEADER:
            raise VitalsParseError(
                f"{path}: line 1: expected header {','.join(CSV_HEADER)}, "
                f"got {','.join(header)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise VitalsParseError(
                    f"{path}: line {lineno}: expected 4 fields, got {len(row)}"
                )
            pid = row[0].strip()
            try:
                ts = float(row[1])
                map_v = float(row[2])
                sbp_v = float(row[3])
            except ValueError:
                raise VitalsParseError(
                    f"{path}: line {lineno}: non-numeric field in {row!r}"
                ) from None
            bucket = rows_by_patient.setdefault(pid, [])
            if bucket and ts <= bucket[-1][0]:
                raise VitalsParseError(
                    f"{path}: line {lineno}: timestamps must be strictly "
                    f"increasing per patient (got {ts} after {bucket[-1][0]})"
                )
            if not bucket:
                order.append(pid)
            bucket.append((ts, map_v, sbp_v))
    if not order:
        raise VitalsParseError(f"{path}: no data rows")

    series = []
    for pid in order:
        rows = rows_by_patient[pid]
        ts = np.array([r[0] for r in rows])
        maps = np.array([r[1] for r in rows])
        sbps = np.array([r[2] for r in rows])
        bins = np.floor(ts / interval_s).astype(np.int64)
        first, last = bins[0], bins[-1]
        n = int(last - first + 1)
        counts = np.zeros(n)
        map_sum = np.zeros(n)
        sbp_sum = np.zeros(n)
        rel = bins - first
        np.add.at(counts, rel, 1.0)
        np.add.at(map_sum, rel, maps)
        np.add.at(sbp_sum, rel, sbps)
        occupied = counts > 0
        with np.errstate(invalid="ignore"):
            map_mean = np.where(occupied, map_sum / np.maximum(counts, 1), np.nan)
            sbp_mean = np.where(occupied, sbp_sum / np.maximum(counts, 1), np.nan)
        valid = occupied & in_valid_range(map_mean, sbp_mean)
        series.append(
            VitalSeries(pid, interval_s, map_mean, sbp_mean, valid)
        )
    return series


def clean_artifacts(series: VitalSeries, max_gap: int = 5) -> VitalSeries:
    """Invalidate implausible samples and bridge short invalid runs.

    Out-of-range samples are marked invalid. Invalid runs of length at
    most ``max_gap`` that have valid neighbors on both sides are linearly
    interpolated (both channels) and revalidated; longer runs and runs
    touching either end of the series stay invalid.
    """
    maps = series.map_mmHg.copy()
    sbps = series.sbp_mmHg.copy()
    valid = series.valid & in_valid_range(maps, sbps)
    n = len(valid)
    i = 0
    while i < n:
        if valid[i]:
            i += 1
            continue
        j = i
        while j < n and not valid[j]:
            j += 1
        run = j - i
        if run <= max_gap and i > 0 and j < n:
            left, right = i - 1, j
            for k in range(i, j):
                frac = (k - left) / (right - left)
                maps[k] = maps[left] + frac * (maps[right] - maps[left])
                sbps[k] = sbps[left] + frac * (sbps[right] - sbps[left])
            valid[i:j] = in_valid_range(maps[i:j], sbps[i:j])
        i = j
    return VitalSeries(series.patient_id, series.interval_s, maps, sbps, valid)


@dataclass
class CohortConfig:
    """Knobs for the synthetic vitals generator.

    Episode depth is the MAP plateau level of an injected dip (mmHg);
    episode duration is the plateau length. Ramps of ``episode_ramp_s``
    are added before and after the plateau so dips announce themselves in
    the context window.
    """

    n_patients: int = 40
    duration_s: float = 7200.0
    interval_s: float = 3.0
    episode_rate_per_hour: float = 1.5
    episode_depth_range: tuple[float, float] = (45.0, 60.0)
    episode_duration_range_s: tuple[float, float] = (90.0, 240.0)
    episode_ramp_s: float = 240.0
    drift_amplitude: float = 6.0
    periodic_amplitudes: tuple[float, ...] = (3.0, 1.5)
    periodic_periods_s: tuple[float, ...] = (420.0, 75.0)
    noise_std: float = 1.0
    pulse_pressure_mmHg: float = 35.0
    seed: int = 0

    def validate(self) -> None:
        if self.n_patients < 1:
            raise ValueError("n_patients must be >= 1")
        if self.interval_s <= 0 or self.duration_s < self.interval_s:
            raise ValueError("duration_s / interval_s out of range")
        if self.episode_rate_per_hour < 0:
            raise ValueError("episode_rate_per_hour must be >= 0")
        lo, hi = self.episode_depth_range
        if not 0 < lo <= hi:
            raise ValueError("episode_depth_range must satisfy 0 < low <= high")
        dlo, dhi = self.episode_duration_range_s
        if not 0 < dlo <= dhi:
            raise ValueError("episode_duration_range_s must satisfy 0 < low <= high")
        if len(self.periodic_amplitudes) != len(self.periodic_periods_s):
            raise ValueError("periodic amplitudes and periods differ in count")
        if any(a < 0 for a in self.periodic_amplitudes):
            raise ValueError("periodic amplitudes must be >= 0")
        if any(p <= 0 for p in self.periodic_periods_s):
            raise ValueError("periodic periods must be > 0")
        if self.noise_std < 0 or self.drift_amplitude < 0:
            raise ValueError("noise_std and drift_amplitude must be >= 0")
        if self.episode_ramp_s < 0:
            raise ValueError("episode_ramp_s must be >= 0")


def _smooth_noise(rng: np.random.Generator, n: int, std: float, width: int) -> np.ndarray:
    """Autocorrelated noise: white noise smoothed by a moving average."""
    raw = rng.normal(0.0, std, n + width - 1)
    kernel = np.ones(width) / width
    return np.convolve(raw, kernel, mode="valid")


def synth_cohort(config: CohortConfig) -> list[VitalSeries]:
    """Generate a cohort of synthetic MAP/SBP series.

    MAP per patient = baseline near 85 mmHg + slow random-walk drift +
    seeded sinusoids + white noise, with smooth hypotensive dips injected
    at the configured rate. SBP = MAP + a pulse-pressure term with
    correlated noise. Output is a pure function of the seed.
    """
    config.validate()
    n = int(round(config.duration_s / config.interval_s))
    series = []
    for i in range(config.n_patients):
        rng = np.random.default_rng([config.seed, i])
        t = np.arange(n) * config.interval_s

        baseline = rng.uniform(80.0, 90.0)
        drift = np.cumsum(rng.normal(0.0, 1.0, n)) * (
            config.drift_amplitude / math.sqrt(n)
        )
        level = baseline + drift
        for amp, period in zip(config.periodic_amplitudes, config.periodic_periods_s):
            phase = rng.uniform(0.0, 2.0 * math.pi)
            level = level + amp * np.sin(2.0 * math.pi * t / period + phase)

        expected = config.episode_rate_per_hour * config.duration_s / 3600.0
        n_episodes = rng.poisson(expected) if expected > 0 else 0
        ramp = int(round(config.episode_ramp_s / config.interval_s))
        for _ in range(n_episodes):
            depth = rng.uniform(*config.episode_depth_range)
            plateau = int(round(
                rng.uniform(*config.episode_duration_range_s) / config.interval_s
            ))
            total = plateau + 2 * ramp
            if total >= n:
                continue
            start = int(rng.integers(0, n - total))
            # linear entry/exit ramps: the descent announces itself at a
            # steady slope from onset, which is what makes events callable
            # from the context window
            profile = np.ones(total)
            if ramp > 0:
                ramp_curve = np.arange(1, ramp + 1) / ramp
                profile[:ramp] = ramp_curve
                profile[-ramp:] = ramp_curve[::-1]
            seg = slice(start, start + total)
            level[seg] = level[seg] - profile * (level[seg] - depth)

        map_vals = level + rng.normal(0.0, config.noise_std, n)
        pp = config.pulse_pressure_mmHg + _smooth_noise(rng, n, 3.0, 25)
        pp = np.maximum(pp, 5.0)
        sbp_vals = map_vals + pp

        map_vals = np.clip(map_vals, *MAP_RANGE)
        sbp_vals = np.clip(sbp_vals, *SBP_RANGE)
        sbp_vals = np.maximum(sbp_vals, map_vals)
        series.append(
            VitalSeries(
                patient_id=f"synth-{i:04d}",
                interval_s=config.interval_s,
                map_mmHg=map_vals,
                sbp_mmHg=sbp_vals,
                valid=np.ones(n, dtype=bool),
            )
        )
    return series


def write_cohort_csv(series: list[VitalSeries], path) -> None:
    """Write series in the ingest CSV schema (valid samples only)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for s in series:
            times = np.arange(len(s)) * s.interval_s
            for ts, m, b, ok in zip(times, s.map_mmHg, s.sbp_mmHg, s.valid):
                if ok:
                    writer.writerow([s.patient_id, repr(float(ts)),
                                     repr(float(m)), repr(float(b))])
