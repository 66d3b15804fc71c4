"""Window extraction: labeled context/skip/target instances and splits.

Each instance pairs an L-sample two-channel context block with a target
block that sits ``skip_len`` samples later, leaving a clinical lead-time
gap between what the model sees and what it is judged on. Labels mark
target samples inside sustained sub-threshold MAP runs; the run scan is
extended left into the skip gap so a run straddling the gap boundary is
counted at its full length.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass

import numpy as np

from .vitals import VitalSeries

logger = logging.getLogger(__name__)

TRAIN_FRACTION = 0.8
VAL_FRACTION = 0.1
MIN_INSTANCES_FOR_SPLIT = 10


@dataclass
class WindowInstance:
    """One training/evaluation example cut from a vitals series."""

    context: np.ndarray      # [L, 2], columns (MAP, SBP), mmHg
    skip_len: int
    target_map: np.ndarray   # [tau] mmHg
    target_sbp: np.ndarray   # [tau] mmHg
    labels: np.ndarray       # [tau] int, 1 inside qualifying hypotensive runs
    patient_id: str
    start_index: int


def label_hypotension(map_series, theta_map: float, t: int) -> np.ndarray:
    """Mark samples inside sub-threshold runs of at least ``t`` samples.

    labels[i] = 1 iff i belongs to a maximal run of consecutive samples
    with MAP < theta_map whose length is >= t.
    """
    if t < 1:
        raise ValueError(f"minimum event duration t must be >= 1, got {t}")
    below = np.asarray(map_series, dtype=np.float64) < theta_map
    labels = np.zeros(below.shape[0], dtype=np.int64)
    padded = np.concatenate([[False], below, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    for start, end in zip(edges[::2], edges[1::2]):
        if end - start >= t:
            labels[start:end] = 1
    return labels


def make_windows(series: VitalSeries, L: int, skip_len: int, tau: int,
                 stride: int, theta_map: float, t: int) -> list[WindowInstance]:
    """Slide a context/skip/target template over a series.

    An instance is emitted only when its context and target blocks are
    fully valid. Labels come from a run scan over the gap-plus-target
    segment (invalid gap samples break runs); only the target portion of
    the scan is kept.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    total = L + skip_len + tau
    n = len(series)
    instances = []
    for start in range(0, n - total + 1, stride):
        ctx = slice(start, start + L)
        gap = slice(start + L, start + L + skip_len)
        tgt = slice(start + L + skip_len, start + total)
        if not (series.valid[ctx].all() and series.valid[tgt].all()):
            continue
        seg_map = np.concatenate([
            np.where(series.valid[gap], series.map_mmHg[gap], theta_map),
            series.map_mmHg[tgt],
        ])
        labels = label_hypotension(seg_map, theta_map, t)[skip_len:]
        context = np.stack(
            [series.map_mmHg[ctx], series.sbp_mmHg[ctx]], axis=1
        )
        instances.append(
            WindowInstance(
                context=context,
                skip_len=skip_len,
                target_map=series.map_mmHg[tgt].copy(),
                target_sbp=series.sbp_mmHg[tgt].copy(),
                labels=labels,
                patient_id=series.patient_id,
                start_index=start,
            )
        )
    return instances


def split_dataset(instances: list[WindowInstance]) -> tuple[list, list, list]:
    """Per-patient chronological 80/10/10 split.

    Within each patient the chronologically first 80% of instances go to
    train, the next 10% to validation, and the remainder to test. Patients
    with fewer than 10 instances are assigned entirely to train.
    """
    by_patient: dict[str, list[WindowInstance]] = {}
    order = []
    for inst in instances:
        if inst.patient_id not in by_patient:
            order.append(inst.patient_id)
        by_patient.setdefault(inst.patient_id, []).append(inst)

    train, val, test = [], [], []
    for pid in order:
        group = sorted(by_patient[pid], key=lambda w: w.start_index)
        n = len(group)
        if n < MIN_INSTANCES_FOR_SPLIT:
            logger.warning(
                "patient %s has only %d instances; assigning all to train",
                pid, n,
            )
            train.extend(group)
            continue
        n_train = int(n * TRAIN_FRACTION)
        n_val = int(n * VAL_FRACTION)
        train.extend(group[:n_train])
        val.extend(group[n_train:n_train + n_val])
        test.extend(group[n_train + n_val:])
    return train, val, test


# ---------------------------------------------------------------------------
# On-disk window datasets: per-split CSVs plus a JSON sidecar
# ---------------------------------------------------------------------------

SIDECAR_NAME = "dataset.json"
SPLIT_NAMES = ("train", "val", "test")


def _header(L: int, tau: int) -> list[str]:
    cols = ["patient_id", "start_index", "skip_len"]
    cols += [f"ctx_map_{i}" for i in range(L)]
    cols += [f"ctx_sbp_{i}" for i in range(L)]
    cols += [f"tgt_map_{i}" for i in range(tau)]
    cols += [f"tgt_sbp_{i}" for i in range(tau)]
    cols += [f"label_{i}" for i in range(tau)]
    return cols


def save_window_dataset(splits: dict[str, list[WindowInstance]], out_dir,
                        meta: dict) -> None:
    """Persist splits as one CSV per split plus a sidecar.

    ``meta`` must carry L, skip_len, target_len, t, theta_map, interval_s.
    """
    os.makedirs(out_dir, exist_ok=True)
    L = int(meta["L"])
    tau = int(meta["target_len"])
    counts = {}
    for name in SPLIT_NAMES:
        instances = splits.get(name, [])
        counts[name] = len(instances)
        path = os.path.join(out_dir, f"{name}.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(_header(L, tau))
            for w in instances:
                row = [w.patient_id, w.start_index, w.skip_len]
                row += [repr(float(v)) for v in w.context[:, 0]]
                row += [repr(float(v)) for v in w.context[:, 1]]
                row += [repr(float(v)) for v in w.target_map]
                row += [repr(float(v)) for v in w.target_sbp]
                row += [int(v) for v in w.labels]
                writer.writerow(row)
    sidecar = dict(meta)
    sidecar["counts"] = counts
    with open(os.path.join(out_dir, SIDECAR_NAME), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_window_dataset(in_dir) -> tuple[dict[str, list[WindowInstance]], dict]:
    """Inverse of save_window_dataset."""
    with open(os.path.join(in_dir, SIDECAR_NAME), encoding="utf-8") as fh:
        meta = json.load(fh)
    L = int(meta["L"])
    tau = int(meta["target_len"])
    splits: dict[str, list[WindowInstance]] = {}
    for name in SPLIT_NAMES:
        path = os.path.join(in_dir, f"{name}.csv")
        instances = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != _header(L, tau):
                raise ValueError(f"{path}: header does not match sidecar shape")
            for row in reader:
                pid = row[0]
                start = int(row[1])
                skip = int(row[2])
                vals = row[3:]
                ctx_map = np.array(vals[0:L], dtype=np.float64)
                ctx_sbp = np.array(vals[L:2 * L], dtype=np.float64)
                tgt_map = np.array(vals[2 * L:2 * L + tau], dtype=np.float64)
                tgt_sbp = np.array(vals[2 * L + tau:2 * L + 2 * tau], dtype=np.float64)
                labels = np.array(vals[2 * L + 2 * tau:], dtype=np.int64)
                instances.append(WindowInstance(
                    context=np.stack([ctx_map, ctx_sbp], axis=1),
                    skip_len=skip,
                    target_map=tgt_map,
                    target_sbp=tgt_sbp,
                    labels=labels,
                    patient_id=pid,
                    start_index=start,
                ))
        splits[name] = instances
    return splits, meta
