"""Small synthetic raw-event corpus for smoke tests and CLI walkthroughs.

Profiles come from four piecewise-linear shape templates (plus the odd
standstill) with mild measurement noise, spread over the four source groups
so every pipeline stage has something to chew on.  Not a statistical model
of any real corpus; purely a plumbing exercise.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Tuple

import numpy as np

from .events import Severity, SourceGroup

_DT = 0.1  # 10 Hz
_NOISE = 0.01  # m/s

# template -> vertex builder; each returns (ts, vs) with ts increasing to 0
_TEMPLATES = ("brake_line", "brake_hold", "accel_brake", "accel_brake_hold")


def _polyline(rng: np.random.Generator, kind: str, fast: bool) -> Tuple[np.ndarray, np.ndarray]:
    lo, hi = (14.0, 26.0) if fast else (2.0, 7.5)
    v0 = rng.uniform(lo, hi)
    grid = lambda x: float(np.round(x, 1))  # keep kinks on the sample grid
    if kind == "brake_line":
        # one deceleration through the whole window
        a = rng.uniform(-4.0, -1.5)
        return np.array([-5.0, 0.0]), np.array([v0 - a * 5.0, v0])
    if kind == "brake_hold":
        # decelerate from the window start, then hold near time zero
        tau_s = grid(rng.uniform(1.5, 2.4))
        a = rng.uniform(-4.0, -1.8)
        v_start = v0 - a * (5.0 - tau_s)
        return np.array([-5.0, -tau_s, 0.0]), np.array([v_start, v0, v0])
    if kind == "accel_brake":
        # gentle acceleration, then hard braking until time zero
        a1 = rng.uniform(-5.0, -2.5)
        t1 = grid(rng.uniform(-3.2, -1.8))
        v1 = v0 + a1 * t1
        a2 = rng.uniform(0.8, min(2.2, (v1 - 0.3) / (t1 + 5.0)))
        v_start = v1 - a2 * (t1 + 5.0)
        return np.array([-5.0, t1, 0.0]), np.array([v_start, v1, v0])
    if kind == "accel_brake_hold":
        # acceleration, hard braking, then a steady tail
        tau_s = grid(rng.uniform(1.5, 2.2))
        a1 = rng.uniform(-5.0, -2.5)
        t1 = grid(-tau_s - rng.uniform(1.3, 2.0))
        v1 = v0 - a1 * (-tau_s - t1)
        a2 = rng.uniform(0.8, min(2.2, (v1 - 0.3) / (t1 + 5.0)))
        v_start = v1 - a2 * (t1 + 5.0)
        return np.array([-5.0, t1, -tau_s, 0.0]), np.array([v_start, v1, v0, v0])
    if kind == "standstill":
        return np.array([-5.0, 0.0]), np.array([0.0, 0.0])
    raise ValueError(f"unknown template {kind!r}")


def make_demo_events(path, seed: int = 7, events_per_group=(10, 8, 14, 20)) -> int:
    """Write a demo raw-event CSV; returns the number of events written."""
    rng = np.random.default_rng(seed)
    path = Path(path)
    groups = [
        (SourceGroup.CISS_SC, Severity.SEVERE, events_per_group[0]),
        (SourceGroup.SHRP2_SC, Severity.SEVERE, events_per_group[1]),
        (SourceGroup.SHRP2_NSC, Severity.NON_SEVERE, events_per_group[2]),
        (SourceGroup.SHRP2_NC, Severity.NONE, events_per_group[3]),
    ]
    n_written = 0
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["event_id", "group", "severity", "t", "v", "weight"])
        for group, severity, count in groups:
            for i in range(count):
                event_id = f"{group.value}-{i:03d}"
                if group is SourceGroup.CISS_SC:
                    # CISS carries survey weights and reaches higher speeds
                    fast = i % 2 == 0
                    weight = float(np.round(rng.lognormal(1.5, 0.8) + 2.0, 1))
                else:
                    fast = False
                    weight = None
                kind = _TEMPLATES[i % len(_TEMPLATES)]
                if group is SourceGroup.SHRP2_NSC and i == 13:
                    kind = "standstill"
                ts, vs = _polyline(rng, kind, fast)
                t_grid = np.round(np.arange(-5.0, 0.0 + _DT / 2, _DT), 6)
                v = np.interp(t_grid, ts, np.maximum(vs, 0.0))
                if kind != "standstill":
                    v = np.maximum(v + rng.normal(0.0, _NOISE, v.size), 0.0)
                for t, speed in zip(t_grid, v):
                    writer.writerow([
                        event_id,
                        group.value,
                        severity.value,
                        f"{t:.1f}",
                        repr(float(np.round(speed, 4))),
                        "" if weight is None else repr(weight),
                    ])
                n_written += 1
    return n_written
