"""Weighted piecewise-linear fitting of lead-vehicle speed profiles.

A profile is approximated by consecutive straight lines joined at
breakpoints.  Candidates with 0..n_b_max breakpoints are fit by weighted
least squares, scored by a loss that trades fit accuracy against breakpoint
count, repaired to keep the predicted speed non-negative, and reduced to
the six-parameter event description.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyCandidates, FitDiverged
from .events import (
    MODEL_T_MAX,
    MODEL_T_MIN,
    EventParams,
    Severity,
    SourceGroup,
    SpeedProfile,
)

log = logging.getLogger(__name__)

_MAX_ITER = 30
_MIN_SAMPLES_PER_SEGMENT = 2


@dataclass(frozen=True)
class FitConfig:
    """Knobs for candidate fitting and model selection."""

    n_b_max: int = 3
    penalty: float = 0.006  # breakpoint-count penalty coefficient
    epsilon: float = 1e-6  # m/s, guards zero denominators in the loss
    steady_slope_tol: float = 0.05  # m/s^2, max |slope| of a steady-speed segment
    max_restarts: int = 10
    convergence_tol: float = 1e-6

    def __post_init__(self):
        if self.n_b_max < 0:
            raise ValueError("n_b_max must be >= 0")
        if self.penalty <= 0:
            raise ValueError("penalty must be > 0")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")


@dataclass(frozen=True)
class Segment:
    """One straight piece, v(t) = slope * t + intercept on [t_start, t_end]."""

    t_start: float
    t_end: float
    slope: float
    intercept: float

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    def value(self, t: float) -> float:
        return self.slope * t + self.intercept


@dataclass(frozen=True)
class PwlFit:
    """A fitted piecewise-linear speed model covering [-5, 0] s."""

    breakpoints: tuple
    segments: tuple
    r_squared: float
    r_squared_adj: float
    n_samples: int
    loss: Optional[float] = None
    modified_for_nonnegativity: bool = False

    @property
    def n_b(self) -> int:
        return len(self.breakpoints)

    def vertices(self) -> tuple:
        """(t, v) knots of the polyline, endpoints included."""
        ts = [self.segments[0].t_start]
        vs = [self.segments[0].value(self.segments[0].t_start)]
        for seg in self.segments:
            ts.append(seg.t_end)
            vs.append(seg.value(seg.t_end))
        return np.array(ts), np.array(vs)

    def predict(self, t) -> np.ndarray:
        ts, vs = self.vertices()
        return np.interp(np.asarray(t, dtype=float), ts, vs)

    def slopes(self) -> np.ndarray:
        return np.array([s.slope for s in self.segments])


def sample_weights(times) -> np.ndarray:
    """Fit weight for each sample time, w = (0.1 - t)^(-1/2).

    Samples near time zero carry more weight so the fit prioritizes the
    speed changes closest to the event.
    """
    t = np.asarray(times, dtype=float)
    if t.size and (t.min() < MODEL_T_MIN - 1e-9 or t.max() > MODEL_T_MAX + 1e-9):
        raise ValueError("sample times must lie in [-5, 0] s")
    return np.power(0.1 - t, -0.5)


# --- weighted segmented least squares --------------------------------------


def _design(t: np.ndarray, breakpoints: np.ndarray) -> np.ndarray:
    cols = [np.ones_like(t), t]
    for b in breakpoints:
        cols.append(np.maximum(t - b, 0.0))
    return np.column_stack(cols)


def _wls(t, v, sqrt_w, breakpoints):
    """Weighted least squares at fixed breakpoints; returns (coef, sse_w)."""
    X = _design(t, breakpoints)
    coef, *_ = np.linalg.lstsq(X * sqrt_w[:, None], v * sqrt_w, rcond=None)
    resid = v - X @ coef
    return coef, float(np.dot(sqrt_w * resid, sqrt_w * resid))


def _separated(breakpoints: np.ndarray, t: np.ndarray) -> bool:
    """Each segment must keep at least a couple of samples."""
    edges = np.concatenate(([t[0]], breakpoints, [t[-1]]))
    counts = np.histogram(t, bins=edges)[0]
    return bool((counts >= _MIN_SAMPLES_PER_SEGMENT).all())


def _min_separation(t: np.ndarray) -> float:
    return 2.5 * float(np.median(np.diff(t)))


def _breakpoint_bounds(t: np.ndarray):
    """Range that leaves at least two samples in each end segment."""
    lo = (t[1] + t[2]) / 2.0
    hi = (t[-3] + t[-2]) / 2.0
    return lo, hi


def _project_separated(bks, lo, hi, min_sep):
    """Sort and push breakpoints apart to at least min_sep inside [lo, hi]."""
    k = len(bks)
    if lo + (k - 1) * min_sep > hi:
        return None
    out = np.sort(np.asarray(bks, dtype=float))
    out[0] = max(out[0], lo)
    for i in range(1, k):
        out[i] = max(out[i], out[i - 1] + min_sep)
    out[-1] = min(out[-1], hi)
    for i in range(k - 2, -1, -1):
        out[i] = min(out[i], out[i + 1] - min_sep)
    if out[0] < lo - 1e-12:
        return None
    return out


def _iterate_breakpoints(t, v, w, init, tol):
    """Breakpoint refinement by iterative linearization.

    Augments the design with jump indicator columns; the ratio of the
    indicator coefficient to the slope-change coefficient estimates how far
    each breakpoint should move.  A shrinking-step line search keeps the
    updates from oscillating around sharp kinks; breakpoints are projected
    back onto the minimum-separation set after every step.
    """
    sqrt_w = np.sqrt(w)
    lo, hi = _breakpoint_bounds(t)
    min_sep = _min_separation(t)
    bks = _project_separated(np.asarray(init, dtype=float), lo, hi, min_sep)
    if bks is None:
        return None
    k = len(bks)
    _, best_sse = _wls(t, v, sqrt_w, bks)
    best_bks = bks.copy()
    for _ in range(_MAX_ITER):
        relu = np.maximum(t - bks[:, None], 0.0)
        ind = (t > bks[:, None]).astype(float)
        X = np.column_stack([np.ones_like(t), t, relu.T, ind.T])
        coef, *_ = np.linalg.lstsq(X * sqrt_w[:, None], v * sqrt_w, rcond=None)
        gamma = coef[2 : 2 + k]
        beta_ind = coef[2 + k :]
        if np.any(np.abs(gamma) < 1e-12):
            break  # a slope change vanished; keep the best point so far
        delta = beta_ind / gamma
        stepped = None
        for step in (1.0, 0.5, 0.25, 0.1):
            cand = _project_separated(bks - step * delta, lo, hi, min_sep)
            if cand is None:
                continue
            _, sse = _wls(t, v, sqrt_w, cand)
            if stepped is None or sse < stepped[1]:
                stepped = (cand, sse)
        if stepped is None:
            break
        bks = stepped[0]
        if stepped[1] < best_sse:
            improved = best_sse - stepped[1] > tol * (best_sse + tol)
            best_bks, best_sse = bks.copy(), stepped[1]
            if not improved:
                break
        else:
            break

    coef, sse = _wls(t, v, sqrt_w, best_bks)
    return coef, best_bks, sse


def _polish_breakpoints(t, v, sqrt_w, bks, sse, lo, hi):
    """Coordinate-wise fine-grid refinement around each breakpoint."""
    if len(bks) == 0:
        return bks, sse
    dt = float(np.median(np.diff(t)))
    min_sep = _min_separation(t)
    offsets = np.linspace(-1.5 * dt, 1.5 * dt, 31)
    bks = np.asarray(bks, dtype=float)
    for _ in range(2):
        moved = False
        for i in range(len(bks)):
            left = lo if i == 0 else bks[i - 1] + min_sep
            right = hi if i == len(bks) - 1 else bks[i + 1] - min_sep
            for off in offsets:
                b = bks[i] + off
                if b < left or b > right or off == 0.0:
                    continue
                cand = bks.copy()
                cand[i] = b
                _, sse_c = _wls(t, v, sqrt_w, cand)
                if sse_c < sse:
                    bks, sse = cand, sse_c
                    moved = True
        if not moved:
            break
    return bks, sse


def _grid_search(t, v, w, k):
    """Exhaustive search over sample-midpoint breakpoints (fallback)."""
    sqrt_w = np.sqrt(w)
    mids = (t[:-1] + t[1:]) / 2.0
    best = None
    for combo in itertools.combinations(range(len(mids)), k):
        bks = mids[list(combo)]
        if not _separated(bks, t):
            continue
        coef, sse = _wls(t, v, sqrt_w, bks)
        if best is None or sse < best[2]:
            best = (coef, bks, sse)
    return best


def _segments_from_coef(coef, breakpoints) -> tuple:
    """Convert basis coefficients into contiguous segments over [-5, 0]."""
    beta0, beta1 = coef[0], coef[1]
    gammas = coef[2:]
    edges = [MODEL_T_MIN, *breakpoints, MODEL_T_MAX]
    segments = []
    slope = beta1
    intercept = beta0
    for i in range(len(edges) - 1):
        if i > 0:
            slope = slope + gammas[i - 1]
            intercept = intercept - gammas[i - 1] * breakpoints[i - 1]
        segments.append(
            Segment(
                t_start=float(edges[i]),
                t_end=float(edges[i + 1]),
                slope=float(slope),
                intercept=float(intercept),
            )
        )
    return tuple(segments)


def _r_squared(v, w, sse_w):
    sw = w.sum()
    mean_w = np.dot(w, v) / sw
    sst_w = float(np.dot(w, np.square(v - mean_w)))
    if sst_w <= 0.0:
        return 1.0 if sse_w <= 1e-18 else 0.0
    return 1.0 - sse_w / sst_w


def _adjusted(r2: float, n: int, n_b: int) -> float:
    p = 2 * (n_b + 1)
    if n - p - 1 <= 0:
        return r2
    return 1.0 - (1.0 - r2) * (n - 1) / (n - p - 1)


def fit_candidates(
    profile: SpeedProfile,
    config: FitConfig = FitConfig(),
    rng: Optional[np.random.Generator] = None,
) -> list:
    """Fit one candidate per breakpoint count, 0..n_b_max.

    Each candidate minimizes the weighted squared error for its breakpoint
    count.  Counts that cannot converge are dropped with a warning; the
    zero-breakpoint candidate always exists.
    """
    rng = rng or np.random.default_rng(0)
    t = np.asarray(profile.times, dtype=float)
    v = np.asarray(profile.speeds, dtype=float)
    w = np.asarray(profile.weights, dtype=float)
    if t.size < 2:
        raise FitDiverged(f"event {profile.event_id!r}: need at least two samples")
    sqrt_w = np.sqrt(w)

    candidates = []
    coef, sse = _wls(t, v, sqrt_w, np.empty(0))
    candidates.append(_build_fit(coef, np.empty(0), v, w, sse, t.size))
    if t.size < 2 * _MIN_SAMPLES_PER_SEGMENT:
        return candidates  # no room for any breakpoint

    lo, hi = _breakpoint_bounds(t)
    span = hi - lo
    for k in range(1, config.n_b_max + 1):
        if t.size < _MIN_SAMPLES_PER_SEGMENT * (k + 1):
            log.warning(
                "event %r: too few samples for %d breakpoints", profile.event_id, k
            )
            continue
        best = None
        inits = [lo + span * np.arange(1, k + 1) / (k + 1)]
        for _ in range(max(config.max_restarts - 1, 0)):
            draw = np.sort(rng.uniform(lo, hi, size=k))
            inits.append(draw)
        for init in inits:
            result = _iterate_breakpoints(t, v, w, init, config.convergence_tol)
            if result is None:
                continue
            if best is None or result[2] < best[2]:
                best = result
        if best is None:
            best = _grid_search(t, v, w, k)
        if best is None:
            log.warning(
                "event %r: no converged fit with %d breakpoints", profile.event_id, k
            )
            continue
        _, bks, sse = best
        bks, sse = _polish_breakpoints(t, v, sqrt_w, bks, sse, lo, hi)
        if not _separated(bks, t):
            log.warning(
                "event %r: %d-breakpoint fit lost separation", profile.event_id, k
            )
            continue
        coef, sse = _wls(t, v, sqrt_w, bks)
        candidates.append(_build_fit(coef, bks, v, w, sse, t.size))
    return candidates


def _build_fit(coef, breakpoints, v, w, sse, n) -> PwlFit:
    r2 = _r_squared(v, w, sse)
    return PwlFit(
        breakpoints=tuple(float(b) for b in breakpoints),
        segments=_segments_from_coef(coef, breakpoints),
        r_squared=float(r2),
        r_squared_adj=float(_adjusted(r2, n, len(breakpoints))),
        n_samples=int(n),
    )


def loss(candidate: PwlFit, profile: SpeedProfile, config: FitConfig = FitConfig()) -> float:
    """Selection loss: breakpoint penalty minus fit accuracy.

    The penalty per breakpoint grows with max(v)/(max(v) - min(v)), both
    taken from the observed samples, so barely-perceptible speed changes do
    not earn extra segments.
    """
    v = np.asarray(profile.speeds, dtype=float)
    v_max = float(v.max())
    dv = float(v.max() - v.min())
    per_bp = config.epsilon + config.penalty * v_max / (dv + config.epsilon)
    return per_bp * candidate.n_b - candidate.r_squared


def select_best(candidates: Sequence[PwlFit]) -> PwlFit:
    """Minimum-loss candidate; ties go to the smaller breakpoint count."""
    if not candidates:
        raise EmptyCandidates("no candidate fits to select from")
    for c in candidates:
        if c.loss is None:
            raise ValueError("candidates must have loss computed before selection")
    return min(candidates, key=lambda c: (c.loss, c.n_b))


def _segments_from_vertices(ts, vs) -> tuple:
    segments = []
    for i in range(len(ts) - 1):
        dt = ts[i + 1] - ts[i]
        if dt < 1e-12:  # degenerate piece, e.g. a crossing at an existing vertex
            continue
        slope = (vs[i + 1] - vs[i]) / dt
        intercept = vs[i] - slope * ts[i]
        segments.append(Segment(float(ts[i]), float(ts[i + 1]), float(slope), float(intercept)))
    # merge exactly collinear neighbours (created by zero clamping)
    merged = [segments[0]]
    for seg in segments[1:]:
        prev = merged[-1]
        if abs(seg.slope - prev.slope) < 1e-12 and abs(seg.value(seg.t_start) - prev.value(seg.t_start)) < 1e-12:
            merged[-1] = Segment(prev.t_start, seg.t_end, prev.slope, prev.intercept)
        else:
            merged.append(seg)
    return tuple(merged)


def enforce_nonnegative(fit: PwlFit) -> PwlFit:
    """Repair a fit so the predicted speed is non-negative on [-5, 0].

    Negative stretches at either end of the modeling window are replaced by
    zero speed from the crossing point outward; negative interior breakpoint
    values are raised to zero and the neighbouring lines reconnected.
    """
    ts, vs = fit.vertices()
    if (vs >= 0.0).all():
        return fit

    ts = list(ts)
    vs = list(vs)

    def _cross(t0, v0, t1, v1):
        return t0 + (t1 - t0) * (0.0 - v0) / (v1 - v0)

    # start side: zero speed up to the first crossing into >= 0
    if vs[0] < 0.0:
        i = 0
        while i + 1 < len(vs) and vs[i + 1] < 0.0:
            i += 1
        if i + 1 == len(vs):  # never recovers; all-zero profile
            ts, vs = [ts[0], ts[-1]], [0.0, 0.0]
        else:
            tc = _cross(ts[i], vs[i], ts[i + 1], vs[i + 1])
            ts = [ts[0], tc] + ts[i + 1 :]
            vs = [0.0, 0.0] + vs[i + 1 :]

    # end side, mirrored
    if vs[-1] < 0.0:
        j = len(vs) - 1
        while j - 1 >= 0 and vs[j - 1] < 0.0:
            j -= 1
        if j == 0:
            ts, vs = [ts[0], ts[-1]], [0.0, 0.0]
        else:
            tc = _cross(ts[j - 1], vs[j - 1], ts[j], vs[j])
            ts = ts[:j] + [tc, ts[-1]]
            vs = vs[:j] + [0.0, 0.0]

    # interior breakpoints: clamp to zero, lines reconnect implicitly
    vs = [max(v, 0.0) for v in vs]

    segments = _segments_from_vertices(np.asarray(ts), np.asarray(vs))
    breakpoints = tuple(s.t_end for s in segments[:-1])
    return replace(
        fit,
        breakpoints=breakpoints,
        segments=segments,
        modified_for_nonnegativity=True,
    )


def extract_params(
    fit: PwlFit,
    config: FitConfig = FitConfig(),
    event_id: str = "",
    source_group: Optional[SourceGroup] = None,
    severity: Optional[Severity] = None,
    weight: float = 1.0,
    native_weight: Optional[float] = None,
) -> EventParams:
    """Reduce a repaired fit to the six-parameter event description.

    The final segment counts as the steady-speed phase when its |slope| is
    within ``steady_slope_tol``; at most the three (with steady phase) or
    two (without) segments nearest time zero are kept, earlier ones are
    dropped.
    """
    segments = list(fit.segments)
    last = segments[-1]
    if abs(last.slope) <= config.steady_slope_tol:
        steady = last
        rest = segments[:-1]
    else:
        steady = None
        rest = segments

    v_c = float(fit.predict(MODEL_T_MAX))
    tau_s = steady.duration if steady is not None else 0.0
    seg1 = rest[-1] if rest else None
    seg2 = rest[-2] if len(rest) >= 2 else None
    if seg1 is not None:
        a1 = seg1.slope
        tau_1 = seg1.duration
    else:
        a1 = 0.0
        tau_1 = 0.0
    if seg2 is not None:
        a2 = seg2.slope
        tau_2 = seg2.duration
    else:
        a2 = a1
        tau_2 = 0.0

    return EventParams(
        event_id=event_id,
        v_c=v_c,
        a1=float(a1),
        a2=float(a2),
        tau_s=float(tau_s),
        tau_1=float(tau_1),
        tau_2=float(tau_2),
        weight=weight,
        source_group=source_group,
        severity=severity,
        native_weight=native_weight,
    )


def fit_event(
    profile: SpeedProfile,
    config: FitConfig = FitConfig(),
    rng: Optional[np.random.Generator] = None,
) -> PwlFit:
    """Full fitting chain for one profile: candidates, selection, repair."""
    candidates = fit_candidates(profile, config, rng)
    scored = [replace(c, loss=loss(c, profile, config)) for c in candidates]
    return enforce_nonnegative(select_best(scored))
