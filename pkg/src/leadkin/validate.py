"""Weighted descriptive statistics, two-sample KS testing, and the
bootstrap robustness study.

The KS p-value comes from a label-permutation null: events keep their
weights (normalized per sample so rescaling one sample's weights changes
nothing), labels are reshuffled, and the weighted ECDF sup-distance is
recomputed for each permutation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .combine import WeightedDataset
from .errors import EmptyInput, EmptyReps, LeadkinError
from .events import PARAM_NAMES, event_weights, params_matrix
from .mvdist import ModelConfig, build_all
from .synth import SyntheticDataset, assemble_synthetic
from .wstats import weighted_mean, weighted_sd

log = logging.getLogger(__name__)

_PERM_CHUNK = 256


@dataclass(frozen=True)
class WeightedEcdf:
    """Step function F(x) = sum of normalized weights at values <= x."""

    support: np.ndarray  # sorted distinct values
    cumulative: np.ndarray  # nondecreasing, ends at 1

    def evaluate(self, x) -> np.ndarray:
        idx = np.searchsorted(self.support, np.asarray(x, dtype=float), side="right")
        padded = np.concatenate(([0.0], self.cumulative))
        return padded[idx]


@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float
    n_permutations: int


@dataclass(frozen=True)
class BootstrapReport:
    """Per-parameter non-significance proportions by resampling fraction."""

    proportions: Dict[float, Dict[str, float]]
    reps: int
    failures: Dict[float, int]
    per_rep: Dict[float, List[Dict[str, float]]]
    alpha: float


def weighted_ecdf(values, weights=None) -> WeightedEcdf:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise EmptyInput("cannot build an ECDF from an empty sample")
    w = np.ones_like(v) if weights is None else np.asarray(weights, dtype=float)
    total = w.sum()
    if total <= 0:
        raise EmptyInput("total weight must be positive")
    order = np.argsort(v, kind="stable")
    v, w = v[order], w[order]
    support, start = np.unique(v, return_index=True)
    mass = np.add.reduceat(w, start)
    return WeightedEcdf(support=support, cumulative=np.cumsum(mass) / total)


def _ks_distance(values, w1, w2, step_idx) -> float:
    t1, t2 = w1.sum(), w2.sum()
    c1 = np.cumsum(w1) / t1
    c2 = np.cumsum(w2) / t2
    return float(np.abs(c1[step_idx] - c2[step_idx]).max())


def weighted_ks_test(
    x,
    wx=None,
    y=None,
    wy=None,
    n_perm: int = 2000,
    seed=None,
) -> KsResult:
    """Two-sample weighted KS test with a permutation p-value."""
    x = np.asarray(x, dtype=float)
    if y is None:
        raise EmptyInput("second sample is required")
    y = np.asarray(y, dtype=float)
    if x.size == 0 or y.size == 0:
        raise EmptyInput("both samples must be non-empty")
    if n_perm < 1:
        raise ValueError("n_perm must be >= 1")
    wx = np.ones_like(x) if wx is None else np.asarray(wx, dtype=float)
    wy = np.ones_like(y) if wy is None else np.asarray(wy, dtype=float)
    if wx.sum() <= 0 or wy.sum() <= 0:
        raise EmptyInput("sample weights must have positive sum")

    # per-sample normalization makes the test invariant to weight rescaling
    wx = wx * (x.size / wx.sum())
    wy = wy * (y.size / wy.sum())

    values = np.concatenate([x, y])
    weights = np.concatenate([wx, wy])
    labels = np.concatenate([np.ones(x.size, dtype=bool), np.zeros(y.size, dtype=bool)])

    order = np.argsort(values, kind="stable")
    values, weights, labels = values[order], weights[order], labels[order]
    n = values.size
    step_idx = np.flatnonzero(np.concatenate([values[1:] != values[:-1], [True]]))

    observed = _ks_distance(values, weights * labels, weights * ~labels, step_idx)

    rng = np.random.default_rng(seed)
    exceed = 0
    done = 0
    while done < n_perm:
        chunk = min(_PERM_CHUNK, n_perm - done)
        perm_labels = rng.permuted(np.tile(labels, (chunk, 1)), axis=1)
        w1 = weights * perm_labels
        w2 = weights * ~perm_labels
        c1 = np.cumsum(w1, axis=1) / w1.sum(axis=1, keepdims=True)
        c2 = np.cumsum(w2, axis=1) / w2.sum(axis=1, keepdims=True)
        d = np.abs(c1[:, step_idx] - c2[:, step_idx]).max(axis=1)
        exceed += int((d >= observed - 1e-12).sum())
        done += chunk

    p = (1.0 + exceed) / (1.0 + n_perm)
    return KsResult(statistic=observed, p_value=float(min(p, 1.0)), n_permutations=n_perm)


def describe(dataset) -> Dict[str, Tuple[float, float]]:
    """Weighted mean and SD of each parameter.

    Accepts a WeightedDataset, a SyntheticDataset (unit weights), or any
    object with ``events``.
    """
    events = getattr(dataset, "events", dataset)
    if not events:
        raise EmptyInput("dataset has no events")
    matrix = params_matrix(events)
    weights = event_weights(events)
    out = {}
    for j, name in enumerate(PARAM_NAMES):
        out[name] = (weighted_mean(matrix[:, j], weights), weighted_sd(matrix[:, j], weights))
    return out


def compare_datasets(
    raw: WeightedDataset,
    synthetic: SyntheticDataset,
    alpha: float = 0.10,
    n_perm: int = 2000,
    seed=None,
) -> Dict[str, dict]:
    """Per-parameter mean/SD plus weighted KS statistic and p-value."""
    raw_stats = describe(raw)
    syn_stats = describe(synthetic)
    raw_matrix = params_matrix(raw.events)
    raw_w = raw.weights()
    syn_matrix = params_matrix(synthetic.events)
    rng = np.random.default_rng(seed)
    report = {}
    for j, name in enumerate(PARAM_NAMES):
        ks = weighted_ks_test(
            raw_matrix[:, j],
            raw_w,
            syn_matrix[:, j],
            None,
            n_perm=n_perm,
            seed=rng.integers(2**63),
        )
        report[name] = {
            "raw_mean": raw_stats[name][0],
            "raw_sd": raw_stats[name][1],
            "synthetic_mean": syn_stats[name][0],
            "synthetic_sd": syn_stats[name][1],
            "statistic": ks.statistic,
            "p_value": ks.p_value,
            "significant": ks.p_value < alpha,
        }
    return report


def bootstrap_robustness(
    dataset: WeightedDataset,
    fractions: Sequence[float] = (0.9, 0.8),
    reps: int = 100,
    n_synth: int = 1000,
    alpha: float = 0.1,
    seed=None,
    n_perm: int = 2000,
    n_reference: int = 10000,
    model_cfg: Optional[ModelConfig] = None,
) -> BootstrapReport:
    """Stability of the modeling chain under subsampling.

    Each rep subsamples the dataset without replacement, rebuilds every
    sub-dataset model, generates a synthetic sample, and KS-tests each
    parameter against the synthetic reference built from the full dataset.
    Reported values are the proportions of reps with p > alpha; failed reps
    are excluded from the denominator and counted separately.
    """
    if reps <= 0:
        raise EmptyReps("reps must be positive")
    cfg = model_cfg or ModelConfig()
    root = np.random.SeedSequence(seed)
    ref_seed, *rep_seeds = root.spawn(1 + len(fractions) * reps)

    bundles_full = build_all(dataset, cfg)
    reference = assemble_synthetic(bundles_full, n_reference, seed=ref_seed)
    ref_matrix = params_matrix(reference.events)

    n = len(dataset.events)
    proportions: Dict[float, Dict[str, float]] = {}
    failures: Dict[float, int] = {}
    per_rep: Dict[float, List[Dict[str, float]]] = {}
    seed_iter = iter(rep_seeds)
    for fraction in fractions:
        size = int(np.floor(fraction * n))
        outcomes: List[Dict[str, float]] = []
        failed = 0
        for _ in range(reps):
            stream = next(seed_iter)
            rng = np.random.default_rng(stream)
            idx = rng.choice(n, size=size, replace=False)
            sub = dataset.subset(sorted(idx))
            try:
                bundles = build_all(sub, cfg)
                syn = assemble_synthetic(bundles, n_synth, seed=rng)
            except LeadkinError as exc:
                log.warning("bootstrap rep failed (fraction %.2f): %s", fraction, exc)
                failed += 1
                continue
            syn_matrix = params_matrix(syn.events)
            p_values = {}
            for j, name in enumerate(PARAM_NAMES):
                ks = weighted_ks_test(
                    syn_matrix[:, j],
                    None,
                    ref_matrix[:, j],
                    None,
                    n_perm=n_perm,
                    seed=rng.integers(2**63),
                )
                p_values[name] = ks.p_value
            outcomes.append(p_values)
        per_rep[fraction] = outcomes
        failures[fraction] = failed
        if outcomes:
            proportions[fraction] = {
                name: float(np.mean([o[name] > alpha for o in outcomes]))
                for name in PARAM_NAMES
            }
        else:
            proportions[fraction] = {name: float("nan") for name in PARAM_NAMES}
    return BootstrapReport(
        proportions=proportions,
        reps=reps,
        failures=failures,
        per_rep=per_rep,
        alpha=alpha,
    )
