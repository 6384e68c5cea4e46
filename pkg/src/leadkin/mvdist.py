"""Per-pattern multivariate distribution models of the six event parameters.

The combined incident dataset is partitioned into sub-datasets by the
lead-vehicle speed-change pattern (sign of a1 - a2) and a handful of
sub-conditions.  For each sub-dataset a generative model is assembled:
point-mass parameters get hurdle models, parameters entangled with them are
decorrelated by weighted regression, the remaining correlated parameters
share a Gaussian copula over quantile-normalized marginals, and everything
else is fit independently.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import stats as sstats

from .combine import WeightedDataset
from .errors import AllFitsFailed, ModelBuildFailed, ZeroVariance
from .events import PARAM_NAMES, EventParams
from .marginals import (
    CONTINUOUS_FAMILIES,
    HURDLE_FAMILIES,
    FittedDist,
    fit_family,
    fit_univariate,
    quantile_normalize,
)
from .wstats import effective_sample_size

log = logging.getLogger(__name__)

DEFAULT_MASS_THRESHOLD = 0.10
DEFAULT_CORR_THRESHOLD = 0.30
DEFAULT_ALPHA_CORR = 0.05
_MIN_EFFECTIVE = 5.0
_MAX_SPLIT_DEPTH = 6


class Pattern(str, Enum):
    CONSTANT = "ConstantAccel"
    INCREASING = "IncreasingAccel"
    DECREASING = "DecreasingAccel"


@dataclass(frozen=True)
class SubdatasetLabel:
    id: str
    pattern: Optional[Pattern]
    description: str = ""


LABELS = {
    "S1": SubdatasetLabel("S1", Pattern.CONSTANT, "standstill"),
    "S2": SubdatasetLabel("S2", Pattern.CONSTANT, "constant acceleration"),
    "S3": SubdatasetLabel("S3", Pattern.CONSTANT, "constant non-zero acceleration then steady speed"),
    "S4": SubdatasetLabel("S4", Pattern.INCREASING, "increasing acceleration, decelerating near time zero"),
    "S5": SubdatasetLabel("S5", Pattern.INCREASING, "increasing acceleration, accelerating near time zero"),
    "S6": SubdatasetLabel("S6", Pattern.DECREASING, "decreasing acceleration, no steady phase"),
    "S7": SubdatasetLabel("S7", Pattern.DECREASING, "decreasing acceleration with steady phase"),
}


def classify_pattern(a1: float, a2: float) -> Pattern:
    if a1 == a2:
        return Pattern.CONSTANT
    return Pattern.INCREASING if a1 > a2 else Pattern.DECREASING


def classify_event(e: EventParams) -> SubdatasetLabel:
    """Assign an event to exactly one of the seven sub-datasets.

    Boundary cases: constant-pattern events with a1 = 0 but nonzero speed go
    to S2; increasing-pattern events with a1 exactly 0 close into S5.
    """
    pattern = classify_pattern(e.a1, e.a2)
    if pattern is Pattern.CONSTANT:
        if e.v_c == 0.0 and e.a1 == 0.0:
            return LABELS["S1"]
        if e.tau_s > 0.0 and e.a1 != 0.0:
            return LABELS["S3"]
        return LABELS["S2"]
    if pattern is Pattern.INCREASING:
        if e.a1 == 0.0:
            log.warning("event %r: increasing pattern with a1 = 0 assigned to S5", e.event_id)
        return LABELS["S4"] if e.a1 < 0.0 else LABELS["S5"]
    return LABELS["S6"] if e.tau_s == 0.0 else LABELS["S7"]


def categorize(dataset: WeightedDataset) -> Dict[SubdatasetLabel, WeightedDataset]:
    """Partition a dataset by sub-dataset label; empty labels are omitted."""
    buckets: Dict[SubdatasetLabel, list] = {}
    for e in dataset.events:
        buckets.setdefault(classify_event(e), []).append(e)
    return {
        label: WeightedDataset(events=tuple(evts), stage=dataset.stage)
        for label, evts in sorted(buckets.items(), key=lambda kv: kv[0].id)
    }


# --- point masses and correlations -------------------------------------------


@dataclass(frozen=True)
class PointMassSpec:
    parameter: str
    mass_value: float
    mass_probability: float


def detect_point_mass(
    values, weights, threshold: float = DEFAULT_MASS_THRESHOLD, parameter: str = ""
) -> Optional[PointMassSpec]:
    """The modal exact value, when its weighted share reaches the threshold.

    A mass must be an exact value observed at least twice; a single heavy
    event is not a point mass, just a heavy event.
    """
    x = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if effective_sample_size(w) < _MIN_EFFECTIVE:
        raise ValueError("need at least 5 effective samples")
    uniq, inverse, counts = np.unique(x, return_inverse=True, return_counts=True)
    shares = np.bincount(inverse, weights=w) / w.sum()
    shares = np.where(counts >= 2, shares, 0.0)
    best = int(np.argmax(shares))  # ties resolve to the smaller value
    if shares[best] >= threshold:
        return PointMassSpec(
            parameter=parameter,
            mass_value=float(uniq[best]),
            mass_probability=float(np.bincount(inverse, weights=w)[best] / w.sum()),
        )
    return None


def weighted_corr(x, y, w) -> Tuple[float, float]:
    """Weighted Pearson correlation and its effective-sample-size p-value."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    n_eff = effective_sample_size(w)
    if n_eff < 3:
        raise ValueError("need at least 3 effective samples")
    s = w.sum()
    mx = np.dot(w, x) / s
    my = np.dot(w, y) / s
    vx = np.dot(w, np.square(x - mx))
    vy = np.dot(w, np.square(y - my))
    if vx <= 0 or vy <= 0:
        raise ZeroVariance("correlation requires nonzero variance in both variables")
    r = float(np.dot(w, (x - mx) * (y - my)) / np.sqrt(vx * vy))
    r = float(np.clip(r, -1.0, 1.0))
    df = n_eff - 2.0
    if df <= 0:
        return r, 1.0
    if abs(r) >= 1.0:
        return r, 0.0
    t = abs(r) * np.sqrt(df / (1.0 - r * r))
    p = float(2.0 * sstats.t.sf(t, df))
    return r, min(p, 1.0)


# --- decorrelation ------------------------------------------------------------


@dataclass(frozen=True)
class TransformSpec:
    """Weighted-regression detrending of a parameter against the point-mass ones."""

    parameter: str
    intercept: float
    coefficients: Dict[str, float]  # point-mass parameter name -> slope

    def predict(self, pm_values: Mapping[str, np.ndarray]) -> np.ndarray:
        total = None
        for name, coef in self.coefficients.items():
            term = coef * np.asarray(pm_values[name], dtype=float)
            total = term if total is None else total + term
        if total is None:
            total = 0.0
        return self.intercept + total

    def to_json(self) -> dict:
        return {
            "parameter": self.parameter,
            "intercept": self.intercept,
            "coefficients": dict(self.coefficients),
        }

    @staticmethod
    def from_json(doc: dict) -> "TransformSpec":
        return TransformSpec(
            parameter=doc["parameter"],
            intercept=float(doc["intercept"]),
            coefficients={k: float(v) for k, v in doc["coefficients"].items()},
        )


def decorrelate(
    x, pm_matrix: np.ndarray, w, pm_names: Sequence[str], parameter: str = ""
) -> Tuple[np.ndarray, TransformSpec]:
    """Subtract the weighted least-squares fit of x on the point-mass columns."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    design = np.column_stack([np.ones_like(x), pm_matrix])
    rank = np.linalg.matrix_rank(design)
    if rank < design.shape[1]:
        log.warning(
            "parameter %s: collinear point-mass regressors, using minimum-norm solution",
            parameter,
        )
    sw = np.sqrt(w)
    beta, *_ = np.linalg.lstsq(design * sw[:, None], x * sw, rcond=None)
    fitted = design @ beta
    spec = TransformSpec(
        parameter=parameter,
        intercept=float(beta[0]),
        coefficients={name: float(b) for name, b in zip(pm_names, beta[1:])},
    )
    return x - fitted, spec


def split_on_point_mass(
    dataset: WeightedDataset, spec: PointMassSpec
) -> Tuple[WeightedDataset, WeightedDataset]:
    """Split events by whether the parameter equals its point-mass value."""
    at_mass, off_mass = [], []
    for e in dataset.events:
        (at_mass if e.value(spec.parameter) == spec.mass_value else off_mass).append(e)
    make = lambda evts: WeightedDataset(events=tuple(evts), stage=dataset.stage)
    return make(at_mass), make(off_mass)


# --- hurdle model -------------------------------------------------------------


@dataclass(frozen=True)
class HurdleDist:
    """Point mass with a given probability, else a continuous draw."""

    mass: PointMassSpec
    continuous: Optional[FittedDist]

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        take_mass = rng.random(n) < self.mass.mass_probability
        u = rng.random(n)
        if self.continuous is None:
            return np.full(n, self.mass.mass_value)
        values = self.continuous.ppf(u)
        return np.where(take_mass, self.mass.mass_value, values)

    def to_json(self) -> dict:
        return {
            "kind": "hurdle",
            "parameter": self.mass.parameter,
            "mass_value": self.mass.mass_value,
            "mass_probability": self.mass.mass_probability,
            "continuous": None if self.continuous is None else self.continuous.to_json(),
        }

    @staticmethod
    def from_json(doc: dict) -> "HurdleDist":
        cont = doc.get("continuous")
        return HurdleDist(
            mass=PointMassSpec(
                parameter=doc.get("parameter", ""),
                mass_value=float(doc["mass_value"]),
                mass_probability=float(doc["mass_probability"]),
            ),
            continuous=None if cont is None else FittedDist.from_json(cont),
        )


def fit_hurdle(
    values,
    weights=None,
    mass_threshold: float = DEFAULT_MASS_THRESHOLD,
    parameter: str = "",
) -> HurdleDist:
    """Fit a hurdle model: binomial mass share plus a continuous remainder.

    The continuous part is selected by AIC among gamma, generalized gamma
    and exponential; with fewer than 5 effective non-mass samples it falls
    back to a plain exponential fit.
    """
    x = np.asarray(values, dtype=float)
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)
    spec = detect_point_mass(x, w, threshold=mass_threshold, parameter=parameter)
    if spec is None:
        raise ValueError("no point mass detected; fit a continuous marginal instead")
    off = x != spec.mass_value
    x_off, w_off = x[off], w[off]
    if x_off.size == 0:
        return HurdleDist(mass=spec, continuous=None)
    if effective_sample_size(w_off) < _MIN_EFFECTIVE:
        log.warning(
            "parameter %s: too few non-mass samples, falling back to exponential",
            parameter or "?",
        )
        fitted = fit_family("exponential", x_off, w_off)
        if fitted is None:
            return HurdleDist(mass=spec, continuous=None)
        return HurdleDist(mass=spec, continuous=fitted)
    continuous = fit_univariate(x_off, w_off, families=HURDLE_FAMILIES)
    return HurdleDist(mass=spec, continuous=continuous)


# --- submodel bundles ----------------------------------------------------------


@dataclass(frozen=True)
class ModelConfig:
    mass_threshold: float = DEFAULT_MASS_THRESHOLD
    corr_threshold: float = DEFAULT_CORR_THRESHOLD
    alpha_corr: float = DEFAULT_ALPHA_CORR
    continuous_families: Tuple[str, ...] = CONTINUOUS_FAMILIES


@dataclass(frozen=True)
class SplitCondition:
    """One recursive split: parameter == value ('eq') or != value ('ne')."""

    parameter: str
    op: str
    value: float

    def check(self, e: EventParams) -> bool:
        v = e.value(self.parameter)
        return v == self.value if self.op == "eq" else v != self.value

    def to_json(self) -> dict:
        return {"parameter": self.parameter, "op": self.op, "value": self.value}

    @staticmethod
    def from_json(doc: dict) -> "SplitCondition":
        return SplitCondition(doc["parameter"], doc["op"], float(doc["value"]))


@dataclass(frozen=True)
class CorrelatedBlock:
    names: Tuple[str, ...]
    marginals: Tuple[FittedDist, ...]
    sigma: np.ndarray  # unit-diagonal PSD matrix


@dataclass(frozen=True)
class SubmodelBundle:
    """Everything needed to sample one sub-dataset's parameter vectors."""

    label: SubdatasetLabel
    splits: Tuple[SplitCondition, ...]
    constants: Dict[str, float]
    copies: Dict[str, str]  # parameter -> source parameter it duplicates
    transforms: Tuple[TransformSpec, ...]
    correlated: Optional[CorrelatedBlock]
    uncorrelated: Dict[str, object]  # name -> FittedDist | HurdleDist
    train_weight_share: float
    train_weight: float

    @property
    def bundle_id(self) -> str:
        if not self.splits:
            return self.label.id
        suffix = ",".join(f"{s.parameter}{'=' if s.op == 'eq' else '!='}{s.value:g}" for s in self.splits)
        return f"{self.label.id}[{suffix}]"

    def roles(self) -> Dict[str, str]:
        out = {}
        for name in PARAM_NAMES:
            if name in self.constants:
                out[name] = "constant"
            elif name in self.copies:
                out[name] = "copy"
            elif self.correlated and name in self.correlated.names:
                out[name] = "correlated"
            elif isinstance(self.uncorrelated.get(name), HurdleDist):
                out[name] = "point-mass"
            else:
                out[name] = "uncorrelated"
        return out


def nearest_unit_correlation(matrix: np.ndarray) -> np.ndarray:
    """Symmetrize, clip negative eigenvalues, and restore the unit diagonal."""
    s = (matrix + matrix.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(s)
    if eigvals.min() < -1e-10:
        log.info("covariance clipped to PSD (min eigenvalue %.3e)", eigvals.min())
        eigvals = np.clip(eigvals, 0.0, None)
        s = (eigvecs * eigvals) @ eigvecs.T
        d = np.sqrt(np.clip(np.diag(s), 1e-12, None))
        s = s / np.outer(d, d)
    np.fill_diagonal(s, 1.0)
    return np.clip(s, -1.0, 1.0)


def _corr_pairs(columns: Dict[str, np.ndarray], w: np.ndarray, cfg: ModelConfig):
    """Pairs (a, b) with a significant, non-weak weighted correlation."""
    names = list(columns)
    strong = set()
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            try:
                r, p = weighted_corr(columns[a], columns[b], w)
            except (ZeroVariance, ValueError):
                continue
            if abs(r) >= cfg.corr_threshold and p < cfg.alpha_corr:
                strong.add((a, b))
    return strong


def build_submodels(
    sub: WeightedDataset,
    label: SubdatasetLabel,
    cfg: ModelConfig = ModelConfig(),
    total_weight: Optional[float] = None,
) -> List[SubmodelBundle]:
    """Build the generative model(s) for one sub-dataset.

    Returns more than one bundle only when two point-mass parameters are
    significantly and non-weakly correlated, in which case the data is split
    on the heavier mass and each side modeled from scratch.
    """
    if not sub.events:
        raise ModelBuildFailed(f"sub-dataset {label.id} is empty")
    total = sub.total_weight if total_weight is None else float(total_weight)
    try:
        return _build(sub, label, cfg, total, splits=(), depth=0)
    except (AllFitsFailed, ZeroVariance, ValueError) as exc:
        raise ModelBuildFailed(f"sub-dataset {label.id}: {exc}") from exc


def _build(sub, label, cfg, total, splits, depth) -> List[SubmodelBundle]:
    events = sub.events
    w = sub.weights()
    matrix = sub.param_matrix()

    constants: Dict[str, float] = {}
    copies: Dict[str, str] = {}
    free: List[str] = []
    for j, name in enumerate(PARAM_NAMES):
        col = matrix[:, j]
        if (col == col[0]).all():
            constants[name] = float(col[0])
            continue
        duplicate = None
        for prior in free:
            if (col == matrix[:, PARAM_NAMES.index(prior)]).all():
                duplicate = prior
                break
        if duplicate is not None:
            copies[name] = duplicate
        else:
            free.append(name)

    columns = {name: matrix[:, PARAM_NAMES.index(name)].copy() for name in free}

    masses: Dict[str, PointMassSpec] = {}
    for name in free:
        spec = detect_point_mass(columns[name], w, threshold=cfg.mass_threshold, parameter=name)
        if spec is not None:
            masses[name] = spec

    # split when two point-mass parameters are strongly entangled
    if len(masses) >= 2 and depth < _MAX_SPLIT_DEPTH:
        pm_cols = {name: columns[name] for name in masses}
        entangled = {
            name
            for pair in _corr_pairs(pm_cols, w, cfg)
            for name in pair
        }
        if entangled:
            split_name = max(
                sorted(entangled, key=PARAM_NAMES.index),
                key=lambda n: masses[n].mass_probability,
            )
            spec = masses[split_name]
            side_eq, side_ne = split_on_point_mass(sub, spec)
            if _can_model(side_eq) and _can_model(side_ne):
                out = []
                out.extend(
                    _build(side_eq, label, cfg, total,
                           splits + (SplitCondition(split_name, "eq", spec.mass_value),),
                           depth + 1)
                )
                out.extend(
                    _build(side_ne, label, cfg, total,
                           splits + (SplitCondition(split_name, "ne", spec.mass_value),),
                           depth + 1)
                )
                return out
            log.warning(
                "%s: degenerate split on %s skipped (a side is too small)",
                label.id,
                split_name,
            )

    # decorrelate non-mass parameters from the point-mass ones
    transforms: List[TransformSpec] = []
    if masses:
        pm_names = sorted(masses, key=PARAM_NAMES.index)
        pm_matrix = np.column_stack([columns[n] for n in pm_names])
        for name in free:
            if name in masses:
                continue
            linked = False
            for pm in pm_names:
                try:
                    r, p = weighted_corr(columns[name], columns[pm], w)
                except (ZeroVariance, ValueError):
                    continue
                if abs(r) >= cfg.corr_threshold and p < cfg.alpha_corr:
                    linked = True
                    break
            if linked:
                residual, spec = decorrelate(columns[name], pm_matrix, w, pm_names, parameter=name)
                columns[name] = residual
                transforms.append(spec)

    # classify the remaining continuous parameters
    plain = [name for name in free if name not in masses]
    corr_names: List[str] = []
    if len(plain) >= 2:
        strong = _corr_pairs({n: columns[n] for n in plain}, w, cfg)
        in_pair = {name for pair in strong for name in pair}
        corr_names = [n for n in plain if n in in_pair]

    correlated = None
    if corr_names:
        marginals = []
        z_cols = []
        for name in corr_names:
            fitted = fit_univariate(columns[name], w, families=cfg.continuous_families)
            marginals.append(fitted)
            z_cols.append(quantile_normalize(columns[name], fitted))
        k = len(corr_names)
        sigma = np.eye(k)
        for i in range(k):
            for j in range(i + 1, k):
                r, _ = weighted_corr(z_cols[i], z_cols[j], w)
                sigma[i, j] = sigma[j, i] = r
        correlated = CorrelatedBlock(
            names=tuple(corr_names),
            marginals=tuple(marginals),
            sigma=nearest_unit_correlation(sigma),
        )

    uncorrelated: Dict[str, object] = {}
    for name in free:
        if name in corr_names:
            continue
        if name in masses:
            uncorrelated[name] = fit_hurdle(
                columns[name], w, mass_threshold=cfg.mass_threshold, parameter=name
            )
        else:
            uncorrelated[name] = fit_univariate(columns[name], w, families=cfg.continuous_families)

    return [
        SubmodelBundle(
            label=label,
            splits=splits,
            constants=constants,
            copies=copies,
            transforms=tuple(transforms),
            correlated=correlated,
            uncorrelated=uncorrelated,
            train_weight_share=float(w.sum() / total) if total > 0 else 0.0,
            train_weight=float(w.sum()),
        )
    ]


def _can_model(side: WeightedDataset) -> bool:
    if not side.events:
        return False
    return effective_sample_size(side.weights()) >= _MIN_EFFECTIVE


def build_all(dataset: WeightedDataset, cfg: ModelConfig = ModelConfig()) -> List[SubmodelBundle]:
    """Categorize a dataset and build bundles for every non-empty label."""
    total = dataset.total_weight
    bundles: List[SubmodelBundle] = []
    for label, sub in categorize(dataset).items():
        bundles.extend(build_submodels(sub, label, cfg, total_weight=total))
    return bundles


# --- persistence ----------------------------------------------------------------

SCHEMA_ID = "lead-kinematics-model/1"


def bundles_to_json(bundles: Sequence[SubmodelBundle]) -> dict:
    docs = []
    for b in bundles:
        correlated = None
        if b.correlated is not None:
            correlated = {
                "names": list(b.correlated.names),
                "marginals": [m.to_json() for m in b.correlated.marginals],
                "sigma": [[float(v) for v in row] for row in b.correlated.sigma],
            }
        uncorrelated = {}
        for name, dist in b.uncorrelated.items():
            doc = dist.to_json()
            if isinstance(dist, FittedDist):
                doc = {"kind": "continuous", **doc}
            uncorrelated[name] = doc
        docs.append(
            {
                "label": {
                    "id": b.label.id,
                    "pattern": b.label.pattern.value if b.label.pattern else None,
                    "description": b.label.description,
                },
                "splits": [s.to_json() for s in b.splits],
                "constants": dict(b.constants),
                "copies": dict(b.copies),
                "transforms": [t.to_json() for t in b.transforms],
                "correlated": correlated,
                "uncorrelated": uncorrelated,
                "train_weight_share": b.train_weight_share,
                "train_weight": b.train_weight,
            }
        )
    return {"schema": SCHEMA_ID, "bundles": docs}


def bundles_from_json(doc: dict) -> List[SubmodelBundle]:
    if doc.get("schema") != SCHEMA_ID:
        raise ValueError(f"unsupported model schema {doc.get('schema')!r}")
    bundles = []
    for item in doc["bundles"]:
        label_doc = item["label"]
        pattern = Pattern(label_doc["pattern"]) if label_doc.get("pattern") else None
        label = SubdatasetLabel(
            id=label_doc["id"], pattern=pattern, description=label_doc.get("description", "")
        )
        correlated = None
        if item.get("correlated") is not None:
            cdoc = item["correlated"]
            correlated = CorrelatedBlock(
                names=tuple(cdoc["names"]),
                marginals=tuple(FittedDist.from_json(m) for m in cdoc["marginals"]),
                sigma=np.asarray(cdoc["sigma"], dtype=float),
            )
        uncorrelated: Dict[str, object] = {}
        for name, udoc in item["uncorrelated"].items():
            if udoc["kind"] == "hurdle":
                uncorrelated[name] = HurdleDist.from_json(udoc)
            else:
                uncorrelated[name] = FittedDist.from_json(udoc)
        bundles.append(
            SubmodelBundle(
                label=label,
                splits=tuple(SplitCondition.from_json(s) for s in item.get("splits", [])),
                constants={k: float(v) for k, v in item["constants"].items()},
                copies=dict(item.get("copies", {})),
                transforms=tuple(TransformSpec.from_json(t) for t in item.get("transforms", [])),
                correlated=correlated,
                uncorrelated=uncorrelated,
                train_weight_share=float(item["train_weight_share"]),
                train_weight=float(item.get("train_weight", 0.0)),
            )
        )
    return bundles
