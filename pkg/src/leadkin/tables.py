"""CSV serialization for stage artifacts.

Every stage writes plain CSV so artifacts stay independently inspectable.
The parameter table also accepts the minimal published format (six
parameters plus a weight column) for externally supplied incident data.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from .combine import GroupCounts, MergeResult, Stage, WeightedDataset
from .errors import InputError
from .events import PARAM_NAMES, EventParams, Severity, SourceGroup
from .synth import SyntheticDataset

PathLike = Union[str, Path]

PARAMS_HEADER = [
    "event_id", "group", "severity",
    "v_c", "a1", "a2", "tau_s", "tau_1", "tau_2",
    "r2", "n_b", "weight", "valid",
]
COMBINED_HEADER = [
    "event_id", "group", "severity",
    "v_c", "a1", "a2", "tau_s", "tau_1", "tau_2",
    "weight", "stage", "attached_to",
]
SYNTHETIC_HEADER = ["event_id", "v_c", "a1", "a2", "tau_s", "tau_1", "tau_2", "weight", "bundle"]

_ALIASES = {"vc": "v_c", "v_c": "v_c", "a1": "a1", "a2": "a2",
            "tau_s": "tau_s", "taus": "tau_s", "tau_1": "tau_1", "tau1": "tau_1",
            "tau_2": "tau_2", "tau2": "tau_2", "weight": "weight", "w": "weight"}


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_params_csv(
    path: PathLike,
    rows: Sequence[dict],
) -> None:
    """Rows carry: event (EventParams), r2, n_b, valid."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(PARAMS_HEADER)
        for row in rows:
            e: EventParams = row["event"]
            writer.writerow([
                e.event_id,
                e.source_group.value if e.source_group else "",
                e.severity.value if e.severity else "",
                *(_fmt(e.value(name)) for name in PARAM_NAMES),
                _fmt(row.get("r2")),
                _fmt(row.get("n_b")),
                _fmt(e.native_weight),
                "1" if row.get("valid", True) else "0",
            ])


def read_params_csv(path: PathLike, only_valid: bool = True) -> List[EventParams]:
    """Read a parameter table; tolerates the minimal published format."""
    path = Path(path)
    events: List[EventParams] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise InputError(f"{path}: empty file")
        columns = {}
        for raw in reader.fieldnames:
            key = raw.strip().lower()
            if key in _ALIASES:
                columns[_ALIASES[key]] = raw
            else:
                columns[key] = raw
        missing = [p for p in PARAM_NAMES if p not in columns]
        if missing:
            raise InputError(f"{path}: missing parameter columns: {', '.join(missing)}")
        for i, row in enumerate(reader):
            if only_valid and columns.get("valid") and row[columns["valid"]].strip() == "0":
                continue
            group = None
            severity = None
            if columns.get("group") and row[columns["group"]].strip():
                group = SourceGroup(row[columns["group"]].strip())
            if columns.get("severity") and row[columns["severity"]].strip():
                severity = Severity(row[columns["severity"]].strip())
            weight = 1.0
            native = None
            if columns.get("weight") and row[columns["weight"]].strip():
                weight = float(row[columns["weight"]])
                native = weight
            event_id = row[columns["event_id"]].strip() if columns.get("event_id") else f"row-{i}"
            events.append(
                EventParams(
                    event_id=event_id,
                    v_c=float(row[columns["v_c"]]),
                    a1=float(row[columns["a1"]]),
                    a2=float(row[columns["a2"]]),
                    tau_s=float(row[columns["tau_s"]]),
                    tau_1=float(row[columns["tau_1"]]),
                    tau_2=float(row[columns["tau_2"]]),
                    weight=weight,
                    source_group=group,
                    severity=severity,
                    native_weight=native,
                )
            )
    return events


def write_counts_json(path: PathLike, counts: GroupCounts) -> None:
    doc = {
        "raw": {g.value: counts.raw_of(g) for g in SourceGroup},
        "valid": {g.value: counts.valid_of(g) for g in SourceGroup},
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_counts_json(path: PathLike) -> GroupCounts:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return GroupCounts(
        raw={SourceGroup(k): int(v) for k, v in doc["raw"].items()},
        valid={SourceGroup(k): int(v) for k, v in doc["valid"].items()},
    )


def write_combined_csv(
    path: PathLike,
    dataset: WeightedDataset,
    merge: Optional[MergeResult] = None,
) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(COMBINED_HEADER)
        for e in dataset.events:
            attached = merge.attached_crash(e.event_id) if merge else None
            writer.writerow([
                e.event_id,
                e.source_group.value if e.source_group else "",
                e.severity.value if e.severity else "",
                *(_fmt(e.value(name)) for name in PARAM_NAMES),
                _fmt(e.weight),
                dataset.stage.value,
                attached or "",
            ])


def read_combined_csv(path: PathLike) -> WeightedDataset:
    path = Path(path)
    events: List[EventParams] = []
    stage = Stage.COMBINED_INCIDENT
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise InputError(f"{path}: empty file")
        lowered = {c.strip().lower(): c for c in reader.fieldnames}
        for name in PARAM_NAMES:
            aliases = [k for k, v in _ALIASES.items() if v == name]
            if not any(a in lowered for a in aliases):
                raise InputError(f"{path}: missing parameter column {name}")
        for i, row in enumerate(reader):
            def get(name, default=""):
                col = lowered.get(name)
                return row[col].strip() if col and row.get(col) is not None else default

            if get("stage"):
                stage = Stage(get("stage"))
            group = SourceGroup(get("group")) if get("group") else None
            severity = Severity(get("severity")) if get("severity") else None
            try:
                events.append(
                    EventParams(
                        event_id=get("event_id") or f"row-{i}",
                        v_c=float(get("v_c") or get("vc")),
                        a1=float(get("a1")),
                        a2=float(get("a2")),
                        tau_s=float(get("tau_s") or get("taus")),
                        tau_1=float(get("tau_1") or get("tau1")),
                        tau_2=float(get("tau_2") or get("tau2")),
                        weight=float(get("weight") or 1.0),
                        source_group=group,
                        severity=severity,
                    )
                )
            except ValueError as exc:
                raise InputError(f"{path}: row {i + 2}: {exc}") from None
    if not events:
        raise InputError(f"{path}: no events")
    return WeightedDataset(events=tuple(events), stage=stage)


def write_synthetic_csv(path: PathLike, dataset: SyntheticDataset, bundle_of: Optional[Dict[str, str]] = None) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SYNTHETIC_HEADER)
        for e in dataset.events:
            writer.writerow([
                e.event_id,
                *(_fmt(e.value(name)) for name in PARAM_NAMES),
                _fmt(e.weight),
                (bundle_of or {}).get(e.event_id, ""),
            ])


def read_synthetic_csv(path: PathLike) -> SyntheticDataset:
    events = read_params_csv(path, only_valid=False)
    return SyntheticDataset(
        events=tuple(events),
        per_bundle_counts={},
        rejections={},
        seed=None,
    )


def write_profiles_csv(path: PathLike, profiles) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["event_id", "t", "v"])
        for profile in profiles:
            for t, v in zip(profile.times, profile.speeds):
                writer.writerow([profile.event_id, _fmt(float(t)), _fmt(float(v))])
