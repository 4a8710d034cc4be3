"""Versioned, self-describing artifact files.

Models, thresholds and split plans are JSON documents carrying a ``format``
tag and an integer ``version``; readers reject anything else. Floats are
written with ``repr`` precision so reloaded models reproduce posteriors
bit for bit.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .core import INCLUDE_ALL, LabeledDataset, PredictionSet, SplitPlan, ThresholdVector, _frozen
from .errors import ArtifactVersionError, DataError
from .estimators import FitDiagnostics, KernelModel, KnnModel, LogisticModel

VERSION = 1
MODEL_FORMAT = "labelset-model"
THRESHOLD_FORMAT = "labelset-thresholds"
SPLIT_FORMAT = "labelset-split"
INCLUDE_ALL_LITERAL = "INCLUDE_ALL"


def _write(path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, allow_nan=False) + "\n", encoding="utf-8")


def _read(path, fmt: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not a valid artifact file ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != fmt:
        raise ArtifactVersionError(f"{path}: expected format {fmt!r}, got {doc.get('format')!r}")
    if doc.get("version") != VERSION:
        raise ArtifactVersionError(
            f"{path}: unsupported {fmt} version {doc.get('version')!r} (this build reads {VERSION})")
    return doc


def _data_payload(data: LabeledDataset) -> dict:
    return {
        "features": data.features.tolist(),
        "labels": data.labels.tolist(),
        "class_names": list(data.class_names) if data.class_names else None,
        "feature_names": list(data.feature_names) if data.feature_names else None,
    }


def _data_from(payload: dict, K: int) -> LabeledDataset:
    names = payload.get("class_names")
    fnames = payload.get("feature_names")
    return LabeledDataset(np.array(payload["features"], dtype=float), np.array(payload["labels"]), K,
                          tuple(names) if names else None, tuple(fnames) if fnames else None)


def model_to_dict(model) -> dict:
    doc = {"format": MODEL_FORMAT, "version": VERSION, "kind": model.kind,
           "class_count": model.class_count, "fingerprint": model.fingerprint}
    if isinstance(model, KnnModel):
        doc["params"] = {"k": model.k}
        doc["payload"] = _data_payload(model.data)
    elif isinstance(model, KernelModel):
        doc["params"] = {"mode": model.mode, "bandwidth_rule": model.bandwidth_rule,
                         "bandwidths": model.bandwidths.tolist()}
        doc["payload"] = _data_payload(model.data)
    elif isinstance(model, LogisticModel):
        diag = model.diagnostics
        doc["params"] = {"lambda": model.ridge}
        doc["payload"] = {"theta": model.theta.tolist()}
        if diag is not None:
            doc["diagnostics"] = {"iterations": diag.iterations, "gradient_norm": diag.gradient_norm,
                                  "objective": diag.objective, "converged": diag.converged,
                                  "warnings": list(diag.warnings)}
    else:
        raise DataError(f"cannot persist model of kind {model.kind!r}")
    return doc


def save_model(model, path) -> None:
    _write(path, model_to_dict(model))


def load_model(path):
    doc = _read(path, MODEL_FORMAT)
    kind, K = doc.get("kind"), int(doc["class_count"])
    if kind == "knn":
        model = KnnModel(_data_from(doc["payload"], K), doc["params"]["k"])
    elif kind == "kernel":
        p = doc["params"]
        model = KernelModel(_data_from(doc["payload"], K), np.array(p["bandwidths"]), p["mode"],
                            p["bandwidth_rule"])
    elif kind == "logistic":
        d = doc.get("diagnostics")
        diag = None if d is None else FitDiagnostics(d["iterations"], d["gradient_norm"], d["objective"],
                                                     d["converged"], tuple(d["warnings"]))
        model = LogisticModel(np.array(doc["payload"]["theta"]), doc["params"]["lambda"], diag,
                              doc.get("fingerprint"))
    else:
        raise ArtifactVersionError(f"{path}: unknown estimator kind {kind!r}")
    if doc.get("fingerprint") and model.fingerprint != doc["fingerprint"]:
        raise DataError(f"{path}: stored training data does not match its fingerprint")
    return model


def _encode_value(v: float):
    return INCLUDE_ALL_LITERAL if v == INCLUDE_ALL else v


def _decode_value(v) -> float:
    return INCLUDE_ALL if v == INCLUDE_ALL_LITERAL else float(v)


def save_thresholds(thresholds: ThresholdVector, path) -> None:
    _write(path, {"format": THRESHOLD_FORMAT, "version": VERSION, "mode": thresholds.mode,
                  "values": [_encode_value(v) for v in thresholds.values],
                  "metadata": thresholds.metadata})


def load_thresholds(path) -> ThresholdVector:
    doc = _read(path, THRESHOLD_FORMAT)
    return ThresholdVector(doc["mode"], tuple(_decode_value(v) for v in doc["values"]),
                           doc.get("metadata", {}))


def save_split(plan: SplitPlan, path) -> None:
    _write(path, {"format": SPLIT_FORMAT, "version": VERSION, **plan.to_dict()})


def load_split(path, data: LabeledDataset) -> SplitPlan:
    doc = _read(path, SPLIT_FORMAT)
    fit = np.array(doc["fit_indices"], dtype=np.int64)
    cal = np.array(doc["calibration_indices"], dtype=np.int64)
    by_class = tuple(_frozen(cal[data.labels[cal] == y]) for y in range(1, data.class_count + 1))
    return SplitPlan(doc["seed"], doc["fraction"], _frozen(fit), _frozen(cal), by_class,
                     doc.get("data_fingerprint", ""))


def write_predictions(path, sets, row_ids=None) -> None:
    """CSV with ``row_id, members, size, bitmask``; members are ';'-joined."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["row_id", "members", "size", "bitmask"])
        ids = range(len(sets)) if row_ids is None else row_ids
        for i, s in zip(ids, sets):
            w.writerow([i, ";".join(map(str, s.members)), len(s), s.bitmask])


def read_predictions(path) -> list[PredictionSet]:
    out = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "members" not in reader.fieldnames:
            raise DataError(f"{path}: missing 'members' column")
        for lineno, row in enumerate(reader, start=2):
            raw = (row["members"] or "").strip()
            try:
                out.append(PredictionSet(tuple(int(m) for m in raw.split(";")) if raw else ()))
            except ValueError:
                raise DataError(f"{path}: bad set at line {lineno}: {raw!r}") from None
    return out
