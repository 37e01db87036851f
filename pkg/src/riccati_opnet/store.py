"""JSONL datasets and JSON model checkpoints.

Arrays are stored as base64 of little-endian float64 bytes and encodings
as shortest-repr JSON numbers, so round trips are bit-exact.  Every file
starts with a header carrying ``schema_version``.
"""

import base64
import json
import os

import numpy as np

from . import riccati
from .datagen import Dataset, Record, TrigCoeffs
from .errors import (ArchitectureMismatch, ChecksumMismatch, CorruptRecord,
                     SchemaVersionMismatch)
from .opnet.model import DeepOnetModel, ProgressiveModel, param_checksum

SCHEMA_VERSION = 1


def pack_array(a):
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def unpack_array(d):
    raw = base64.b64decode(d["data"].encode("ascii"), validate=True)
    arr = np.frombuffer(raw, dtype="<f8").astype(float)
    return arr.reshape(d["shape"])


def _dumps(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _check_header(header, kind):
    version = header.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"schema_version {version!r}, expected {SCHEMA_VERSION}")
    if header.get("type") != kind:
        raise SchemaVersionMismatch(f"file holds {header.get('type')!r}, expected {kind!r}")


# ---------------------------------------------------------------------------
# Systems and datasets
# ---------------------------------------------------------------------------

def system_to_dict(sys):
    d = {"kind": sys.kind, "n": sys.n, "m": sys.m, "horizon": sys.horizon,
         "n_steps": sys.n_steps, "p_terminal": pack_array(sys.p_terminal), "meta": sys.meta}
    if sys.time_invariant:
        for name in ("A", "B", "Q", "R"):
            d[name] = pack_array(getattr(sys, name))
    else:
        d["r_base"] = sys.coeffs.r_base
        d["coeffs"] = pack_array(sys.coeffs.to_vector())
    return d


def system_from_dict(d):
    common = dict(kind=d["kind"], n=d["n"], m=d["m"], horizon=d["horizon"],
                  n_steps=d["n_steps"], p_terminal=unpack_array(d["p_terminal"]),
                  meta=d.get("meta", {}))
    if d["kind"] == riccati.TIME_INVARIANT:
        return riccati.SystemInstance(**common, **{k: unpack_array(d[k]) for k in "ABQR"})
    coeffs = TrigCoeffs.from_vector(unpack_array(d["coeffs"]), d["n"], d["m"], d["r_base"])
    return riccati.SystemInstance(**common, coeffs=coeffs)


def write_dataset(dataset, path):
    """Write a header line followed by one JSON record per line."""
    header = {"schema_version": SCHEMA_VERSION, "type": "dataset",
              "metadata": dataset.metadata, "n_train": dataset.n_train,
              "count": len(dataset.records)}
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(_dumps(header) + "\n")
        for rec in dataset.records:
            fh.write(_dumps({"index": rec.index, "label": rec.label,
                             "encoding": [float(v) for v in rec.encoding],
                             "target": pack_array(rec.target),
                             "system": system_to_dict(rec.system)}) + "\n")
    os.replace(tmp, path)


def read_dataset(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise CorruptRecord("empty dataset file", line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise CorruptRecord(f"unreadable header: {exc}", line=1) from exc
    _check_header(header, "dataset")
    records = []
    for lineno, text in enumerate(lines[1:], start=2):
        try:
            d = json.loads(text)
            records.append(Record(encoding=np.array(d["encoding"], dtype=float),
                                  target=unpack_array(d["target"]),
                                  system=system_from_dict(d["system"]),
                                  label=d["label"], index=d["index"]))
        except (ValueError, KeyError, TypeError) as exc:
            raise CorruptRecord(f"line {lineno}: {exc}", line=lineno) from exc
    if len(records) != header["count"]:
        raise CorruptRecord(f"header announces {header['count']} records, found {len(records)}",
                            line=len(lines) + 1)
    return Dataset(records=records, metadata=header["metadata"], n_train=header["n_train"])


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def _model_payload(model):
    params = model.params()
    return {
        "architecture": model.describe(),
        "params": [pack_array(p) for p in params],
        "normalization": {k: (v if isinstance(v, float) else pack_array(v))
                          for k, v in model.normalization_state().items()},
        "checksum": param_checksum(params),
    }


def _restore(payload, model):
    try:
        params = [unpack_array(p) for p in payload["params"]]
    except ValueError as exc:
        raise ChecksumMismatch(f"parameter block does not decode: {exc}") from exc
    expected = [p.shape for p in model.params()]
    if [p.shape for p in params] != expected:
        raise ArchitectureMismatch("parameter shapes do not match the stored architecture")
    if param_checksum(params) != payload["checksum"]:
        raise ChecksumMismatch("parameter checksum mismatch")
    model.set_params(params)
    model.set_normalization({k: (v if isinstance(v, float) else unpack_array(v))
                             for k, v in payload["normalization"].items()})
    return model


def save_model(model, path, train_config=None, extra=None):
    doc = {"schema_version": SCHEMA_VERSION, "type": "checkpoint",
           "model": _model_payload(model), "train_config": train_config or {},
           "extra": extra or {}}
    if isinstance(model, ProgressiveModel):
        doc["core"] = _model_payload(model.core)
        doc["core"]["frozen"] = True
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(_dumps(doc))
    os.replace(tmp, path)


def _build(desc, core=None):
    if desc["kind"] == DeepOnetModel.kind:
        return DeepOnetModel.from_description(desc)
    if desc["kind"] == ProgressiveModel.kind:
        if core is None:
            raise ArchitectureMismatch("progressive checkpoint without a core")
        if core.describe() != desc["core"]:
            raise ArchitectureMismatch("stored core does not match the progressive description")
        return ProgressiveModel(core, n=desc["n"], input_width=desc["embed_widths"][0],
                                views=desc["views"], embed_hidden=desc["embed_widths"][1],
                                lift_hidden=desc["lift_widths"][1],
                                activation=desc["activation"], encoding=desc["encoding"])
    raise ArchitectureMismatch(f"unknown model kind {desc['kind']!r}")


def load_model(path, expect=None):
    """Rebuild the model; ``expect`` is an optional architecture dict to match."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CorruptRecord(f"unreadable checkpoint: {exc}", line=exc.lineno) from exc
    _check_header(doc, "checkpoint")
    desc = doc["model"]["architecture"]
    if expect is not None and expect != desc:
        raise ArchitectureMismatch("checkpoint architecture differs from the expected one")
    core = None
    if "core" in doc:
        core = _restore(doc["core"], _build(doc["core"]["architecture"]))
    model = _restore(doc["model"], _build(desc, core))
    return model, doc
