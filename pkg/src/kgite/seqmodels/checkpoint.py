"""JSON model checkpoints.

Tensors are stored as base64 of little-endian float64, row-major, with
their shape alongside::

    {"schema": "kgite/checkpoint/v1", "kind": "rnn" | "linear" | "mixed", ...,
     "tensors": {"W": {"shape": [d, 4H], "dtype": "<f8", "data": "..."}}}
"""
from __future__ import annotations

import base64
import json

import numpy as np

from .linear import LinearModel, MixedModel
from .rnn import RecurrentParams
from .train import RecurrentModel, Standardizer

SCHEMA = "kgite/checkpoint/v1"


class CheckpointError(ValueError):
    pass


def encode_tensor(a) -> dict:
    a = np.ascontiguousarray(np.asarray(a, dtype="<f8"))
    return {"shape": list(a.shape), "dtype": "<f8", "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_tensor(doc) -> np.ndarray:
    if doc.get("dtype") != "<f8":
        raise CheckpointError(f"unsupported tensor dtype {doc.get('dtype')!r}")
    raw = base64.b64decode(doc["data"])
    a = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    shape = tuple(doc["shape"])
    if a.size != int(np.prod(shape)):
        raise CheckpointError(f"tensor data has {a.size} values, shape {shape} needs {int(np.prod(shape))}")
    return a.reshape(shape)


def to_document(model, metadata=None) -> dict:
    doc = {"schema": SCHEMA, "metadata": metadata or {}}
    if isinstance(model, RecurrentModel):
        p = model.params
        doc.update(
            kind="rnn", cell=p.cell, input_dim=p.input_dim, hidden_dim=p.hidden_dim,
            task_loss=model.task_loss, provenance=model.provenance,
            tensors={k: encode_tensor(v) for k, v in sorted(p.tensors.items())},
            standardizer={"mean": encode_tensor(model.standardizer.mean), "scale": encode_tensor(model.standardizer.scale)},
        )
    elif isinstance(model, LinearModel):
        doc.update(
            kind="mixed" if isinstance(model, MixedModel) else "linear", family=model.family,
            intercept=model.intercept, ridge=model.ridge,
            tensors={"coef": encode_tensor(model.coef), "cov": encode_tensor(model.cov)},
        )
        if isinstance(model, MixedModel):
            doc["intercept_var"] = model.intercept_var
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    return doc


def from_document(doc):
    if doc.get("schema") != SCHEMA:
        raise CheckpointError(f"unknown checkpoint schema {doc.get('schema')!r}")
    kind = doc.get("kind")
    t = {k: decode_tensor(v) for k, v in doc["tensors"].items()}
    if kind == "rnn":
        params = RecurrentParams(doc["cell"], int(doc["input_dim"]), int(doc["hidden_dim"]), t)
        std = Standardizer(decode_tensor(doc["standardizer"]["mean"]), decode_tensor(doc["standardizer"]["scale"]))
        return RecurrentModel(params, std, doc.get("task_loss"), {}, doc.get("provenance", "scratch"))
    if kind in ("linear", "mixed"):
        kw = dict(coef=t["coef"], intercept=float(doc["intercept"]), cov=t["cov"], family=doc["family"], ridge=float(doc.get("ridge", 0.0)))
        if kind == "mixed":
            return MixedModel(**kw, intercept_var=float(doc.get("intercept_var", 0.0)))
        return LinearModel(**kw)
    raise CheckpointError(f"unknown checkpoint kind {kind!r}")


def save_checkpoint(model, path, metadata=None):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_document(model, metadata), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{path}: not JSON ({exc})") from exc
    return from_document(doc)
