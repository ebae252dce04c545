"""Topology checkpoints: a JSON manifest plus a flat little-endian float64 blob.

The blob holds, for each layer in manifest order, its weights (row-major)
followed by its bias.  The manifest carries the structure, the branch-event
history and, when present, the input standardization.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .branching import BranchEvent
from .errors import SchemaError
from .network import Layer, Topology

FORMAT = "fairbranch-topology/1"
MANIFEST = "model.json"
BLOB = "model.bin"


def manifest(top: Topology, groups=None) -> dict:
    layers, offset = [], 0
    for layer in top.iter_layers():
        layers.append({
            "depth": layer.depth,
            "tasks": list(layer.tasks),
            "in_dim": layer.in_dim,
            "out_dim": layer.out_dim,
            "offset": offset,
        })
        offset += layer.size
    out = {
        "format": FORMAT,
        "n_features": top.n_features,
        "hidden_widths": list(top.hidden_widths),
        "task_names": list(top.task_names),
        "d": top.d,
        "d_c": top.d_c,
        "layers": layers,
        "n_parameters": offset,
        "events": [e.to_dict() for e in top.events],
    }
    if groups is not None:
        out["groups"] = [g.to_dict() for g in groups]
    if top.input_shift is not None:
        out["standardization"] = {
            "shift": top.input_shift.tolist(),
            "scale": top.input_scale.tolist(),
        }
    return out


def save(top: Topology, directory, groups=None) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    man = directory / MANIFEST
    blob = directory / BLOB
    man.write_text(json.dumps(manifest(top, groups), indent=2) + "\n")
    parts = [np.concatenate([l.weights.ravel(), l.bias]) for l in top.iter_layers()]
    np.concatenate(parts).astype("<f8").tofile(blob)
    return man, blob


def load(directory) -> Topology:
    directory = Path(directory)
    meta = json.loads((directory / MANIFEST).read_text())
    if meta.get("format") != FORMAT:
        raise SchemaError(f"{directory / MANIFEST}: unsupported format {meta.get('format')!r}")
    flat = np.fromfile(directory / BLOB, dtype="<f8").astype(np.float64)
    if flat.size != meta["n_parameters"]:
        raise SchemaError(f"blob holds {flat.size} values, manifest expects {meta['n_parameters']}")
    d = meta["d"]
    hidden = [[] for _ in range(d)]
    heads = [None] * len(meta["task_names"])
    for spec in meta["layers"]:
        i, o, off = spec["in_dim"], spec["out_dim"], spec["offset"]
        W = flat[off : off + i * o].reshape(i, o).copy()
        b = flat[off + i * o : off + i * o + o].copy()
        layer = Layer(W, b, spec["depth"], tuple(spec["tasks"]))
        if spec["depth"] == d + 1:
            heads[layer.tasks[0]] = layer
        else:
            hidden[spec["depth"] - 1].append(layer)
    top = Topology(
        meta["n_features"],
        tuple(meta["hidden_widths"]),
        tuple(meta["task_names"]),
        hidden,
        heads,
        meta["d_c"],
        [BranchEvent.from_dict(e) for e in meta.get("events", [])],
    )
    if "standardization" in meta:
        top.input_shift = np.array(meta["standardization"]["shift"])
        top.input_scale = np.array(meta["standardization"]["scale"])
    top.validate()
    return top
