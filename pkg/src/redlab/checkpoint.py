"""Flat tensor persistence: one JSON manifest plus one binary blob.

The blob is every tensor's data concatenated as little-endian IEEE-754
64-bit values in manifest order; the manifest records name, shape, dtype,
byte offset, and byte length for each entry, plus free-form metadata.
Nothing is compressed or framed, so round-trips are trivially byte-exact —
the property the probing protocol's purity checks lean on.

A checkpoint path is a base name: ``base.json`` and ``base.bin``.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import ContractError
from .rng import Rng

FORMAT_VERSION = 1


def _base(path: str) -> str:
    for suffix in (".json", ".bin"):
        if path.endswith(suffix):
            return path[: -len(suffix)]
    return path


def save_tensors(path: str, named: list, meta: dict) -> tuple:
    """Write (name, array) pairs and metadata; returns (manifest, blob) paths.

    Zero-dimensional inputs are stored with shape [1], matching the engine's
    own promotion of scalars to rank-1 tensors.
    """
    base = _base(path)
    entries = []
    chunks = []
    offset = 0
    seen = set()
    for name, arr in named:
        if name in seen:
            raise ContractError(f"duplicate tensor name {name!r}")
        seen.add(name)
        data = np.ascontiguousarray(arr, dtype=np.float64)
        raw = data.astype("<f8", copy=False).tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(data.shape),
                "dtype": "f64",
                "offset": offset,
                "length": len(raw),
            }
        )
        chunks.append(raw)
        offset += len(raw)
    manifest = {"format_version": FORMAT_VERSION, "tensors": entries, "meta": meta}
    manifest_path, blob_path = base + ".json", base + ".bin"
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(blob_path, "wb") as fh:
        fh.write(b"".join(chunks))
    return manifest_path, blob_path


def load_tensors(path: str) -> tuple:
    """Read back (ordered {name: array}, meta); validates the manifest."""
    base = _base(path)
    manifest_path, blob_path = base + ".json", base + ".bin"
    if not os.path.exists(manifest_path) or not os.path.exists(blob_path):
        raise ContractError(f"checkpoint {base!r} is missing manifest or blob")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ContractError(
            f"unsupported checkpoint format_version {manifest.get('format_version')!r}"
        )
    with open(blob_path, "rb") as fh:
        blob = fh.read()
    tensors = {}
    expected = 0
    for entry in manifest["tensors"]:
        if entry["dtype"] != "f64":
            raise ContractError(f"unsupported dtype {entry['dtype']!r}")
        offset, length = entry["offset"], entry["length"]
        if offset != expected:
            raise ContractError(
                f"manifest offsets must be contiguous; {entry['name']} at {offset}, "
                f"expected {expected}"
            )
        expected = offset + length
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        if length != count * 8:
            raise ContractError(f"length mismatch for tensor {entry['name']!r}")
        if offset + length > len(blob):
            raise ContractError("blob is shorter than the manifest requires")
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        tensors[entry["name"]] = arr.astype(np.float64).reshape(shape)
    if expected != len(blob):
        raise ContractError("blob is longer than the manifest describes")
    return tensors, manifest.get("meta", {})


def save_model(model, path: str) -> tuple:
    """Persist a ToyEnhancer's parameters and rebuild recipe."""
    meta = {
        "kind": "toy_enhancer",
        "widths": list(model.widths),
        "adr_blocks": list(model.adr_blocks),
        "adr_dims": list(model.adr_dims),
        "dyn_candidates": model.dyn_candidates,
        "frozen": bool(model.frozen),
    }
    named = [(name, t.data) for name, t in model.named_parameters()]
    return save_tensors(path, named, meta)


def load_model(model_path: str):
    """Reconstruct a ToyEnhancer bit-exactly from its checkpoint."""
    from .enhancer import ToyEnhancer

    tensors, meta = load_tensors(model_path)
    if meta.get("kind") != "toy_enhancer":
        raise ContractError(f"not an enhancer checkpoint: kind={meta.get('kind')!r}")
    model = ToyEnhancer(
        Rng(0),
        widths=tuple(meta["widths"]),
        adr_blocks=tuple(meta["adr_blocks"]),
        adr_dims=tuple(meta["adr_dims"]),
        dyn_candidates=meta["dyn_candidates"],
    )
    named = dict(model.named_parameters())
    if set(named) != set(tensors):
        missing = set(named) ^ set(tensors)
        raise ContractError(f"checkpoint/model parameter mismatch: {sorted(missing)}")
    for name, arr in tensors.items():
        t = named[name]
        if t.data.shape != arr.shape:
            raise ContractError(
                f"shape mismatch for {name}: {t.data.shape} vs {arr.shape}"
            )
        t.data[...] = arr
    if meta["frozen"]:
        model.freeze()
    return model
