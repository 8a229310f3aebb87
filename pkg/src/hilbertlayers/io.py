"""Binary field container, CSV/JSON writers and stage manifests.

Container layout (little endian)::

    b"HLCF" | u32 version | u32 header length | JSON header | float64 data | sha256(header + data)

The header lists each array's name and shape; arrays are stored row-major,
one after the other.
"""

import csv
import hashlib
import json
import os
import struct
import time

import numpy as np

MAGIC = b"HLCF"
VERSION = 1


class ContainerError(ValueError):
    pass


def write_container(path, arrays, meta=None):
    entries = []
    chunks = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape)})
        chunks.append(a.tobytes())
    header = json.dumps({"arrays": entries, "meta": meta or {}}, sort_keys=True).encode()
    data = b"".join(chunks)
    digest = hashlib.sha256(header + data).digest()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        fh.write(data)
        fh.write(digest)
    os.replace(tmp, path)


def read_container(path):
    """Return ``(arrays, meta)``; raises ContainerError on any corruption."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 + 32 or blob[:4] != MAGIC:
        raise ContainerError(f"{path}: not a field container")
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != VERSION:
        raise ContainerError(f"{path}: unsupported version {version}")
    header = blob[12 : 12 + hlen]
    data = blob[12 + hlen : -32]
    if hashlib.sha256(header + data).digest() != blob[-32:]:
        raise ContainerError(f"{path}: checksum mismatch")
    try:
        head = json.loads(header)
    except json.JSONDecodeError as exc:
        raise ContainerError(f"{path}: bad header") from exc
    arrays = {}
    offset = 0
    for entry in head["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if offset + nbytes > len(data):
            raise ContainerError(f"{path}: truncated data")
        arrays[entry["name"]] = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(data):
        raise ContainerError(f"{path}: trailing data")
    return arrays, head["meta"]


def fmt(x):
    return f"{x:.17g}"


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader]
    return header, rows


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else str(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def file_hash(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out_dir, stage, inputs, outputs, config_hash):
    """Record the hashes of a stage's inputs and outputs next to its artifacts."""
    manifest = {
        "stage": stage,
        "config_hash": config_hash,
        "inputs": {name: file_hash(p) for name, p in sorted(inputs.items())},
        "outputs": {name: file_hash(os.path.join(out_dir, name)) for name in sorted(outputs)},
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    write_json(os.path.join(out_dir, f"manifest_{stage}.json"), manifest)
    return manifest


def read_manifest(out_dir, stage):
    path = os.path.join(out_dir, f"manifest_{stage}.json")
    with open(path) as fh:
        return json.load(fh)
