"""Checkpoint container.

A checkpoint is a zip archive holding ``manifest.json`` plus one ``.npy``
member per array.  The manifest records the format version, the model spec,
the training config, the step/epoch counters, the RNG description and an index
of every array (name, shape, dtype).  Parameters and optimizer moments are
stored as little-endian float32.  Files are written to a temporary sibling and
renamed into place, so a reader never sees a partial checkpoint.
"""

from __future__ import annotations

import io
import json
import os
import tempfile
import zipfile
from pathlib import Path

import numpy as np

FORMAT = "can-ssl-checkpoint"
VERSION = 1


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, arr, allow_pickle=False)
    return buf.getvalue()


def atomic_write(path, write_fn) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            write_fn(fh)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_container(path, meta: dict, arrays: dict[str, np.ndarray], fmt: str = FORMAT, version: int = VERSION) -> None:
    """Write ``arrays`` (float arrays cast to ``<f4``) and ``meta`` atomically."""
    index, payload = {}, {}
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype.kind == "f":
            arr = arr.astype("<f4", copy=False)
        elif arr.dtype.kind in "iu":
            arr = arr.astype("<i8", copy=False)
        payload[name] = arr
        index[name] = {"shape": list(arr.shape), "dtype": arr.dtype.str}
    manifest = {"format": fmt, "version": version, "arrays": index, **meta}

    def _write(fh):
        with zipfile.ZipFile(fh, "w", compression=zipfile.ZIP_STORED) as zf:
            zf.writestr("manifest.json", json.dumps(manifest, indent=2, sort_keys=True))
            for name, arr in payload.items():
                zf.writestr(f"arrays/{name}.npy", _npy_bytes(arr))

    atomic_write(path, _write)


def read_container(path, fmt: str = FORMAT) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    with zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format") != fmt:
            raise ValueError(f"{path}: not a {fmt} file")
        if manifest.get("version") != VERSION:
            raise ValueError(f"{path}: unsupported version {manifest.get('version')}")
        arrays = {}
        for name, info in manifest["arrays"].items():
            with zf.open(f"arrays/{name}.npy") as fh:
                arr = np.lib.format.read_array(io.BytesIO(fh.read()), allow_pickle=False)
            if list(arr.shape) != info["shape"]:
                raise ValueError(f"{path}: array {name} has shape {arr.shape}, manifest says {info['shape']}")
            arrays[name] = arr
    return manifest, arrays
