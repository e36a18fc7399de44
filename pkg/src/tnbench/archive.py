"""Checkpoint archives: a zip holding ``meta.json`` plus one ``.npy`` per array.

Entries carry a fixed timestamp so identical content gives identical bytes.
"""

from __future__ import annotations

import io
import json
import os
import zipfile
from pathlib import Path

import numpy as np


class CheckpointError(ValueError):
    pass


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _zip_write(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
    info.compress_type = zipfile.ZIP_DEFLATED
    zf.writestr(info, data)


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def write_archive(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Byte-reproducible zip of a JSON header plus .npy arrays, written atomically."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w") as zf:
        _zip_write(zf, "meta.json", json.dumps(meta, sort_keys=True, indent=1).encode())
        for name in sorted(arrays):
            _zip_write(zf, name + ".npy", _npy_bytes(arrays[name]))
    tmp.replace(path)


def read_archive(path, version: str) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            arrays = {n[:-4]: np.lib.format.read_array(io.BytesIO(zf.read(n)), allow_pickle=False)
                      for n in zf.namelist() if n.endswith(".npy")}
    except (zipfile.BadZipFile, KeyError, EOFError, ValueError, OSError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint, cannot read version/fields ({exc})") from None
    if meta.get("version") != version:
        raise CheckpointError(f"{path}: checkpoint version {meta.get('version')!r}, expected {version!r}")
    return meta, arrays
