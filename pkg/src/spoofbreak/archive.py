"""Deterministic array archives.

A zip of ``.npy`` members plus a ``meta.json`` member. Member timestamps
and ordering are fixed so identical contents always produce identical
bytes, which numpy's own ``savez`` does not guarantee.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from .errors import LoadError

_EPOCH = (1980, 1, 1, 0, 0, 0)


def _member(name):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    return info


def save_archive(path, arrays, meta):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        zf.writestr(_member("meta.json"), json.dumps(meta, sort_keys=True, indent=1))
        for name in sorted(arrays):
            arr_buf = io.BytesIO()
            np.save(arr_buf, np.asarray(arrays[name], order="C"), allow_pickle=False)
            zf.writestr(_member(f"arrays/{name}.npy"), arr_buf.getvalue())
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)
    return path


def load_archive(path):
    """Return ``(arrays, meta)``; raises LoadError on missing or corrupt files."""
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"no such archive: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            arrays = {}
            for name in zf.namelist():
                if name.startswith("arrays/") and name.endswith(".npy"):
                    key = name[len("arrays/"):-len(".npy")]
                    arrays[key] = np.load(io.BytesIO(zf.read(name)), allow_pickle=False)
    except (zipfile.BadZipFile, KeyError, ValueError, OSError) as exc:
        raise LoadError(f"corrupt archive {path}: {exc}") from exc
    return arrays, meta


def state_to_arrays(module, prefix=""):
    return {prefix + k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def arrays_to_state(arrays, prefix=""):
    import torch

    return {
        k[len(prefix):]: torch.from_numpy(np.array(v))
        for k, v in arrays.items()
        if k.startswith(prefix)
    }
