"""Self-describing model archives.

An archive is a zip holding ``meta.json`` plus one ``.npy`` member per array. Member
timestamps are fixed, so fitting the same data twice gives byte-identical files.
"""
from __future__ import annotations

import io
import json
import zipfile

import numpy as np

from .features import basis_arrays, basis_from_arrays, basis_meta
from .sysid import Hyperparams, LiftedModel

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)
_MATRICES = ("A", "B", "H", "C", "Q", "R", "O_xi", "x_mean", "x_cov")
_BASES = ("state_basis", "input_basis", "meas_basis")


def _write_member(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, payload)


def save_model(model: LiftedModel, path) -> None:
    arrays: dict[str, np.ndarray] = {}
    for name in _MATRICES:
        val = getattr(model, name)
        if val is not None:
            arrays[name] = np.asarray(val)
    bases = {}
    for name in _BASES:
        b = getattr(model, name)
        if b is None:
            raise ValueError(f"model has no {name}; fit it with fit_transitions before saving")
        bases[name] = basis_meta(b)
        arrays.update(basis_arrays(b, name))
    meta = {
        "format": "koopse-model",
        "version": FORMAT_VERSION,
        "hyperparams": model.hyperparams.to_dict(),
        "angle_dims": list(model.angle_dims),
        "fingerprint": model.fingerprint,
        "kernel_hash": model.kernel_hash(),
        "bases": bases,
        # timings stay in the training log so archives remain reproducible
        "info": {k: v for k, v in model.info.items() if not k.endswith("_seconds")},
        "arrays": sorted(arrays),
    }
    with zipfile.ZipFile(path, "w") as zf:
        _write_member(zf, "meta.json", json.dumps(meta, sort_keys=True, indent=1).encode())
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            _write_member(zf, f"{name}.npy", buf.getvalue())


def load_model(path) -> LiftedModel:
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format") != "koopse-model":
            raise ValueError(f"{path}: not a model archive")
        if meta.get("version") != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported archive version {meta.get('version')}")
        arrays = {name: np.lib.format.read_array(io.BytesIO(zf.read(f"{name}.npy")), allow_pickle=False)
                  for name in meta["arrays"]}
    model = LiftedModel(
        **{name: arrays.get(name) for name in _MATRICES},
        hyperparams=Hyperparams.from_dict(meta["hyperparams"]),
        angle_dims=tuple(meta["angle_dims"]),
        fingerprint=meta["fingerprint"],
        info=meta.get("info", {}),
    )
    for name in _BASES:
        setattr(model, name, basis_from_arrays(meta["bases"][name], arrays, name))
    return model
