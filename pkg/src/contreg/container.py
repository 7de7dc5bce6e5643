"""Binary container for trained cascades and optional online-update state.

Layout: magic ``CCRM``, little-endian u32 format version, a u64-length-
prefixed JSON manifest describing dimensions and the blob directory, then
the blobs themselves: row-major little-endian float64, each prefixed with
its u64 byte length. Mean shape and deformation basis come first, then
per level the PCA basis, regressor, displacement mean and covariance,
followed by supplementary blobs named in the manifest. An optional
``ICCR`` tag introduces the serialized update state in the same format.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from contreg.cascade import CascadeLevel, CascadeModel
from contreg.features import FeatureConfig, PcaModel
from contreg.incremental import IncrementalState, LevelState
from contreg.shapes import PdmModel
from contreg.solver import MomentSpec

MAGIC = b"CCRM"
STATE_TAG = b"ICCR"
FORMAT_VERSION = 1


def _dump_json(payload: dict) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _write_block(fh, data: bytes):
    fh.write(struct.pack("<Q", len(data)))
    fh.write(data)


def _write_blob(fh, array: np.ndarray):
    _write_block(fh, np.ascontiguousarray(array, dtype="<f8").tobytes())


def _read_block(fh) -> bytes:
    header = fh.read(8)
    if len(header) != 8:
        raise ValueError("truncated container")
    (length,) = struct.unpack("<Q", header)
    data = fh.read(length)
    if len(data) != length:
        raise ValueError("truncated container")
    return data


def _read_blob(fh, shape) -> np.ndarray:
    data = _read_block(fh)
    expected = int(np.prod(shape)) * 8
    if len(data) != expected:
        raise ValueError(f"blob size mismatch: expected {expected}, got {len(data)}")
    return np.frombuffer(data, dtype="<f8").reshape(shape).astype(np.float64)


def _model_blobs(model: CascadeModel) -> list[tuple[str, np.ndarray]]:
    if model.pdm is not None:
        blobs = [("mean_shape", model.pdm.mean_shape), ("basis", model.pdm.basis)]
    else:
        blobs = [("mean_shape", np.zeros(0)), ("basis", np.zeros((0, 0)))]
    for i, level in enumerate(model.levels):
        blobs.append((f"level{i}/pca_components", level.pca.components))
        blobs.append((f"level{i}/regressor", level.regressor))
        blobs.append((f"level{i}/mean", level.moments.mean))
        blobs.append((f"level{i}/covariance", level.moments.covariance))
    # supplementary blobs after the mandated set
    for i, level in enumerate(model.levels):
        blobs.append((f"level{i}/pca_mean", level.pca.mean))
        blobs.append((f"level{i}/pca_eigenvalues", level.pca.eigenvalues))
        blobs.append((f"level{i}/bias", level.bias))
        if level.functional_cov is not None:
            blobs.append((f"level{i}/functional_cov", level.functional_cov))
            blobs.append((f"level{i}/block_sum", level.block_sum))
    return blobs


def _state_blobs(state: IncrementalState) -> list[tuple[str, np.ndarray]]:
    blobs = []
    for i, level in enumerate(state.levels):
        blobs.append((f"state{i}/regressor", level.regressor))
        blobs.append((f"state{i}/inv_cov", level.inv_cov))
        blobs.append((f"state{i}/cov", level.cov))
        blobs.append((f"state{i}/cross_sum", level.cross_sum))
        blobs.append((f"state{i}/mean", level.moments.mean))
        blobs.append((f"state{i}/covariance", level.moments.covariance))
    return blobs


def save_model(model: CascadeModel, path, state: IncrementalState | None = None):
    """Serialize a cascade (and optional update state) to ``path``."""
    cfg = model.feature_config
    blobs = _model_blobs(model)
    manifest = {
        "n_points": model.n_points,
        "n_flex": model.pdm.n_flex if model.pdm is not None else 0,
        "target_dim": model.target_dim,
        "feature_dim": model.levels[0].pca.mean.size,
        "n_components": model.levels[0].pca.n_components,
        "n_levels": model.n_levels,
        "space": model.space,
        "descriptor": {
            "kind": cfg.descriptor,
            "patch_size": cfg.patch_size,
            "cells": cfg.cells,
            "bins": cfg.bins,
        },
        "levels": [
            {"ridge": level.ridge, "has_cov_cache": level.functional_cov is not None}
            for level in model.levels
        ],
        "blobs": [{"name": name, "shape": list(arr.shape)} for name, arr in blobs],
        "has_state": state is not None,
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        _write_block(fh, _dump_json(manifest))
        for _, arr in blobs:
            _write_blob(fh, arr)
        if state is not None:
            sblobs = _state_blobs(state)
            sub = {
                "forgetting": list(state.forgetting),
                "refresh_every": state.refresh_every,
                "updates_applied": state.updates_applied,
                "updates_skipped": state.updates_skipped,
                "update_counts": [lvl.update_count for lvl in state.levels],
                "blobs": [{"name": name, "shape": list(arr.shape)} for name, arr in sblobs],
            }
            fh.write(STATE_TAG)
            _write_block(fh, _dump_json(sub))
            for _, arr in sblobs:
                _write_blob(fh, arr)


def load_model(path) -> tuple[CascadeModel, IncrementalState | None]:
    """Read a container written by ``save_model``."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"not a cascade container: {path}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported container version {version}")
        manifest = json.loads(_read_block(fh).decode("utf-8"))
        arrays = {}
        for entry in manifest["blobs"]:
            arrays[entry["name"]] = _read_blob(fh, entry["shape"])

        pdm = None
        if arrays["mean_shape"].size:
            pdm = PdmModel(mean_shape=arrays["mean_shape"], basis=arrays["basis"])
        cfg = FeatureConfig(
            descriptor=manifest["descriptor"]["kind"],
            patch_size=manifest["descriptor"]["patch_size"],
            cells=manifest["descriptor"]["cells"],
            bins=manifest["descriptor"]["bins"],
        )
        levels = []
        for i, meta in enumerate(manifest["levels"]):
            pca = PcaModel(
                mean=arrays[f"level{i}/pca_mean"],
                components=arrays[f"level{i}/pca_components"],
                eigenvalues=arrays[f"level{i}/pca_eigenvalues"],
            )
            moments = MomentSpec(mean=arrays[f"level{i}/mean"],
                                 covariance=arrays[f"level{i}/covariance"])
            levels.append(CascadeLevel(
                regressor=arrays[f"level{i}/regressor"],
                bias=arrays[f"level{i}/bias"],
                pca=pca, moments=moments, ridge=meta["ridge"],
                functional_cov=arrays.get(f"level{i}/functional_cov"),
                block_sum=arrays.get(f"level{i}/block_sum"),
            ))
        model = CascadeModel(pdm=pdm, feature_config=cfg, levels=levels,
                             space=manifest["space"], n_points=manifest["n_points"])

        state = None
        if manifest.get("has_state"):
            tag = fh.read(4)
            if tag != STATE_TAG:
                raise ValueError("missing update-state section")
            sub = json.loads(_read_block(fh).decode("utf-8"))
            sarrays = {}
            for entry in sub["blobs"]:
                sarrays[entry["name"]] = _read_blob(fh, entry["shape"])
            slevels = []
            for i, level in enumerate(levels):
                smoments = MomentSpec(mean=sarrays[f"state{i}/mean"],
                                      covariance=sarrays[f"state{i}/covariance"])
                slevels.append(LevelState(
                    regressor=sarrays[f"state{i}/regressor"],
                    inv_cov=sarrays[f"state{i}/inv_cov"],
                    cov=sarrays[f"state{i}/cov"],
                    cross_sum=sarrays[f"state{i}/cross_sum"],
                    pca=level.pca,
                    target_block=smoments.augmented().target_block,
                    moments=smoments,
                    update_count=sub["update_counts"][i],
                ))
            state = IncrementalState(
                levels=tuple(slevels), forgetting=tuple(sub["forgetting"]),
                refresh_every=sub["refresh_every"],
                updates_applied=sub["updates_applied"],
                updates_skipped=sub["updates_skipped"],
            )
    return model, state
