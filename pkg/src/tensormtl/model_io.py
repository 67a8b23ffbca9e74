"""Single-file model serialization.

Models are stored as ``.npz`` archives: raw float64 arrays plus one JSON
header string.  Binary arrays round-trip exactly, so a reloaded model
reproduces bitwise-identical predictions.  The header carries an explicit
``format_version`` so future layout changes stay detectable.
"""

from __future__ import annotations

import json

import numpy as np

from .baselines import BaselineModel
from .errors import TensorMtlError
from .factors import CpFactors, DualSharedFactor
from .grid import TaskGrid
from .kernels import KernelSpec
from .trainers import TrainedModel

FORMAT_VERSION = 1


def _kernel_to_meta(spec: KernelSpec) -> dict:
    return {"kind": spec.kind, "rbf_gamma": spec.rbf_gamma}


def _kernel_from_meta(meta: dict) -> KernelSpec:
    return KernelSpec(kind=meta["kind"], rbf_gamma=meta.get("rbf_gamma"))


def save_model(model, path) -> None:
    """Write a trained model or a baseline model to ``path``."""
    if isinstance(model, TrainedModel):
        meta = {
            "format_version": FORMAT_VERSION,
            "model_kind": "tensor",
            "variant": model.variant,
            "kernel": _kernel_to_meta(model.kernel),
            "grid_shape": list(model.grid.shape),
            "rank": model.factors.rank,
            "seed": model.factors.seed,
            "meta": model.meta,
        }
        arrays = {
            "anchors": model.dual.anchors,
            "anchor_tasks": model.dual.anchor_tasks,
            "coeffs": model.dual.coeffs,
            "biases": model.biases,
        }
        for n, f in enumerate(model.factors.factors):
            arrays[f"factor_{n}"] = f
    elif isinstance(model, BaselineModel):
        meta = {
            "format_version": FORMAT_VERSION,
            "model_kind": f"baseline_{model.kind}",
            "variant": model.variant,
            "kernel": _kernel_to_meta(model.kernel),
            "grid_shape": list(model.grid.shape),
        }
        arrays = {
            "anchors": model.anchors,
            "anchor_tasks": model.anchor_tasks,
            "coeffs": model.coeffs,
            "biases": model.biases,
        }
    else:
        raise TensorMtlError(f"cannot serialize {type(model).__name__}")
    with open(path, "wb") as fh:
        np.savez(fh, header=np.frombuffer(
            json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8
        ), **arrays)


def load_model(path):
    """Load a model written by :func:`save_model`."""
    with np.load(path, allow_pickle=False) as data:
        try:
            meta = json.loads(bytes(data["header"]).decode("utf-8"))
        except (KeyError, ValueError) as exc:
            raise TensorMtlError(f"{path}: not a model file") from exc
        version = meta.get("format_version")
        if version != FORMAT_VERSION:
            raise TensorMtlError(
                f"{path}: unsupported format_version {version!r}"
            )
        grid = TaskGrid(tuple(meta["grid_shape"]))
        kernel = _kernel_from_meta(meta["kernel"])
        kind = meta["model_kind"]
        if kind == "tensor":
            factors = CpFactors(
                meta["rank"],
                [data[f"factor_{n}"] for n in range(grid.nmodes)],
                meta.get("seed"),
            )
            dual = DualSharedFactor(
                anchors=data["anchors"],
                anchor_tasks=data["anchor_tasks"],
                coeffs=data["coeffs"],
                kernel=kernel,
            )
            return TrainedModel(
                grid=grid,
                kernel=kernel,
                factors=factors,
                dual=dual,
                biases=data["biases"],
                variant=meta["variant"],
                meta=meta.get("meta", {}),
            )
        if kind in ("baseline_independent", "baseline_pooled"):
            return BaselineModel(
                kind=kind.removeprefix("baseline_"),
                variant=meta["variant"],
                kernel=kernel,
                grid=grid,
                anchors=data["anchors"],
                anchor_tasks=data["anchor_tasks"],
                coeffs=data["coeffs"],
                biases=data["biases"],
            )
        raise TensorMtlError(f"{path}: unknown model kind {kind!r}")
