"""Versioned on-disk formats for encoded metas and core-network models.

Both are JSON envelopes carrying ``format`` and ``format_version``. Arrays
are stored as ``{"shape", "dtype": "<f8", "data"}`` with ``data`` the base64
of the little-endian float64 bytes, so values round-trip bit-exactly.
"""

from __future__ import annotations

import base64
import hashlib
import json
from collections.abc import Iterable, Mapping
from pathlib import Path
from typing import Any

import numpy as np

from .core_network import CnConfig, CoreNetworkModel, build_cn
from .environments import HyperparamSpec
from .errors import ModelFormatError
from .nn_engine import NetworkParams, ParamPair
from .npe import EncodedMeta, EncoderSpec

FORMAT_VERSION = 1
MODEL_FORMAT = "hparam-mapper/core-network"
META_FORMAT = "hparam-mapper/encoded-meta"
_DTYPE = "<f8"


def encode_array(array: np.ndarray) -> dict[str, Any]:
    data = np.ascontiguousarray(array, dtype=_DTYPE)
    return {
        "shape": list(data.shape),
        "dtype": _DTYPE,
        "data": base64.b64encode(data.tobytes()).decode("ascii"),
    }


def decode_array(doc: Mapping[str, Any]) -> np.ndarray:
    if doc.get("dtype") != _DTYPE:
        raise ModelFormatError(f"unsupported array dtype {doc.get('dtype')!r}")
    raw = base64.b64decode(doc["data"])
    array = np.frombuffer(raw, dtype=_DTYPE).astype(np.float64)
    return array.reshape(tuple(doc["shape"]))


def params_digest(arrays: Iterable[np.ndarray]) -> str:
    """SHA-256 over the little-endian bytes of ``arrays``, in order."""
    digest = hashlib.sha256()
    for array in arrays:
        digest.update(np.ascontiguousarray(array, dtype=_DTYPE).tobytes())
    return digest.hexdigest()


def _check_envelope(doc: Mapping[str, Any], expected: str) -> None:
    if doc.get("format") != expected:
        raise ModelFormatError(f"expected a {expected} document, got {doc.get('format')!r}")
    if doc.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format_version {doc.get('format_version')!r}")


def meta_to_dict(meta: EncodedMeta) -> dict[str, Any]:
    return {
        "format": META_FORMAT,
        "format_version": FORMAT_VERSION,
        "dataset_id": meta.dataset_id,
        "spec_hash": meta.spec_hash,
        "initial_loss": meta.initial_loss,
        "final_loss": meta.final_loss,
        "matrices": [encode_array(m) for m in meta.matrices],
    }


def meta_from_dict(doc: Mapping[str, Any]) -> EncodedMeta:
    _check_envelope(doc, META_FORMAT)
    try:
        return EncodedMeta(
            matrices=tuple(decode_array(m) for m in doc["matrices"]),
            dataset_id=str(doc["dataset_id"]),
            spec_hash=str(doc["spec_hash"]),
            initial_loss=float(doc["initial_loss"]),
            final_loss=float(doc["final_loss"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed encoded meta: {exc}") from exc


def save_meta(meta: EncodedMeta, path: str | Path) -> None:
    Path(path).write_text(json.dumps(meta_to_dict(meta)))


def load_meta(path: str | Path) -> EncodedMeta:
    return meta_from_dict(json.loads(Path(path).read_text()))


def model_to_dict(model: CoreNetworkModel) -> dict[str, Any]:
    spec = model.spec
    return {
        "format": MODEL_FORMAT,
        "format_version": FORMAT_VERSION,
        "config": spec.config.to_dict(),
        "matrix_shapes": [list(s) for s in spec.matrix_shapes],
        "specs": [s.to_dict() for s in spec.specs],
        "trained": model.trained,
        "encoder": None if model.encoder is None else model.encoder.to_dict(),
        "geometry": None if model.geometry is None else dict(model.geometry),
        "hashes": {
            "encoder_spec": model.encoder_spec_hash,
            "params": params_digest(model.params.arrays()),
        },
        "loss_history": list(model.loss_history),
        "validation_history": list(model.validation_history),
        "params": {
            name: {"weight": encode_array(p.weight), "bias": encode_array(p.bias)}
            for name, p in model.params.layers.items()
        },
    }


def model_from_dict(doc: Mapping[str, Any]) -> CoreNetworkModel:
    """Rebuild a model; the network is re-derived from its config and shapes.

    Raises:
        ModelFormatError: On an unknown format, a malformed document, layer
            names that do not match the rebuilt network, or a parameter
            digest mismatch.
    """
    _check_envelope(doc, MODEL_FORMAT)
    try:
        specs = tuple(HyperparamSpec.from_dict(s) for s in doc["specs"])
        spec = build_cn(
            [tuple(s) for s in doc["matrix_shapes"]], specs, CnConfig.from_dict(doc["config"])
        )
        params = NetworkParams(
            {
                name: ParamPair(decode_array(p["weight"]), decode_array(p["bias"]))
                for name, p in doc["params"].items()
            }
        )
        hashes = doc["hashes"]
        encoder = None if doc.get("encoder") is None else EncoderSpec.from_dict(doc["encoder"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model document: {exc}") from exc

    expected = [layer.name for layer in spec.network.parametric_layers]
    if list(params.layers) != expected:
        raise ModelFormatError(f"parameter layers {list(params.layers)} do not match {expected}")
    for layer in spec.network.parametric_layers:
        if params[layer.name].weight.shape != layer.weight_shape():
            raise ModelFormatError(f"layer '{layer.name}' has a malformed weight")
    if params_digest(params.arrays()) != hashes.get("params"):
        raise ModelFormatError("parameter digest mismatch")
    return CoreNetworkModel(
        spec=spec,
        params=params,
        encoder_spec_hash=str(hashes.get("encoder_spec", "")),
        loss_history=tuple(float(v) for v in doc.get("loss_history", ())),
        validation_history=tuple(float(v) for v in doc.get("validation_history", ())),
        trained=bool(doc.get("trained", True)),
        encoder=encoder,
        geometry=doc.get("geometry"),
    )


def save_model(model: CoreNetworkModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1))


def load_model(path: str | Path) -> CoreNetworkModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path} is not valid JSON: {exc}") from exc
    return model_from_dict(doc)
