"""Checkpoint files: JSON with base64 little-endian float32 parameter blobs."""

import base64
import binascii
import json
from pathlib import Path

import numpy as np

from .encoder import EncoderConfig, Vocabulary, param_shapes
from .tensor import Tensor

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(params, config: EncoderConfig, vocab: Vocabulary, path):
    doc = {
        "format_version": FORMAT_VERSION,
        "config": config.to_dict(),
        "vocabulary": vocab.token_to_id,
        "params": {
            name: {
                "shape": list(p.data.shape),
                "dtype": "f32le",
                "data": base64.b64encode(p.data.astype("<f4").tobytes()).decode("ascii"),
            }
            for name, p in params.items()
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path):
    """Returns (params, config, vocabulary)."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not JSON ({exc})") from None
    if doc.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format_version {doc.get('format_version')!r}, "
                              f"expected {FORMAT_VERSION}")
    try:
        config = EncoderConfig.from_dict(doc["config"])
        vocab = Vocabulary(dict(doc["vocabulary"]))
        raw = doc["params"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad header ({exc})") from None
    expected = param_shapes(config)
    if set(raw) != set(expected):
        raise CheckpointError(f"{path}: parameter names do not match the config")
    params = {}
    for name, shape in expected.items():
        entry = raw[name]
        if entry.get("dtype") != "f32le" or tuple(entry.get("shape", ())) != shape:
            raise CheckpointError(f"{path}: parameter {name} has wrong dtype/shape")
        try:
            blob = base64.b64decode(entry["data"], validate=True)
        except (binascii.Error, ValueError) as exc:
            raise CheckpointError(f"{path}: parameter {name}: bad base64 ({exc})") from None
        if len(blob) != 4 * int(np.prod(shape)):
            raise CheckpointError(f"{path}: parameter {name}: payload length {len(blob)}")
        data = np.frombuffer(blob, dtype="<f4").astype(np.float64).reshape(shape)
        if not np.all(np.isfinite(data)):
            raise CheckpointError(f"{path}: parameter {name} has non-finite values")
        params[name] = Tensor(data, requires_grad=True)
    return params, config, vocab
