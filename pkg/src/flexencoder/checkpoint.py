"""Model checkpoints.

A checkpoint is a zip container holding two members:

``manifest.txt``
    ``key=value`` lines: format tag, value precision, input width, layer
    dims, activation, tie flag, an echo of the model config
    (``config.<key>=...``), optional metadata (``meta.<key>=...``) and one
    ``array=<name>,<rows>x<cols>,<byte offset>`` line per stored array.
``arrays.bin``
    Raw little-endian floats, concatenated in manifest order: encoder
    weights, encoder biases, decoder biases, untied decoder weights.
"""

from __future__ import annotations

import zipfile
from pathlib import Path

import numpy as np

from .config import ModelConfig, parse_config_text, serialize_config
from .errors import ParseError
from .model import FlexModel
from .nn import Activation

FORMAT_TAG = "flexencoder-checkpoint-1"
MANIFEST = "manifest.txt"
ARRAYS = "arrays.bin"
PRECISIONS = {"float32": "<f4", "float64": "<f8"}


def _ordered_arrays(model: FlexModel) -> list[tuple[str, np.ndarray]]:
    out = [(f"encoder.{i}.W", l.W) for i, l in enumerate(model.encoder)]
    out += [(f"encoder.{i}.b", l.b) for i, l in enumerate(model.encoder)]
    out += [(f"decoder.{j}.b", l.b) for j, l in enumerate(model.decoder)]
    out += [(f"decoder.{j}.W", l.W) for j, l in enumerate(model.decoder) if l.W is not None]
    return out


def save_checkpoint(
    path: str | Path,
    model: FlexModel,
    config: ModelConfig,
    meta: dict[str, str] | None = None,
    precision: str = "float32",
) -> Path:
    if precision not in PRECISIONS:
        raise ValueError(f"precision must be one of {sorted(PRECISIONS)}")
    dt = np.dtype(PRECISIONS[precision])
    lines = [
        f"format={FORMAT_TAG}",
        f"precision={precision}",
        f"n={model.n}",
        "dims=[" + ",".join(str(d) for d in model.dims) + "]",
        f"activation={model.activation.value if model.activation else 'LINEAR'}",
        f"tied={'true' if model.tied else 'false'}",
        f"drop_p={model.drop_p!r}",
        f"noise_p={model.noise_p!r}",
    ]
    lines += [f"config.{line}" for line in serialize_config(config).splitlines()]
    for key, value in (meta or {}).items():
        lines.append(f"meta.{key}={value}")
    blobs = []
    offset = 0
    for name, arr in _ordered_arrays(model):
        raw = np.ascontiguousarray(arr, dtype=dt).tobytes()
        shape = "x".join(str(s) for s in arr.shape)
        lines.append(f"array={name},{shape},{offset}")
        blobs.append(raw)
        offset += len(raw)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    info = dict(compress_type=zipfile.ZIP_STORED)
    with zipfile.ZipFile(path, "w") as zf:
        # fixed timestamps keep the container byte-identical across runs
        zf.writestr(zipfile.ZipInfo(MANIFEST, (1980, 1, 1, 0, 0, 0)), "\n".join(lines) + "\n", **info)
        zf.writestr(zipfile.ZipInfo(ARRAYS, (1980, 1, 1, 0, 0, 0)), b"".join(blobs), **info)
    return path


def load_checkpoint(path: str | Path) -> tuple[FlexModel, ModelConfig, dict[str, str]]:
    """Return (model, config, meta). Arrays keep the stored precision."""
    with zipfile.ZipFile(path) as zf:
        manifest = zf.read(MANIFEST).decode()
        blob = zf.read(ARRAYS)
    header: dict[str, str] = {}
    config_lines, meta, arrays = [], {}, []
    for lineno, line in enumerate(manifest.splitlines(), start=1):
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ParseError(f"{path}: malformed manifest line {line!r}", lineno)
        if key.startswith("config."):
            config_lines.append(f"{key[len('config.'):]}={value}")
        elif key.startswith("meta."):
            meta[key[len("meta."):]] = value
        elif key == "array":
            name, shape, offset = value.split(",")
            arrays.append((name, tuple(int(s) for s in shape.split("x")), int(offset)))
        else:
            header[key] = value
    if header.get("format") != FORMAT_TAG:
        raise ParseError(f"{path}: not a flexencoder checkpoint")
    precision = header["precision"]
    dt = np.dtype(PRECISIONS[precision])
    config = parse_config_text("\n".join(config_lines), source=f"{path}:manifest")
    dims = [int(d) for d in header["dims"].strip("[]").split(",")]
    act = None if header["activation"] == "LINEAR" else Activation.parse(header["activation"])
    model = FlexModel(
        dims[0],
        dims[1:],
        act,
        tied=header["tied"] == "true",
        drop_p=float(header["drop_p"]),
        noise_p=float(header["noise_p"]),
        dtype=dt.newbyteorder("="),
    )
    params = model.parameters()
    expected = {name for name, _ in _ordered_arrays(model)}
    if {name for name, _, _ in arrays} != expected:
        raise ParseError(f"{path}: stored arrays do not match the declared architecture")
    for name, shape, offset in arrays:
        count = int(np.prod(shape))
        values = np.frombuffer(blob, dtype=dt, count=count, offset=offset).reshape(shape)
        if params[name].shape != shape:
            raise ParseError(f"{path}: {name} has shape {shape}, expected {params[name].shape}")
        params[name][...] = values
    return model, config, meta
