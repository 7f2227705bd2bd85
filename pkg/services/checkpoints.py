"""
Formato de checkpoint (caja negra y selector comparten esquema):

    bytes 0..3    magic b"CXCK"
    bytes 4..7    largo del encabezado JSON (uint32 big-endian)
    encabezado    JSON utf-8: format_version, kind ("blackbox" | "selector"),
                  descriptor, num_classes, input_shape, [grid, k], config,
                  tensors=[{name, shape}], payload_bytes
    payload       arreglos float32 little-endian concatenados en el orden de `tensors`
"""
from __future__ import annotations

import json
import logging
import struct
from pathlib import Path

import numpy as np
import torch

from core.errors import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"CXCK"
FORMAT_VERSION = 1


def _write(path: Path, header: dict, state: dict[str, torch.Tensor]) -> Path:
    arrays = []
    tensors = []
    for name, t in state.items():
        a = t.detach().cpu().to(torch.float32).contiguous().numpy().astype("<f4", copy=False)
        arrays.append(a.tobytes())
        tensors.append({"name": name, "shape": list(a.shape)})
    payload = b"".join(arrays)
    header = {**header, "format_version": FORMAT_VERSION, "tensors": tensors, "payload_bytes": len(payload)}
    raw_header = json.dumps(header, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack(">I", len(raw_header)) + raw_header + payload)
    logger.info("checkpoint written: %s (%d bytes payload)", path, len(payload))
    return path


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, torch.Tensor]]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (hlen,) = struct.unpack(">I", raw[4:8])
    if len(raw) < 8 + hlen:
        raise CheckpointError(f"{path}: truncated header: expected {8 + hlen} bytes, found {len(raw)}")
    try:
        header = json.loads(raw[8:8 + hlen].decode("utf-8"))
    except ValueError as e:
        raise CheckpointError(f"{path}: unreadable header ({e})") from e
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format_version {header.get('format_version')}")

    payload = raw[8 + hlen:]
    expected = int(header["payload_bytes"])
    if len(payload) != expected:
        raise CheckpointError(
            f"{path}: payload size mismatch: expected {expected} bytes, found {len(payload)}"
        )
    state: dict[str, torch.Tensor] = {}
    offset = 0
    for spec in header["tensors"]:
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(spec["shape"])
        state[spec["name"]] = torch.from_numpy(arr.copy())
        offset += 4 * count
    return header, state


def _load_state(model: torch.nn.Module, state: dict[str, torch.Tensor], path: Path) -> None:
    own = model.state_dict()
    if set(own) != set(state):
        raise CheckpointError(f"{path}: tensor names do not match the descriptor")
    for name, t in state.items():
        if tuple(own[name].shape) != tuple(t.shape):
            raise CheckpointError(
                f"{path}: tensor {name} has shape {tuple(t.shape)}, descriptor expects {tuple(own[name].shape)}"
            )
    model.load_state_dict(state)


def save_checkpoint(model, path: str | Path, config: dict | None = None) -> Path:
    header = {
        "kind": model.kind,
        "descriptor": model.descriptor,
        "input_shape": list(model.input_shape),
        "config": config or {},
    }
    if model.kind == "blackbox":
        header["num_classes"] = model.num_classes
    else:
        header["grid"] = model.grid.to_dict()
        header["k"] = model.k
        header["hidden_channels"] = model.hidden_channels
    return _write(Path(path), header, model.state_dict())


def load_checkpoint(path: str | Path, input_shape=None, kind: str | None = None):
    """
    Reconstruye ClassifierModel o SelectorModel según el tag `kind` del encabezado.
    `input_shape`, si se pasa, debe coincidir exactamente (no hay reshape silencioso).
    """
    from blackbox import ClassifierModel
    from features.patching import PatchGrid
    from selector import SelectorModel

    path = Path(path)
    header, state = read_checkpoint(path)
    if kind is not None and header.get("kind") != kind:
        raise CheckpointError(f"{path}: expected a {kind} checkpoint, found {header.get('kind')!r}")
    stored_shape = tuple(header["input_shape"])
    if input_shape is not None and tuple(input_shape) != stored_shape:
        raise CheckpointError(f"{path}: input_shape {stored_shape} does not match expected {tuple(input_shape)}")

    if header["kind"] == "blackbox":
        model = ClassifierModel(header["descriptor"], header["num_classes"], stored_shape)
    elif header["kind"] == "selector":
        grid = PatchGrid.from_dict(header["grid"])
        model = SelectorModel(grid, header["k"], hidden_channels=header.get("hidden_channels", 16))
    else:
        raise CheckpointError(f"{path}: unknown checkpoint kind {header.get('kind')!r}")
    _load_state(model, state, path)
    model.config_echo = header.get("config", {})
    model.eval()
    return model
