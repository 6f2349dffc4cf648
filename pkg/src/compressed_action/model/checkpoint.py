"""Checkpoint files: structured-text header plus tensor records.

Layout (little-endian)::

    magic "MCKP", u32 header length, header (UTF-8 ``key=value`` lines),
    u32 record count, per record: u16 path length, path, MTEN tensor record
"""

import logging
import struct
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

from ..config.manager import format_structured_text, parse_structured_text
from ..errors import StreamFormatError
from ..tensor.serialize import tensor_from_bytes, tensor_to_bytes
from .config import ModelConfig
from .network import TwoStreamNetwork, build_model

logger = logging.getLogger(__name__)

MAGIC = b"MCKP"
_U32 = struct.Struct("<I")
_U16 = struct.Struct("<H")
MODEL_PREFIX = "model."


def checkpoint_to_bytes(model: TwoStreamNetwork, extra: Optional[Dict[str, Any]] = None) -> bytes:
    header = {MODEL_PREFIX + key: value for key, value in model.cfg.to_text().items()}
    header.update(extra or {})
    text = format_structured_text(header).encode("utf-8")
    parts = [MAGIC, _U32.pack(len(text)), text, _U32.pack(len(model.params))]
    for path, tensor in model.params.items():
        encoded = path.encode("utf-8")
        parts.extend([_U16.pack(len(encoded)), encoded, tensor_to_bytes(tensor)])
    return b"".join(parts)


def _take(buffer: bytes, offset: int, size: int, what: str) -> bytes:
    if offset + size > len(buffer):
        raise StreamFormatError(f"truncated checkpoint {what}", offset=offset)
    return buffer[offset : offset + size]


def checkpoint_from_bytes(buffer: bytes) -> Tuple[TwoStreamNetwork, Dict[str, Any]]:
    """Rebuild the network from its header and overwrite every parameter."""
    if _take(buffer, 0, 4, "magic") != MAGIC:
        raise StreamFormatError(f"bad checkpoint magic {buffer[:4]!r}", offset=0)
    (length,) = _U32.unpack(_take(buffer, 4, 4, "header length"))
    try:
        header = parse_structured_text(_take(buffer, 8, length, "header").decode("utf-8"), "checkpoint header")
    except UnicodeDecodeError as e:
        raise StreamFormatError(f"checkpoint header is not UTF-8: {e}", offset=8) from e
    offset = 8 + length

    flat = {key[len(MODEL_PREFIX) :]: value for key, value in header.items() if key.startswith(MODEL_PREFIX)}
    extra = {key: value for key, value in header.items() if not key.startswith(MODEL_PREFIX)}
    model = build_model(ModelConfig.from_text(flat))

    (count,) = _U32.unpack(_take(buffer, offset, 4, "record count"))
    offset += 4
    state = {}
    for _ in range(count):
        (size,) = _U16.unpack(_take(buffer, offset, 2, "path length"))
        offset += 2
        path = _take(buffer, offset, size, "path").decode("utf-8")
        offset += size
        array, offset = tensor_from_bytes(buffer, offset)
        state[path] = array
    if offset != len(buffer):
        raise StreamFormatError("trailing bytes after last checkpoint record", offset=offset)
    model.params.load_state(state, strict=True)
    return model, extra


def save_checkpoint(model: TwoStreamNetwork, path: Union[str, Path], extra: Optional[Dict[str, Any]] = None) -> None:
    Path(path).write_bytes(checkpoint_to_bytes(model, extra))
    logger.info("checkpoint written to %s (%d parameters)", path, model.params.count())


def load_checkpoint(path: Union[str, Path]) -> Tuple[TwoStreamNetwork, Dict[str, Any]]:
    return checkpoint_from_bytes(Path(path).read_bytes())


def read_checkpoint_header(path: Union[str, Path]) -> Dict[str, Any]:
    """Header keys only, without building the model."""
    buffer = Path(path).read_bytes()
    if _take(buffer, 0, 4, "magic") != MAGIC:
        raise StreamFormatError(f"bad checkpoint magic {buffer[:4]!r}", offset=0)
    (length,) = _U32.unpack(_take(buffer, 4, 4, "header length"))
    return parse_structured_text(_take(buffer, 8, length, "header").decode("utf-8"), "checkpoint header")
