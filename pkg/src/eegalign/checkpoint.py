"""Single-file checkpoint archive: JSON index + concatenated tensor containers.

Layout: magic "NBCK", u32 version, u64 index length, index JSON, then one
standard tensor container blob per entry. Offsets in the index are relative
to the payload start. Round trips are bit-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .container import decode_container, encode_container
from .errors import FormatError

MAGIC = b"NBCK"
VERSION = 1


def save_checkpoint(path, state: dict[str, np.ndarray], config: dict,
                    meta: dict | None = None) -> None:
    names = sorted(state)
    blobs = [encode_container(np.ascontiguousarray(state[n])) for n in names]
    entries = []
    offset = 0
    for name, blob in zip(names, blobs):
        entries.append({"name": name, "offset": offset, "length": len(blob)})
        offset += len(blob)
    from .config import config_digest  # local import avoids a cycle
    index = {
        "version": VERSION,
        "config_digest": config_digest(config),
        "config": config,
        "meta": meta or {},
        "entries": entries,
    }
    index_bytes = json.dumps(index, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(index_bytes)))
        fh.write(index_bytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict, dict]:
    """Returns (state arrays, config dict, meta dict)."""
    blob = Path(path).read_bytes()
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise FormatError(f"not a checkpoint archive: {path}", offset=0)
    version, index_len = struct.unpack_from("<IQ", blob, 4)
    if version != VERSION:
        raise FormatError(f"unknown checkpoint version {version}", offset=4)
    index_end = 16 + index_len
    if len(blob) < index_end:
        raise FormatError("truncated checkpoint index", offset=len(blob))
    index = json.loads(blob[16:index_end])
    state = {}
    for entry in index["entries"]:
        start = index_end + entry["offset"]
        end = start + entry["length"]
        if end > len(blob):
            raise FormatError(f"truncated tensor {entry['name']!r}", offset=len(blob))
        state[entry["name"]] = decode_container(blob[start:end])
    return state, index["config"], index.get("meta", {})
