"""Word-embedding table loader for the compactness metric.

Supports the two common interchange formats: flat text with one
``word v_1 ... v_dim`` line per word (an optional leading
``vocab_size dim`` header line is skipped), and the packed binary layout
(header line, then per word: the word bytes, a space, ``dim`` little-
endian float32 values). The format is auto-detected.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DataError


def load_embeddings(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    try:
        text = blob.decode("utf-8")
    except UnicodeDecodeError:
        return _parse_binary(blob, path)
    return _parse_text(text, path)


def _parse_text(text: str, path) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    dim = None
    lines = text.splitlines()
    start = 0
    if lines:
        head = lines[0].split()
        if len(head) == 2 and all(t.isdigit() for t in head):
            start = 1  # vocab-size/dim header
    for lineno, line in enumerate(lines[start:], start=start + 1):
        if not line.strip():
            continue
        parts = line.rstrip().split(" ")
        if len(parts) < 2:
            raise DataError(f"{path}:{lineno}: expected 'word v_1 ... v_dim'")
        word = parts[0]
        try:
            vec = np.asarray([float(v) for v in parts[1:]], dtype=np.float64)
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric vector component")
        if dim is None:
            dim = vec.size
        elif vec.size != dim:
            raise DataError(
                f"{path}:{lineno}: vector has {vec.size} components, expected {dim}"
            )
        out[word] = vec
    if not out:
        raise DataError(f"{path}: no embeddings found")
    return out


def _parse_binary(blob: bytes, path) -> dict[str, np.ndarray]:
    nl = blob.find(b"\n")
    if nl < 0:
        raise DataError(f"{path}: missing binary header line")
    try:
        n_words, dim = (int(t) for t in blob[:nl].split())
    except ValueError:
        raise DataError(f"{path}: binary header must be 'vocab_size dim'")
    out: dict[str, np.ndarray] = {}
    pos = nl + 1
    vec_bytes = 4 * dim
    for _ in range(n_words):
        while pos < len(blob) and blob[pos : pos + 1] in (b"\n", b" "):
            pos += 1
        sp = blob.find(b" ", pos)
        if sp < 0 or sp + vec_bytes > len(blob):
            raise DataError(f"{path}: truncated binary record near byte {pos}")
        word = blob[pos:sp].decode("utf-8", errors="replace")
        vec = np.frombuffer(blob, dtype="<f4", count=dim, offset=sp + 1).astype(np.float64)
        out[word] = vec
        pos = sp + 1 + vec_bytes
    if len(out) != n_words:
        raise DataError(f"{path}: header promised {n_words} words, read {len(out)}")
    return out
