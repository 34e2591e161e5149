"""Content-addressed cache for solved fields and measures.

A key is the SHA-256 of a canonical JSON rendering of everything a solve
depends on (operator spec, domain spec, pole or data spec, resolution) plus
the code version.  Each entry is an ``.npy`` file with a ``.sha256``
sidecar; a checksum mismatch is reported and treated as a miss.
"""
from __future__ import annotations

import hashlib
import io
import json
import logging
import os
from pathlib import Path

import numpy as np

from .errors import CacheCorrupt

log = logging.getLogger(__name__)


def code_version() -> str:
    """Short hash over the package sources, so a code change invalidates old entries."""
    root = Path(__file__).parent
    h = hashlib.sha256()
    for p in sorted(root.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


def _canonical(obj) -> str:
    def enc(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.integer,)):
            return int(o)
        if isinstance(o, (np.floating,)):
            return float(o)
        raise TypeError(f"cannot hash {type(o).__name__}")

    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=enc)


def cache_key(spec: dict) -> str:
    return hashlib.sha256(_canonical({"spec": spec, "code": code_version()}).encode()).hexdigest()


class SolveCache:
    """Single-writer, multi-reader directory of cached arrays."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0

    def _paths(self, key: str):
        return self.root / f"{key}.npy", self.root / f"{key}.sha256"

    def _read(self, key: str) -> np.ndarray | None:
        data_p, sum_p = self._paths(key)
        if not data_p.exists():
            return None
        raw = data_p.read_bytes()
        want = sum_p.read_text().strip() if sum_p.exists() else ""
        if hashlib.sha256(raw).hexdigest() != want:
            raise CacheCorrupt(f"checksum mismatch for cache entry {key}")
        return np.load(io.BytesIO(raw), allow_pickle=False)

    def lookup(self, spec: dict) -> np.ndarray | None:
        """The cached array for ``spec``, or None on a miss (including corrupt entries)."""
        key = cache_key(spec)
        try:
            arr = self._read(key)
        except CacheCorrupt as e:
            log.warning("%s; treating as a miss", e)
            arr = None
        if arr is None:
            self.misses += 1
        else:
            self.hits += 1
        return arr

    def store(self, spec: dict, arr: np.ndarray) -> str:
        key = cache_key(spec)
        buf = io.BytesIO()
        np.save(buf, np.asarray(arr), allow_pickle=False)
        raw = buf.getvalue()
        data_p, sum_p = self._paths(key)
        tmp = data_p.with_suffix(f".tmp{os.getpid()}")
        tmp.write_bytes(raw)
        os.replace(tmp, data_p)
        sum_p.write_text(hashlib.sha256(raw).hexdigest() + "\n")
        return key

    def fetch(self, spec: dict, compute) -> np.ndarray:
        """Return the cached array or compute, store and return it."""
        arr = self.lookup(spec)
        if arr is None:
            arr = np.asarray(compute())
            self.store(spec, arr)
        return arr
