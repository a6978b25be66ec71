# src/store.py
"""Evaluation cache: KeyReports keyed by a hash of (config, mode, seed)."""

from __future__ import annotations

import logging
from typing import Any, Dict, Optional

from diskcache import Cache

log = logging.getLogger(__name__)


class EvaluationCache:
    """In-memory by default; persisted with diskcache when a directory is given."""

    def __init__(self, directory: Optional[str] = None, ttl_seconds: Optional[int] = None):
        self._disk = Cache(directory=directory) if directory else None
        self._memory: Dict[str, Any] = {}
        self.ttl_seconds = ttl_seconds
        self.hits = 0

    def get(self, key: str) -> Any:
        if key in self._memory:
            self.hits += 1
            return self._memory[key]
        if self._disk is not None:
            value = self._disk.get(key)
            if value is not None:
                self.hits += 1
                self._memory[key] = value
                return value
        return None

    def set(self, key: str, value: Any) -> None:
        self._memory[key] = value
        if self._disk is not None:
            self._disk.set(key, value, expire=self.ttl_seconds)

    def close(self) -> None:
        if self._disk is not None:
            log.debug("closing evaluation cache (%d hits)", self.hits)
            self._disk.close()

    def __enter__(self) -> "EvaluationCache":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
