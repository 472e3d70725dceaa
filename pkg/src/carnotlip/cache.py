"""
Caching system for calibration constants.

Provides simple JSON-based caching for values that are expensive to estimate
and reused across runs: the sampled diameter of the base cube of a mesh and
the Grushin axis proportionality constant.
"""

import json
import logging
import re
from pathlib import Path
from typing import Any, Dict, Optional

logger = logging.getLogger(__name__)


class CacheManager:
    """Manages local cache for calibration constants."""

    def __init__(self, cache_dir: str = "./carnotlip_cache"):
        """
        Initialize cache manager.

        Args:
            cache_dir: Directory for cache files
        """
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)

        self.constants_cache = self.cache_dir / "constants"
        self.constants_cache.mkdir(exist_ok=True)

        self._memo: Dict[str, float] = {}
        logger.info(f"Cache directory: {self.cache_dir}")

    @staticmethod
    def _file_name(key: str) -> str:
        return re.sub(r"[^A-Za-z0-9_.-]+", "_", key) + ".json"

    def get_constant(self, key: str) -> Optional[float]:
        """
        Get a cached constant.

        Args:
            key: Constant key, e.g. ``"diameter:heisenberg-1:seed0:n4096"``

        Returns:
            Cached value, or None if absent or unreadable
        """
        if key in self._memo:
            return self._memo[key]

        cache_file = self.constants_cache / self._file_name(key)
        if not cache_file.exists():
            return None

        try:
            with open(cache_file, 'r', encoding='utf-8') as f:
                record = json.load(f)
            value = float(record['value'])
        except Exception as e:
            logger.warning(f"Failed to load cached constant {key}: {e}")
            return None

        self._memo[key] = value
        return value

    def save_constant(
        self,
        key: str,
        value: float,
        meta: Optional[Dict[str, Any]] = None
    ) -> None:
        """
        Save a constant to cache.

        Args:
            key: Constant key
            value: Value to store
            meta: Optional provenance (sample count, seed, ...)
        """
        self._memo[key] = float(value)
        cache_file = self.constants_cache / self._file_name(key)
        record = {'key': key, 'value': float(value), 'meta': meta or {}}

        try:
            with open(cache_file, 'w', encoding='utf-8') as f:
                json.dump(record, f, indent=2, sort_keys=True)
            logger.debug(f"Saved constant {key} = {value!r}")
        except Exception as e:
            logger.error(f"Failed to save constant {key}: {e}")

    def clear_cache(self):
        """Clear all cache files."""
        import shutil
        try:
            shutil.rmtree(self.cache_dir)
            self.cache_dir.mkdir(parents=True, exist_ok=True)
            self.constants_cache.mkdir(exist_ok=True)
            self._memo.clear()
            logger.info("Cache cleared")
        except Exception as e:
            logger.error(f"Failed to clear cache: {e}")
