import hashlib
import json
import logging
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from diskcache import Cache

logger = logging.getLogger(__name__)


class SpectrumCache:
    """Eigenpairs keyed by the operator's geometry and face coefficients."""

    def __init__(self, cache_dir: Path):
        cache_dir.mkdir(parents=True, exist_ok=True)
        self.cache = Cache(str(cache_dir / "spectra"))

    def build_key(self, operator, k: int, method: str) -> str:
        digest = hashlib.sha256()
        for faces in operator.face_coefficients:
            digest.update(np.ascontiguousarray(faces, dtype=np.float64).tobytes())
        payload = {
            "shape": list(operator.grid.shape),
            "lower": list(operator.grid.lower),
            "upper": list(operator.grid.upper),
            "interface_index": operator.interface_index,
            "faces": digest.hexdigest(),
            "k": int(k),
            "method": method,
        }
        blob = json.dumps(payload, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def get(self, key: str) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        value = self.cache.get(key)
        if value is None:
            return None
        values, vectors = value
        logger.info("Spectrum cache hit %s", key[:12])
        return np.asarray(values), np.asarray(vectors)

    def set(self, key: str, values: np.ndarray, vectors: np.ndarray) -> None:
        self.cache.set(key, (np.asarray(values), np.asarray(vectors)))

    def close(self) -> None:
        self.cache.close()
