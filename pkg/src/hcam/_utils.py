import hashlib
import json

import numpy as np


def config_hash(config: dict, length: int = 12) -> str:
    """Stable short hash of a JSON-serialisable mapping."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:length]


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
