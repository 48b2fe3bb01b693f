import hashlib
import json
import platform

import numpy as np
import scipy

from . import __version__


def sha256(data: bytes) -> str:
    """Returns the SHA-256 hash of the data as a hex string."""
    return hashlib.sha256(data).hexdigest()


def canonical_json(document) -> bytes:
    """Key-sorted compact JSON, the byte form every hash is taken over."""
    return json.dumps(document, sort_keys=True, separators=(",", ":")).encode()


def document_hash(document) -> str:
    return sha256(canonical_json(document))


def versions() -> dict:
    return {
        "parabolic_vi": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def stamp(config_hash: str, seed: int) -> dict:
    """Provenance block attached to every run result."""
    return {"config_hash": config_hash, "seed": seed, "versions": versions()}
