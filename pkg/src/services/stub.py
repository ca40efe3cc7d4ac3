"""
Deterministic stand-ins for a chat model and a sentence encoder.

Served over HTTP by app.py for dry runs, and used in-process by the tests.
"""
import hashlib
import re
from typing import Any, Dict, List

import numpy as np

from ..utils.hashing import canonical_json

SENTENCES = [
    "A sedan pulls into the parking lot.",
    "A person opens the driver side door.",
    "The vehicle slowly turns to the left.",
    "Someone loads a box into the trunk.",
    "A car stops near the curb.",
    "The truck reverses out of the space.",
    "A person walks away from the vehicle.",
    "The trunk lid is closed.",
    "A van starts moving forward.",
    "Two people stand next to a parked car.",
    "The passenger gets out of the car.",
    "The vehicle turns right at the intersection.",
]

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def _digest(obj: Any) -> bytes:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).digest()


def stub_completion(messages: List[Dict[str, Any]]) -> str:
    """Two to four sentences picked by a digest of the whole request."""
    d = _digest(messages)
    n = 2 + d[0] % 3
    return " ".join(SENTENCES[d[1 + i] % len(SENTENCES)] for i in range(n))


def stub_embedding(text: str, dim: int) -> List[float]:
    """Signed hashed bag of words; never the zero vector."""
    vec = np.zeros(dim, dtype=np.float64)
    for token in _TOKEN_RE.findall(text.lower()):
        h = hashlib.sha256(token.encode("utf-8")).digest()
        vec[int.from_bytes(h[:4], "little") % dim] += 1.0 if h[4] & 1 else -1.0
    if not np.any(vec):
        vec[0] = 1.0
    return vec.tolist()
