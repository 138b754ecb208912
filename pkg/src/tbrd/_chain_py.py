"""Pure-Python hash-chain loops, used when the compiled extension is unavailable."""

from hashlib import sha256

KEY_LEN = 32


def hash_forward(key: bytes, steps: int) -> bytes:
    if len(key) != KEY_LEN:
        raise ValueError("key must be 32 bytes")
    if steps < 0:
        raise ValueError("steps must be non-negative")
    for _ in range(steps):
        key = sha256(key).digest()
    return key


def hash_chain(seed: bytes, n: int) -> list[bytes]:
    """Return [K_0, ..., K_n] with K_n = seed."""
    if len(seed) != KEY_LEN:
        raise ValueError("seed must be 32 bytes")
    if n < 1:
        raise ValueError("n must be >= 1")
    keys = [seed]
    k = seed
    for _ in range(n):
        k = sha256(k).digest()
        keys.append(k)
    keys.reverse()
    return keys
