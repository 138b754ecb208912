"""TESLA keychain, MAC keys and the receiver-side timing checks.

Keys are generated backwards from a random seed ``K_n`` by repeated SHA-256,
so ``K_{i-1} = SHA-256(K_i)`` and ``K_0`` is the public commitment. Interval
``i`` covers wall time ``[t0 + (i-1)*T, t0 + i*T)``; interval 1 starts at the
first broadcast.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass

from . import kernels

KEY_LEN = 32
MAC_LEN = 32
MAC_KEY_LABEL = b"TBRD-MAC-KEY"

DEFAULT_MAX_SKEW_MS = 10


@dataclass(frozen=True)
class ChainParams:
    t_int_ms: int
    d: int
    n: int
    t0_ms: int = 0

    def __post_init__(self):
        if self.t_int_ms <= 0:
            raise ValueError(f"t_int_ms must be positive, got {self.t_int_ms}")
        if self.d < 1:
            raise ValueError(f"disclosure delay d must be >= 1, got {self.d}")
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")

    def interval_start(self, i: int) -> int:
        """Wall time (ms) at which interval ``i`` begins."""
        return self.t0_ms + (i - 1) * self.t_int_ms


@dataclass(frozen=True)
class KeyChain:
    params: ChainParams
    keys: tuple[bytes, ...]

    @property
    def commitment(self) -> bytes:
        return self.keys[0]

    @property
    def seed(self) -> bytes:
        return self.keys[-1]

    def __getitem__(self, i: int) -> bytes:
        return self.keys[i]

    def __len__(self) -> int:
        return len(self.keys)


@dataclass(frozen=True)
class MacKey:
    value: bytes

    def __post_init__(self):
        if len(self.value) != KEY_LEN:
            raise ValueError("MAC key must be 32 bytes")

    def __repr__(self) -> str:
        return "MacKey(<redacted>)"


def _check_key(k: bytes, what: str = "key") -> None:
    if not isinstance(k, (bytes, bytearray)) or len(k) != KEY_LEN:
        raise ValueError(f"{what} must be exactly {KEY_LEN} bytes")


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def generate_chain(seed: bytes, params: ChainParams) -> KeyChain:
    """Build ``K_0..K_n`` with ``K_n = seed``.

    Raises ValueError for a seed that is not 32 bytes.
    """
    _check_key(seed, "seed")
    keys = kernels.hash_chain(bytes(seed), params.n)
    return KeyChain(params=params, keys=tuple(keys))


def hash_forward(key: bytes, steps: int) -> bytes:
    """Apply SHA-256 ``steps`` times; ``hash_forward(K_j, j - i) == K_i``."""
    _check_key(key)
    return kernels.hash_forward(bytes(key), steps)


def derive_mac_key(k_i: bytes) -> MacKey:
    """The per-interval MAC key ``K'_i = HMAC-SHA-256(K_i, "TBRD-MAC-KEY")``.

    Keeping the MAC key distinct from the disclosed chain key means the value
    put on air never doubles as a MAC key.
    """
    _check_key(k_i)
    return MacKey(hmac.new(bytes(k_i), MAC_KEY_LABEL, hashlib.sha256).digest())


def compute_mac(mac_key: MacKey, payload: bytes) -> bytes:
    """Full 32-byte HMAC-SHA-256 of ``payload``; no truncation."""
    if not payload:
        raise ValueError("payload must be non-empty")
    return hmac.new(mac_key.value, payload, hashlib.sha256).digest()


def verify_commitment(disclosed_key: bytes, claimed_interval: int, k0: bytes) -> bool:
    """True iff hashing ``disclosed_key`` ``claimed_interval`` times yields ``k0``.

    Mismatches, including malformed keys, return False rather than raising.
    """
    if claimed_interval < 0:
        raise ValueError("claimed_interval must be >= 0")
    if len(disclosed_key) != KEY_LEN or len(k0) != KEY_LEN:
        return False
    return hmac.compare_digest(kernels.hash_forward(bytes(disclosed_key), claimed_interval), bytes(k0))


def interval_of(t_ms: int, params: ChainParams) -> int:
    if t_ms < params.t0_ms:
        raise ValueError(f"time {t_ms} precedes mission start {params.t0_ms}")
    return (t_ms - params.t0_ms) // params.t_int_ms + 1


def safety_condition(arrival_ms: int, claimed_interval: int, params: ChainParams,
                     max_skew_ms: int = DEFAULT_MAX_SKEW_MS) -> bool:
    """Could the sender still have been holding ``K_i`` secret when this arrived?

    The latest sender interval consistent with the receiver clock is computed
    with the skew bound added; the key is safe while that interval precedes
    ``i + d``, the interval in which ``K_i`` is disclosed.
    """
    if claimed_interval < 1:
        raise ValueError("claimed_interval must be >= 1")
    latest = (arrival_ms + max_skew_ms - params.t0_ms) // params.t_int_ms + 1
    return latest < claimed_interval + params.d


def paper_time_check(arrival_ms: int, claimed_interval: int, params: ChainParams) -> bool:
    """Back-dating check: subtract ``i`` intervals from the arrival time.

    The result must fall before the end of the first interval, i.e. the
    message cannot have been received later than one interval past its own.
    """
    if claimed_interval < 1:
        raise ValueError("claimed_interval must be >= 1")
    back_dated = arrival_ms - claimed_interval * params.t_int_ms
    return back_dated < params.t0_ms + params.t_int_ms


def mission_intervals(duration_ms: int, t_int_ms: int) -> int:
    """Number of intervals ``n`` for a flight of ``duration_ms``; rounds up."""
    if duration_ms <= 0:
        raise ValueError("mission duration must be positive")
    if t_int_ms <= 0:
        raise ValueError("t_int_ms must be positive")
    return -(-duration_ms // t_int_ms)
