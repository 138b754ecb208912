"""Mission provisioning: keychain generation, the keys file, and USS registration.

This stands in for the operator's phone app. The chain seed ``K_n`` is kept
in a mode-0600 sealed file and never written to the keys file or sent to the
USS; the transmitter receives ``K_0..K_{n-1}`` only.
"""

from __future__ import annotations

import logging
import os
import re
import secrets
import stat
from dataclasses import dataclass
from pathlib import Path

from . import tesla
from .tesla import ChainParams, KeyChain

log = logging.getLogger(__name__)

KEYS_MAGIC = "TBRD-KEYS v1"
_HEADER_FIELDS = ("operator_id", "uas_id", "t_int_ms", "d", "n", "t0_ms")
_HEX_KEY = re.compile(r"^[0-9a-f]{64}$")


class ProvisionError(ValueError):
    pass


class KeysFileError(ProvisionError):
    pass


def _check_id(value: str, what: str) -> None:
    if not value or len(value) > 20 or not value.isascii() or "\x00" in value or "\n" in value:
        raise ProvisionError(f"{what} must be 1-20 printable ASCII characters")


@dataclass(frozen=True)
class MissionPlan:
    operator_id: str
    uas_id: str
    start_ms: int
    end_ms: int
    t_int_ms: int = 1000
    d: int = 1

    def __post_init__(self):
        _check_id(self.operator_id, "operator_id")
        _check_id(self.uas_id, "uas_id")
        if self.end_ms <= self.start_ms:
            raise ProvisionError(f"mission end {self.end_ms} must be after start {self.start_ms}")
        if self.t_int_ms <= 0 or self.d < 1:
            raise ProvisionError("t_int_ms must be positive and d >= 1")

    @property
    def n(self) -> int:
        return tesla.mission_intervals(self.end_ms - self.start_ms, self.t_int_ms)


@dataclass(frozen=True)
class KeysFile:
    """Transmitter keys: ``K_0..K_{n-1}`` plus the mission parameters."""

    operator_id: str
    uas_id: str
    t_int_ms: int
    d: int
    n: int
    t0_ms: int
    keys: tuple[bytes, ...]

    def __post_init__(self):
        if len(self.keys) != self.n:
            raise KeysFileError(f"expected {self.n} keys, got {len(self.keys)}")

    @property
    def commitment(self) -> bytes:
        return self.keys[0]

    def params(self, t0_ms: int | None = None) -> ChainParams:
        return ChainParams(self.t_int_ms, self.d, self.n, self.t0_ms if t0_ms is None else t0_ms)

    def dumps(self) -> str:
        lines = [KEYS_MAGIC]
        lines += [f"{name}={getattr(self, name)}" for name in _HEADER_FIELDS]
        lines += [k.hex() for k in self.keys]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "KeysFile":
        lines = text.splitlines()
        if not lines or lines[0] != KEYS_MAGIC:
            raise KeysFileError("missing TBRD-KEYS v1 header")
        if len(lines) < 1 + len(_HEADER_FIELDS):
            raise KeysFileError("truncated header")
        header = {}
        for name, line in zip(_HEADER_FIELDS, lines[1:1 + len(_HEADER_FIELDS)]):
            key, sep, value = line.partition("=")
            if key != name or not sep:
                raise KeysFileError(f"expected '{name}=' line, got {line!r}")
            header[name] = value
        try:
            ints = {k: int(header[k]) for k in ("t_int_ms", "d", "n", "t0_ms")}
        except ValueError as exc:
            raise KeysFileError(f"bad numeric header: {exc}") from None
        key_lines = lines[1 + len(_HEADER_FIELDS):]
        for ln, line in enumerate(key_lines):
            if not _HEX_KEY.match(line):
                raise KeysFileError(f"key line {ln} is not 64 lowercase hex characters")
        keys = tuple(bytes.fromhex(line) for line in key_lines)
        kf = cls(header["operator_id"], header["uas_id"], keys=keys, **ints)
        for i in range(1, len(keys)):
            if tesla.sha256(keys[i]) != keys[i - 1]:
                raise KeysFileError(f"key {i} does not hash to key {i - 1}")
        return kf

    def write(self, path: str | os.PathLike) -> None:
        _write_private(Path(path), self.dumps().encode())

    @classmethod
    def read(cls, path: str | os.PathLike) -> "KeysFile":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class RegistrationRequest:
    operator_id: str
    uas_id: str
    start_ms: int
    end_ms: int
    k0: bytes
    t_int_ms: int
    d: int

    def to_dict(self) -> dict:
        return {"type": "register", "operator_id": self.operator_id, "uas_id": self.uas_id,
                "start_ms": self.start_ms, "end_ms": self.end_ms, "k0": self.k0.hex(),
                "t_int_ms": self.t_int_ms, "d": self.d}

    @classmethod
    def from_dict(cls, d: dict) -> "RegistrationRequest":
        return cls(d["operator_id"], d["uas_id"], int(d["start_ms"]), int(d["end_ms"]),
                   bytes.fromhex(d["k0"]), int(d["t_int_ms"]), int(d["d"]))


def plan_mission(plan: MissionPlan, seed: bytes | None = None
                 ) -> tuple[KeyChain, KeysFile, RegistrationRequest]:
    """Generate the mission keychain, transmitter keys file and USS request.

    ``seed`` fixes ``K_n`` for reproducible tests; otherwise it is drawn from
    the OS CSPRNG.
    """
    if seed is None:
        seed = secrets.token_bytes(tesla.KEY_LEN)
    chain = tesla.generate_chain(seed, ChainParams(plan.t_int_ms, plan.d, plan.n, 0))
    keys = KeysFile(plan.operator_id, plan.uas_id, plan.t_int_ms, plan.d, plan.n, 0,
                    chain.keys[:plan.n])
    request = RegistrationRequest(plan.operator_id, plan.uas_id, plan.start_ms, plan.end_ms,
                                  chain.commitment, plan.t_int_ms, plan.d)
    return chain, keys, request


def _write_private(path: Path, data: bytes) -> None:
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
    try:
        os.fchmod(fd, 0o600)
        os.write(fd, data)
    finally:
        os.close(fd)


def seal_seed(path: str | os.PathLike, seed: bytes) -> None:
    if len(seed) != tesla.KEY_LEN:
        raise ProvisionError("seed must be 32 bytes")
    _write_private(Path(path), seed)


def unseal_seed(path: str | os.PathLike) -> bytes:
    path = Path(path)
    mode = stat.S_IMODE(path.stat().st_mode)
    if mode & 0o077:
        raise ProvisionError(f"sealed seed {path} is accessible to other users (mode {mode:o})")
    seed = path.read_bytes()
    if len(seed) != tesla.KEY_LEN:
        raise ProvisionError(f"sealed seed {path} is not 32 bytes")
    return seed


def register_with_uss(request: RegistrationRequest, uss) -> str:
    """Send the registration to a USS client (or an in-process Registry)."""
    return uss.register(request.operator_id, request.uas_id, request.start_ms, request.end_ms,
                        request.k0, request.t_int_ms, request.d)


def report_start(uss, handle: str, t0_ms: int):
    return uss.start(handle, t0_ms)


def report_end(uss, handle: str, t_end_ms: int):
    return uss.end(handle, t_end_ms)


def revoke(uss, handle: str):
    return uss.revoke(handle)
