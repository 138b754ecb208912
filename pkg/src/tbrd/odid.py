"""Remote ID message codec.

Every message is 25 bytes. Byte 0 carries the message type in the high
nibble and the protocol version (2) in the low nibble. Multi-byte integers are
little-endian, except the interval counter inside the authentication bundle,
which is big-endian. Fields this codec does not model are written as zero and
ignored on decode. ``docs/wire-format.md`` has the byte tables.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Union

PROTOCOL_VERSION = 2
MSG_SIZE = 25
ID_LEN = 20

AUTH_BUNDLE_LEN = 68
AUTH_PAYLOAD_LEN = 4 + 4 * MSG_SIZE
AUTH_PAGES = 4
AUTH_PAGE0_DATA = 17
AUTH_PAGEN_DATA = 23
# total auth/signature data the Remote ID standard allows per message set
AUTH_DATA_CAP = 255
AUTH_TYPE_TBRD = 0x5

PACK_HEADER_LEN = 3
PACK_COUNT_AUTH = 8
PACK_COUNT_PLAIN = 4
PACK_LEN = PACK_HEADER_LEN + PACK_COUNT_AUTH * MSG_SIZE
PACK_LEN_PLAIN = PACK_HEADER_LEN + PACK_COUNT_PLAIN * MSG_SIZE

LATLON_SCALE = 10_000_000
ALT_OFFSET_M = 1000.0
ALT_STEP_M = 0.5
VSPEED_STEP = 0.5
VSPEED_MAX = 62.0
SPEED_STEP_LOW = 0.25
SPEED_STEP_HIGH = 0.75
SPEED_LOW_MAX = 255 * SPEED_STEP_LOW  # 63.75
SPEED_MAX = SPEED_LOW_MAX + 254 * SPEED_STEP_HIGH  # 254.25
TIMESTAMP_DS_MAX = 35999
# Remote ID epoch: 2019-01-01T00:00:00Z
ODID_EPOCH_S = 1546300800


class MsgType(IntEnum):
    BASIC_ID = 0x0
    LOCATION = 0x1
    AUTH = 0x2
    SYSTEM = 0x4
    OPERATOR_ID = 0x5
    PACK = 0xF


class IdType(IntEnum):
    SERIAL = 1
    CAA_ASSIGNED = 2


class UaType(IntEnum):
    NONE = 0
    AEROPLANE = 1
    MULTIROTOR = 2
    GYROPLANE = 3
    HYBRID_LIFT = 4
    ORNITHOPTER = 5
    GLIDER = 6
    KITE = 7


class Status(IntEnum):
    GROUND = 1
    AIRBORNE = 2


class OperatorLocationType(IntEnum):
    TAKEOFF = 0
    LIVE_GNSS = 1
    FIXED = 2


class CodecError(ValueError):
    """Base class for encode/decode failures."""


class TruncatedFrame(CodecError):
    pass


class UnknownMessageType(CodecError):
    pass


class FieldRangeError(CodecError):
    pass


class AuthReassemblyError(CodecError):
    pass


class PackError(CodecError):
    pass


def _header(t: MsgType) -> int:
    return (int(t) << 4) | PROTOCOL_VERSION


def _enc_id(s: str, what: str) -> bytes:
    try:
        raw = s.encode("ascii")
    except UnicodeEncodeError:
        raise FieldRangeError(f"{what} must be ASCII") from None
    if len(raw) > ID_LEN:
        raise FieldRangeError(f"{what} longer than {ID_LEN} bytes")
    if b"\x00" in raw:
        raise FieldRangeError(f"{what} must not contain NUL")
    return raw.ljust(ID_LEN, b"\x00")


def _dec_id(raw: bytes) -> str:
    return raw.rstrip(b"\x00").decode("ascii", errors="replace")


def _enc_latlon(lat: float, lon: float) -> bytes:
    if not (-90.0 <= lat <= 90.0):
        raise FieldRangeError(f"latitude {lat} out of range")
    if not (-180.0 <= lon <= 180.0):
        raise FieldRangeError(f"longitude {lon} out of range")
    return struct.pack("<ii", round(lat * LATLON_SCALE), round(lon * LATLON_SCALE))


def _dec_latlon(raw: bytes) -> tuple[float, float]:
    lat, lon = struct.unpack("<ii", raw)
    if abs(lat) > 90 * LATLON_SCALE or abs(lon) > 180 * LATLON_SCALE:
        raise FieldRangeError("encoded latitude/longitude out of range")
    return lat / LATLON_SCALE, lon / LATLON_SCALE


def _finite(name: str, v: float) -> None:
    if not math.isfinite(v):
        raise FieldRangeError(f"{name} must be finite")


@dataclass(frozen=True)
class BasicIdMsg:
    uas_id: str
    id_type: IdType = IdType.SERIAL
    ua_type: UaType = UaType.MULTIROTOR

    def encode(self) -> bytes:
        if self.id_type not in IdType.__members__.values():
            raise FieldRangeError(f"bad id_type {self.id_type}")
        if not 0 <= int(self.ua_type) <= 15:
            raise FieldRangeError(f"bad ua_type {self.ua_type}")
        out = bytes([_header(MsgType.BASIC_ID), (int(self.id_type) << 4) | int(self.ua_type)])
        out += _enc_id(self.uas_id, "uas_id")
        return out.ljust(MSG_SIZE, b"\x00")

    @classmethod
    def decode(cls, raw: bytes) -> "BasicIdMsg":
        try:
            id_type = IdType(raw[1] >> 4)
            ua_type = UaType(raw[1] & 0x0F)
        except ValueError as exc:
            raise FieldRangeError(str(exc)) from None
        return cls(uas_id=_dec_id(raw[2:22]), id_type=id_type, ua_type=ua_type)


def _enc_speed(speed: float) -> tuple[int, int]:
    if speed <= SPEED_LOW_MAX:
        return 0, round(speed / SPEED_STEP_LOW)
    return 1, min(254, round((speed - SPEED_LOW_MAX) / SPEED_STEP_HIGH))


def _dec_speed(mult: int, raw: int) -> float:
    if mult:
        return raw * SPEED_STEP_HIGH + SPEED_LOW_MAX
    return raw * SPEED_STEP_LOW


@dataclass(frozen=True)
class LocationMsg:
    lat_deg: float
    lon_deg: float
    alt_m: float = 0.0
    speed_mps: float = 0.0
    direction_deg: int = 0
    vspeed_mps: float = 0.0
    status: Status = Status.AIRBORNE
    timestamp_ds: int = 0

    def _validate(self) -> None:
        for name in ("lat_deg", "lon_deg", "alt_m", "speed_mps", "vspeed_mps"):
            _finite(name, getattr(self, name))
        if not 0 <= round(self.direction_deg) <= 359:
            raise FieldRangeError(f"direction {self.direction_deg} out of 0..359")
        if not 0.0 <= self.speed_mps <= SPEED_MAX:
            raise FieldRangeError(f"speed {self.speed_mps} out of 0..{SPEED_MAX}")
        if not -VSPEED_MAX <= self.vspeed_mps <= VSPEED_MAX:
            raise FieldRangeError(f"vertical speed {self.vspeed_mps} out of range")
        if not -ALT_OFFSET_M <= self.alt_m <= 65535 * ALT_STEP_M - ALT_OFFSET_M:
            raise FieldRangeError(f"altitude {self.alt_m} out of range")
        if not 0 <= self.timestamp_ds <= TIMESTAMP_DS_MAX:
            raise FieldRangeError(f"timestamp {self.timestamp_ds} out of 0..{TIMESTAMP_DS_MAX}")
        if self.status not in Status.__members__.values():
            raise FieldRangeError(f"bad status {self.status}")

    def encode(self) -> bytes:
        self._validate()
        direction = int(round(self.direction_deg))
        ew = 1 if direction >= 180 else 0
        mult, speed = _enc_speed(self.speed_mps)
        flags = (int(self.status) << 4) | (ew << 1) | mult
        out = struct.pack(
            "<BBBBb", _header(MsgType.LOCATION), flags, direction - 180 * ew, speed,
            round(self.vspeed_mps / VSPEED_STEP),
        )
        out += _enc_latlon(self.lat_deg, self.lon_deg)
        out += b"\x00\x00"  # pressure altitude: not modelled
        out += struct.pack("<H", round((self.alt_m + ALT_OFFSET_M) / ALT_STEP_M))
        out += bytes(4)  # height, accuracies
        out += struct.pack("<H", self.timestamp_ds)
        return out.ljust(MSG_SIZE, b"\x00")

    @classmethod
    def decode(cls, raw: bytes) -> "LocationMsg":
        flags, direction, speed, vspeed = struct.unpack_from("<BBBb", raw, 1)
        lat, lon = _dec_latlon(raw[5:13])
        (alt,) = struct.unpack_from("<H", raw, 15)
        (ts,) = struct.unpack_from("<H", raw, 21)
        try:
            status = Status(flags >> 4)
        except ValueError as exc:
            raise FieldRangeError(str(exc)) from None
        msg = cls(
            lat_deg=lat,
            lon_deg=lon,
            alt_m=alt * ALT_STEP_M - ALT_OFFSET_M,
            speed_mps=_dec_speed(flags & 0x01, speed),
            direction_deg=direction + (180 if flags & 0x02 else 0),
            vspeed_mps=vspeed * VSPEED_STEP,
            status=status,
            timestamp_ds=ts,
        )
        if direction > 179:
            raise FieldRangeError(f"encoded direction {direction} out of 0..179")
        msg._validate()
        return msg

    def quantized(self) -> "LocationMsg":
        """The value this message decodes to after an encode round trip."""
        return LocationMsg.decode(self.encode())


@dataclass(frozen=True)
class SystemMsg:
    operator_lat_deg: float
    operator_lon_deg: float
    operator_location_type: OperatorLocationType = OperatorLocationType.TAKEOFF

    def encode(self) -> bytes:
        _finite("operator_lat_deg", self.operator_lat_deg)
        _finite("operator_lon_deg", self.operator_lon_deg)
        if self.operator_location_type not in OperatorLocationType.__members__.values():
            raise FieldRangeError(f"bad operator location type {self.operator_location_type}")
        out = bytes([_header(MsgType.SYSTEM), int(self.operator_location_type)])
        out += _enc_latlon(self.operator_lat_deg, self.operator_lon_deg)
        return out.ljust(MSG_SIZE, b"\x00")

    @classmethod
    def decode(cls, raw: bytes) -> "SystemMsg":
        lat, lon = _dec_latlon(raw[2:10])
        try:
            loc_type = OperatorLocationType(raw[1] & 0x03)
        except ValueError as exc:
            raise FieldRangeError(str(exc)) from None
        return cls(operator_lat_deg=lat, operator_lon_deg=lon, operator_location_type=loc_type)


@dataclass(frozen=True)
class OperatorIdMsg:
    operator_id: str

    def encode(self) -> bytes:
        out = bytes([_header(MsgType.OPERATOR_ID), 0]) + _enc_id(self.operator_id, "operator_id")
        return out.ljust(MSG_SIZE, b"\x00")

    @classmethod
    def decode(cls, raw: bytes) -> "OperatorIdMsg":
        return cls(operator_id=_dec_id(raw[2:22]))


@dataclass(frozen=True)
class AuthPageMsg:
    """One 25-byte authentication page.

    Page 0 also carries the last page index, the total bundle length and a
    timestamp (seconds since 2019-01-01 UTC); later pages are data only.
    """

    page_index: int
    data: bytes
    auth_type: int = AUTH_TYPE_TBRD
    last_page_index: int = 0
    length: int = 0
    timestamp: int = 0

    @property
    def capacity(self) -> int:
        return AUTH_PAGE0_DATA if self.page_index == 0 else AUTH_PAGEN_DATA

    def encode(self) -> bytes:
        if not 0 <= self.page_index <= 15:
            raise FieldRangeError(f"page index {self.page_index} out of range")
        if not 0 <= self.auth_type <= 15:
            raise FieldRangeError(f"auth type {self.auth_type} out of range")
        if len(self.data) > self.capacity:
            raise FieldRangeError(f"page {self.page_index} data exceeds {self.capacity} bytes")
        out = bytes([_header(MsgType.AUTH), (self.auth_type << 4) | self.page_index])
        if self.page_index == 0:
            if not 0 <= self.length <= AUTH_DATA_CAP or not 0 <= self.last_page_index <= 15:
                raise FieldRangeError("bad page-0 header")
            out += struct.pack("<BBI", self.last_page_index, self.length, self.timestamp)
        return (out + self.data.ljust(self.capacity, b"\x00")).ljust(MSG_SIZE, b"\x00")

    @classmethod
    def decode(cls, raw: bytes) -> "AuthPageMsg":
        auth_type, page = raw[1] >> 4, raw[1] & 0x0F
        if page == 0:
            last, length, ts = struct.unpack_from("<BBI", raw, 2)
            return cls(page_index=0, data=bytes(raw[8:25]), auth_type=auth_type,
                       last_page_index=last, length=length, timestamp=ts)
        return cls(page_index=page, data=bytes(raw[2:25]), auth_type=auth_type)


Message = Union[BasicIdMsg, LocationMsg, AuthPageMsg, SystemMsg, OperatorIdMsg]

_DECODERS = {
    MsgType.BASIC_ID: BasicIdMsg.decode,
    MsgType.LOCATION: LocationMsg.decode,
    MsgType.AUTH: AuthPageMsg.decode,
    MsgType.SYSTEM: SystemMsg.decode,
    MsgType.OPERATOR_ID: OperatorIdMsg.decode,
}


def encode_frame(msg: Message) -> bytes:
    """Encode any typed message to its 25-byte frame."""
    out = msg.encode()
    assert len(out) == MSG_SIZE
    return out


def frame_type(raw: bytes) -> int:
    if len(raw) < 1:
        raise TruncatedFrame("empty frame")
    return raw[0] >> 4


def decode_frame(raw: bytes) -> Message:
    if len(raw) != MSG_SIZE:
        raise TruncatedFrame(f"frame is {len(raw)} bytes, expected {MSG_SIZE}")
    t = raw[0] >> 4
    try:
        decoder = _DECODERS[MsgType(t)]
    except (ValueError, KeyError):
        raise UnknownMessageType(f"unknown message type 0x{t:X}") from None
    return decoder(bytes(raw))


@dataclass(frozen=True)
class AuthBundle:
    """Interval counter, MAC and the disclosed key ``K_{i-d}``."""

    interval: int
    mac: bytes
    disclosed_key: bytes

    def to_bytes(self) -> bytes:
        if not 0 <= self.interval < 2**32:
            raise FieldRangeError("interval counter out of 32-bit range")
        if len(self.mac) != 32 or len(self.disclosed_key) != 32:
            raise FieldRangeError("mac and disclosed key must be 32 bytes")
        return struct.pack(">I", self.interval) + self.mac + self.disclosed_key

    @classmethod
    def from_bytes(cls, raw: bytes) -> "AuthBundle":
        if len(raw) != AUTH_BUNDLE_LEN:
            raise AuthReassemblyError(f"bundle is {len(raw)} bytes, expected {AUTH_BUNDLE_LEN}")
        (i,) = struct.unpack_from(">I", raw)
        return cls(interval=i, mac=bytes(raw[4:36]), disclosed_key=bytes(raw[36:68]))


def build_auth_payload(i: int, basic: BasicIdMsg, loc: LocationMsg, sys: SystemMsg,
                       op: OperatorIdMsg) -> bytes:
    """The 104 bytes covered by the MAC: counter then the four data frames."""
    if not 1 <= i < 2**32:
        raise FieldRangeError(f"interval counter {i} out of range")
    out = struct.pack(">I", i) + encode_frame(basic) + encode_frame(loc) + encode_frame(sys) + encode_frame(op)
    assert len(out) == AUTH_PAYLOAD_LEN
    return out


def paginate_auth(bundle: AuthBundle, timestamp: int = 0) -> tuple[AuthPageMsg, ...]:
    raw = bundle.to_bytes()
    pages = [AuthPageMsg(page_index=0, data=raw[:AUTH_PAGE0_DATA], last_page_index=AUTH_PAGES - 1,
                         length=AUTH_BUNDLE_LEN, timestamp=timestamp)]
    pos = AUTH_PAGE0_DATA
    for p in range(1, AUTH_PAGES):
        pages.append(AuthPageMsg(page_index=p, data=raw[pos:pos + AUTH_PAGEN_DATA].ljust(AUTH_PAGEN_DATA, b"\x00")))
        pos += AUTH_PAGEN_DATA
    return tuple(pages)


def reassemble_auth(pages) -> AuthBundle:
    by_index: dict[int, AuthPageMsg] = {}
    for page in pages:
        if page.page_index in by_index:
            raise AuthReassemblyError(f"duplicate auth page {page.page_index}")
        by_index[page.page_index] = page
    if 0 not in by_index:
        raise AuthReassemblyError("missing auth page 0")
    head = by_index[0]
    if head.length != AUTH_BUNDLE_LEN:
        raise AuthReassemblyError(f"declared auth length {head.length}, expected {AUTH_BUNDLE_LEN}")
    if head.last_page_index != AUTH_PAGES - 1:
        raise AuthReassemblyError(f"declared last page {head.last_page_index}, expected {AUTH_PAGES - 1}")
    for p in range(AUTH_PAGES):
        if p not in by_index:
            raise AuthReassemblyError(f"missing auth page {p}")
    extra = set(by_index) - set(range(AUTH_PAGES))
    if extra:
        raise AuthReassemblyError(f"unexpected auth pages {sorted(extra)}")
    if len({pg.auth_type for pg in by_index.values()}) != 1:
        raise AuthReassemblyError("auth pages disagree on auth type")
    raw = b"".join(by_index[p].data for p in range(AUTH_PAGES))
    return AuthBundle.from_bytes(raw[:AUTH_BUNDLE_LEN])


@dataclass(frozen=True)
class MessagePack:
    """Message pack: the four data messages, then zero or four auth pages."""

    basic: BasicIdMsg
    location: LocationMsg
    system: SystemMsg
    operator: OperatorIdMsg
    auth_pages: tuple[AuthPageMsg, ...] = field(default=())

    @property
    def authenticated(self) -> bool:
        return bool(self.auth_pages)

    def frames(self) -> list[Message]:
        return [self.basic, self.location, self.system, self.operator, *self.auth_pages]

    def auth_bundle(self) -> AuthBundle:
        return reassemble_auth(self.auth_pages)

    def auth_payload(self) -> bytes:
        return build_auth_payload(self.auth_bundle().interval, self.basic, self.location,
                                  self.system, self.operator)


_PACK_ORDER = (MsgType.BASIC_ID, MsgType.LOCATION, MsgType.SYSTEM, MsgType.OPERATOR_ID)


def encode_pack(pack: MessagePack) -> bytes:
    if len(pack.auth_pages) not in (0, AUTH_PAGES):
        raise PackError(f"pack carries {len(pack.auth_pages)} auth pages, expected 0 or {AUTH_PAGES}")
    frames = [encode_frame(m) for m in pack.frames()]
    return bytes([_header(MsgType.PACK), MSG_SIZE, len(frames)]) + b"".join(frames)


def decode_pack(raw: bytes) -> MessagePack:
    """Decode and validate a message pack.

    Accepts 8 frames (authenticated) or 4 (after keys run out). The data
    messages must come first, in BasicID, Location, System, OperatorID order.
    """
    raw = bytes(raw)
    if len(raw) < PACK_HEADER_LEN:
        raise TruncatedFrame("pack shorter than its header")
    if raw[0] >> 4 != MsgType.PACK:
        raise UnknownMessageType(f"not a message pack (type 0x{raw[0] >> 4:X})")
    if raw[1] != MSG_SIZE:
        raise PackError(f"pack message size {raw[1]}, expected {MSG_SIZE}")
    count = raw[2]
    if count not in (PACK_COUNT_AUTH, PACK_COUNT_PLAIN):
        raise PackError(f"pack count {count}, expected {PACK_COUNT_AUTH} or {PACK_COUNT_PLAIN}")
    expected = PACK_HEADER_LEN + count * MSG_SIZE
    if len(raw) != expected:
        raise TruncatedFrame(f"pack is {len(raw)} bytes, header declares {expected}")
    frames = [raw[PACK_HEADER_LEN + k * MSG_SIZE:PACK_HEADER_LEN + (k + 1) * MSG_SIZE] for k in range(count)]
    types = [f[0] >> 4 for f in frames]
    want = list(_PACK_ORDER) + [MsgType.AUTH] * (count - PACK_COUNT_PLAIN)
    if types != want:
        raise PackError(f"pack frame order {[hex(t) for t in types]} is not {[hex(t) for t in want]}")
    msgs = [decode_frame(f) for f in frames]
    return MessagePack(msgs[0], msgs[1], msgs[2], msgs[3], tuple(msgs[4:]))


def odid_timestamp(epoch_ms: int) -> int:
    """Whole seconds since 2019-01-01 UTC, clamped at zero."""
    return max(0, epoch_ms // 1000 - ODID_EPOCH_S)


def tenths_past_hour(epoch_ms: int) -> int:
    return (epoch_ms // 100) % 36000
