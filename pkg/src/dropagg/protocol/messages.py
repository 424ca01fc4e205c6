"""Round messages and their canonical byte encoding.

Encoding: a magic prefix, the message kind, then the header
(sender, receiver, round, stage) and every payload field in declaration
order. Values are tagged and length-prefixed; dict entries are sorted by
key, so equal messages always serialize to equal bytes.
"""
from __future__ import annotations

import dataclasses
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Optional

import numpy as np

MAGIC = b"DAG\x01"
SERVER = 0


class Stage(IntEnum):
    ADVERTISE_KEYS = 0
    SHARE_KEYS = 1
    MASKED_INPUT = 2
    CONSISTENCY_CHECK = 3
    UNMASKING = 4
    NOISE_REMOVAL = 5


class MessageError(ValueError):
    pass


@dataclass(frozen=True)
class Message:
    sender: int
    receiver: int
    round: int
    stage: int


@dataclass(frozen=True)
class AdvertiseKeys(Message):
    c_pk: bytes = b""
    s_pk: bytes = b""
    signature: Optional[bytes] = None


@dataclass(frozen=True)
class KeyBroadcast(Message):
    # v -> (c_pk, s_pk, signature or None)
    keys: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EncryptedShares(Message):
    # client -> server: receiver id -> payload; server -> client: sender id -> payload
    ciphertexts: dict = field(default_factory=dict)


@dataclass(frozen=True)
class MaskedInput(Message):
    y: Any = None
    round_signature: Optional[bytes] = None


@dataclass(frozen=True)
class SurvivorList(Message):
    members: tuple = ()
    signatures: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ConsistencySignature(Message):
    signature: bytes = b""


@dataclass(frozen=True)
class UnmaskResponse(Message):
    sk_shares: dict = field(default_factory=dict)
    b_shares: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SeedShareResponse(Message):
    # owner v -> {k: share value}
    g_shares: dict = field(default_factory=dict)


KINDS = {cls.__name__: cls for cls in (
    AdvertiseKeys, KeyBroadcast, EncryptedShares, MaskedInput, SurvivorList,
    ConsistencySignature, UnmaskResponse, SeedShareResponse,
)}


def _enc(v, out: bytearray) -> None:
    if v is None:
        out += b"N"
    elif isinstance(v, bool):
        raise MessageError("booleans are not part of the wire format")
    elif isinstance(v, (int, np.integer)):
        v = int(v)
        raw = v.to_bytes((v.bit_length() + 8) // 8 or 1, "big", signed=True)
        out += b"i" + struct.pack(">I", len(raw)) + raw
    elif isinstance(v, (bytes, bytearray)):
        out += b"b" + struct.pack(">I", len(v)) + bytes(v)
    elif isinstance(v, str):
        raw = v.encode()
        out += b"s" + struct.pack(">I", len(raw)) + raw
    elif isinstance(v, np.ndarray):
        if v.dtype != np.uint64 or v.ndim != 1:
            raise MessageError("only 1-d uint64 vectors are serializable")
        out += b"a" + struct.pack(">I", v.shape[0]) + v.astype("<u8").tobytes()
    elif isinstance(v, (list, tuple)):
        out += b"l" + struct.pack(">I", len(v))
        for item in v:
            _enc(item, out)
    elif isinstance(v, dict):
        out += b"d" + struct.pack(">I", len(v))
        for k in sorted(v):
            _enc(k, out)
            _enc(v[k], out)
    else:
        raise MessageError(f"cannot serialize {type(v).__name__}")


def _dec(buf: memoryview, pos: int):
    tag = bytes(buf[pos:pos + 1])
    pos += 1
    if tag == b"N":
        return None, pos
    if tag in (b"i", b"b", b"s", b"a", b"l", b"d"):
        (n,) = struct.unpack_from(">I", buf, pos)
        pos += 4
    else:
        raise MessageError(f"unknown value tag {tag!r}")
    if tag == b"i":
        return int.from_bytes(buf[pos:pos + n], "big", signed=True), pos + n
    if tag == b"b":
        return bytes(buf[pos:pos + n]), pos + n
    if tag == b"s":
        return bytes(buf[pos:pos + n]).decode(), pos + n
    if tag == b"a":
        arr = np.frombuffer(bytes(buf[pos:pos + 8 * n]), dtype="<u8").astype(np.uint64)
        return arr, pos + 8 * n
    if tag == b"l":
        items = []
        for _ in range(n):
            item, pos = _dec(buf, pos)
            items.append(item)
        return tuple(items), pos
    d = {}
    for _ in range(n):
        k, pos = _dec(buf, pos)
        d[k], pos = _dec(buf, pos)
    return d, pos


def encode_value(v) -> bytes:
    out = bytearray()
    _enc(v, out)
    return bytes(out)


def decode_value(data: bytes):
    value, pos = _dec(memoryview(data), 0)
    if pos != len(data):
        raise MessageError("trailing bytes after value")
    return value


def serialize(msg: Message) -> bytes:
    out = bytearray(MAGIC)
    _enc(type(msg).__name__, out)
    for f in dataclasses.fields(msg):
        _enc(getattr(msg, f.name), out)
    return bytes(out)


def deserialize(data: bytes) -> Message:
    if not data.startswith(MAGIC):
        raise MessageError("bad magic")
    buf = memoryview(data)
    kind, pos = _dec(buf, len(MAGIC))
    cls = KINDS.get(kind)
    if cls is None:
        raise MessageError(f"unknown message kind {kind!r}")
    values = {}
    for f in dataclasses.fields(cls):
        values[f.name], pos = _dec(buf, pos)
    if pos != len(data):
        raise MessageError("trailing bytes after message")
    if "members" in values:
        values["members"] = tuple(values["members"])
    return cls(**values)
