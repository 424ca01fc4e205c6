"""Simulator-grade primitives: key agreement, authenticated encryption,
signatures and a seeded PRG.

Everything is deterministic given its inputs so protocol traces replay
exactly. Key agreement and signatures sit on X25519/Ed25519 with private
keys derived from 16-byte secrets, which keeps the agreement secret key a
single field element that Shamir sharing can carry.
"""
from __future__ import annotations

import hashlib
import hmac
import random
import struct
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from . import kernels
from .field import FieldElement

SECRET_BYTES = 16
_RAW = dict(encoding=serialization.Encoding.Raw, format=serialization.PublicFormat.Raw)


class CryptoError(Exception):
    """A primitive rejected its input (malformed key, bad tag, ...)."""


class DecryptionError(CryptoError):
    pass


def _expand_secret(secret: bytes, label: bytes) -> bytes:
    return hashlib.sha256(b"dropagg/" + label + b"/" + secret).digest()


def _as_bytes(rng: Union[random.Random, bytes, None], n: int) -> bytes:
    if isinstance(rng, (bytes, bytearray)):
        if len(rng) < n:
            raise CryptoError(f"need {n} bytes of key material")
        return bytes(rng[:n])
    if rng is None:
        return random.SystemRandom().randbytes(n)
    return rng.randbytes(n)


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    secret_key: bytes


def ka_gen(rng=None) -> KeyPair:
    """Fresh agreement key pair; ``rng`` is a ``random.Random`` or raw secret bytes."""
    secret = _as_bytes(rng, SECRET_BYTES)
    return ka_from_secret(secret)


def ka_from_secret(secret: bytes) -> KeyPair:
    if len(secret) != SECRET_BYTES:
        raise CryptoError("agreement secret must be 16 bytes")
    sk = X25519PrivateKey.from_private_bytes(_expand_secret(secret, b"ka"))
    return KeyPair(public_key=sk.public_key().public_bytes(**_RAW), secret_key=bytes(secret))


def ka_agree(secret_key: bytes, public_key: bytes) -> bytes:
    if len(secret_key) != SECRET_BYTES:
        raise CryptoError("malformed agreement secret key")
    try:
        peer = X25519PublicKey.from_public_bytes(public_key)
    except ValueError as exc:
        raise CryptoError("malformed agreement public key") from exc
    sk = X25519PrivateKey.from_private_bytes(_expand_secret(secret_key, b"ka"))
    try:
        shared = sk.exchange(peer)
    except ValueError as exc:
        raise CryptoError("degenerate agreement public key") from exc
    return hashlib.sha256(b"dropagg/agree" + shared).digest()


@dataclass(frozen=True)
class Ciphertext:
    payload: bytes
    sender: int
    receiver: int


def _ad(sender: int, receiver: int) -> bytes:
    return struct.pack(">QQ", sender, receiver)


def ae_encrypt(key: bytes, plaintext: bytes, sender: int = 0, receiver: int = 0) -> Ciphertext:
    """AES-GCM with a synthetic nonce (HMAC of key, addressing and plaintext)."""
    if len(key) not in (16, 24, 32):
        raise CryptoError("bad encryption key length")
    ad = _ad(sender, receiver)
    nonce = hmac.new(key, b"nonce" + ad + plaintext, hashlib.sha256).digest()[:12]
    body = AESGCM(key).encrypt(nonce, plaintext, ad)
    return Ciphertext(nonce + body, sender, receiver)


def ae_decrypt(key: bytes, ciphertext: Ciphertext) -> bytes:
    if len(key) not in (16, 24, 32):
        raise CryptoError("bad encryption key length")
    data = ciphertext.payload
    if len(data) < 12 + 16:
        raise DecryptionError("ciphertext too short")
    try:
        return AESGCM(key).decrypt(data[:12], data[12:], _ad(ciphertext.sender, ciphertext.receiver))
    except InvalidTag as exc:
        raise DecryptionError("authentication failed") from exc


@dataclass(frozen=True)
class SigningKey:
    secret: bytes
    verify_key: bytes


@dataclass(frozen=True)
class Signature:
    data: bytes


def sig_keygen(rng=None) -> SigningKey:
    secret = _as_bytes(rng, SECRET_BYTES)
    sk = Ed25519PrivateKey.from_private_bytes(_expand_secret(secret, b"sig"))
    return SigningKey(secret, sk.public_key().public_bytes(**_RAW))


def canonical(*fields) -> bytes:
    """Length-prefixed concatenation; ints are signed big-endian."""
    out = bytearray()
    for f in fields:
        if isinstance(f, bool):
            f = int(f)
        if isinstance(f, int):
            f = f.to_bytes((f.bit_length() + 8) // 8 or 1, "big", signed=True)
        elif isinstance(f, str):
            f = f.encode()
        elif isinstance(f, (list, tuple, frozenset, set)):
            items = sorted(f) if isinstance(f, (set, frozenset)) else f
            f = canonical(*items)
        out += struct.pack(">I", len(f)) + bytes(f)
    return bytes(out)


def sig_sign(key: SigningKey, message: bytes) -> Signature:
    sk = Ed25519PrivateKey.from_private_bytes(_expand_secret(key.secret, b"sig"))
    return Signature(sk.sign(message))


def sig_verify(verify_key: bytes, message: bytes, signature: Signature) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(verify_key).verify(signature.data, message)
    except (InvalidSignature, ValueError):
        return False
    return True


@dataclass(frozen=True)
class PrgSeed:
    seed: bytes
    domain: bytes = b"mask"
    _words: tuple = field(init=False, repr=False, compare=False)

    def __init__(self, seed, domain: bytes = b"mask"):
        if isinstance(seed, FieldElement):
            seed = seed.to_bytes()
        object.__setattr__(self, "seed", bytes(seed))
        object.__setattr__(self, "domain", domain)
        digest = hashlib.sha256(b"dropagg/prg/" + domain + b"/" + self.seed).digest()
        object.__setattr__(self, "_words", struct.unpack("<QQ", digest[:16]))

    @property
    def key(self) -> tuple:
        return self._words


def prg_expand(seed: PrgSeed, length: int, modulus: int) -> np.ndarray:
    """``length`` pseudorandom integers in [0, modulus)."""
    if modulus < 2 or modulus > 1 << 62:
        raise CryptoError("PRG modulus must lie in [2, 2^62]")
    if length < 0:
        raise CryptoError("negative PRG length")
    k0, k1 = seed.key
    return kernels.expand_mod(k0, k1, length, modulus)


def prg_sample_noise(seed: PrgSeed, variance: float, length: int, distribution: str = "gaussian",
                     scale: float = 1.0) -> np.ndarray:
    """I.i.d. draws with the given variance.

    ``"gaussian"`` returns reals; ``"rounded_gaussian"`` returns the draws
    multiplied by ``scale`` and rounded to int64 (fixed-point units).
    """
    if variance < 0:
        raise CryptoError("negative variance")
    if length < 0:
        raise CryptoError("negative length")
    if variance == 0:
        z = np.zeros(length)
    else:
        k0, k1 = seed.key
        z = kernels.gaussian(k0, k1, length) * np.sqrt(variance)
    if distribution == "gaussian":
        return z
    if distribution == "rounded_gaussian":
        return np.rint(z * scale).astype(np.int64)
    raise CryptoError(f"unknown noise distribution {distribution!r}")
