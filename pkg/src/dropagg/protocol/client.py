"""Client-side state machine for SecAgg, optionally carrying XNoise."""
from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np

from .. import crypto, kernels
from ..field import FieldElement, SharingPolicy, share
from ..noise import component_variances
from .messages import (
    SERVER, AdvertiseKeys, ConsistencySignature, EncryptedShares, KeyBroadcast, MaskedInput,
    SeedShareResponse, Stage, SurvivorList, UnmaskResponse, decode_value, encode_value,
)
from .params import ProtocolAbort, ProtocolParams


def round_message(r: int) -> bytes:
    return crypto.canonical("round", r)


def consistency_message(r: int, survivors) -> bytes:
    return crypto.canonical("survivors", r, sorted(survivors))


def key_message(c_pk: bytes, s_pk: bytes) -> bytes:
    return crypto.canonical(c_pk, s_pk)


def pair_sign(u: int, v: int) -> int:
    return (u > v) - (u < v)


def noise_components(params: ProtocolParams) -> list[float]:
    """Per-client component variances for the configured variant."""
    if params.xnoise:
        return component_variances(params.noise_plan())
    if params.sigma_star_sq > 0:
        return [params.sigma_star_sq / params.n_sampled]
    return []


def sample_component(params: ProtocolParams, seed: FieldElement, variance: float) -> np.ndarray:
    """Noise component in fixed-point units; the server regenerates it from the seed."""
    return crypto.prg_sample_noise(
        crypto.PrgSeed(seed, b"noise"), variance, params.d, "rounded_gaussian",
        scale=params.encoder.scale,
    )


@dataclass
class ClientCounters:
    noise_components: int = 0
    sharings: int = 0
    shares_created: int = 0


class ClientSession:
    def __init__(self, uid: int, params: ProtocolParams, update, rng: random.Random,
                 signing_key: crypto.SigningKey | None = None, verify_keys: dict | None = None):
        if uid < 1:
            raise ValueError("client ids start at 1")
        self.uid = uid
        self.params = params
        self.rng = rng
        self.signing_key = signing_key
        self.verify_keys = verify_keys or {}
        if params.malicious and (signing_key is None or not verify_keys):
            raise ValueError("malicious mode needs signing and verification keys")
        self.R = params.modulus
        self.update = np.asarray(update, dtype=np.uint64) % np.uint64(self.R)
        if self.update.shape != (params.d,):
            raise ValueError(f"update must have length {params.d}")
        self.stage = -1
        self.aborted: ProtocolAbort | None = None
        self.counters = ClientCounters()
        self.released_unmask = False
        self.released_seeds = False

        # noise seeds g_{u,k}; perturbed input is update + sum of components
        variances = noise_components(params)
        self.noise_variances = variances
        self.noise_seeds = [self._field_element() for _ in variances]
        noisy = self.update.astype(np.uint64)
        self.noise_parts = [sample_component(params, g, var) for g, var in zip(self.noise_seeds, variances)]
        total = sum(self.noise_parts, np.zeros(params.d, dtype=np.int64))
        self.counters.noise_components = len(variances)
        self.noise_total = total
        self.perturbed = (noisy + params.encoder.to_ring(total)) % np.uint64(self.R)

        self.c_keys: crypto.KeyPair | None = None
        self.s_keys: crypto.KeyPair | None = None
        self.peer_keys: dict = {}
        self.U1: frozenset = frozenset()
        self.U2: frozenset = frozenset()
        self.U3: frozenset = frozenset()
        self.U4: frozenset = frozenset()
        self.own_shares: dict = {}
        self.inbox: dict = {}
        self.decrypted: dict = {}

    # helpers -----------------------------------------------------------
    def _field_element(self) -> FieldElement:
        return FieldElement(self.rng.getrandbits(126), self.params.prime)

    def _abort(self, reason: str):
        self.aborted = ProtocolAbort(reason, party=self.uid, stage=self.stage)
        raise self.aborted

    def _enter(self, stage: Stage):
        if self.aborted is not None:
            raise self.aborted
        if stage <= self.stage:
            raise ProtocolAbort("stage replayed or out of order", self.uid, int(stage))
        self.stage = int(stage)

    def _header(self, stage: Stage) -> dict:
        return dict(sender=self.uid, receiver=SERVER, round=self.params.round_index, stage=int(stage))

    def _check_header(self, msg, stage: Stage):
        if msg.round != self.params.round_index or msg.stage != int(stage) or msg.receiver != self.uid:
            self._abort(f"unexpected message header at stage {int(stage)}")

    @property
    def dropout_count_bound(self) -> int:
        return self.params.n_sampled - len(self.U3)

    # stage 0 ------------------------------------------------------------
    def advertise_keys(self) -> AdvertiseKeys:
        self._enter(Stage.ADVERTISE_KEYS)
        self.c_keys = crypto.ka_gen(self._field_element().to_bytes())
        self.s_keys = crypto.ka_gen(self._field_element().to_bytes())
        sig = None
        if self.params.malicious:
            sig = crypto.sig_sign(self.signing_key, key_message(self.c_keys.public_key, self.s_keys.public_key)).data
        return AdvertiseKeys(c_pk=self.c_keys.public_key, s_pk=self.s_keys.public_key, signature=sig,
                             **self._header(Stage.ADVERTISE_KEYS))

    # stage 1 ------------------------------------------------------------
    def share_keys(self, msg: KeyBroadcast) -> EncryptedShares:
        self._enter(Stage.SHARE_KEYS)
        self._check_header(msg, Stage.SHARE_KEYS)
        p = self.params
        keys = dict(msg.keys)
        U1 = frozenset(keys)
        if self.uid not in U1 or len(U1) < p.t:
            self._abort("advertised key list too small or missing self")
        pairs = [(c, s) for c, s, _ in keys.values()]
        if len(set(pairs)) != len(pairs) or len({c for c, _ in pairs} | {s for _, s in pairs}) != 2 * len(pairs):
            self._abort("public keys are not all distinct")
        if keys[self.uid][0] != self.c_keys.public_key or keys[self.uid][1] != self.s_keys.public_key:
            self._abort("server altered our advertised keys")
        if p.malicious:
            for v, (c_pk, s_pk, sig) in keys.items():
                if sig is None or v not in self.verify_keys or not crypto.sig_verify(
                        self.verify_keys[v], key_message(c_pk, s_pk), crypto.Signature(sig)):
                    self._abort(f"bad key signature for client {v}")
        self.peer_keys = {v: (c, s) for v, (c, s, _) in keys.items()}
        self.U1 = U1

        self.b = self._field_element()
        policy = SharingPolicy(p.t, U1)
        secrets = [FieldElement.from_bytes(self.s_keys.secret_key, p.prime), self.b]
        if p.xnoise:
            secrets += self.noise_seeds[1:]
        shared = [share(s, policy, self.rng.randbytes(32)) for s in secrets]
        self.counters.sharings = len(shared)
        self.counters.shares_created = sum(len(s) for s in shared)
        by_holder = {v: [sh[i].value.value for sh in shared] for i, v in enumerate(sorted(U1))}

        self.own_shares = by_holder[self.uid]
        out = {}
        for v in sorted(U1 - {self.uid}):
            sk_share, b_share, *g_shares = by_holder[v]
            plaintext = encode_value((self.uid, v, sk_share, b_share, tuple(g_shares)))
            try:
                key = crypto.ka_agree(self.c_keys.secret_key, self.peer_keys[v][0])
                ct = crypto.ae_encrypt(key, plaintext, self.uid, v)
            except crypto.CryptoError as exc:
                self._abort(f"share encryption failed: {exc}")
            out[v] = ct.payload
        return EncryptedShares(ciphertexts=out, **self._header(Stage.SHARE_KEYS))

    # stage 2 ------------------------------------------------------------
    def mask_input(self, msg: EncryptedShares) -> MaskedInput:
        self._enter(Stage.MASKED_INPUT)
        self._check_header(msg, Stage.MASKED_INPUT)
        U2 = frozenset(msg.ciphertexts) | {self.uid}
        if not U2 <= self.U1 or len(U2) < self.params.t:
            self._abort("ciphertext list too small or from unknown clients")
        self.U2 = U2
        self.inbox = dict(msg.ciphertexts)
        y = self.masked_vector(U2)
        sig = None
        if self.params.malicious:
            sig = crypto.sig_sign(self.signing_key, round_message(self.params.round_index)).data
        return MaskedInput(y=y, round_signature=sig, **self._header(Stage.MASKED_INPUT))

    def masked_vector(self, neighbors) -> np.ndarray:
        """Perturbed input plus self mask plus signed pairwise masks, mod R."""
        keys = [crypto.PrgSeed(self.b, b"self").key]
        signs = [1]
        for v in sorted(neighbors):
            if v == self.uid:
                continue
            if v not in self.peer_keys:
                self._abort(f"no pairwise secret for client {v}")
            try:
                s_uv = crypto.ka_agree(self.s_keys.secret_key, self.peer_keys[v][1])
            except crypto.CryptoError as exc:
                self._abort(f"key agreement failed: {exc}")
            keys.append(crypto.PrgSeed(s_uv, b"pair").key)
            signs.append(pair_sign(self.uid, v))
        return kernels.masked_accumulate(self.perturbed, np.array(keys, dtype=np.uint64),
                                         np.array(signs, dtype=np.int64), self.R)

    # stage 3 ------------------------------------------------------------
    def verify_dropout_outcome(self, claimed, signatures: dict) -> None:
        """Every claimed survivor must have a valid signature on this round, and no one else."""
        r = self.params.round_index
        for j in claimed:
            sig = signatures.get(j)
            if sig is None or j not in self.verify_keys or not crypto.sig_verify(
                    self.verify_keys[j], round_message(r), crypto.Signature(sig)):
                self._abort(f"missing or invalid round signature for claimed survivor {j}")
        if set(signatures) != set(claimed):
            self._abort("signature set disagrees with the announced dropout outcome")

    def consistency_check(self, msg: SurvivorList) -> ConsistencySignature:
        self._enter(Stage.CONSISTENCY_CHECK)
        self._check_header(msg, Stage.CONSISTENCY_CHECK)
        U3 = frozenset(msg.members)
        self._accept_u3(U3)
        self.verify_dropout_outcome(U3, dict(msg.signatures))
        sig = crypto.sig_sign(self.signing_key, consistency_message(self.params.round_index, U3)).data
        return ConsistencySignature(signature=sig, **self._header(Stage.CONSISTENCY_CHECK))

    def _accept_u3(self, U3):
        if not U3 <= self.U2 or self.uid not in U3 or len(U3) < self.params.t:
            self._abort("survivor list U3 invalid")
        self.U3 = U3

    # stage 4 ------------------------------------------------------------
    def unmask(self, msg: SurvivorList) -> UnmaskResponse:
        self._enter(Stage.UNMASKING)
        self._check_header(msg, Stage.UNMASKING)
        p = self.params
        if p.malicious:
            U4 = frozenset(msg.members)
            if not U4 <= self.U3 or len(U4) < p.t:
                self._abort("U4 not a large enough subset of U3")
            sigs = dict(msg.signatures)
            if set(sigs) != set(U4):
                self._abort("consistency signatures do not match U4")
            text = consistency_message(p.round_index, self.U3)
            for v in U4:
                if v not in self.verify_keys or not crypto.sig_verify(
                        self.verify_keys[v], text, crypto.Signature(sigs[v])):
                    self._abort(f"consistency signature of client {v} does not verify")
            self.U4 = U4
        else:
            self._accept_u3(frozenset(msg.members))
            self.U4 = self.U3
        if p.xnoise and self.dropout_count_bound > p.T:
            self._abort(f"{self.dropout_count_bound} dropouts exceed tolerance {p.T}")

        # decrypt every share addressed to us
        for v in sorted(self.U2 - {self.uid}):
            try:
                key = crypto.ka_agree(self.c_keys.secret_key, self.peer_keys[v][0])
                plain = crypto.ae_decrypt(key, crypto.Ciphertext(self.inbox[v], v, self.uid))
                v_, u_, sk_share, b_share, g_shares = decode_value(plain)
            except (crypto.CryptoError, KeyError, ValueError) as exc:
                self._abort(f"share from client {v} failed to decrypt: {exc}")
            if (v_, u_) != (v, self.uid):
                self._abort("share addressing mismatch")
            self.decrypted[v] = (sk_share, b_share, tuple(g_shares))
        self.decrypted[self.uid] = (self.own_shares[0], self.own_shares[1], tuple(self.own_shares[2:]))

        sk_shares = {v: self.decrypted[v][0] for v in sorted(self.U2 - self.U3)}
        b_shares = {v: self.decrypted[v][1] for v in sorted(self.U3)}
        seeds = {}
        if p.xnoise:
            for k in range(p.removal_start(len(self.U3)), p.T + 1):
                seeds[k] = self.noise_seeds[k].to_bytes()
        self.released_unmask = True
        return UnmaskResponse(sk_shares=sk_shares, b_shares=b_shares, seeds=seeds,
                              **self._header(Stage.UNMASKING))

    # stage 5 ------------------------------------------------------------
    def seed_shares(self, msg: SurvivorList) -> SeedShareResponse:
        self._enter(Stage.NOISE_REMOVAL)
        self._check_header(msg, Stage.NOISE_REMOVAL)
        p = self.params
        U5 = frozenset(msg.members)
        if not U5 <= self.U4 or len(U5) < p.t or self.uid not in U5:
            self._abort("U5 invalid")
        out = {}
        start = p.removal_start(len(self.U3))
        for v in sorted(self.U3 - U5):
            g = self.decrypted[v][2]
            out[v] = {k: g[k - 1] for k in range(start, p.T + 1)}
        self.released_seeds = True
        return SeedShareResponse(g_shares=out, **self._header(Stage.NOISE_REMOVAL))
