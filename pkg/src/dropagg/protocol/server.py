"""Server-side state machine: survivor gating, unmasking, noise removal."""
from __future__ import annotations

import numpy as np

from .. import crypto, kernels
from ..field import FieldElement, SecretShare, reconstruct
from ..noise import component_variances
from .client import pair_sign, sample_component
from .messages import (
    SERVER, EncryptedShares, KeyBroadcast, Stage, SurvivorList,
)
from .params import ProtocolAbort, ProtocolParams


class ServerSession:
    def __init__(self, params: ProtocolParams, sampled):
        self.params = params
        self.R = params.modulus
        self.U = frozenset(sampled)
        if len(self.U) != params.n_sampled:
            raise ValueError("sampled set size disagrees with n_sampled")
        self.U1 = self.U2 = self.U3 = self.U4 = self.U5 = self.U6 = frozenset()
        self.keys: dict = {}
        self.ciphertexts: dict = {}
        self.masked: dict = {}
        self.round_signatures: dict = {}
        self.consistency_signatures: dict = {}
        self.seeds: dict = {}
        self.aggregate: np.ndarray | None = None
        self.unmasked: np.ndarray | None = None
        self.removed: list = []
        self.unremoved: list = []
        self.under_removed = False
        self.needs_seed_round = False
        self.stage = -1

    def _abort(self, reason: str):
        raise ProtocolAbort(reason, party=SERVER, stage=self.stage)

    def _gate(self, senders, previous, name: str) -> frozenset:
        got = frozenset(senders) & previous
        if len(got) < self.params.t:
            setattr(self, name, got)  # kept for reporting
            self._abort(f"only {len(got)} clients in {name}, threshold is {self.params.t}")
        return got

    def _hdr(self, receiver: int, stage: Stage) -> dict:
        return dict(sender=SERVER, receiver=receiver, round=self.params.round_index, stage=int(stage))

    @property
    def dropped(self) -> int:
        """Dropout count relative to the sampled set: |U \\ U3|."""
        return len(self.U - self.U3)

    def survivor_sets(self) -> dict:
        return {f"U{i}": sorted(s) for i, s in enumerate(
            (self.U1, self.U2, self.U3, self.U4, self.U5, self.U6), start=1)}

    # stage 0 -> broadcast keys
    def collect_keys(self, msgs) -> dict:
        self.stage = Stage.ADVERTISE_KEYS
        msgs = {m.sender: m for m in msgs if m.sender in self.U}
        self.U1 = self._gate(msgs, self.U, "U1")
        self.keys = {v: (msgs[v].c_pk, msgs[v].s_pk, msgs[v].signature) for v in self.U1}
        return {v: KeyBroadcast(keys=dict(self.keys), **self._hdr(v, Stage.SHARE_KEYS)) for v in sorted(self.U1)}

    # stage 1 -> route ciphertexts
    def collect_shares(self, msgs) -> dict:
        self.stage = Stage.SHARE_KEYS
        msgs = {m.sender: m for m in msgs}
        self.U2 = self._gate(msgs, self.U1, "U2")
        self.ciphertexts = {u: dict(msgs[u].ciphertexts) for u in self.U2}
        out = {}
        for v in sorted(self.U2):
            bundle = {u: self.ciphertexts[u][v] for u in sorted(self.U2 - {v}) if v in self.ciphertexts[u]}
            out[v] = EncryptedShares(ciphertexts=bundle, **self._hdr(v, Stage.MASKED_INPUT))
        return out

    # stage 2 -> survivor list U3
    def collect_masked(self, msgs) -> dict:
        self.stage = Stage.MASKED_INPUT
        p = self.params
        msgs = {m.sender: m for m in msgs}
        self.U3 = self._gate(msgs, self.U2, "U3")
        for u in self.U3:
            y = np.asarray(msgs[u].y, dtype=np.uint64)
            if y.shape != (p.d,):
                self._abort(f"masked input of client {u} has wrong length")
            self.masked[u] = y
            if msgs[u].round_signature is not None:
                self.round_signatures[u] = msgs[u].round_signature
        if p.xnoise and self.dropped > p.T:
            self._abort(f"{self.dropped} dropouts exceed tolerance T={p.T}")
        members = tuple(sorted(self.U3))
        if p.malicious:
            sigs = {u: self.round_signatures[u] for u in members if u in self.round_signatures}
            return {v: SurvivorList(members=members, signatures=sigs, **self._hdr(v, Stage.CONSISTENCY_CHECK))
                    for v in members}
        self.U4 = self.U3
        return {v: SurvivorList(members=members, **self._hdr(v, Stage.UNMASKING)) for v in members}

    # stage 3 -> signed U4
    def collect_consistency(self, msgs) -> dict:
        self.stage = Stage.CONSISTENCY_CHECK
        msgs = {m.sender: m for m in msgs}
        self.U4 = self._gate(msgs, self.U3, "U4")
        self.consistency_signatures = {v: msgs[v].signature for v in self.U4}
        members = tuple(sorted(self.U4))
        return {v: SurvivorList(members=members, signatures=dict(self.consistency_signatures),
                                **self._hdr(v, Stage.UNMASKING)) for v in members}

    # stage 4 -> aggregate, maybe a seed-share request
    def collect_unmask(self, msgs) -> dict:
        self.stage = Stage.UNMASKING
        p = self.params
        msgs = {m.sender: m for m in msgs}
        self.U5 = self._gate(msgs, self.U4, "U5")
        responses = {u: msgs[u] for u in self.U5}
        self.unmasked = self.server_unmask(responses)
        self.aggregate = self.unmasked.copy()
        if p.xnoise:
            for u in sorted(self.U5):
                for k, seed in responses[u].seeds.items():
                    self.seeds[(u, int(k))] = FieldElement.from_bytes(seed, p.prime)
            if self.U3 - self.U5:
                self.needs_seed_round = True
                members = tuple(sorted(self.U5))
                return {v: SurvivorList(members=members, **self._hdr(v, Stage.NOISE_REMOVAL)) for v in members}
            self.excessive_noise_removal()
        return {}

    def server_unmask(self, responses: dict) -> np.ndarray:
        """Sum of perturbed inputs of U3 from masked inputs and recovered seeds."""
        p = self.params
        dropped, alive = self.U2 - self.U3, self.U3
        if dropped & alive:
            self._abort("a client cannot be both dropped and surviving")
        sk_requests = {v for r in responses.values() for v in r.sk_shares}
        b_requests = {v for r in responses.values() for v in r.b_shares}
        if sk_requests & b_requests:
            self._abort("both the self-mask seed and the key of one client were released")

        def recon(owner, attr):
            shares = [SecretShare(h, FieldElement(int(getattr(r, attr)[owner]), p.prime))
                      for h, r in sorted(responses.items()) if owner in getattr(r, attr)]
            if len(shares) < p.t:
                self._abort(f"not enough shares to rebuild {attr[:-7]} of client {owner}")
            return reconstruct(shares, p.t)

        total = np.zeros(p.d, dtype=np.uint64)
        for u in sorted(alive):
            total = (total + self.masked[u]) % np.uint64(self.R)
        keys, signs = [], []
        for u in sorted(alive):
            b = recon(u, "b_shares")
            keys.append(crypto.PrgSeed(b, b"self").key)
            signs.append(-1)
        for v in sorted(dropped):
            sk = recon(v, "sk_shares").to_bytes()
            for u in sorted(alive):
                s_vu = crypto.ka_agree(sk, self.keys[u][1])
                keys.append(crypto.PrgSeed(s_vu, b"pair").key)
                # add p_{v,u} = sign(v,u) * PRG(s_{v,u})
                signs.append(pair_sign(v, u))
        if not keys:
            return total
        return kernels.masked_accumulate(total, np.array(keys, dtype=np.uint64),
                                         np.array(signs, dtype=np.int64), self.R)

    # stage 5
    def collect_seed_shares(self, msgs) -> dict:
        self.stage = Stage.NOISE_REMOVAL
        p = self.params
        msgs = {m.sender: m for m in msgs if m.sender in self.U5}
        self.U6 = frozenset(msgs)
        start = p.removal_start(len(self.U3))
        if len(self.U6) >= p.t:
            for u in sorted(self.U3 - self.U5):
                for k in range(start, p.T + 1):
                    shares = [SecretShare(h, FieldElement(int(m.g_shares[u][k]), p.prime))
                              for h, m in sorted(msgs.items()) if u in m.g_shares and k in m.g_shares[u]]
                    if len(shares) >= p.t:
                        self.seeds[(u, k)] = reconstruct(shares, p.t)
        elif p.removal_failure == "abort":
            self._abort(f"only {len(self.U6)} seed-share responses, threshold is {p.t}")
        self.excessive_noise_removal()
        return {}

    def excessive_noise_removal(self) -> np.ndarray:
        p = self.params
        variances = component_variances(p.noise_plan())
        start = p.removal_start(len(self.U3))
        z = self.aggregate
        for u in sorted(self.U3):
            for k in range(start, p.T + 1):
                seed = self.seeds.get((u, k))
                if seed is None:
                    if p.removal_failure == "abort":
                        self._abort(f"seed g_{{{u},{k}}} unavailable")
                    self.unremoved.append((u, k))
                    continue
                n = sample_component(p, seed, variances[k])
                z = (z + (np.uint64(self.R) - p.encoder.to_ring(n))) % np.uint64(self.R)
                self.removed.append((u, k))
        self.under_removed = bool(self.unremoved)
        self.aggregate = z
        return z
