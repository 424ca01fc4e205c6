"""One aggregation round over the simulated network."""
from __future__ import annotations

import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Mapping

import numpy as np

from .. import crypto
from .client import ClientSession
from .messages import SERVER, Stage
from .network import SimNetwork
from .params import ProtocolAbort, ProtocolParams
from .server import ServerSession


class DropPoint(IntEnum):
    """Stage whose outgoing message a dropped client never sends."""
    BEFORE_ADVERTISE = 0
    BEFORE_SHARE_KEYS = 1
    BEFORE_MASKED_INPUT = 2
    BEFORE_CONSISTENCY = 3
    BEFORE_UNMASK = 4
    BEFORE_SEED_SHARES = 5

    @classmethod
    def parse(cls, value) -> "DropPoint":
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            return cls[value.upper()]
        return cls(value)


class Adversary:
    """Hook that may rewrite the server's outgoing messages after each stage."""

    def server_output(self, stage: Stage, outgoing: dict, server: ServerSession) -> dict:
        return outgoing


@dataclass
class RoundResult:
    aggregate: np.ndarray | None
    survivor_sets: dict
    aborted: bool = False
    abort_reason: str | None = None
    abort_stage: int | None = None
    dropped: int = 0
    client_aborts: dict = field(default_factory=dict)
    released_unmask: frozenset = frozenset()
    released_seeds: frozenset = frozenset()
    seed_round: bool = False
    under_removed: bool = False
    removed: list = field(default_factory=list)
    # sum of U3's perturbed inputs before any noise removal
    unmasked: np.ndarray | None = None
    # plaintext-equivalent check data (simulator only)
    perturbed_sum: np.ndarray | None = None
    plaintext_sum: np.ndarray | None = None
    residual_noise: np.ndarray | None = None
    counters: dict = field(default_factory=dict)
    bytes_sent: int = 0


def make_pki(client_ids, seed=0) -> tuple[dict, dict]:
    """Signing keys per client and the shared verification-key directory."""
    keys = {u: crypto.sig_keygen(random.Random(f"pki/{seed}/{u}")) for u in client_ids}
    return keys, {u: k.verify_key for u, k in keys.items()}


def _client_rng(seed, round_index, uid) -> random.Random:
    return random.Random(f"client/{seed}/{round_index}/{uid}")


def run_round(params: ProtocolParams, updates: Mapping[int, np.ndarray], dropout_trace=None, *,
              seed=0, adversary: Adversary | None = None, signing_keys=None, network: SimNetwork | None = None,
              deadline: float = float("inf"), parallel: bool = False) -> RoundResult:
    """Run SecAgg (optionally with XNoise) for the clients in ``updates``.

    ``dropout_trace`` maps client id to the :class:`DropPoint` at which it
    goes silent. ``updates`` hold each client's input already in Z_R.
    """
    ids = sorted(updates)
    drops = {u: DropPoint.parse(p) for u, p in (dropout_trace or {}).items()}
    if not set(drops) <= set(ids):
        raise ValueError("dropout trace names unknown clients")
    adversary = adversary or Adversary()
    network = network or SimNetwork()
    verify = None
    if params.malicious:
        if signing_keys is None:
            signing_keys, verify = make_pki(ids, seed)
        else:
            verify = {u: k.verify_key for u, k in signing_keys.items()}

    clients = {
        u: ClientSession(u, params, updates[u], _client_rng(seed, params.round_index, u),
                         signing_key=signing_keys[u] if params.malicious else None, verify_keys=verify)
        for u in ids
    }
    server = ServerSession(params, ids)
    client_aborts: dict = {}
    pool = ThreadPoolExecutor(max_workers=4) if parallel else None

    def active(stage: Stage):
        out = []
        for u in ids:
            if clients[u].aborted is not None or u in client_aborts:
                continue
            if u in drops and drops[u] <= stage:
                network.block(u)
                continue
            out.append(u)
        return out

    def client_step(stage: Stage, handler: str, inbound: dict | None):
        todo = [u for u in active(stage) if inbound is None or u in inbound]

        def one(u):
            try:
                fn = getattr(clients[u], handler)
                return u, fn() if inbound is None else fn(inbound[u])
            except ProtocolAbort as exc:
                return u, exc

        results = list(pool.map(one, todo)) if pool else [one(u) for u in todo]
        for u, res in results:
            if isinstance(res, ProtocolAbort):
                client_aborts[u] = res.reason
            else:
                network.send(res)

    def server_step(stage: Stage, handler: str) -> dict:
        msgs = network.collect(SERVER, int(stage), deadline)
        outgoing = getattr(server, handler)(msgs)
        outgoing = adversary.server_output(stage, outgoing, server)
        for msg in outgoing.values():
            network.send(msg)
        by_receiver = {}
        for s in sorted({m.stage for m in outgoing.values()}):
            for u in ids:
                got = network.collect(u, s, deadline)
                if got:
                    by_receiver[u] = got[-1]
        return by_receiver

    result_kwargs = {}
    try:
        client_step(Stage.ADVERTISE_KEYS, "advertise_keys", None)
        inbound = server_step(Stage.ADVERTISE_KEYS, "collect_keys")
        client_step(Stage.SHARE_KEYS, "share_keys", inbound)
        inbound = server_step(Stage.SHARE_KEYS, "collect_shares")
        client_step(Stage.MASKED_INPUT, "mask_input", inbound)
        inbound = server_step(Stage.MASKED_INPUT, "collect_masked")
        if params.malicious:
            client_step(Stage.CONSISTENCY_CHECK, "consistency_check", inbound)
            inbound = server_step(Stage.CONSISTENCY_CHECK, "collect_consistency")
        client_step(Stage.UNMASKING, "unmask", inbound)
        inbound = server_step(Stage.UNMASKING, "collect_unmask")
        if server.needs_seed_round:
            client_step(Stage.NOISE_REMOVAL, "seed_shares", inbound)
            server_step(Stage.NOISE_REMOVAL, "collect_seed_shares")
    except ProtocolAbort as exc:
        result_kwargs = dict(aborted=True, abort_reason=exc.reason, abort_stage=exc.stage)
    finally:
        if pool:
            pool.shutdown()

    R = np.uint64(params.modulus)
    U3 = sorted(server.U3)
    perturbed = plaintext = residual = None
    if U3:
        perturbed = np.zeros(params.d, dtype=np.uint64)
        plaintext = np.zeros(params.d, dtype=np.uint64)
        for u in U3:
            perturbed = (perturbed + clients[u].perturbed) % R
            plaintext = (plaintext + clients[u].update) % R
        residual = sum((clients[u].noise_total for u in U3), np.zeros(params.d, dtype=np.int64))
        if not result_kwargs:
            for u, k in server.removed:
                residual = residual - clients[u].noise_parts[k]

    return RoundResult(
        aggregate=None if result_kwargs else server.aggregate,
        survivor_sets=server.survivor_sets(),
        dropped=len(server.U - server.U3) if server.U3 else len(server.U - server.U1),
        client_aborts=client_aborts,
        released_unmask=frozenset(u for u, c in clients.items() if c.released_unmask),
        released_seeds=frozenset(u for u, c in clients.items() if c.released_seeds),
        seed_round=server.needs_seed_round,
        under_removed=server.under_removed,
        removed=list(server.removed),
        unmasked=getattr(server, "unmasked", None),
        perturbed_sum=perturbed,
        plaintext_sum=plaintext,
        residual_noise=residual,
        counters={u: vars(c.counters).copy() for u, c in clients.items()},
        bytes_sent=network.bytes_sent,
        **result_kwargs,
    )
