"""Malicious-server behaviours used to exercise the client-side checks."""
from __future__ import annotations

import dataclasses
import random

from .messages import Stage, SurvivorList
from .round import Adversary


class Recorder(Adversary):
    """Honest server that keeps every signature it forwards (for later replay)."""

    def __init__(self):
        self.round_signatures: dict = {}
        self.consistency_signatures: dict = {}

    def server_output(self, stage, outgoing, server):
        if stage == Stage.MASKED_INPUT:
            self.round_signatures.update(server.round_signatures)
        if stage == Stage.CONSISTENCY_CHECK:
            self.consistency_signatures.update(server.consistency_signatures)
        return outgoing


class UnderstateDropout(Adversary):
    """Claim that a dropped client survived, so fewer dropouts are reported.

    ``forge`` picks how the missing round signature is papered over:
    ``"omit"`` leaves it out, ``"random"`` fabricates bytes, ``"replay"``
    reuses one recorded in an earlier round.
    """

    def __init__(self, victim: int, forge: str = "omit", replayed: dict | None = None, seed: int = 0):
        self.victim = victim
        self.forge = forge
        self.replayed = replayed or {}
        self._rng = random.Random(seed)

    def server_output(self, stage, outgoing, server):
        if stage != Stage.MASKED_INPUT:
            return outgoing
        if self.victim in server.U3:
            raise ValueError("victim did not drop; nothing to understate")
        members = tuple(sorted(server.U3 | {self.victim}))
        out = {}
        for v, msg in outgoing.items():
            sigs = dict(msg.signatures)
            if self.forge == "random":
                sigs[self.victim] = self._rng.randbytes(64)
            elif self.forge == "replay":
                sigs[self.victim] = self.replayed[self.victim]
            out[v] = dataclasses.replace(msg, members=members, signatures=sigs)
        return out


class EquivocateSurvivors(Adversary):
    """Send a survivor list without ``hidden`` to ``targets``, the true list to the rest."""

    def __init__(self, hidden: int, targets):
        self.hidden = hidden
        self.targets = frozenset(targets)

    def server_output(self, stage, outgoing, server):
        if stage != Stage.MASKED_INPUT:
            return outgoing
        out = {}
        for v, msg in outgoing.items():
            if v in self.targets:
                members = tuple(m for m in msg.members if m != self.hidden)
                sigs = {j: s for j, s in msg.signatures.items() if j != self.hidden}
                msg = dataclasses.replace(msg, members=members, signatures=sigs)
            out[v] = msg
        return out


class ReplayConsistency(Adversary):
    """Swap one client's consistency signature for one captured in an earlier round."""

    def __init__(self, victim: int, captured: dict):
        self.victim = victim
        self.captured = captured

    def server_output(self, stage, outgoing, server):
        if stage != Stage.CONSISTENCY_CHECK:
            return outgoing
        out = {}
        for v, msg in outgoing.items():
            sigs = dict(msg.signatures)
            sigs[self.victim] = self.captured[self.victim]
            out[v] = dataclasses.replace(msg, signatures=sigs)
        return out


__all__ = ["EquivocateSurvivors", "Recorder", "ReplayConsistency", "SurvivorList", "UnderstateDropout"]
