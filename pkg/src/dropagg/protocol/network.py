"""In-process message transport with deterministic delays.

Messages travel as canonical bytes. Delivery is FIFO per (sender,
receiver) pair; across pairs, messages arrive in order of simulated
arrival time, ties broken by send sequence.
"""
from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field

from .messages import Message, deserialize, serialize


@dataclass(order=True)
class _InFlight:
    arrival: float
    seq: int
    sender: int = field(compare=False)
    receiver: int = field(compare=False)
    stage: int = field(compare=False)
    payload: bytes = field(compare=False)


class SimNetwork:
    def __init__(self, max_delay: float = 0.0, seed: int = 0):
        if max_delay < 0:
            raise ValueError("delay must be non-negative")
        self.max_delay = max_delay
        self._rng = random.Random(seed)
        self._queue: list = []
        self._seq = 0
        self._last_arrival: dict = {}
        self.now = 0.0
        self.blocked: set = set()
        self.delivered = 0
        self.bytes_sent = 0

    def block(self, party: int) -> None:
        """Cut a dropped party off: nothing it sends from now on is delivered."""
        self.blocked.add(party)

    def send(self, msg: Message) -> None:
        if msg.sender in self.blocked:
            return
        data = serialize(msg)
        delay = self._rng.uniform(0.0, self.max_delay) if self.max_delay else 0.0
        pair = (msg.sender, msg.receiver)
        arrival = max(self.now + delay, self._last_arrival.get(pair, 0.0))
        self._last_arrival[pair] = arrival
        heapq.heappush(self._queue, _InFlight(arrival, self._seq, msg.sender, msg.receiver, msg.stage, data))
        self._seq += 1
        self.bytes_sent += len(data)

    def collect(self, receiver: int, stage: int, deadline: float = float("inf")) -> list:
        """Deliver every queued message for ``receiver`` at ``stage`` arriving by ``deadline``."""
        keep, got = [], []
        while self._queue:
            item = heapq.heappop(self._queue)
            if item.receiver == receiver and item.stage == stage and item.arrival <= deadline:
                got.append(item)
            else:
                keep.append(item)
        for item in keep:
            heapq.heappush(self._queue, item)
        if got:
            self.now = max(self.now, got[-1].arrival)
        self.delivered += len(got)
        return [deserialize(item.payload) for item in got]

    def pending(self) -> int:
        return len(self._queue)
