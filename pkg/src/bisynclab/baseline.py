"""A conventional point-to-point link, for comparison.

Frames are sent fire-and-forget.  The wire loses frames at random, the
receiver has a drop-tail buffer, and failure detection is a timeout guess.
Nothing here is exhaustive; the single seeded generator makes runs repeatable.
"""

from __future__ import annotations

import json
import random
from collections import Counter, deque
from dataclasses import dataclass, field


@dataclass
class ConventionalLink:
    seed: int = 0
    loss_rate: float = 0.02
    buffer_capacity: int = 4
    drain_per_slot: int = 1
    timeout_slots: int = 3
    crash_at: dict = field(default_factory=dict)  # endpoint -> slot it halts in
    counters: Counter = field(default_factory=Counter, init=False)
    records: list = field(default_factory=list, init=False)

    def __post_init__(self):
        if not 0.0 <= self.loss_rate <= 1.0:
            raise ValueError("loss_rate must lie in [0, 1]")
        self.rng = random.Random(self.seed)
        self.buffers = {"a": deque(), "b": deque()}
        self.last_heard = {"a": 0, "b": 0}
        self.slot = 0

    def _alive(self, ep: str) -> bool:
        return self.slot < self.crash_at.get(ep, 1 << 62)

    def step(self, send_a: bool, send_b: bool) -> dict:
        rec = {"slot": self.slot, "sent": [], "lost": [], "overflow": [], "suspect": []}
        for tx, want in (("a", send_a), ("b", send_b)):
            rx = "b" if tx == "a" else "a"
            if not want or not self._alive(tx):
                continue
            self.counters["offered"] += 1
            rec["sent"].append(tx)
            # the sender records success the moment the frame leaves
            if self.rng.random() < self.loss_rate or not self._alive(rx):
                self.counters["silent_drops"] += 1
                self.counters["lost_on_wire"] += 1
                rec["lost"].append(tx)
                continue
            self.last_heard[rx] = self.slot
            if len(self.buffers[rx]) >= self.buffer_capacity:
                self.counters["silent_drops"] += 1
                self.counters["drop_tail"] += 1
                rec["overflow"].append(tx)
                continue
            self.buffers[rx].append((tx, self.slot))
            self.counters["delivered"] += 1
        for ep in ("a", "b"):
            if not self._alive(ep):
                continue
            for _ in range(min(self.drain_per_slot, len(self.buffers[ep]))):
                self.buffers[ep].popleft()
            if self.slot - self.last_heard[ep] >= self.timeout_slots:
                peer = "b" if ep == "a" else "a"
                self.counters["timeout_guesses"] += 1
                if self._alive(peer):
                    self.counters["wrong_suspicions"] += 1
                rec["suspect"].append(ep)
                self.last_heard[ep] = self.slot
        self.records.append(rec)
        self.slot += 1
        return rec

    def run(self, slots: int, send_prob: float = 0.6) -> "ConventionalLink":
        for _ in range(slots):
            self.step(self.rng.random() < send_prob, self.rng.random() < send_prob)
        return self

    def trace_lines(self) -> list[str]:
        return [json.dumps(r, separators=(",", ":")) for r in self.records]

    def summary(self) -> dict:
        keys = ("offered", "delivered", "silent_drops", "lost_on_wire", "drop_tail",
                "timeout_guesses", "wrong_suspicions")
        return {k: self.counters[k] for k in keys}
