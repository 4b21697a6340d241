"""In-process message broker with simulated latency, drop, and
at-least-once delivery.

Reliable messages (goals and the critical observation kinds) are
retransmitted until acknowledged and deduplicated by message id at the
receiver; periodic telemetry is fire-and-forget. All randomness comes from
one seeded generator so a run is reproducible.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .messages import GoalMsg, ObservationMsg, UNRELIABLE_KINDS


@dataclass
class Envelope:
    msg_id: str
    src: str
    dst: str
    body: GoalMsg | ObservationMsg
    reliable: bool
    first_tick: int
    attempts: int = 1


@dataclass
class BusConfig:
    latency_ticks: int = 2
    drop_p: float = 0.0
    retx_period: int = 10


class MessageBus:
    def __init__(self, agents: list[str], config: BusConfig | None = None,
                 seed: int = 0, on_send=None):
        self.agents = list(agents)
        self.config = config or BusConfig()
        self._rng = random.Random(seed)
        self._seq: dict[str, int] = {a: 0 for a in self.agents}
        self._in_flight: list[tuple[int, int, str, Envelope]] = []  # (tick, n, dst, env)
        self._flight_seq = 0
        self._pending: dict[str, Envelope] = {}       # awaiting ack
        self._next_retx: dict[str, int] = {}
        self._acked: set[str] = set()
        self._seen: dict[str, set[str]] = {a: set() for a in self.agents}
        self._ack_flights: list[tuple[int, str]] = []  # (deliver_tick, msg_id)
        self.dropped = 0
        self.delivered = 0
        self.malformed = 0
        self.on_send = on_send                         # callback(env) for tracing

    def _is_reliable(self, body) -> bool:
        if isinstance(body, GoalMsg):
            return True
        return body.kind not in UNRELIABLE_KINDS

    def _launch(self, env: Envelope, tick: int) -> None:
        if self.config.drop_p > 0 and self._rng.random() < self.config.drop_p:
            self.dropped += 1
            return
        self._flight_seq += 1
        self._in_flight.append(
            (tick + self.config.latency_ticks, self._flight_seq, env.dst, env))

    def send(self, src: str, dst: str, body, tick: int,
             reliable: bool | None = None) -> list[str]:
        """Queue a message; dst '*' broadcasts to every other agent.

        reliable None derives reliability from the message kind. Returns the
        message ids created (one per destination).
        """
        rel = self._is_reliable(body) if reliable is None else reliable
        dsts = [a for a in self.agents if a != src] if dst == "*" else [dst]
        ids = []
        for d in dsts:
            if d not in self._seen:
                self.malformed += 1
                continue
            self._seq[src] += 1
            msg_id = f"{src}:{self._seq[src]}"
            env = Envelope(msg_id, src, d, body, rel, tick)
            if self.on_send is not None:
                self.on_send(env)
            if env.reliable:
                self._pending[msg_id] = env
                self._next_retx[msg_id] = tick + self.config.retx_period
            self._launch(env, tick)
            ids.append(msg_id)
        return ids

    def step(self, tick: int) -> dict[str, list[tuple[str, object]]]:
        """Deliver everything due this tick; returns per-agent inboxes of
        (source, message) in deterministic order."""
        # acks coming home release pending retransmissions
        live_acks = []
        for deliver_tick, msg_id in self._ack_flights:
            if deliver_tick <= tick:
                self._pending.pop(msg_id, None)
                self._next_retx.pop(msg_id, None)
                self._acked.add(msg_id)
            else:
                live_acks.append((deliver_tick, msg_id))
        self._ack_flights = live_acks

        inboxes: dict[str, list[tuple[str, object]]] = {a: [] for a in self.agents}
        still: list[tuple[int, int, str, Envelope]] = []
        for deliver_tick, n, dst, env in sorted(self._in_flight):
            if deliver_tick > tick:
                still.append((deliver_tick, n, dst, env))
                continue
            if env.reliable:
                # receiver acks every copy; duplicates are dropped here
                ack_drop = (self.config.drop_p > 0
                            and self._rng.random() < self.config.drop_p)
                if not ack_drop:
                    self._ack_flights.append(
                        (tick + self.config.latency_ticks, env.msg_id))
                if env.msg_id in self._seen[dst]:
                    continue
                self._seen[dst].add(env.msg_id)
            inboxes[dst].append((env.src, env.body))
            self.delivered += 1
        self._in_flight = still

        # retransmit unacked reliable messages on their period
        for msg_id in sorted(self._pending):
            if self._next_retx.get(msg_id, 0) <= tick:
                env = self._pending[msg_id]
                env.attempts += 1
                self._next_retx[msg_id] = tick + self.config.retx_period
                self._launch(env, tick)
        return inboxes

    def idle(self) -> bool:
        """No reliable traffic awaiting delivery or acknowledgment.

        Periodic telemetry keeps flowing forever, so it does not count."""
        return (not self._pending and not self._ack_flights
                and not any(env.reliable for _, _, _, env in self._in_flight))
