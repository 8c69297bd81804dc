"""Deterministic lossy-link simulation with a virtual clock.

The link applies a two-state Markov (simplified Gilbert-Elliott) or uniform
per-datagram loss process, a fixed one-way delay of RTT/2, and MTU
enforcement. One Markov step is consumed per transmission attempt, so the
steady-state probability P/(P+R) is directly the per-datagram loss rate.
Identical seeds and scenarios yield byte-identical traces.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field

from .engine import EngineConfig, HandshakePlan, InitiatorState, ResponderState


class NetsimError(Exception):
    pass


class DegenerateChain(NetsimError):
    """P = R = 0: the chain has no stationary loss rate."""


class OversizedDatagram(NetsimError):
    """A datagram exceeded the link MTU; fragmentation policy is broken."""


class SimulationStalled(NetsimError):
    """No pending events but the handshake is not finished."""


def steady_state_loss(P: float, R: float) -> float:
    """Long-run fraction of datagrams lost by the two-state chain: P/(P+R)."""
    if not 0.0 <= P <= 1.0 or not 0.0 <= R <= 1.0:
        raise ValueError("P and R must be probabilities in [0, 1]")
    if P + R == 0.0:
        raise DegenerateChain("P = R = 0 has no steady state")
    return P / (P + R)


class GilbertElliottChannel:
    """Two-state Markov loss process: Good delivers, Bad drops everything.

    Each datagram samples the current state (Bad = dropped) and then the
    chain advances using one pseudo-random draw: Good is left with
    probability P, Bad with probability R. Unless an explicit initial state
    is given, the chain starts from its stationary distribution so short
    runs are unbiased.
    """

    def __init__(
        self,
        P: float,
        R: float,
        seed: int = 0,
        initial_state: str | None = None,
        rng: random.Random | None = None,
    ):
        if not 0.0 <= P <= 1.0 or not 0.0 <= R <= 1.0:
            raise ValueError("P and R must be probabilities in [0, 1]")
        self.P = P
        self.R = R
        self._rng = rng if rng is not None else random.Random(seed)
        if initial_state is None:
            good_share = R / (P + R) if P + R > 0 else 1.0
            self._good = self._rng.random() < good_share
        elif initial_state in ("good", "bad"):
            self._good = initial_state == "good"
        else:
            raise ValueError("initial_state must be 'good', 'bad' or None")

    @property
    def state(self) -> str:
        return "good" if self._good else "bad"

    @property
    def loss_rate(self) -> float:
        return steady_state_loss(self.P, self.R)

    def step(self) -> bool:
        """Pass one datagram through: returns True if it is dropped."""
        drop = not self._good
        if self._good:
            if self._rng.random() < self.P:
                self._good = False
        else:
            if self._rng.random() < self.R:
                self._good = True
        return drop

    def simulate(self, steps: int) -> int:
        """Number of drops over `steps` datagrams (bulk variant of step())."""
        drops = 0
        good = self._good
        P, R = self.P, self.R
        rand = self._rng.random
        for _ in range(steps):
            if good:
                if rand() < P:
                    good = False
            else:
                drops += 1
                if rand() < R:
                    good = True
        self._good = good
        return drops


class UniformLossChannel:
    """Independent per-datagram loss at a fixed rate."""

    def __init__(self, rate: float, seed: int = 0, rng: random.Random | None = None):
        if not 0.0 <= rate < 1.0:
            raise ValueError("loss rate must be in [0, 1)")
        self.rate = rate
        self._rng = rng if rng is not None else random.Random(seed)

    @property
    def state(self) -> str:
        return "good"

    @property
    def loss_rate(self) -> float:
        return self.rate

    def step(self) -> bool:
        return self._rng.random() < self.rate

    def simulate(self, steps: int) -> int:
        rate = self.rate
        rand = self._rng.random
        return sum(1 for _ in range(steps) if rand() < rate)


def channel_step(channel) -> tuple:
    """Advance the loss process by one datagram; returns (channel, dropped)."""
    return channel, channel.step()


@dataclass(frozen=True)
class LinkParams:
    """Fixed-delay link: one-way delay is rtt_ms / 2."""

    rtt_ms: float
    mtu: int = 1500
    seed: int = 0

    def __post_init__(self) -> None:
        if self.rtt_ms < 0:
            raise ValueError("rtt_ms must be >= 0")
        if self.mtu < 576:
            raise ValueError("mtu must be >= 576")


@dataclass(frozen=True)
class Delivered:
    delivered_at: float


@dataclass(frozen=True)
class Dropped:
    pass


def transmit(datagram_size: int, link: LinkParams, channel, now: float):
    """Send one datagram through the channel; Delivered(at) or Dropped."""
    if datagram_size > link.mtu:
        raise OversizedDatagram(f"{datagram_size} B exceeds MTU {link.mtu}")
    if channel.step():
        return Dropped()
    return Delivered(delivered_at=now + link.rtt_ms / 2.0)


class EventQueue:
    """Time-ordered queue; ties break by insertion order."""

    def __init__(self):
        self._heap: list = []
        self._seq = 0

    def push(self, time: float, item) -> None:
        heapq.heappush(self._heap, (time, self._seq, item))
        self._seq += 1

    def pop(self):
        time, _, item = heapq.heappop(self._heap)
        return time, item

    def __len__(self) -> int:
        return len(self._heap)


@dataclass
class TransmitRecord:
    """One datagram send, kept only when tracing is requested."""

    time: float
    sender: str
    datagram: object
    dropped: bool


@dataclass
class ConnectionTrace:
    """Outcome and counters of one simulated connection setup."""

    success: bool = False
    first_tx_time: float | None = None
    established_time: float | None = None
    datagrams: int = 0
    total_bytes: int = 0
    retransmissions: int = 0
    restarts: int = 0
    sends: list[TransmitRecord] | None = None


_DELIVERY = 0
_TIMER = 1


def simulate_connection(
    plan: HandshakePlan,
    config: EngineConfig,
    link: LinkParams,
    channel,
    record_sends: bool = False,
    max_virtual_time_ms: float | None = None,
) -> ConnectionTrace:
    """Run one connection setup over the lossy link until it is established.

    With unbounded restarts and a loss rate below 1 this terminates with
    probability 1; max_virtual_time_ms is a guard for pathological setups.
    """
    queue = EventQueue()
    initiator = InitiatorState(plan, config)
    responder = ResponderState(plan, config)
    trace = ConnectionTrace(sends=[] if record_sends else None)

    delay = link.rtt_ms / 2.0
    ip_overhead = config.ip_udp_overhead_bytes
    mtu = link.mtu
    chan_step = channel.step
    push = queue.push

    def send_burst(datagrams, now: float, to_initiator: bool) -> None:
        delivered = None
        sender = "responder" if to_initiator else "initiator"
        for d in datagrams:
            size = d.wire_size + ip_overhead
            if size > mtu:
                raise OversizedDatagram(f"{size} B exceeds MTU {mtu}")
            trace.datagrams += 1
            trace.total_bytes += size
            dropped = chan_step()
            if trace.sends is not None:
                trace.sends.append(TransmitRecord(now, sender, d, dropped))
            if not dropped:
                if delivered is None:
                    delivered = []
                delivered.append(d)
        if delivered:
            push(now + delay, (_DELIVERY, to_initiator, delivered))

    scheduled_seq = -1

    def sync_timer() -> None:
        nonlocal scheduled_seq
        if initiator.retransmit_timer is not None and initiator.timer_seq != scheduled_seq:
            scheduled_seq = initiator.timer_seq
            push(initiator.retransmit_timer, (_TIMER, initiator.timer_seq))

    trace.first_tx_time = 0.0
    send_burst(initiator.start(0.0), 0.0, to_initiator=False)
    sync_timer()

    ini_on_fragment = initiator.on_fragment
    rsp_on_fragment = responder.on_fragment

    while not initiator.established and not initiator.abandoned:
        if not len(queue):
            raise SimulationStalled("event queue empty before establishment")
        now, item = queue.pop()
        if max_virtual_time_ms is not None and now > max_virtual_time_ms:
            break
        if item[0] == _TIMER:
            if item[1] != initiator.timer_seq:
                continue
            out = initiator.on_timer(item[1], now)
            if out:
                send_burst(out, now, to_initiator=False)
            sync_timer()
        elif item[1]:  # delivery to the initiator
            for d in item[2]:
                out = ini_on_fragment(d, now)
                if out:
                    send_burst(out, now, to_initiator=False)
                if initiator.established:
                    break
            sync_timer()
        else:  # delivery to the responder
            for d in item[2]:
                out = rsp_on_fragment(d, now)
                if out:
                    send_burst(out, now, to_initiator=True)

    trace.success = initiator.established
    if trace.success:
        trace.established_time = now
    trace.retransmissions = initiator.retransmissions + responder.retransmissions
    trace.restarts = initiator.restart_count
    return trace
