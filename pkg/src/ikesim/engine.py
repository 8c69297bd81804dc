"""IKEv2 connection-setup state machines for initiator and responder.

Two handshake shapes are supported:

* classical: the four-message flow (IKE_SA_INIT request/response followed by
  IKE_AUTH request/response), with the DHKE public value inside IKE_SA_INIT.
* qrc: IKE_SA_INIT carries a classical-sized key exchange plus an
  ADDITIONAL_KEY_EXCHANGE notification, then one IKE_INTERMEDIATE round and
  further IKE_FOLLOWUP_KE rounds move the large KEM objects inside encrypted
  (fragmentable) messages, and IKE_AUTH carries the certificate and signature.

Retransmission follows deployed IKEv2-over-UDP behavior: a request is
retransmitted in full (every fragment) on timer expiry with exponential
backoff; the responder answers any duplicate fragment of an already-answered
request by re-emitting the complete cached response; when the retry budget is
exhausted the initiator abandons the attempt and restarts the entire
handshake from IKE_SA_INIT.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .fragmentation import (
    DEFAULT_FRAGMENT_OVERHEAD,
    DEFAULT_FRAGMENT_THRESHOLD,
    DEFAULT_IP_UDP_OVERHEAD,
    ReassemblyBuffer,
    fragment,
    fragment_sizes,
)
from .suites import CryptoSuite, MaterialKind, MaterialProvider

# Fixed payload-item sizes for the protocol plumbing around the key material.
NONCE_BYTES = 32
SA_PROPOSAL_BYTES = 48
IDENTITY_BYTES = 12
TRAFFIC_SELECTOR_BYTES = 48
NOTIFY_ADDITIONAL_KE_BYTES = 8


class EngineError(Exception):
    pass


class ProtocolViolation(EngineError):
    """A fragment arrived that no legal peer could have produced."""


class ExchangeType(Enum):
    IKE_SA_INIT = "IKE_SA_INIT"
    IKE_INTERMEDIATE = "IKE_INTERMEDIATE"
    IKE_FOLLOWUP_KE = "IKE_FOLLOWUP_KE"
    IKE_AUTH = "IKE_AUTH"

    @property
    def encrypted(self) -> bool:
        """IKE_SA_INIT runs before keys exist; everything after is encrypted."""
        return self is not ExchangeType.IKE_SA_INIT


class Direction(Enum):
    REQUEST = "request"
    RESPONSE = "response"


@dataclass(frozen=True)
class MessageBlueprint:
    """Planned composition of one handshake message."""

    exchange: ExchangeType
    direction: Direction
    message_id: int
    encrypted: bool
    payload_items: tuple[tuple[str, int], ...]

    def __post_init__(self) -> None:
        if self.encrypted != self.exchange.encrypted:
            raise ValueError(f"{self.exchange.value} encrypted flag must be {self.exchange.encrypted}")

    @property
    def total_payload(self) -> int:
        return sum(size for _, size in self.payload_items)


@dataclass(frozen=True)
class HandshakePlan:
    """Ordered request/response blueprints for one connection setup."""

    suite: CryptoSuite
    blueprints: tuple[MessageBlueprint, ...]
    additional_ke_rounds: int

    def __post_init__(self) -> None:
        if len(self.blueprints) % 2 != 0:
            raise ValueError("blueprints must come in request/response pairs")
        for phase in range(self.num_phases):
            req, resp = self.blueprints[2 * phase], self.blueprints[2 * phase + 1]
            if req.direction is not Direction.REQUEST or resp.direction is not Direction.RESPONSE:
                raise ValueError(f"phase {phase}: directions out of order")
            if req.message_id != phase or resp.message_id != phase:
                raise ValueError(f"phase {phase}: message ids must be consecutive from 0")
            if req.exchange is not resp.exchange:
                raise ValueError(f"phase {phase}: request/response exchange mismatch")

    @property
    def num_phases(self) -> int:
        return len(self.blueprints) // 2

    def request_blueprint(self, phase: int) -> MessageBlueprint:
        return self.blueprints[2 * phase]

    def response_blueprint(self, phase: int) -> MessageBlueprint:
        return self.blueprints[2 * phase + 1]


@dataclass
class EngineConfig:
    """Timer policy, fragmentation constants and plan shape knobs."""

    additional_ke_rounds: int = 2
    initial_timeout_ms: float = 4000.0
    backoff_factor: float = 2.0
    max_retries: int = 5
    max_restarts: int | None = None  # None = keep restarting until established
    sa_init_policy: str = "error"  # or "ip_fragment"
    fragment_threshold_bytes: int = DEFAULT_FRAGMENT_THRESHOLD
    fragment_overhead_bytes: int = DEFAULT_FRAGMENT_OVERHEAD
    ip_udp_overhead_bytes: int = DEFAULT_IP_UDP_OVERHEAD
    # Size of the classical key exchange bootstrapping encryption in the
    # qrc IKE_SA_INIT; the KEM objects themselves ride in later rounds.
    hybrid_sa_init_ke_bytes: int = 256
    # Receiving fragment #1 again while reassembly is incomplete restarts
    # defragmentation, discarding earlier partial progress (the behavior of
    # deployed IKEv2 stacks, which treat it as the start of a fresh burst).
    restart_defrag_on_first_fragment: bool = True

    def __post_init__(self) -> None:
        if not 1 <= self.additional_ke_rounds <= 7:
            raise ValueError("additional_ke_rounds must be in 1..7")
        if self.initial_timeout_ms <= 0:
            raise ValueError("initial_timeout_ms must be positive")
        if self.backoff_factor < 1.0:
            raise ValueError("backoff_factor must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_restarts is not None and self.max_restarts < 0:
            raise ValueError("max_restarts must be >= 0 or None")
        if self.sa_init_policy not in ("error", "ip_fragment"):
            raise ValueError("sa_init_policy must be 'error' or 'ip_fragment'")
        if self.fragment_capacity <= 0:
            raise ValueError(
                "fragment_threshold_bytes leaves no payload capacity after overheads"
            )

    @property
    def fragment_capacity(self) -> int:
        """Payload bytes per fragment so one fragment fills one datagram."""
        return (
            self.fragment_threshold_bytes
            - self.ip_udp_overhead_bytes
            - self.fragment_overhead_bytes
        )


@dataclass(eq=False)
class Datagram:
    """One fragment on the wire, tagged with its place in the handshake."""

    __slots__ = (
        "exchange",
        "direction",
        "message_id",
        "fragment_number",
        "total_fragments",
        "payload",
        "wire_size",
        "attempt",
    )

    exchange: ExchangeType
    direction: Direction
    message_id: int
    fragment_number: int
    total_fragments: int
    payload: bytes
    wire_size: int
    attempt: int


# Events fed to the endpoint state machines.
@dataclass(frozen=True)
class Start:
    pass


@dataclass(frozen=True)
class FragmentArrived:
    datagram: Datagram


@dataclass(frozen=True)
class TimerExpired:
    timer_seq: int


Event = Start | FragmentArrived | TimerExpired
SendAction = Datagram


def plan_handshake(suite: CryptoSuite, config: EngineConfig) -> HandshakePlan:
    """Lay out the full message sequence for a suite under the given config."""

    def pair(exchange, message_id, req_items, resp_items):
        return (
            MessageBlueprint(exchange, Direction.REQUEST, message_id, exchange.encrypted, tuple(req_items)),
            MessageBlueprint(exchange, Direction.RESPONSE, message_id, exchange.encrypted, tuple(resp_items)),
        )

    blueprints: list[MessageBlueprint] = []
    auth = suite.authentication
    auth_items = (
        ("identity", IDENTITY_BYTES),
        ("cert", auth.public_object_size),
        ("signature", auth.signature_size),
        ("sa_proposal", SA_PROPOSAL_BYTES),
        ("traffic_selectors", TRAFFIC_SELECTOR_BYTES),
    )

    if suite.suite_id == "classical":
        ke = suite.key_establishments[0]
        init_req = [
            ("sa_proposal", SA_PROPOSAL_BYTES),
            ("ke_public", ke.object_size(response=False)),
            ("nonce", NONCE_BYTES),
        ]
        init_resp = [
            ("sa_proposal", SA_PROPOSAL_BYTES),
            ("ke_public", ke.object_size(response=True)),
            ("nonce", NONCE_BYTES),
        ]
        blueprints += pair(ExchangeType.IKE_SA_INIT, 0, init_req, init_resp)
        blueprints += pair(ExchangeType.IKE_AUTH, 1, auth_items, auth_items)
        rounds = 0
    else:
        init_items = [
            ("sa_proposal", SA_PROPOSAL_BYTES),
            ("ke_public", config.hybrid_sa_init_ke_bytes),
            ("nonce", NONCE_BYTES),
            ("notify_additional_ke", NOTIFY_ADDITIONAL_KE_BYTES),
        ]
        blueprints += pair(ExchangeType.IKE_SA_INIT, 0, init_items, init_items)
        rounds = config.additional_ke_rounds
        for r in range(1, rounds + 1):
            ke = suite.key_establishments[(r - 1) % len(suite.key_establishments)]
            exchange = ExchangeType.IKE_INTERMEDIATE if r == 1 else ExchangeType.IKE_FOLLOWUP_KE
            blueprints += pair(
                exchange,
                r,
                [("ke_public", ke.object_size(response=False))],
                [("ke_public", ke.object_size(response=True))],
            )
        blueprints += pair(ExchangeType.IKE_AUTH, rounds + 1, auth_items, auth_items)

    return HandshakePlan(suite=suite, blueprints=tuple(blueprints), additional_ke_rounds=rounds)


def datagram_count(plan: HandshakePlan, capacity: int, sa_init_policy: str = "error") -> int:
    """Datagrams a loss-free run of this plan puts on the wire."""
    total = 0
    for bp in plan.blueprints:
        if bp.encrypted or sa_init_policy == "ip_fragment":
            total += len(fragment_sizes(bp.total_payload, capacity))
        else:
            frags = fragment(bp.message_id, bytes(bp.total_payload), capacity, encrypted=False)
            total += len(frags)
    return total


def handshake_bytes(sends, ip_udp_overhead: int = DEFAULT_IP_UDP_OVERHEAD) -> int:
    """Total bytes for a sequence of sent datagrams, including IP/UDP headers."""
    total = 0
    count = 0
    for d in sends:
        total += d.wire_size
        count += 1
    return total + count * ip_udp_overhead


def _material_slot(plan: HandshakePlan, bp: MessageBlueprint, label: str):
    """Map a payload item to the algorithm whose material fills it."""
    suite = plan.suite
    if label == "cert":
        return suite.authentication, MaterialKind.PUBLIC_OBJECT
    if label == "signature":
        return suite.authentication, MaterialKind.SIGNATURE
    if label == "ke_public":
        response = bp.direction is Direction.RESPONSE
        kind = MaterialKind.RESPONSE_OBJECT if response else MaterialKind.PUBLIC_OBJECT
        if bp.exchange is ExchangeType.IKE_SA_INIT:
            if suite.suite_id == "classical":
                return suite.key_establishments[0], kind
            return None  # hybrid bootstrap KE is a bare size, no algorithm attached
        kes = suite.key_establishments
        return kes[(bp.message_id - 1) % len(kes)], kind
    return None


def message_body(
    plan: HandshakePlan,
    bp: MessageBlueprint,
    attempt: int = 0,
    provider: MaterialProvider | None = None,
) -> bytes:
    """Bytes of the message a blueprint describes.

    Without a provider the body is zero-filled (sizes are all the simulator
    needs); with one, key material slots are filled from it.
    """
    if provider is None:
        return bytes(bp.total_payload)
    parts = []
    for label, size in bp.payload_items:
        slot = _material_slot(plan, bp, label)
        if slot is None:
            parts.append(bytes(size))
            continue
        spec, kind = slot
        data = provider.material(spec, kind, seed=(attempt << 8) | bp.message_id)
        if len(data) != size:
            raise EngineError(
                f"material provider returned {len(data)} B for {label}, expected {size}"
            )
        parts.append(data)
    return b"".join(parts)


def build_message_datagrams(
    plan: HandshakePlan,
    bp: MessageBlueprint,
    config: EngineConfig,
    attempt: int,
    provider: MaterialProvider | None = None,
) -> list[Datagram]:
    """Fragment one planned message into ready-to-send datagrams."""
    body = message_body(plan, bp, attempt, provider)
    frags = fragment(
        bp.message_id,
        body,
        config.fragment_capacity,
        encrypted=bp.encrypted,
        fragment_overhead=config.fragment_overhead_bytes,
        allow_oversize=config.sa_init_policy == "ip_fragment",
    )
    return [
        Datagram(
            exchange=bp.exchange,
            direction=bp.direction,
            message_id=f.message_id,
            fragment_number=f.fragment_number,
            total_fragments=f.total_fragments,
            payload=f.payload,
            wire_size=f.wire_size,
            attempt=attempt,
        )
        for f in frags
    ]


class EndpointState:
    """State shared by both roles of the handshake."""

    role = "endpoint"

    def __init__(
        self,
        plan: HandshakePlan,
        config: EngineConfig,
        provider: MaterialProvider | None = None,
    ):
        self.plan = plan
        self.config = config
        self.provider = provider
        self.phase = 0
        self.attempt = 0
        self.established = False
        self.reassembly: ReassemblyBuffer | None = None
        self.retransmissions = 0  # datagrams re-sent beyond their first emission

    def _accept_into_buffer(self, d: Datagram) -> bool:
        """Add a fragment to the current reassembly; True when message complete."""
        buf = self.reassembly
        if buf is None or buf.message_id != d.message_id:
            buf = self.reassembly = ReassemblyBuffer(message_id=d.message_id)
        elif (
            self.config.restart_defrag_on_first_fragment
            and d.fragment_number == 1
            and buf.received
            and not buf.complete
        ):
            buf.reset()
        buf.add(d)
        return buf.complete

    def step(self, event: Event, now: float) -> list[Datagram]:
        raise NotImplementedError


class InitiatorState(EndpointState):
    """Drives the handshake: sends requests, retries on timeout, restarts."""

    role = "initiator"

    def __init__(self, plan, config, provider=None):
        super().__init__(plan, config, provider)
        self.outstanding_request: list[Datagram] | None = None
        self.retry_count = 0
        self.restart_count = 0
        self.retransmit_timer: float | None = None
        self.timer_seq = 0
        self.abandoned = False
        self._timeout_ms = config.initial_timeout_ms

    def step(self, event: Event, now: float) -> list[Datagram]:
        if isinstance(event, Start):
            return self.start(now)
        if isinstance(event, FragmentArrived):
            return self.on_fragment(event.datagram, now)
        if isinstance(event, TimerExpired):
            return self.on_timer(event.timer_seq, now)
        raise EngineError(f"initiator cannot handle {event!r}")

    def start(self, now: float) -> list[Datagram]:
        self.phase = 0
        return self._emit_request(now)

    def _emit_request(self, now: float) -> list[Datagram]:
        bp = self.plan.request_blueprint(self.phase)
        self.outstanding_request = build_message_datagrams(
            self.plan, bp, self.config, self.attempt, self.provider
        )
        self.retry_count = 0
        self._timeout_ms = self.config.initial_timeout_ms
        self._arm(now)
        return self.outstanding_request

    def _arm(self, now: float) -> None:
        self.retransmit_timer = now + self._timeout_ms
        self.timer_seq += 1

    def _cancel_timer(self) -> None:
        self.retransmit_timer = None
        self.timer_seq += 1

    def on_fragment(self, d: Datagram, now: float) -> list[Datagram]:
        if self.established or self.abandoned or d.attempt != self.attempt:
            return []
        if d.direction is not Direction.RESPONSE:
            raise ProtocolViolation("initiator received a request fragment")
        if d.message_id < self.phase:
            return []  # duplicate of a response already consumed
        if d.message_id > self.phase:
            raise ProtocolViolation(
                f"response {d.message_id} arrived while request {self.phase} outstanding"
            )
        expected = self.plan.response_blueprint(self.phase)
        if d.exchange is not expected.exchange:
            raise ProtocolViolation(
                f"{d.exchange.value} fragment during {expected.exchange.value} phase"
            )
        if not self._accept_into_buffer(d):
            return []
        # Response complete: move to the next exchange or finish.
        self.reassembly = None
        self.phase += 1
        if self.phase == self.plan.num_phases:
            self.established = True
            self.outstanding_request = None
            self._cancel_timer()
            return []
        return self._emit_request(now)

    def on_timer(self, timer_seq: int, now: float) -> list[Datagram]:
        if self.established or self.abandoned or timer_seq != self.timer_seq:
            return []
        assert self.outstanding_request is not None
        if self.retry_count < self.config.max_retries:
            self.retry_count += 1
            self._timeout_ms *= self.config.backoff_factor
            self._arm(now)
            self.retransmissions += len(self.outstanding_request)
            return self.outstanding_request
        # Retry budget exhausted: the whole handshake starts over.
        self.restart_count += 1
        if self.config.max_restarts is not None and self.restart_count > self.config.max_restarts:
            self.abandoned = True
            self._cancel_timer()
            return []
        self.attempt += 1
        self.phase = 0
        self.reassembly = None
        return self._emit_request(now)


class ResponderState(EndpointState):
    """Answers requests in plan order and replays the latest cached response."""

    role = "responder"

    def __init__(self, plan, config, provider=None):
        super().__init__(plan, config, provider)
        self.cached_response: list[Datagram] | None = None
        self.cached_message_id: int | None = None

    def step(self, event: Event, now: float) -> list[Datagram]:
        if isinstance(event, FragmentArrived):
            return self.on_fragment(event.datagram, now)
        raise EngineError(f"responder cannot handle {event!r}")

    def _reset_for_attempt(self, attempt: int) -> None:
        self.attempt = attempt
        self.phase = 0
        self.established = False
        self.reassembly = None
        self.cached_response = None
        self.cached_message_id = None

    def on_fragment(self, d: Datagram, now: float) -> list[Datagram]:
        if d.attempt < self.attempt:
            return []  # leftover of an abandoned attempt
        if d.attempt > self.attempt:
            self._reset_for_attempt(d.attempt)
        if d.direction is not Direction.REQUEST:
            raise ProtocolViolation("responder received a response fragment")
        if self.cached_message_id is not None and d.message_id == self.cached_message_id:
            # Duplicate of the request answered last: the response (all of it)
            # goes out again, as the peer evidently did not get it.
            assert self.cached_response is not None
            self.retransmissions += len(self.cached_response)
            return self.cached_response
        if d.message_id < self.phase:
            return []  # answered long ago; cache has moved on
        if d.message_id > self.phase:
            raise ProtocolViolation(
                f"request {d.message_id} arrived while expecting {self.phase}"
            )
        expected = self.plan.request_blueprint(self.phase)
        if d.exchange is not expected.exchange:
            raise ProtocolViolation(
                f"{d.exchange.value} fragment during {expected.exchange.value} phase"
            )
        if not self._accept_into_buffer(d):
            return []
        self.reassembly = None
        response = build_message_datagrams(
            self.plan,
            self.plan.response_blueprint(self.phase),
            self.config,
            self.attempt,
            self.provider,
        )
        self.cached_response = response
        self.cached_message_id = self.phase
        self.phase += 1
        if self.phase == self.plan.num_phases:
            self.established = True
        return response


def initiator_step(
    state: InitiatorState, event: Event, now: float
) -> tuple[InitiatorState, list[SendAction]]:
    """Advance the initiator machine; returns the state and datagrams to send."""
    return state, state.step(event, now)


def responder_step(
    state: ResponderState, event: FragmentArrived, now: float
) -> tuple[ResponderState, list[SendAction]]:
    """Advance the responder machine; returns the state and datagrams to send."""
    return state, state.step(event, now)
