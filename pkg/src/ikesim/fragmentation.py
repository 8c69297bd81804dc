"""Application-layer fragmentation and reassembly of IKEv2 messages.

Mirrors the RFC 7383 mechanism at the byte-accounting level: only encrypted
messages may be split into fragments, each fragment pays a fixed wire
overhead, and the plaintext IKE_SA_INIT exchange must fit into a single
datagram. Payload encoding is not bit-exact RFC 7383; all byte accounting in
the simulator uses the same overhead constants, so totals stay consistent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

# Default per-fragment overhead: IKE header 28 + encrypted-fragment payload
# header 8 + IV 16 + padding/ICV allowance 9, approximating AES-CBC/HMAC.
DEFAULT_FRAGMENT_OVERHEAD = 61
DEFAULT_FRAGMENT_THRESHOLD = 576
DEFAULT_IP_UDP_OVERHEAD = 28


class FragmentationError(Exception):
    pass


class UnfragmentableMessage(FragmentationError):
    """An unencrypted message exceeds one datagram and cannot be split."""


class InconsistentTotals(FragmentationError):
    """Fragments of one message disagree on total_fragments."""


@dataclass(frozen=True)
class Fragment:
    """One datagram-sized piece of a message. fragment_number is 1-based."""

    message_id: int
    fragment_number: int
    total_fragments: int
    payload: bytes
    wire_size: int

    def __post_init__(self) -> None:
        if not 1 <= self.fragment_number <= self.total_fragments:
            raise ValueError(
                f"fragment_number {self.fragment_number} outside 1..{self.total_fragments}"
            )


@dataclass(frozen=True)
class Incomplete:
    """Reassembly result when fragments are still missing."""

    missing: tuple[int, ...]


def fragment_sizes(total_payload: int, capacity: int) -> list[int]:
    """Payload byte counts per fragment: full chunks plus the remainder.

    A zero-length payload still occupies one (header-only) fragment.
    """
    if capacity <= 0:
        raise ValueError("capacity must be positive")
    if total_payload <= 0:
        return [0]
    sizes = [capacity] * (total_payload // capacity)
    rest = total_payload % capacity
    if rest:
        sizes.append(rest)
    return sizes


def fragment(
    message_id: int,
    body: bytes,
    capacity: int,
    encrypted: bool = True,
    fragment_overhead: int = DEFAULT_FRAGMENT_OVERHEAD,
    allow_oversize: bool = False,
) -> list[Fragment]:
    """Split a message body into fragments of at most `capacity` payload bytes.

    Unencrypted messages cannot use this mechanism: if the body exceeds one
    datagram, UnfragmentableMessage is raised unless allow_oversize is set
    (which models falling back to IP-layer fragmentation).
    """
    if capacity <= 0:
        raise ValueError("capacity must be positive")
    if not encrypted and len(body) > capacity and not allow_oversize:
        raise UnfragmentableMessage(
            f"message {message_id}: {len(body)} B plaintext exceeds "
            f"single-datagram capacity {capacity} B"
        )
    sizes = fragment_sizes(len(body), capacity)
    total = len(sizes)
    frags = []
    offset = 0
    for number, size in enumerate(sizes, start=1):
        chunk = body[offset : offset + size]
        offset += size
        frags.append(
            Fragment(
                message_id=message_id,
                fragment_number=number,
                total_fragments=total,
                payload=chunk,
                wire_size=size + fragment_overhead,
            )
        )
    return frags


@dataclass
class ReassemblyBuffer:
    """Collects fragments of one message until the set is complete.

    Duplicate delivery is idempotent; fragments that disagree on the total
    raise InconsistentTotals.
    """

    message_id: int
    expected_total: int | None = None
    received: dict[int, bytes] = field(default_factory=dict)

    def add(self, frag: Fragment) -> bool:
        """Store a fragment; returns True if it was new."""
        if frag.message_id != self.message_id:
            raise InconsistentTotals(
                f"fragment for message {frag.message_id} fed to buffer {self.message_id}"
            )
        if self.expected_total is None:
            self.expected_total = frag.total_fragments
        elif frag.total_fragments != self.expected_total:
            raise InconsistentTotals(
                f"message {self.message_id}: totals {self.expected_total} "
                f"vs {frag.total_fragments}"
            )
        if frag.fragment_number in self.received:
            return False
        self.received[frag.fragment_number] = frag.payload
        return True

    def reset(self) -> None:
        """Discard accumulated fragments and the expected total."""
        self.received.clear()
        self.expected_total = None

    @property
    def complete(self) -> bool:
        return self.expected_total is not None and len(self.received) == self.expected_total

    @property
    def missing(self) -> tuple[int, ...]:
        if self.expected_total is None:
            return ()
        return tuple(
            n for n in range(1, self.expected_total + 1) if n not in self.received
        )


def reassemble(buffer: ReassemblyBuffer) -> bytes | Incomplete:
    """Original message body if all fragments arrived, else the missing set."""
    if not buffer.complete:
        return Incomplete(missing=buffer.missing)
    assert buffer.expected_total is not None
    return b"".join(buffer.received[n] for n in range(1, buffer.expected_total + 1))
