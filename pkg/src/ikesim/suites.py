"""Byte-size models of the crypto suites negotiated during IKEv2 setup.

Every algorithm is represented purely by the number of bytes it puts on the
wire (public values, certificates, signatures), so connection setup cost can
be simulated exactly without running any real cryptography. A pluggable
material provider produces size-faithful stand-in bytes; swapping in a real
KEM or signature implementation later does not touch the rest of the engine.

Suite presets:
    classical -- AES-256-CBC / SHA-256 HMAC / 2048-bit MODP DHKE / ECDSA cert
    qrc       -- AES-256-CBC / SHA-256 HMAC / ML-KEM-768 / ML-DSA-87 cert
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from enum import Enum
from typing import Protocol

# Defaults for the wire costs the published key sizes do not cover.
# These are modeling choices, not measured ground truth; all are overridable.
CLASSICAL_CERT_KEY_BYTES = 91  # DER SubjectPublicKeyInfo, P-256
CLASSICAL_SIGNATURE_BYTES = 64  # raw ECDSA-P256 (r, s)
ML_DSA_87_SIGNATURE_BYTES = 4627


class AlgorithmRole(Enum):
    ENCRYPTION = "encryption"
    INTEGRITY = "integrity"
    KEY_ESTABLISHMENT = "key_establishment"
    AUTHENTICATION = "authentication"


class MaterialKind(Enum):
    """Which declared size of an algorithm a piece of material must fill."""

    SYMMETRIC_KEY = "symmetric_key"
    PUBLIC_OBJECT = "public_object"
    RESPONSE_OBJECT = "response_object"
    SIGNATURE = "signature"


@dataclass(frozen=True)
class AlgorithmSpec:
    """Wire-size description of a single algorithm.

    key_length is the published key size in bytes. public_object_size is
    what actually crosses the wire for this role (KE public value or KEM
    encapsulation object, certificate public key); it is zero for symmetric
    roles. response_object_size covers KEMs whose responder-direction
    object (ciphertext) differs from the initiator's public object; None
    means "same size in both directions".
    """

    name: str
    role: AlgorithmRole
    key_length: int
    public_object_size: int = 0
    signature_size: int = 0
    response_object_size: int | None = None

    def __post_init__(self) -> None:
        if self.key_length <= 0:
            raise ValueError(f"{self.name}: key_length must be positive")
        if self.public_object_size < 0:
            raise ValueError(f"{self.name}: public_object_size must be >= 0")
        if self.signature_size < 0:
            raise ValueError(f"{self.name}: signature_size must be >= 0")
        if self.response_object_size is not None and self.response_object_size < 0:
            raise ValueError(f"{self.name}: response_object_size must be >= 0")
        symmetric = (AlgorithmRole.ENCRYPTION, AlgorithmRole.INTEGRITY)
        if self.role in symmetric and self.public_object_size != 0:
            raise ValueError(f"{self.name}: {self.role.value} sends no public object")

    def object_size(self, response: bool = False) -> int:
        """Bytes of the on-wire object in the given direction."""
        if response and self.response_object_size is not None:
            return self.response_object_size
        return self.public_object_size

    def material_size(self, kind: MaterialKind) -> int:
        if kind is MaterialKind.SYMMETRIC_KEY:
            return self.key_length
        if kind is MaterialKind.PUBLIC_OBJECT:
            return self.public_object_size
        if kind is MaterialKind.RESPONSE_OBJECT:
            return self.object_size(response=True)
        return self.signature_size


@dataclass(frozen=True)
class CryptoSuite:
    """A named set of algorithms covering all four IKEv2 roles."""

    suite_id: str  # "classical" | "qrc" | "custom"
    encryption: AlgorithmSpec
    integrity: AlgorithmSpec
    key_establishments: tuple[AlgorithmSpec, ...]
    authentication: AlgorithmSpec

    def __post_init__(self) -> None:
        expected = {
            "encryption": (self.encryption, AlgorithmRole.ENCRYPTION),
            "integrity": (self.integrity, AlgorithmRole.INTEGRITY),
            "authentication": (self.authentication, AlgorithmRole.AUTHENTICATION),
        }
        for slot, (spec, role) in expected.items():
            if spec.role is not role:
                raise ValueError(f"suite {self.suite_id}: {slot} slot holds {spec.role.value}")
        if not self.key_establishments:
            raise ValueError(f"suite {self.suite_id}: at least one key establishment required")
        for spec in self.key_establishments:
            if spec.role is not AlgorithmRole.KEY_ESTABLISHMENT:
                raise ValueError(f"suite {self.suite_id}: {spec.name} is not a key establishment")
        if self.suite_id == "classical" and len(self.key_establishments) != 1:
            raise ValueError("classical suite uses exactly one key establishment")


def classical_suite(
    cert_key_bytes: int = CLASSICAL_CERT_KEY_BYTES,
    signature_bytes: int = CLASSICAL_SIGNATURE_BYTES,
) -> CryptoSuite:
    """Suite with AES-256-CBC, SHA-256 HMAC, 2048-bit MODP DHKE and ECDSA certs."""
    return CryptoSuite(
        suite_id="classical",
        encryption=AlgorithmSpec("AES-256-CBC", AlgorithmRole.ENCRYPTION, key_length=32),
        integrity=AlgorithmSpec("SHA-256-HMAC", AlgorithmRole.INTEGRITY, key_length=32),
        key_establishments=(
            AlgorithmSpec(
                "DHKE-2048-MODP",
                AlgorithmRole.KEY_ESTABLISHMENT,
                key_length=256,
                public_object_size=256,
            ),
        ),
        authentication=AlgorithmSpec(
            "ECDSA-P256",
            AlgorithmRole.AUTHENTICATION,
            key_length=cert_key_bytes,
            public_object_size=cert_key_bytes,
            signature_size=signature_bytes,
        ),
    )


def qrc_suite(
    signature_bytes: int = ML_DSA_87_SIGNATURE_BYTES,
    kem_response_bytes: int | None = None,
) -> CryptoSuite:
    """Suite with ML-KEM-768 key establishment and ML-DSA-87 certificates.

    The responder-direction KEM object defaults to the same 2400 bytes as
    the public object; pass kem_response_bytes to model an asymmetric pair.
    """
    return CryptoSuite(
        suite_id="qrc",
        encryption=AlgorithmSpec("AES-256-CBC", AlgorithmRole.ENCRYPTION, key_length=32),
        integrity=AlgorithmSpec("SHA-256-HMAC", AlgorithmRole.INTEGRITY, key_length=32),
        key_establishments=(
            AlgorithmSpec(
                "ML-KEM-768",
                AlgorithmRole.KEY_ESTABLISHMENT,
                key_length=2400,
                public_object_size=2400,
                response_object_size=kem_response_bytes,
            ),
        ),
        authentication=AlgorithmSpec(
            "ML-DSA-87",
            AlgorithmRole.AUTHENTICATION,
            key_length=2592,
            public_object_size=2592,
            signature_size=signature_bytes,
        ),
    )


def suite_by_name(name: str) -> CryptoSuite:
    if name == "classical":
        return classical_suite()
    if name == "qrc":
        return qrc_suite()
    raise ValueError(f"unknown suite {name!r}; expected 'classical' or 'qrc'")


def opaque_material(spec: AlgorithmSpec, kind: MaterialKind, seed: int) -> bytes:
    """Deterministic pseudo-random bytes of exactly the declared size.

    A pure function of (spec, kind, seed): repeat calls return identical
    bytes, different seeds give different bytes.
    """
    size = spec.material_size(kind)
    if size == 0:
        return b""
    rng = random.Random(f"{spec.name}/{kind.value}/{seed}")
    return rng.randbytes(size)


class MaterialProvider(Protocol):
    """Source of key/signature bytes; implementations must honor declared sizes."""

    def material(self, spec: AlgorithmSpec, kind: MaterialKind, seed: int) -> bytes:
        ...


class OpaqueMaterialProvider:
    """Default provider: size-faithful deterministic random bytes."""

    def material(self, spec: AlgorithmSpec, kind: MaterialKind, seed: int) -> bytes:
        return opaque_material(spec, kind, seed)
