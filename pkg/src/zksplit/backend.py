"""Proving backend contract: Setup / Prove / Verify over a constraint system.

Two interchangeable backends implement the contract:

  mock   -- transparent constraint re-checking.  The proof is a transcript
            of the full witness and verification replays every constraint.
            Deliberately NOT zero-knowledge and labeled test-only; it is
            the cryptography-free oracle used in CI and benchmarks.
  snark  -- preprocessing argument with constant-size proofs (snark.py).

Binary encodings share one frame:

    version byte || backend id byte || circuit digest (32 bytes) || payload

and every proof payload starts with the 32-byte statement digest, computed
as SHA-256 of the canonical statement encoding (little-endian u32 count
followed by 32-byte little-endian field elements).
"""

from __future__ import annotations

import enum
import hashlib
import json
import time
import zlib
from dataclasses import dataclass
from typing import Dict, List

from .circuit import ConstraintSystem, Witness
from .field import P

WIRE_VERSION = 1
BACKEND_IDS = {"mock": 1, "snark": 2}
_ID_TO_NAME = {v: k for k, v in BACKEND_IDS.items()}


class Verdict(enum.Enum):
    ACCEPT = "Accept"
    REJECT = "Reject"


class BackendError(Exception):
    pass


class UnsatisfiedRelationError(BackendError):
    """Raised by prove when the witness does not satisfy the relation."""


class DecodeError(BackendError):
    pass


def encode_frame(backend: str, circuit_digest: str, payload: bytes) -> bytes:
    return bytes([WIRE_VERSION, BACKEND_IDS[backend]]) + bytes.fromhex(circuit_digest) + payload


def decode_frame(data: bytes) -> tuple:
    """Returns (backend_name, circuit_digest_hex, payload)."""
    if len(data) < 34:
        raise DecodeError("truncated frame")
    if data[0] != WIRE_VERSION:
        raise DecodeError(f"version mismatch: {data[0]} != {WIRE_VERSION}")
    backend = _ID_TO_NAME.get(data[1])
    if backend is None:
        raise DecodeError(f"unknown backend id {data[1]}")
    return backend, data[2:34].hex(), data[34:]


@dataclass
class Statement:
    """Public field elements in circuit order."""

    values: List[int]

    def __post_init__(self) -> None:
        self.values = [int(v) % P for v in self.values]

    def to_bytes(self) -> bytes:
        out = bytearray(len(self.values).to_bytes(4, "little"))
        for v in self.values:
            out += v.to_bytes(32, "little")
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Statement":
        if len(data) < 4:
            raise DecodeError("truncated statement")
        n = int.from_bytes(data[:4], "little")
        if len(data) != 4 + 32 * n:
            raise DecodeError("truncated statement")
        return cls([int.from_bytes(data[4 + 32 * i : 36 + 32 * i], "little") for i in range(n)])

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


@dataclass
class Proof:
    """Opaque proof plus routing metadata and prover telemetry."""

    backend: str
    circuit_digest: str
    statement_digest: str
    body: bytes
    prove_time: float = 0.0

    def to_bytes(self) -> bytes:
        payload = bytes.fromhex(self.statement_digest) + self.body
        return encode_frame(self.backend, self.circuit_digest, payload)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Proof":
        backend, digest, payload = decode_frame(data)
        if len(payload) < 32:
            raise DecodeError("truncated proof")
        return cls(
            backend=backend,
            circuit_digest=digest,
            statement_digest=payload[:32].hex(),
            body=payload[32:],
        )

    @property
    def size_bytes(self) -> int:
        return len(self.to_bytes())


@dataclass
class KeyPair:
    backend: str
    proving_key: "object"
    verifying_key: "object"


def _pack_circuit(cs: ConstraintSystem) -> bytes:
    return zlib.compress(cs.to_json().encode(), level=6)


def _unpack_circuit(payload: bytes) -> ConstraintSystem:
    try:
        return ConstraintSystem.from_json_dict(json.loads(zlib.decompress(payload)))
    except (zlib.error, json.JSONDecodeError, KeyError, TypeError) as e:
        raise DecodeError(f"bad circuit payload: {e}") from None


@dataclass
class MockProvingKey:
    cs: ConstraintSystem

    @property
    def circuit_digest(self) -> str:
        return self.cs.digest()

    def to_bytes(self) -> bytes:
        return encode_frame("mock", self.circuit_digest, _pack_circuit(self.cs))

    @classmethod
    def from_payload(cls, payload: bytes) -> "MockProvingKey":
        return cls(cs=_unpack_circuit(payload))


class MockVerifyingKey(MockProvingKey):
    @classmethod
    def from_payload(cls, payload: bytes) -> "MockVerifyingKey":
        return cls(cs=_unpack_circuit(payload))


class Backend:
    """Interface shared by all proving backends."""

    name = "?"

    @classmethod
    def available(cls) -> bool:
        return True

    def setup(self, cs: ConstraintSystem, seed: bytes) -> KeyPair:
        raise NotImplementedError

    def prove(self, pk, statement: Statement, witness: Witness) -> Proof:
        raise NotImplementedError

    def verify(self, vk, statement: Statement, proof: Proof) -> Verdict:
        raise NotImplementedError


class MockBackend(Backend):
    """Replays every constraint against the witness transcript in the proof.

    Test-only: the proof leaks the entire witness by construction.
    """

    name = "mock"

    def setup(self, cs: ConstraintSystem, seed: bytes = b"") -> KeyPair:
        return KeyPair(
            backend="mock",
            proving_key=MockProvingKey(cs),
            verifying_key=MockVerifyingKey(cs),
        )

    def prove(self, pk: MockProvingKey, statement: Statement, witness: Witness) -> Proof:
        t0 = time.perf_counter()
        cs = pk.cs
        if len(witness) != cs.num_wires:
            raise UnsatisfiedRelationError("unsatisfied relation")
        if witness.statement(cs) != statement.values:
            raise UnsatisfiedRelationError("unsatisfied relation")
        if not cs.is_satisfied(witness):
            raise UnsatisfiedRelationError("unsatisfied relation")
        return Proof(
            backend="mock",
            circuit_digest=cs.digest(),
            statement_digest=statement.digest(),
            body=witness.to_bytes(),
            prove_time=time.perf_counter() - t0,
        )

    def verify(self, vk: MockVerifyingKey, statement: Statement, proof: Proof) -> Verdict:
        try:
            if proof.backend != "mock":
                return Verdict.REJECT
            if proof.circuit_digest != vk.circuit_digest:
                return Verdict.REJECT
            if proof.statement_digest != statement.digest():
                return Verdict.REJECT
            cs = vk.cs
            if len(statement.values) != cs.num_public:
                return Verdict.REJECT
            witness = Witness.from_bytes(proof.body)
            if len(witness) != cs.num_wires:
                return Verdict.REJECT
            if witness.statement(cs) != statement.values:
                return Verdict.REJECT
            return Verdict.ACCEPT if cs.is_satisfied(witness) else Verdict.REJECT
        except (ValueError, DecodeError):
            return Verdict.REJECT


def get_backend(name: str) -> Backend:
    if name == "mock":
        return MockBackend()
    if name == "snark":
        from . import snark

        return snark.QapSnarkBackend()
    raise BackendError(f"unknown backend {name!r}")


def backend_capabilities() -> Dict[str, bool]:
    from . import snark

    return {"mock": MockBackend.available(), "snark": snark.QapSnarkBackend.available()}


def load_proving_key(data: bytes):
    backend, digest, payload = decode_frame(data)
    if backend == "mock":
        key = MockProvingKey.from_payload(payload)
        if key.circuit_digest != digest:
            raise DecodeError("digest mismatch")
        return key
    from . import snark

    return snark.SnarkProvingKey.from_payload(payload, digest)


def load_verifying_key(data: bytes):
    backend, digest, payload = decode_frame(data)
    if backend == "mock":
        key = MockVerifyingKey.from_payload(payload)
        if key.circuit_digest != digest:
            raise DecodeError("digest mismatch")
        return key
    from . import snark

    return snark.SnarkVerifyingKey.from_payload(payload, digest)
