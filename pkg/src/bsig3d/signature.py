"""Binary signatures: pairwise comparison of normal projections, bit-packed.

Bit ``3*i + a`` of a signature holds the comparison on axis ``a`` (x=0, y=1,
z=2) for the ``i``-th neighbour pair, pairs enumerated as (m, n), m < n, in
lexicographic order. The payload is zero-padded to whole 128-bit blocks and
stored as little-endian 64-bit words, two per block.
"""
from __future__ import annotations

import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    BsigError,
    DegenerateGeometryError,
    MalformedInputError,
    ParameterError,
    PreconditionError,
    SignatureSkippedError,
)
from .geometry import PointCloud
from .local_frame import (
    CANDIDATE_MULTIPLIER,
    DEFAULT_THETA,
    align,
    compute_lrf,
    select_neighbors_angular,
    support_radius,
)

log = logging.getLogger(__name__)

BLOCK_BITS = 128
WORDS_PER_BLOCK = 2
FILE_MAGIC = b"3DBS"
FILE_VERSION = 1
_HEADER = struct.Struct("<4sBHI")
_RECORD = struct.Struct("<I")


def signature_length_bits(n_neighbors: int) -> tuple[int, int]:
    """``(payload, stored)`` bit counts for ``n_neighbors`` neighbours."""
    if n_neighbors < 2:
        raise ParameterError("n_neighbors must be >= 2")
    payload = 3 * n_neighbors * (n_neighbors - 1) // 2
    stored = BLOCK_BITS * math.ceil(payload / BLOCK_BITS)
    return payload, stored


def float_equivalents(n_neighbors: int) -> int:
    """Stored length expressed in 32-bit floats."""
    return signature_length_bits(n_neighbors)[1] // 32


def n_words(n_neighbors: int) -> int:
    return signature_length_bits(n_neighbors)[1] // 64


@dataclass(frozen=True, eq=False)
class BinarySignature:
    keypoint_index: int
    n_neighbors: int
    words: np.ndarray  # uint64, little-endian bit order

    def __post_init__(self):
        words = np.ascontiguousarray(self.words, dtype=np.uint64).reshape(-1)
        if len(words) != n_words(self.n_neighbors):
            raise ParameterError(
                f"{len(words)} words do not fit N={self.n_neighbors}"
            )
        words.setflags(write=False)
        object.__setattr__(self, "words", words)

    @property
    def payload_bits(self) -> int:
        return signature_length_bits(self.n_neighbors)[0]

    @property
    def stored_bits(self) -> int:
        return signature_length_bits(self.n_neighbors)[1]

    def bits(self, include_padding: bool = False) -> np.ndarray:
        raw = np.unpackbits(self.words.astype("<u8").view(np.uint8), bitorder="little")
        return raw if include_padding else raw[: self.payload_bits]

    def to_bytes(self) -> bytes:
        return self.words.astype("<u8").tobytes()

    @classmethod
    def from_bits(cls, keypoint_index: int, n_neighbors: int, bits) -> BinarySignature:
        payload, stored = signature_length_bits(n_neighbors)
        bits = np.asarray(bits, dtype=np.uint8).reshape(-1)
        if len(bits) != payload:
            raise ParameterError(f"expected {payload} bits, got {len(bits)}")
        padded = np.zeros(stored, dtype=np.uint8)
        padded[:payload] = bits
        words = np.packbits(padded, bitorder="little").view("<u8")
        return cls(int(keypoint_index), int(n_neighbors), words)

    @classmethod
    def from_bytes(cls, keypoint_index: int, n_neighbors: int, data: bytes) -> BinarySignature:
        return cls(int(keypoint_index), int(n_neighbors), np.frombuffer(data, dtype="<u8"))

    def __eq__(self, other):
        if not isinstance(other, BinarySignature):
            return NotImplemented
        return (
            self.keypoint_index == other.keypoint_index
            and self.n_neighbors == other.n_neighbors
            and np.array_equal(self.words, other.words)
        )

    def __hash__(self):
        return hash((self.keypoint_index, self.n_neighbors, self.to_bytes()))


class ProjectionTriplet(NamedTuple):
    px: float
    py: float
    pz: float


def project_normal(normal) -> ProjectionTriplet:
    """Components of a unit vector along the frame axes."""
    v = np.asarray(normal, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(v)) or abs(np.linalg.norm(v) - 1.0) > 1e-6:
        raise ParameterError("projection expects a finite unit vector")
    e = np.eye(3)
    return ProjectionTriplet(float(v @ e[0]), float(v @ e[1]), float(v @ e[2]))


def encode_pair(m, n) -> tuple[int, int, int]:
    """Per-axis bit: 1 where ``m``'s component is >= ``n``'s."""
    return tuple(int(a >= b) for a, b in zip(m, n))


def pair_indices(n_neighbors: int) -> tuple[np.ndarray, np.ndarray]:
    """All (m, n) with m < n, m-major order."""
    return np.triu_indices(n_neighbors, k=1)


def encode_projections(keypoint_index: int, projections: np.ndarray) -> BinarySignature:
    """Signature from an ``(N, 3)`` array of ordered projection triplets."""
    proj = np.asarray(projections, dtype=np.float64)
    n = len(proj)
    m_idx, n_idx = pair_indices(n)
    bits = (proj[m_idx] >= proj[n_idx]).astype(np.uint8).reshape(-1)
    return BinarySignature.from_bits(keypoint_index, n, bits)


def compute_signature(
    cloud: PointCloud,
    keypoint: int,
    n_neighbors: int = 32,
    theta: float = DEFAULT_THETA,
    *,
    project_positions: bool = False,
    candidate_multiplier: int = CANDIDATE_MULTIPLIER,
) -> BinarySignature:
    """Describe one keypoint.

    With ``project_positions`` the aligned neighbour positions (scaled to unit
    length) are compared instead of their normals.
    """
    if cloud.normals is None and not project_positions:
        raise PreconditionError("signatures need per-point normals")
    neighbors = select_neighbors_angular(
        cloud, keypoint, n_neighbors, theta, candidate_multiplier=candidate_multiplier
    )
    if len(neighbors) < n_neighbors:
        raise SignatureSkippedError(
            int(keypoint), f"only {len(neighbors)} of {n_neighbors} neighbours available"
        )
    radius = support_radius(neighbors)
    if radius <= 0:
        raise SignatureSkippedError(int(keypoint), "all neighbours coincide with the keypoint")
    lrf = compute_lrf(cloud, keypoint, radius)
    if project_positions:
        local = lrf.to_local(cloud.points[neighbors.neighbor_indices])
        proj = local / np.maximum(np.linalg.norm(local, axis=1, keepdims=True), np.finfo(float).tiny)
    else:
        proj = align(cloud, neighbors, lrf).normals
    return encode_projections(int(keypoint), proj)


def describe(
    cloud: PointCloud,
    keypoints: Sequence[int],
    n_neighbors: int = 32,
    theta: float = DEFAULT_THETA,
    *,
    threads: int = 1,
    project_positions: bool = False,
) -> tuple[list[BinarySignature], list[tuple[int, str]]]:
    """Signatures for every keypoint that can be described, plus the skipped ones.

    Output order follows ``keypoints`` regardless of ``threads``.
    """
    if cloud.normals is None and not project_positions:
        raise PreconditionError("signatures need per-point normals")
    cloud.index  # build once before workers share it

    def one(kp):
        try:
            return compute_signature(
                cloud, int(kp), n_neighbors, theta, project_positions=project_positions
            )
        except (SignatureSkippedError, DegenerateGeometryError) as exc:
            return exc

    kps = [int(k) for k in keypoints]
    if threads > 1 and len(kps) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, kps))
    else:
        results = [one(k) for k in kps]

    signatures, skipped = [], []
    for kp, res in zip(kps, results):
        if isinstance(res, BsigError):
            reason = res.reason if isinstance(res, SignatureSkippedError) else str(res)
            log.info("skipped keypoint %d: %s", kp, reason)
            skipped.append((kp, reason))
        else:
            signatures.append(res)
    return signatures, skipped


def signature_matrix(signatures: Sequence[BinarySignature]) -> np.ndarray:
    """Stack signatures into a ``(D, words)`` uint64 array."""
    if len(signatures) == 0:
        return np.empty((0, 0), dtype=np.uint64)
    ns = {s.n_neighbors for s in signatures}
    if len(ns) != 1:
        raise ParameterError(f"signatures mix neighbour counts {sorted(ns)}")
    return np.vstack([s.words for s in signatures])


# -- descriptor files -----------------------------------------------------------


def write_descriptors(path, signatures: Sequence[BinarySignature], n_neighbors: int) -> None:
    """Write the "3DBS" binary descriptor file."""
    n_words(n_neighbors)
    if not 0 < n_neighbors < 2**16:
        raise ParameterError("n_neighbors must fit in 16 bits")
    chunks = [_HEADER.pack(FILE_MAGIC, FILE_VERSION, n_neighbors, len(signatures))]
    for s in signatures:
        if s.n_neighbors != n_neighbors:
            raise ParameterError(f"signature N={s.n_neighbors} in a file of N={n_neighbors}")
        chunks.append(_RECORD.pack(s.keypoint_index))
        chunks.append(s.to_bytes())
    Path(path).write_bytes(b"".join(chunks))


def read_descriptors(path) -> tuple[int, list[BinarySignature]]:
    """Read a descriptor file; returns ``(n_neighbors, signatures)``."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise MalformedInputError(f"byte {len(data)}: truncated header")
    magic, version, n, count = _HEADER.unpack_from(data, 0)
    if magic != FILE_MAGIC:
        raise MalformedInputError("byte 0: bad magic, not a descriptor file")
    if version != FILE_VERSION:
        raise MalformedInputError(f"byte 4: unsupported version {version}")
    if n < 2:
        raise MalformedInputError(f"byte 5: invalid neighbour count {n}")
    payload, stored = signature_length_bits(n)
    block_bytes = stored // 8
    rec_size = _RECORD.size + block_bytes
    offset = _HEADER.size
    if len(data) != offset + count * rec_size:
        raise MalformedInputError(
            f"byte {len(data)}: expected {offset + count * rec_size} bytes for {count} signatures"
        )
    signatures = []
    for _ in range(count):
        (kp,) = _RECORD.unpack_from(data, offset)
        start = offset + _RECORD.size
        sig = BinarySignature.from_bytes(kp, n, data[start : start + block_bytes])
        if sig.bits(include_padding=True)[payload:].any():
            raise MalformedInputError(f"byte {start}: non-zero padding bits")
        signatures.append(sig)
        offset += rec_size
    return n, signatures
