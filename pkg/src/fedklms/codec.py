"""Shared-seed importance-sampling codec.

A client holding a local posterior q and the broadcast global prior p sends a
parameter vector by (1) cutting coordinates into blocks of bounded KL, (2)
regenerating, per block, K pseudo-random candidates from p using a stream whose
key both sides can derive, (3) picking one candidate with probability
proportional to the importance ratio q/p, and (4) transmitting only the
candidate's index.  The decoder rebuilds the same K candidates from the same
key and looks the index up.  The bit cost therefore tracks the KL between the
posteriors instead of the raw parameter width.

K is uniform across blocks and derived from the block KL *target*, not the
realized block KL: the greedy partitioner aims every block at the same target,
the optimal sample budget is then the same for every block, and the decoder
needs no client-side KL values.

Wire layout (bit-packed, MSB first within bytes, zero-padded to a byte):

    [round:32][client_id:32][flags:8][avg_block_kl: float32 big-endian]
    [num_blocks:32]
    [if flags bit0: num_blocks fields of ceil(log2 max_block_size) bits,
     each holding block_length - 1]
    [num_blocks index fields of index_bits bits]

index_bits and max_block_size are session constants carried in
:class:`CodecParams`, never in-band.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .distributions import ProductDistribution, kl_per_coordinate
from .streams import SampleStream, StreamKey, derive_stream

_LN2 = math.log(2.0)

# stream role labels; both sides must derive identical keys
_BLOCK_TAG = "block"
_SHARED_TAG = "shared"
_SELECT_TAG = "select"


class WireFormatError(ValueError):
    """Malformed serialized update; carries the byte offset of the problem."""

    def __init__(self, message: str, byte_offset: int):
        super().__init__(f"{message} (byte offset {byte_offset})")
        self.byte_offset = byte_offset


@dataclass(frozen=True)
class CodecParams:
    """Session constants shared by every client and the server."""

    d_kl_target: float
    overhead_r: float = 0.0
    max_block_size: int = 1024
    kl_min_threshold: float = 0.0
    kl_max_threshold: float = math.inf

    def __post_init__(self) -> None:
        if not self.d_kl_target > 0:
            raise ValueError(f"d_kl_target must be positive: {self.d_kl_target}")
        if self.overhead_r < 0:
            raise ValueError(f"overhead_r must be nonnegative: {self.overhead_r}")
        if self.max_block_size < 1:
            raise ValueError(f"max_block_size must be >= 1: {self.max_block_size}")
        if not self.kl_min_threshold <= self.d_kl_target <= self.kl_max_threshold:
            raise ValueError(
                "thresholds must bracket the target: "
                f"{self.kl_min_threshold} <= {self.d_kl_target} <= {self.kl_max_threshold}"
            )

    @property
    def index_bits(self) -> int:
        """Per-block index width; uniform across blocks (see module docstring)."""
        return samples_per_block(self.d_kl_target, self)[1]

    @property
    def length_field_bits(self) -> int:
        return max_block_size_field_bits(self.max_block_size)


def max_block_size_field_bits(max_block_size: int) -> int:
    """Width of one block-length wire field: ceil(log2 max_block_size).

    Lengths are in [1, max_block_size] and are stored as length - 1, which is
    exactly the 0 .. max_block_size-1 range the field can hold.
    """
    if max_block_size < 1:
        raise ValueError(f"max_block_size must be >= 1: {max_block_size}")
    return max(0, (max_block_size - 1).bit_length())


@dataclass(frozen=True)
class BlockPartition:
    """Contiguous cover of [0, dim) by blocks, given as sorted start offsets."""

    dim: int
    starts: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError(f"dimension must be positive: {self.dim}")
        if not self.starts or self.starts[0] != 0:
            raise ValueError("partition must start at coordinate 0")
        prev = -1
        for s in self.starts:
            if s <= prev:
                raise ValueError(f"starts must be strictly increasing: {self.starts}")
            prev = s
        if prev >= self.dim:
            raise ValueError(f"start {prev} out of range for dim {self.dim}")

    @property
    def num_blocks(self) -> int:
        return len(self.starts)

    @property
    def lengths(self) -> tuple[int, ...]:
        ends = self.starts[1:] + (self.dim,)
        return tuple(e - s for s, e in zip(self.starts, ends))

    def ranges(self) -> list[tuple[int, int]]:
        ends = self.starts[1:] + (self.dim,)
        return list(zip(self.starts, ends))

    def check_max_block_size(self, max_block_size: int) -> None:
        for lo, hi in self.ranges():
            if hi - lo > max_block_size:
                raise ValueError(
                    f"block [{lo}, {hi}) exceeds max_block_size {max_block_size}"
                )

    @staticmethod
    def from_lengths(lengths: tuple[int, ...] | list[int]) -> "BlockPartition":
        if not lengths:
            raise ValueError("partition needs at least one block")
        starts = [0]
        for ln in lengths[:-1]:
            if ln < 1:
                raise ValueError(f"block lengths must be >= 1: {lengths}")
            starts.append(starts[-1] + int(ln))
        if lengths[-1] < 1:
            raise ValueError(f"block lengths must be >= 1: {lengths}")
        return BlockPartition(dim=starts[-1] + int(lengths[-1]), starts=tuple(starts))


@dataclass
class EncodedUpdate:
    """One client-to-server message before/after serialization."""

    round_index: int
    client_id: int
    avg_block_kl: float
    num_blocks: int
    indices: np.ndarray
    includes_locations: bool = False
    block_lengths: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.indices.shape != (self.num_blocks,):
            raise ValueError(
                f"expected {self.num_blocks} indices, got shape {self.indices.shape}"
            )
        if self.includes_locations:
            if self.block_lengths is None or len(self.block_lengths) != self.num_blocks:
                raise ValueError("includes_locations requires one length per block")
        elif self.block_lengths is not None:
            raise ValueError("block_lengths present but includes_locations is False")


@dataclass(frozen=True)
class BitCost:
    """Exact bit accounting for one message; mirrors the wire layout."""

    payload_bits: int
    location_bits: int
    header_bits: int
    dimension: int

    def __post_init__(self) -> None:
        if min(self.payload_bits, self.location_bits, self.header_bits) < 0:
            raise ValueError("bit counts must be nonnegative")
        if self.dimension < 1:
            raise ValueError("dimension must be positive")

    @property
    def total_bits(self) -> int:
        return self.payload_bits + self.location_bits + self.header_bits

    @property
    def bpp(self) -> float:
        return self.total_bits / self.dimension

    @property
    def bpp_payload(self) -> float:
        return self.payload_bits / self.dimension


# round:32 + client:32 + flags:8 + avg_kl:32 + num_blocks:32
HEADER_BITS = 136


def samples_per_block(block_kl: float, params: CodecParams) -> tuple[int, int]:
    """(K, bits) for a block of the given KL (nats).

    bits = ceil((block_kl + overhead_r) / ln 2), at least 1; K = 2**bits.
    """
    if block_kl < 0:
        raise ValueError(f"block KL must be nonnegative: {block_kl}")
    bits = max(1, math.ceil((block_kl + params.overhead_r) / _LN2))
    return 2**bits, bits


def split_blocks_adaptive(kl: np.ndarray, params: CodecParams) -> BlockPartition:
    """Greedy left-to-right cut: close a block once its KL sum reaches the
    target or its length reaches max_block_size."""
    kl = np.asarray(kl, dtype=np.float64)
    if kl.ndim != 1 or kl.size == 0:
        raise ValueError("kl must be a non-empty 1-D vector")
    if np.any(kl < 0):
        raise ValueError("per-coordinate KL must be nonnegative")
    starts = [0]
    running = 0.0
    length = 0
    for i, k in enumerate(kl):
        running += float(k)
        length += 1
        closed = running >= params.d_kl_target or length == params.max_block_size
        if closed and i + 1 < kl.size:
            starts.append(i + 1)
            running = 0.0
            length = 0
    return BlockPartition(dim=int(kl.size), starts=tuple(starts))


def split_blocks_fixed(dim: int, block_size: int) -> BlockPartition:
    """Equal-size blocks (last one possibly shorter)."""
    if dim < 1:
        raise ValueError(f"dimension must be positive: {dim}")
    if block_size < 1:
        raise ValueError(f"block_size must be positive: {block_size}")
    return BlockPartition(dim=dim, starts=tuple(range(0, dim, block_size)))


def aggregate_block_locations(
    partitions: list[BlockPartition], max_block_size: int | None = None
) -> BlockPartition:
    """Merge per-client partitions into one: per position, the ceiling of the
    mean start over the clients that have that many blocks.

    The raw ceil-means can collide or go out of range, so the result is
    repaired: non-increasing starts are dropped, and if a cap is given, blocks
    over max_block_size are split at cap multiples.
    """
    if not partitions:
        raise ValueError("need at least one client partition")
    dim = partitions[0].dim
    for p in partitions:
        if p.dim != dim:
            raise ValueError(f"partitions disagree on dimension: {p.dim} vs {dim}")
    deepest = max(p.num_blocks for p in partitions)
    starts = []
    for m in range(deepest):
        having = [p.starts[m] for p in partitions if p.num_blocks > m]
        starts.append(math.ceil(sum(having) / len(having)))
    merged = [0]
    for s in starts[1:]:
        if merged[-1] < s < dim:
            merged.append(s)
    if max_block_size is not None:
        capped = [0]
        bounds = merged[1:] + [dim]
        for lo, hi in zip(merged, bounds):
            if lo > 0:
                capped.append(lo)
            while hi - lo > max_block_size:
                lo += max_block_size
                capped.append(lo)
        merged = capped
    return BlockPartition(dim=dim, starts=tuple(merged))


class ZeroMassCandidatesError(ValueError):
    """Every candidate in a block had zero mass under the client posterior."""

    def __init__(self, lo: int, hi: int):
        super().__init__(
            f"all candidates for block [{lo}, {hi}) have zero client mass; "
            "the posterior is not absolutely continuous enough for this budget"
        )


def selection_weights(
    q: ProductDistribution,
    p: ProductDistribution,
    lo: int,
    hi: int,
    candidates: np.ndarray,
) -> np.ndarray:
    """Normalized importance weights q/p over candidate rows (max-shifted
    softmax of the log ratios, so extreme ratios stay finite)."""
    log_q = q.log_mass_rows(lo, hi, candidates)
    log_p = p.log_mass_rows(lo, hi, candidates)
    # candidates come from p, so log_p is finite; log_q may be -inf
    log_w = log_q - log_p
    top = np.max(log_w)
    if np.isneginf(top):
        raise ZeroMassCandidatesError(lo, hi)
    weights = np.exp(log_w - top)
    weights /= weights.sum()
    return weights


def encode_block(
    q: ProductDistribution,
    p: ProductDistribution,
    lo: int,
    hi: int,
    num_samples: int,
    shared_stream: SampleStream,
    selector_stream: SampleStream,
) -> tuple[int, np.ndarray]:
    """Pick one of num_samples candidates drawn from p, importance-weighted by q.

    Returns (index, selected row).  The shared stream is consumed identically
    by :func:`decode_block`; the selector stream is client-only randomness.
    """
    if num_samples < 1:
        raise ValueError(f"need at least one candidate: {num_samples}")
    candidates = p.sample(lo, hi, shared_stream, count=num_samples)
    weights = selection_weights(q, p, lo, hi, candidates)
    u = selector_stream.next_uniform()
    cum = np.cumsum(weights)
    k = int(np.searchsorted(cum, u, side="right"))
    if k >= num_samples:
        # float roundoff left cum[-1] marginally below u; use the last
        # candidate that carries mass
        k = int(np.flatnonzero(weights > 0.0)[-1])
    return k, candidates[k]


def decode_block(
    p: ProductDistribution,
    lo: int,
    hi: int,
    num_samples: int,
    shared_stream: SampleStream,
    index: int,
) -> np.ndarray:
    """Regenerate the encoder's candidates and return the indexed one."""
    if not 0 <= index < num_samples:
        raise ValueError(f"index {index} out of range for {num_samples} candidates")
    candidates = p.sample(lo, hi, shared_stream, count=num_samples)
    return candidates[index]


def _block_streams(key_base: StreamKey, m: int) -> tuple[SampleStream, SampleStream]:
    block_key = key_base.child(_BLOCK_TAG, m)
    return (
        derive_stream(block_key.child(_SHARED_TAG)),
        derive_stream(block_key.child(_SELECT_TAG)),
    )


def bit_cost(
    num_blocks: int, params: CodecParams, includes_locations: bool, dimension: int
) -> BitCost:
    location = num_blocks * params.length_field_bits if includes_locations else 0
    return BitCost(
        payload_bits=num_blocks * params.index_bits,
        location_bits=location,
        header_bits=HEADER_BITS,
        dimension=dimension,
    )


def encode_update(
    q: ProductDistribution,
    p: ProductDistribution,
    partition: BlockPartition,
    params: CodecParams,
    key_base: StreamKey,
    round_index: int,
    client_id: int,
    include_locations: bool = False,
) -> tuple[EncodedUpdate, BitCost]:
    """Encode a full parameter vector block by block.

    key_base must identify (round, client) uniquely; the per-block stream keys
    are derived from it, so the stream for block m never depends on how other
    blocks were processed.
    """
    if q.dim != p.dim or q.dim != partition.dim:
        raise ValueError(
            f"dimension mismatch: q {q.dim}, p {p.dim}, partition {partition.dim}"
        )
    partition.check_max_block_size(params.max_block_size)
    num_samples, _ = samples_per_block(params.d_kl_target, params)
    kl = kl_per_coordinate(q, p)
    indices = np.empty(partition.num_blocks, dtype=np.int64)
    block_kls = np.empty(partition.num_blocks)
    for m, (lo, hi) in enumerate(partition.ranges()):
        shared, selector = _block_streams(key_base, m)
        indices[m], _ = encode_block(q, p, lo, hi, num_samples, shared, selector)
        block_kls[m] = kl[lo:hi].sum()
    upd = EncodedUpdate(
        round_index=round_index,
        client_id=client_id,
        # transmitted at 32 bits, so stored already rounded
        avg_block_kl=float(np.float32(block_kls.mean())),
        num_blocks=partition.num_blocks,
        indices=indices,
        includes_locations=include_locations,
        block_lengths=partition.lengths if include_locations else None,
    )
    return upd, bit_cost(partition.num_blocks, params, include_locations, q.dim)


def decode_update(
    p: ProductDistribution,
    partition: BlockPartition | None,
    params: CodecParams,
    key_base: StreamKey,
    upd: EncodedUpdate,
) -> np.ndarray:
    """Reconstruct the encoder's selected samples for a whole vector.

    If the update carries block locations they define the partition; otherwise
    the caller-provided partition must match the one used at encode time.
    """
    if upd.includes_locations:
        partition = BlockPartition.from_lengths(upd.block_lengths)
    if partition is None:
        raise ValueError("update has no locations and no partition was given")
    if partition.dim != p.dim:
        raise ValueError(f"partition dim {partition.dim} != distribution dim {p.dim}")
    if partition.num_blocks != upd.num_blocks:
        raise ValueError(
            f"partition has {partition.num_blocks} blocks, update has {upd.num_blocks}"
        )
    num_samples, _ = samples_per_block(params.d_kl_target, params)
    out = np.empty(p.dim)
    for m, (lo, hi) in enumerate(partition.ranges()):
        shared, _ = _block_streams(key_base, m)
        out[lo:hi] = decode_block(p, lo, hi, num_samples, shared, int(upd.indices[m]))
    return out


def should_update_partition(avg_block_kl: float, params: CodecParams) -> bool:
    """Strictly outside [kl_min_threshold, kl_max_threshold] means repartition."""
    return avg_block_kl > params.kl_max_threshold or avg_block_kl < params.kl_min_threshold


class _BitWriter:
    """MSB-first bit packer."""

    def __init__(self) -> None:
        self._bits: list[int] = []

    def write(self, value: int, width: int) -> None:
        if width < 0:
            raise ValueError(f"width must be nonnegative: {width}")
        # width 0 admits only value 0
        if not 0 <= value < (1 << width):
            raise ValueError(f"value {value} does not fit in {width} bits")
        for shift in range(width - 1, -1, -1):
            self._bits.append((value >> shift) & 1)

    @property
    def bit_length(self) -> int:
        return len(self._bits)

    def to_bytes(self) -> bytes:
        out = bytearray()
        acc = 0
        n = 0
        for b in self._bits:
            acc = (acc << 1) | b
            n += 1
            if n == 8:
                out.append(acc)
                acc = 0
                n = 0
        if n:
            out.append(acc << (8 - n))  # zero-pad the tail
        return bytes(out)


class _BitReader:
    """MSB-first bit unpacker with offset-bearing errors."""

    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    @property
    def byte_offset(self) -> int:
        return self._pos // 8

    def read(self, width: int) -> int:
        if self._pos + width > 8 * len(self._data):
            raise WireFormatError(
                f"truncated: needed {width} bits, {8 * len(self._data) - self._pos} left",
                self.byte_offset,
            )
        value = 0
        for _ in range(width):
            byte = self._data[self._pos // 8]
            bit = (byte >> (7 - self._pos % 8)) & 1
            value = (value << 1) | bit
            self._pos += 1
        return value


def serialize_update(upd: EncodedUpdate, params: CodecParams) -> bytes:
    """Pack an update per the wire layout in the module docstring."""
    if not 0 <= upd.round_index < 2**32:
        raise ValueError(f"round_index out of range: {upd.round_index}")
    if not 0 <= upd.client_id < 2**32:
        raise ValueError(f"client_id out of range: {upd.client_id}")
    w = _BitWriter()
    w.write(upd.round_index, 32)
    w.write(upd.client_id, 32)
    w.write(1 if upd.includes_locations else 0, 8)
    (kl_bits,) = struct.unpack(">I", struct.pack(">f", upd.avg_block_kl))
    w.write(kl_bits, 32)
    w.write(upd.num_blocks, 32)
    if upd.includes_locations:
        width = params.length_field_bits
        for ln in upd.block_lengths:
            if not 1 <= ln <= params.max_block_size:
                raise ValueError(f"block length {ln} outside [1, {params.max_block_size}]")
            w.write(ln - 1, width)
    width = params.index_bits
    for idx in upd.indices:
        idx = int(idx)
        if not 0 <= idx < (1 << width):
            raise ValueError(f"index {idx} does not fit in {width} bits")
        w.write(idx, width)
    return w.to_bytes()


def deserialize_update(data: bytes, params: CodecParams) -> EncodedUpdate:
    """Inverse of :func:`serialize_update`; rejects truncated or overlong input."""
    r = _BitReader(data)
    round_index = r.read(32)
    client_id = r.read(32)
    flags = r.read(8)
    if flags & ~0x01:
        raise WireFormatError(f"unknown flag bits 0x{flags:02x}", 8)
    includes_locations = bool(flags & 0x01)
    kl_bits = r.read(32)
    (avg_block_kl,) = struct.unpack(">f", struct.pack(">I", kl_bits))
    num_blocks = r.read(32)
    # plausibility bound before looping: index fields are >= 1 bit each
    if num_blocks * params.index_bits > 8 * len(data):
        raise WireFormatError(
            f"truncated: {num_blocks} blocks cannot fit in {len(data)} bytes",
            r.byte_offset,
        )
    lengths: tuple[int, ...] | None = None
    if includes_locations:
        width = params.length_field_bits
        lengths = tuple(r.read(width) + 1 for _ in range(num_blocks))
    indices = np.array(
        [r.read(params.index_bits) for _ in range(num_blocks)], dtype=np.int64
    )
    expected = HEADER_BITS + num_blocks * params.index_bits
    if includes_locations:
        expected += num_blocks * params.length_field_bits
    expected_bytes = (expected + 7) // 8
    if len(data) != expected_bytes:
        raise WireFormatError(
            f"overlong: message is {expected_bytes} bytes, got {len(data)}",
            expected_bytes,
        )
    return EncodedUpdate(
        round_index=round_index,
        client_id=client_id,
        avg_block_kl=float(avg_block_kl),
        num_blocks=num_blocks,
        indices=indices,
        includes_locations=includes_locations,
        block_lengths=lengths,
    )
