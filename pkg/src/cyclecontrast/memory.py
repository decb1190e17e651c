"""Fixed-capacity FIFO memory bank of key embeddings tagged with video ids.

The bank supplies two things each iteration: a randomly sampled neighbor
set used for the soft-nearest-neighbor forward step, and the remaining
(unmasked) entries used as negatives for the backward classification.
Rows belonging to any video in the current query batch are always masked
out of both.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, ContractError, FormatError, ParameterError
from .validation import check_unit_rows


@dataclass
class NeighborSplit:
    """One iteration's partition of the unmasked bank contents.

    ``neighbors``/``remainder`` are disjoint by slot id and together cover
    exactly the unmasked filled slots. When a top-k filter has been
    applied, ``selected`` holds per-query-row indices into ``neighbors``
    and ``discarded`` the per-row complement (those rows stay negatives).
    """

    neighbors: np.ndarray
    neighbor_slots: np.ndarray
    remainder: np.ndarray
    remainder_slots: np.ndarray
    masked_count: int
    selected: np.ndarray | None = None
    discarded: np.ndarray | None = None


class MemoryQueue:
    """Ring buffer of unit-norm embeddings with one video id per slot."""

    def __init__(self, capacity: int, dim: int):
        if capacity < 1 or dim < 1:
            raise ParameterError(
                f"capacity and dim must be >= 1, got {capacity} and {dim}"
            )
        self.capacity = int(capacity)
        self.dim = int(dim)
        self.buffer = np.zeros((capacity, dim), dtype=np.float32)
        self.video_ids = np.full(capacity, -1, dtype=np.int64)
        self.write_ptr = 0
        self.fill = 0

    def enqueue_dequeue(self, keys: np.ndarray, vids) -> None:
        """Append ``keys`` cyclically, evicting the oldest rows at capacity."""
        keys = np.asarray(keys, dtype=np.float32)
        vids = np.asarray(vids, dtype=np.int64)
        n = keys.shape[0]
        if n == 0:
            return
        if keys.ndim != 2 or keys.shape[1] != self.dim:
            raise ContractError(
                f"keys shape {keys.shape} does not match queue dim {self.dim}"
            )
        if vids.shape != (n,):
            raise ContractError(f"vids shape {vids.shape} does not match {n} keys")
        if n > self.capacity:
            raise CapacityError(
                f"cannot enqueue {n} keys into a queue of capacity {self.capacity}"
            )
        check_unit_rows(keys, "enqueued keys", tol=1e-5)
        idx = (self.write_ptr + np.arange(n)) % self.capacity
        self.buffer[idx] = keys
        self.video_ids[idx] = vids
        self.write_ptr = int((self.write_ptr + n) % self.capacity)
        self.fill = min(self.fill + n, self.capacity)

    def slots_oldest_first(self) -> np.ndarray:
        """Filled slot indices ordered from oldest to newest entry."""
        start = (self.write_ptr - self.fill) % self.capacity
        return (start + np.arange(self.fill)) % self.capacity

    def unmasked_slots(self, query_vids) -> np.ndarray:
        """Filled slots whose video id is absent from the query batch."""
        slots = self.slots_oldest_first()
        banned = np.unique(np.asarray(query_vids, dtype=np.int64))
        keep = ~np.isin(self.video_ids[slots], banned)
        return slots[keep]

    def snapshot_excluding(self, query_vids) -> tuple[np.ndarray, np.ndarray]:
        """Copies of all unmasked rows plus their slot ids."""
        slots = self.unmasked_slots(query_vids)
        return self.buffer[slots].copy(), slots

    def sample_neighbor_split(
        self, m_nb: int, query_vids, rng: np.random.Generator
    ) -> NeighborSplit | None:
        """Draw a neighbor set uniformly without replacement from the
        unmasked slots; everything else becomes the remainder.

        Returns None (a warm-up signal, not a failure) when fewer than
        ``m_nb + 1`` unmasked slots are available.
        """
        if m_nb < 1:
            raise ParameterError(f"neighbor set size must be >= 1, got {m_nb}")
        slots = self.unmasked_slots(query_vids)
        if slots.size < m_nb + 1:
            return None
        pick = rng.choice(slots.size, size=m_nb, replace=False)
        chosen = np.zeros(slots.size, dtype=bool)
        chosen[pick] = True
        u_slots = slots[chosen]
        r_slots = slots[~chosen]
        masked = int(self.fill - slots.size)
        return NeighborSplit(
            neighbors=self.buffer[u_slots].copy(),
            neighbor_slots=u_slots,
            remainder=self.buffer[r_slots].copy(),
            remainder_slots=r_slots,
            masked_count=masked,
        )

    # --- serialization (appended to checkpoint files) ------------------
    #
    # Little-endian block layout:
    #   capacity u32, dim u32, write_ptr u32, fill u32,
    #   buffer   capacity*dim float32,
    #   vids     capacity int64

    def to_bytes(self) -> bytes:
        head = struct.pack(
            "<IIII", self.capacity, self.dim, self.write_ptr, self.fill
        )
        return (
            head
            + np.ascontiguousarray(self.buffer, dtype="<f4").tobytes()
            + np.ascontiguousarray(self.video_ids, dtype="<i8").tobytes()
        )

    @classmethod
    def from_bytes(cls, blob: bytes, offset: int = 0) -> tuple["MemoryQueue", int]:
        if len(blob) < offset + 16:
            raise FormatError(f"queue block truncated at byte {len(blob)}")
        capacity, dim, ptr, fill = struct.unpack_from("<IIII", blob, offset)
        offset += 16
        nbuf = capacity * dim * 4
        nvid = capacity * 8
        if len(blob) < offset + nbuf + nvid:
            raise FormatError(
                f"queue block truncated at byte {len(blob)}: "
                f"expected {nbuf + nvid} payload bytes at offset {offset}"
            )
        q = cls(capacity, dim)
        q.buffer[...] = np.frombuffer(
            blob, dtype="<f4", count=capacity * dim, offset=offset
        ).reshape(capacity, dim)
        offset += nbuf
        q.video_ids[...] = np.frombuffer(blob, dtype="<i8", count=capacity, offset=offset)
        offset += nvid
        q.write_ptr = int(ptr)
        q.fill = int(fill)
        return q, offset


def top_k_filter(q_cycle: np.ndarray, split: NeighborSplit, k_top: int) -> NeighborSplit:
    """Keep, per query row, the ``k_top`` most cosine-similar neighbors.

    Discarded rows remain negatives. Ties break toward the lower slot id.
    ``k_top`` equal to the neighbor count is the identity (the split is
    returned unchanged, so downstream arithmetic is bit-identical to the
    unfiltered path).
    """
    m = split.neighbors.shape[0]
    if k_top <= 0:
        raise ParameterError(f"k_top must be >= 1, got {k_top}")
    if k_top > m:
        raise ParameterError(f"k_top {k_top} exceeds neighbor set size {m}")
    if k_top == m:
        return split
    q = np.asarray(q_cycle, dtype=np.float32)
    sims = q @ split.neighbors.T
    selected = np.empty((q.shape[0], k_top), dtype=np.int64)
    discarded = np.empty((q.shape[0], m - k_top), dtype=np.int64)
    for i in range(q.shape[0]):
        # lexsort: last key is primary, so order by (-sim, slot id)
        order = np.lexsort((split.neighbor_slots, -sims[i].astype(np.float64)))
        selected[i] = order[:k_top]
        discarded[i] = order[k_top:]
    return NeighborSplit(
        neighbors=split.neighbors,
        neighbor_slots=split.neighbor_slots,
        remainder=split.remainder,
        remainder_slots=split.remainder_slots,
        masked_count=split.masked_count,
        selected=selected,
        discarded=discarded,
    )
