"""Memory bank: FIFO semantics, neighbor sampling, and the top-k filter."""

from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cyclecontrast.errors import CapacityError, ParameterError
from cyclecontrast.memory import MemoryQueue, NeighborSplit, top_k_filter
from cyclecontrast.rng import make_rng


def unit_rows(rng, n, d):
    rows = rng.standard_normal((n, d))
    return (rows / np.linalg.norm(rows, axis=1, keepdims=True)).astype(np.float32)


def basis_rows(indices, d=8):
    rows = np.zeros((len(indices), d), dtype=np.float32)
    for i, j in enumerate(indices):
        rows[i, j % d] = 1.0
    return rows


class TestFifo:
    def test_oldest_evicted(self):
        q = MemoryQueue(capacity=4, dim=8)
        q.enqueue_dequeue(basis_rows([0, 1]), [0, 1])
        q.enqueue_dequeue(basis_rows([2, 3]), [2, 3])
        q.enqueue_dequeue(basis_rows([4, 5]), [4, 5])
        slots = q.slots_oldest_first()
        assert sorted(q.video_ids[slots].tolist()) == [2, 3, 4, 5]
        assert q.video_ids[slots[0]] == 2  # oldest survivor

    def test_empty_enqueue_is_identity(self):
        q = MemoryQueue(capacity=4, dim=8)
        q.enqueue_dequeue(basis_rows([0, 1]), [0, 1])
        before = (q.buffer.copy(), q.video_ids.copy(), q.write_ptr, q.fill)
        q.enqueue_dequeue(np.zeros((0, 8), dtype=np.float32), [])
        np.testing.assert_array_equal(before[0], q.buffer)
        np.testing.assert_array_equal(before[1], q.video_ids)
        assert (q.write_ptr, q.fill) == before[2:]

    def test_over_capacity_rejected(self):
        q = MemoryQueue(capacity=4, dim=8)
        with pytest.raises(CapacityError):
            q.enqueue_dequeue(basis_rows(range(5)), list(range(5)))

    def test_fill_saturates(self):
        q = MemoryQueue(capacity=8, dim=8)
        for i in range(10):
            q.enqueue_dequeue(basis_rows([i, i]), [i, i])
            assert q.fill == min(2 * (i + 1), 8)

    @given(st.lists(st.integers(0, 7), min_size=0, max_size=60), st.integers(3, 16))
    @settings(max_examples=40, deadline=None)
    def test_matches_reference_ring_buffer(self, sizes, capacity):
        q = MemoryQueue(capacity=capacity, dim=8)
        oracle: deque = deque(maxlen=capacity)
        next_vid = 0
        for n in sizes:
            n = min(n, capacity)
            rows = basis_rows(range(next_vid, next_vid + n))
            vids = list(range(next_vid, next_vid + n))
            q.enqueue_dequeue(rows, vids)
            for row, vid in zip(rows, vids):
                oracle.append((tuple(row.tolist()), vid))
            next_vid += n
            slots = q.slots_oldest_first()
            got = [
                (tuple(q.buffer[s].tolist()), int(q.video_ids[s])) for s in slots
            ]
            assert got == list(oracle)

    def test_thousand_step_oracle(self):
        rng = make_rng(99)
        q = MemoryQueue(capacity=64, dim=4)
        oracle: deque = deque(maxlen=64)
        vid = 0
        for _ in range(1000):
            n = int(rng.integers(0, 9))
            rows = unit_rows(rng, n, 4)
            vids = np.arange(vid, vid + n)
            vid += n
            q.enqueue_dequeue(rows, vids)
            for r, v in zip(rows, vids):
                oracle.append((r.tobytes(), int(v)))
            slots = q.slots_oldest_first()
            got = [(q.buffer[s].tobytes(), int(q.video_ids[s])) for s in slots]
            assert got == list(oracle)


class TestNeighborSplit:
    def fill_queue(self, n_rows, capacity=128, d=8, vid_of=lambda i: i):
        q = MemoryQueue(capacity=capacity, dim=d)
        rng = make_rng(1)
        for i in range(n_rows):
            q.enqueue_dequeue(unit_rows(rng, 1, d), [vid_of(i)])
        return q

    def test_remainder_of_one(self):
        q = self.fill_queue(12)
        split = q.sample_neighbor_split(11, query_vids=[999], rng=make_rng(0))
        assert split.neighbors.shape[0] == 11
        assert split.remainder.shape[0] == 1

    def test_query_vid_masked_everywhere(self):
        q = self.fill_queue(30, vid_of=lambda i: i % 5)
        split = q.sample_neighbor_split(10, query_vids=[2], rng=make_rng(0))
        assert 2 not in q.video_ids[split.neighbor_slots]
        assert 2 not in q.video_ids[split.remainder_slots]
        assert split.masked_count == 6

    def test_partition_invariant(self):
        q = self.fill_queue(50, vid_of=lambda i: i % 9)
        for trial in range(25):
            split = q.sample_neighbor_split(13, query_vids=[1, 4], rng=make_rng(trial))
            u, r = set(split.neighbor_slots.tolist()), set(split.remainder_slots.tolist())
            assert not (u & r)
            assert len(u) + len(r) + split.masked_count == q.fill

    def test_warmup_signal_when_short(self):
        q = self.fill_queue(10)
        assert q.sample_neighbor_split(10, query_vids=[999], rng=make_rng(0)) is None
        assert q.sample_neighbor_split(9, query_vids=[999], rng=make_rng(0)) is not None

    def test_selection_uniformity(self):
        q = self.fill_queue(100)
        counts = np.zeros(128, dtype=int)
        resamples, m_nb = 500, 10
        for trial in range(resamples):
            split = q.sample_neighbor_split(m_nb, query_vids=[999], rng=make_rng(7, trial))
            counts[split.neighbor_slots] += 1
        p = m_nb / 100
        sigma = np.sqrt(resamples * p * (1 - p))
        filled = q.slots_oldest_first()
        assert np.all(np.abs(counts[filled] - resamples * p) <= 4 * sigma)


class TestTopKFilter:
    def make_split(self, q):
        return q.sample_neighbor_split(
            q.fill - 1, query_vids=[10**6], rng=make_rng(0)
        )

    def test_identity_when_k_equals_size(self):
        q = MemoryQueue(capacity=16, dim=8)
        rng = make_rng(3)
        q.enqueue_dequeue(unit_rows(rng, 12, 8), np.arange(12))
        split = self.make_split(q)
        out = top_k_filter(unit_rows(rng, 4, 8), split, split.neighbors.shape[0])
        assert out is split  # unchanged object: downstream math is bit-identical

    def test_forced_ordering(self):
        parallel = np.array([[1, 0, 0, 0]], dtype=np.float32)
        orthogonal = np.array([[0, 1, 0, 0]], dtype=np.float32)
        split = NeighborSplit(
            neighbors=np.vstack([orthogonal, parallel]),
            neighbor_slots=np.array([0, 1]),
            remainder=np.zeros((0, 4), dtype=np.float32),
            remainder_slots=np.array([], dtype=np.int64),
            masked_count=0,
        )
        out = top_k_filter(parallel, split, 1)
        kept = split.neighbors[out.selected[0, 0]]
        np.testing.assert_array_equal(kept, parallel[0])

    def test_matches_full_sort_oracle(self):
        rng = make_rng(17)
        q = MemoryQueue(capacity=64, dim=8)
        q.enqueue_dequeue(unit_rows(rng, 40, 8), np.arange(40))
        split = q.sample_neighbor_split(20, query_vids=[999], rng=make_rng(1))
        queries = unit_rows(rng, 6, 8)
        k = 7
        out = top_k_filter(queries, split, k)
        sims = queries.astype(np.float64) @ split.neighbors.astype(np.float64).T
        for i in range(queries.shape[0]):
            order = sorted(
                range(20), key=lambda j: (-sims[i, j], split.neighbor_slots[j])
            )
            assert set(out.selected[i].tolist()) == set(order[:k])
            assert set(out.discarded[i].tolist()) == set(order[k:])

    def test_ties_break_to_lower_slot(self):
        row = np.array([0, 1, 0, 0], dtype=np.float32)
        split = NeighborSplit(
            neighbors=np.vstack([row, row, row]),
            neighbor_slots=np.array([5, 1, 3]),
            remainder=np.zeros((0, 4), dtype=np.float32),
            remainder_slots=np.array([], dtype=np.int64),
            masked_count=0,
        )
        out = top_k_filter(np.array([[1, 0, 0, 0]], dtype=np.float32), split, 1)
        # equal similarities: keep the row living in the lower slot id
        assert split.neighbor_slots[out.selected[0, 0]] == 1

    def test_k_bounds(self):
        q = MemoryQueue(capacity=8, dim=4)
        q.enqueue_dequeue(basis_rows([0, 1, 2], d=4), [0, 1, 2])
        split = q.sample_neighbor_split(2, query_vids=[99], rng=make_rng(0))
        queries = basis_rows([0], d=4)
        with pytest.raises(ParameterError):
            top_k_filter(queries, split, 0)
        with pytest.raises(ParameterError):
            top_k_filter(queries, split, 3)


class TestSerialization:
    def test_round_trip(self):
        rng = make_rng(5)
        q = MemoryQueue(capacity=16, dim=8)
        q.enqueue_dequeue(unit_rows(rng, 10, 8), np.arange(10))
        blob = q.to_bytes()
        loaded, consumed = MemoryQueue.from_bytes(blob)
        assert consumed == len(blob)
        np.testing.assert_array_equal(loaded.buffer, q.buffer)
        np.testing.assert_array_equal(loaded.video_ids, q.video_ids)
        assert (loaded.write_ptr, loaded.fill) == (q.write_ptr, q.fill)
