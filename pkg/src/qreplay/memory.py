"""Capacity-bounded replay memory with reservoir insertion.

Classic single-draw reservoir sampling: the first ``capacity`` inserts
append without consuming randomness; for the n-th insert (1-based,
n > capacity) one index j is drawn uniformly from [0, n) and the sample
replaces slot j when j < capacity. After n inserts every item has
inclusion probability capacity/n. The buffer owns its generator, so its
random stream is independent of the trainer's.
"""

import struct

import numpy as np

from .data import Batch, Sample


class MemoryEmpty(LookupError):
    """Sampling was requested from a buffer that holds nothing yet."""


class ReservoirBuffer:
    def __init__(self, capacity, seed, feature_dim=784):
        capacity = int(capacity)
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = capacity
        self.feature_dim = int(feature_dim)
        self.seen_count = 0
        self._count = 0
        self._images = np.zeros((capacity, self.feature_dim))
        self._labels = np.zeros(capacity, dtype=np.int64)
        self._env_ids = np.zeros(capacity, dtype=np.int64)
        self.rng = np.random.default_rng(seed)

    def __len__(self):
        return self._count

    def _insert_row(self, pixels, label, env_id):
        if self.capacity == 0:
            self.seen_count += 1
            return
        if self.seen_count < self.capacity:
            slot = self._count
            self._count += 1
        else:
            j = int(self.rng.integers(0, self.seen_count + 1))
            slot = j if j < self.capacity else -1
        if slot >= 0:
            self._images[slot] = pixels
            self._labels[slot] = label
            self._env_ids[slot] = env_id
        self.seen_count += 1

    def insert(self, sample: Sample):
        self._insert_row(sample.pixels, sample.label, sample.env_id)

    def insert_batch(self, batch: Batch):
        """Insert every sample of a batch, in order."""
        for i in range(len(batch)):
            self._insert_row(batch.images[i], batch.labels[i], batch.env_ids[i])

    def sample_batch(self, k):
        """k samples uniform with replacement; k may exceed the buffer size."""
        if self._count == 0:
            raise MemoryEmpty("memory is empty")
        if k <= 0:
            raise ValueError("k must be positive")
        idx = self.rng.integers(0, self._count, size=int(k))
        return Batch(
            self._images[idx], self._labels[idx], self._env_ids[idx]
        )

    def full_contents(self):
        """Every stored sample in stable slot order (may be empty)."""
        n = self._count
        return Batch(
            self._images[:n].copy(),
            self._labels[:n].copy(),
            self._env_ids[:n].copy(),
        )

    # --- dump/restore (optional part of the run checkpoint container) ---

    def dump(self, fh):
        """Append the buffer to an open binary file, generator state included."""
        state = self.rng.bit_generator.state
        if state["bit_generator"] != "PCG64":
            raise ValueError("only PCG64 buffer generators can be dumped")
        fh.write(b"QRBUF001")
        fh.write(
            struct.pack(
                "<QQQQ",
                self.capacity,
                self.feature_dim,
                self.seen_count,
                self._count,
            )
        )
        s = state["state"]
        fh.write(s["state"].to_bytes(16, "little"))
        fh.write(s["inc"].to_bytes(16, "little"))
        fh.write(struct.pack("<II", state["has_uint32"], state["uinteger"]))
        n = self._count
        fh.write(self._images[:n].astype("<f8").tobytes(order="C"))
        fh.write(self._labels[:n].astype("<i8").tobytes())
        fh.write(self._env_ids[:n].astype("<i8").tobytes())

    @classmethod
    def restore(cls, fh):
        magic = fh.read(8)
        if magic != b"QRBUF001":
            raise ValueError(f"not a buffer dump (magic {magic!r})")
        capacity, feature_dim, seen, count = struct.unpack("<QQQQ", fh.read(32))
        buf = cls(capacity, seed=0, feature_dim=feature_dim)
        state_int = int.from_bytes(fh.read(16), "little")
        inc = int.from_bytes(fh.read(16), "little")
        has_uint32, uinteger = struct.unpack("<II", fh.read(8))
        buf.rng.bit_generator.state = {
            "bit_generator": "PCG64",
            "state": {"state": state_int, "inc": inc},
            "has_uint32": has_uint32,
            "uinteger": uinteger,
        }
        buf.seen_count = seen
        buf._count = count
        nbytes = count * feature_dim * 8
        buf._images[:count] = np.frombuffer(fh.read(nbytes), dtype="<f8").reshape(
            count, feature_dim
        )
        buf._labels[:count] = np.frombuffer(fh.read(count * 8), dtype="<i8")
        buf._env_ids[:count] = np.frombuffer(fh.read(count * 8), dtype="<i8")
        return buf


def simulate_inclusion_counts(capacity, n_items, n_trials, seed):
    """Monte-Carlo check of the reservoir inclusion law, vectorized over
    trials. Implements exactly the single-draw rule ReservoirBuffer uses
    (a lockstep test ties the two together); returns, per item index, the
    number of trials in which the item survived all n_items inserts.
    """
    if capacity <= 0 or n_items < capacity:
        raise ValueError("need n_items >= capacity >= 1")
    rng = np.random.default_rng(seed)
    slots = np.tile(np.arange(capacity), (n_trials, 1))
    rows = np.arange(n_trials)
    for i in range(capacity, n_items):
        j = rng.integers(0, i + 1, size=n_trials)
        hit = j < capacity
        slots[rows[hit], j[hit]] = i
    counts = np.zeros(n_items, dtype=np.int64)
    idx, c = np.unique(slots, return_counts=True)
    counts[idx] = c
    return counts
