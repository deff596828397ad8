"""Digit data handling: IDX files, rotations, and the environment stream.

An *environment* is a fixed rotation angle applied to every digit. The
training stream walks through the non-held-out angles one segment at a
time; the held-out angle only ever appears in evaluation sets.

``env_id`` on samples and batches records which rotation produced them.
It is diagnostic metadata for evaluation and logging only: nothing on
the training path reads it (the network ops do not even accept it), and
a metamorphic test keeps it that way.
"""

import gzip
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import backend

ROTATION_GRID = (0, 25, 50, 75, 100, 125, 150)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

IMAGE_SIDE = 28
N_PIXELS = IMAGE_SIDE * IMAGE_SIDE
_CENTER = (IMAGE_SIDE - 1) / 2.0  # 13.5

TRAIN_IMAGES_NAME = "train-images-idx3-ubyte"
TRAIN_LABELS_NAME = "train-labels-idx1-ubyte"
TEST_IMAGES_NAME = "t10k-images-idx3-ubyte"
TEST_LABELS_NAME = "t10k-labels-idx1-ubyte"


class IdxFormatError(ValueError):
    """The byte stream is not a well-formed IDX file of the expected kind."""


@dataclass
class Sample:
    """One labeled digit image. env_id is the rotation that produced it
    and is never an input to training."""

    pixels: np.ndarray
    label: int
    env_id: int

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64).reshape(N_PIXELS)
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        if not 0 <= self.label <= 9:
            raise ValueError(f"label {self.label} outside 0-9")
        if self.env_id not in ROTATION_GRID:
            raise ValueError(f"env_id {self.env_id} not on the rotation grid")


@dataclass
class Batch:
    """A set of samples as flat arrays: images (n, 784) in [0,1], integer
    labels, and per-sample env_id diagnostics."""

    images: np.ndarray
    labels: np.ndarray
    env_ids: np.ndarray

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        self.env_ids = np.ascontiguousarray(self.env_ids, dtype=np.int64)

    def __len__(self):
        return self.images.shape[0]


def _read_bytes(source):
    if isinstance(source, (bytes, bytearray)):
        return bytes(source)
    if hasattr(source, "read"):
        return source.read()
    path = os.fspath(source)
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def parse_idx(source):
    """Parse an IDX byte stream into images (n, 784) scaled to [0,1] or a
    label vector, depending on the magic number.

    source may be a path (optionally .gz), bytes, or a binary file object.
    """
    buf = _read_bytes(source)
    if len(buf) < 8:
        raise IdxFormatError("truncated IDX stream: no header")
    (magic,) = struct.unpack(">I", buf[:4])
    if magic == IMAGE_MAGIC:
        if len(buf) < 16:
            raise IdxFormatError("truncated IDX image header")
        n, rows, cols = struct.unpack(">III", buf[4:16])
        if (rows, cols) != (IMAGE_SIDE, IMAGE_SIDE):
            raise IdxFormatError(
                f"expected {IMAGE_SIDE}x{IMAGE_SIDE} images, got {rows}x{cols}"
            )
        need = 16 + n * N_PIXELS
        if len(buf) < need:
            raise IdxFormatError(
                f"truncated IDX images: {len(buf)} bytes, need {need}"
            )
        raw = np.frombuffer(buf, dtype=np.uint8, count=n * N_PIXELS, offset=16)
        return raw.reshape(n, N_PIXELS).astype(np.float64) / 255.0
    if magic == LABEL_MAGIC:
        (n,) = struct.unpack(">I", buf[4:8])
        if len(buf) < 8 + n:
            raise IdxFormatError(f"truncated IDX labels: {len(buf)} bytes")
        labels = np.frombuffer(buf, dtype=np.uint8, count=n, offset=8).astype(
            np.int64
        )
        if labels.size and labels.max() > 9:
            raise IdxFormatError("label values above 9")
        return labels
    raise IdxFormatError(f"unexpected magic 0x{magic:08x}")


def write_idx_images(path, images):
    """Write images (n, 784) in [0,1] as a standard IDX ubyte file."""
    images = np.asarray(images, dtype=np.float64)
    n = images.shape[0]
    raw = np.rint(images * 255.0).clip(0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGE_MAGIC, n, IMAGE_SIDE, IMAGE_SIDE))
        fh.write(raw.tobytes(order="C"))


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.int64)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", LABEL_MAGIC, labels.shape[0]))
        fh.write(labels.astype(np.uint8).tobytes())


def load_dataset(data_dir):
    """Load the four conventionally-named IDX files (plain or .gz) from
    data_dir. Returns (train_images, train_labels, test_images, test_labels).
    """
    arrays = []
    missing = []
    for name in (
        TRAIN_IMAGES_NAME,
        TRAIN_LABELS_NAME,
        TEST_IMAGES_NAME,
        TEST_LABELS_NAME,
    ):
        plain = os.path.join(data_dir, name)
        gz = plain + ".gz"
        if os.path.exists(plain):
            arrays.append(parse_idx(plain))
        elif os.path.exists(gz):
            arrays.append(parse_idx(gz))
        else:
            missing.append(name)
    if missing:
        raise FileNotFoundError(
            f"data files missing from {data_dir}: {', '.join(missing)} "
            "(supply MNIST IDX files or generate a corpus with "
            "`qreplay synth-data`)"
        )
    tr_x, tr_y, te_x, te_y = arrays
    if tr_x.shape[0] != tr_y.shape[0] or te_x.shape[0] != te_y.shape[0]:
        raise IdxFormatError("image/label counts disagree")
    return tr_x, tr_y, te_x, te_y


# --- rotation ---

_plan_cache = {}


def rotation_plan(degrees):
    """Bilinear resampling plan for rotating a 28x28 image by ``degrees``
    counterclockwise about the pixel-grid center (13.5, 13.5).

    Returns (indices, weights), both (784, 4): destination pixel o takes
    sum_k weights[o,k] * src[indices[o,k]]. Source positions outside the
    image contribute weight 0 (zero fill). Plans are cached per angle.
    """
    key = float(degrees)
    cached = _plan_cache.get(key)
    if cached is not None:
        return cached
    theta = math.radians(key)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    rr, cc = np.meshgrid(
        np.arange(IMAGE_SIDE, dtype=np.float64),
        np.arange(IMAGE_SIDE, dtype=np.float64),
        indexing="ij",
    )
    dr = rr.ravel() - _CENTER
    dc = cc.ravel() - _CENTER
    # Inverse mapping: where in the source does each output pixel come from.
    src_r = _CENTER + dr * cos_t + dc * sin_t
    src_c = _CENTER - dr * sin_t + dc * cos_t
    r0 = np.floor(src_r)
    c0 = np.floor(src_c)
    fr = src_r - r0
    fc = src_c - c0
    indices = np.zeros((N_PIXELS, 4), dtype=np.int64)
    weights = np.zeros((N_PIXELS, 4), dtype=np.float64)
    taps = (
        (r0, c0, (1.0 - fr) * (1.0 - fc)),
        (r0, c0 + 1, (1.0 - fr) * fc),
        (r0 + 1, c0, fr * (1.0 - fc)),
        (r0 + 1, c0 + 1, fr * fc),
    )
    for k, (tr, tc, w) in enumerate(taps):
        inside = (tr >= 0) & (tr < IMAGE_SIDE) & (tc >= 0) & (tc < IMAGE_SIDE)
        flat = (tr.clip(0, IMAGE_SIDE - 1) * IMAGE_SIDE + tc.clip(
            0, IMAGE_SIDE - 1
        )).astype(np.int64)
        indices[:, k] = np.where(inside, flat, 0)
        weights[:, k] = np.where(inside, w, 0.0)
    _plan_cache[key] = (indices, weights)
    return indices, weights


def rotate_batch(images, degrees):
    """Rotate flat images (n, 784) by ``degrees``; output clamped to [0,1]."""
    indices, weights = rotation_plan(degrees)
    images = np.ascontiguousarray(images, dtype=np.float64)
    return backend.apply_rotation_plan(images, indices, weights)


def rotate_image(pixels, degrees):
    """Rotate one image, accepting and returning either (28, 28) or (784,)."""
    pixels = np.asarray(pixels, dtype=np.float64)
    shape = pixels.shape
    out = rotate_batch(pixels.reshape(1, N_PIXELS), degrees)
    return out.reshape(shape)


# --- environment schedule ---


@dataclass
class EnvironmentSchedule:
    """Ordered rotation segments with one rotation held out of training."""

    segments: list  # of (degrees, step_count)
    held_out: int
    seed: int
    starts: np.ndarray = field(init=False)

    def __post_init__(self):
        counts = np.array([s for _, s in self.segments], dtype=np.int64)
        self.starts = np.concatenate(([0], np.cumsum(counts)))

    @property
    def total_steps(self):
        return int(self.starts[-1])

    def rotation_at(self, t):
        if not 0 <= t < self.total_steps:
            raise IndexError(f"step {t} outside [0, {self.total_steps})")
        seg = int(np.searchsorted(self.starts, t, side="right")) - 1
        return self.segments[seg][0]


def build_schedule(rotation_grid, held_out, steps_per_env, seed, order="ascending"):
    """One segment of steps_per_env steps per non-held-out rotation.

    order: "ascending" (default) walks the angles in increasing degrees;
    "shuffled" applies a seeded permutation instead.
    """
    grid = sorted(int(g) for g in rotation_grid)
    if held_out not in grid:
        raise ValueError(f"held-out rotation {held_out} not in grid {grid}")
    if steps_per_env <= 0:
        raise ValueError("steps_per_env must be positive")
    degrees = [g for g in grid if g != held_out]
    if order == "shuffled":
        perm = np.random.default_rng([seed, 9]).permutation(len(degrees))
        degrees = [degrees[i] for i in perm]
    elif order != "ascending":
        raise ValueError(f"unknown order {order!r}")
    segments = [(d, int(steps_per_env)) for d in degrees]
    return EnvironmentSchedule(segments, int(held_out), int(seed))


def next_batch(schedule, base_images, base_labels, t, batch_size):
    """The step-t training batch: batch_size base samples drawn uniformly
    without replacement, rotated by the segment's angle. Deterministic in
    (schedule.seed, t); between-step draws are independent.
    """
    degrees = schedule.rotation_at(t)  # also validates t
    n = base_images.shape[0]
    if batch_size > n:
        raise ValueError(f"batch_size {batch_size} exceeds base set size {n}")
    rng = np.random.default_rng([schedule.seed, 1, t])
    idx = rng.choice(n, size=batch_size, replace=False)
    images = rotate_batch(base_images[idx], degrees)
    return Batch(
        images,
        base_labels[idx],
        np.full(batch_size, degrees, dtype=np.int64),
    )


def test_sets(rotation_grid, base_test_images, base_test_labels):
    """One rotated evaluation batch per grid angle, held-out included."""
    if base_test_images.shape[0] == 0:
        raise ValueError("empty test base")
    sets = {}
    for degrees in sorted(int(g) for g in rotation_grid):
        sets[degrees] = Batch(
            rotate_batch(base_test_images, degrees),
            base_test_labels,
            np.full(base_test_images.shape[0], degrees, dtype=np.int64),
        )
    return sets
