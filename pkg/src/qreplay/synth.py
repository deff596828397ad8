"""Deterministic synthetic digit corpus.

Renders MNIST-shaped data (28x28 grayscale digits in [0,1], labels 0-9)
from the DejaVu font family bundled with matplotlib, with per-sample
jitter in font, size, slant, shear, position, and stroke intensity. Used
as the benchmark dataset when real MNIST IDX files are unavailable; the
corpus is written as standard IDX files so it flows through exactly the
same loading path.

Rendering is deterministic for a fixed seed on a fixed FreeType build;
regenerate rather than copy between machines if byte-identical files
matter.
"""

import json
import os
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .data import (
    IMAGE_SIDE,
    TEST_IMAGES_NAME,
    TEST_LABELS_NAME,
    TRAIN_IMAGES_NAME,
    TRAIN_LABELS_NAME,
    write_idx_images,
    write_idx_labels,
)

_FONT_NAMES = (
    "DejaVuSans.ttf",
    "DejaVuSans-Bold.ttf",
    "DejaVuSans-Oblique.ttf",
    "DejaVuSans-BoldOblique.ttf",
    "DejaVuSansMono.ttf",
    "DejaVuSansMono-Bold.ttf",
    "DejaVuSansMono-Oblique.ttf",
    "DejaVuSansMono-BoldOblique.ttf",
    "DejaVuSerif.ttf",
    "DejaVuSerif-Bold.ttf",
    "DejaVuSerif-Italic.ttf",
    "DejaVuSerif-BoldItalic.ttf",
)

_CANVAS = 56  # render at 2x and downsample for soft MNIST-like strokes

MANIFEST_NAME = "synth-manifest.json"


def bundled_font_paths():
    import matplotlib

    ttf_dir = Path(matplotlib.get_data_path()) / "fonts" / "ttf"
    paths = [ttf_dir / name for name in _FONT_NAMES]
    missing = [p.name for p in paths if not p.exists()]
    if missing:
        raise FileNotFoundError(f"bundled fonts missing: {missing}")
    return paths


def _render_digit(digit, rng, fonts):
    size = int(rng.integers(32, 47))
    font = fonts[int(rng.integers(0, len(fonts)))][size]
    img = Image.new("L", (_CANVAS, _CANVAS), 0)
    draw = ImageDraw.Draw(img)
    text = str(digit)
    x0, y0, x1, y1 = draw.textbbox((0, 0), text, font=font)
    draw.text(
        (
            (_CANVAS - (x1 - x0)) / 2.0 - x0,
            (_CANVAS - (y1 - y0)) / 2.0 - y0,
        ),
        text,
        fill=255,
        font=font,
    )
    angle = rng.uniform(-14.0, 14.0)
    img = img.rotate(angle, resample=Image.BILINEAR, center=(_CANVAS / 2, _CANVAS / 2))
    shear = rng.uniform(-0.22, 0.22)
    tx, ty = rng.uniform(-3.0, 3.0, size=2)
    img = img.transform(
        (_CANVAS, _CANVAS),
        Image.AFFINE,
        (1.0, shear, -shear * _CANVAS / 2 + tx, 0.0, 1.0, ty),
        resample=Image.BILINEAR,
    )
    img = img.resize((IMAGE_SIDE, IMAGE_SIDE), Image.LANCZOS)
    arr = np.asarray(img, dtype=np.float64) / 255.0
    arr *= rng.uniform(0.72, 1.0)  # stroke intensity variation
    return np.clip(arr, 0.0, 1.0).reshape(IMAGE_SIDE * IMAGE_SIDE)


def generate_images(n, rng, font_paths=None):
    """Render n digits; returns (images (n, 784), labels (n,))."""
    if font_paths is None:
        font_paths = bundled_font_paths()
    # Cache FreeType faces per (font, size); sizes span a small range.
    fonts = [
        {s: ImageFont.truetype(str(p), s) for s in range(32, 47)}
        for p in font_paths
    ]
    labels = rng.integers(0, 10, size=n)
    images = np.empty((n, IMAGE_SIDE * IMAGE_SIDE))
    for i in range(n):
        images[i] = _render_digit(int(labels[i]), rng, fonts)
    return images, labels.astype(np.int64)


def generate_corpus(n_train, n_test, seed):
    """Training and test splits from one seeded stream (train first)."""
    rng = np.random.default_rng([int(seed), 4])
    font_paths = bundled_font_paths()
    train_x, train_y = generate_images(n_train, rng, font_paths)
    test_x, test_y = generate_images(n_test, rng, font_paths)
    return train_x, train_y, test_x, test_y


def ensure_dataset(data_dir, n_train=10000, n_test=2000, seed=2026):
    """Write the corpus into data_dir as conventional IDX files, unless a
    matching corpus (same sizes and seed, per the manifest) already exists.
    Returns data_dir.
    """
    data_dir = Path(data_dir)
    manifest_path = data_dir / MANIFEST_NAME
    want = {"n_train": int(n_train), "n_test": int(n_test), "seed": int(seed)}
    names = (
        TRAIN_IMAGES_NAME,
        TRAIN_LABELS_NAME,
        TEST_IMAGES_NAME,
        TEST_LABELS_NAME,
    )
    if manifest_path.exists() and all((data_dir / n).exists() for n in names):
        with open(manifest_path) as fh:
            if json.load(fh) == want:
                return data_dir
    data_dir.mkdir(parents=True, exist_ok=True)
    train_x, train_y, test_x, test_y = generate_corpus(n_train, n_test, seed)
    write_idx_images(data_dir / TRAIN_IMAGES_NAME, train_x)
    write_idx_labels(data_dir / TRAIN_LABELS_NAME, train_y)
    write_idx_images(data_dir / TEST_IMAGES_NAME, test_x)
    write_idx_labels(data_dir / TEST_LABELS_NAME, test_y)
    tmp = manifest_path.with_suffix(".tmp")
    with open(tmp, "w") as fh:
        json.dump(want, fh)
    os.replace(tmp, manifest_path)
    return data_dir
