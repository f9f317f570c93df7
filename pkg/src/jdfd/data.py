"""Synthetic forgery families, image I/O, manifests, and batch assembly.

Real samples are smooth blob composites; fake samples splice the central
elliptical region of one real image onto another with a feathered alpha
mask, a per-channel color offset, and local Gaussian smoothing. Those three
manipulations (blend seam, color inconsistency, local smoothing) are the
artifact classes a detector has to find, and each family's parameters set
how subtle they are.

Everything is a pure function of (family spec, seed): each sample draws from
its own stream, derived as ``Rng(dataset_seed ^ sample_id)``, so datasets
regenerate byte-for-byte and generation order cannot matter.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .rng import Rng

LABEL_REAL = 0
LABEL_FAKE = 1


@dataclass(frozen=True)
class FamilySpec:
    """Parameters of one synthetic forgery family.

    ``blend_softness`` is the feather width of the splice boundary in
    pixels; ``region_scale`` the manipulated ellipse size relative to the
    image; ``color_shift`` the per-channel offset magnitude inside the
    region; ``smooth_sigma`` the blur applied to the spliced content.
    ``seed_space`` is the half-open id range the family's samples draw
    their per-sample streams from, so distinct families never share base
    textures even under one dataset seed.
    """

    name: str
    blend_softness: float
    region_scale: float
    color_shift: float
    smooth_sigma: float
    seed_space: tuple[int, int]

    def __post_init__(self):
        if self.blend_softness <= 0:
            raise ValueError(f"blend_softness must be > 0, got {self.blend_softness}")
        if not 0.0 < self.region_scale < 1.0:
            raise ValueError(f"region_scale must be in (0, 1), got {self.region_scale}")
        if self.color_shift < 0 or self.smooth_sigma < 0:
            raise ValueError("color_shift and smooth_sigma must be >= 0")
        if self.seed_space[0] >= self.seed_space[1]:
            raise ValueError(f"empty seed_space {self.seed_space}")


# Family "U" plants blatant artifacts (hard seam, strong color shift), "F"
# moderate ones, and "C" subtle ones, mirroring how easy the source datasets
# they stand in for are to tell apart by eye.
DEFAULT_FAMILIES: dict[str, FamilySpec] = {
    "U": FamilySpec("U", blend_softness=1.5, region_scale=0.55, color_shift=0.25,
                    smooth_sigma=1.5, seed_space=(0, 1 << 20)),
    "F": FamilySpec("F", blend_softness=3.0, region_scale=0.50, color_shift=0.12,
                    smooth_sigma=1.0, seed_space=(1 << 20, 2 << 20)),
    "C": FamilySpec("C", blend_softness=6.0, region_scale=0.45, color_shift=0.06,
                    smooth_sigma=0.5, seed_space=(2 << 20, 3 << 20)),
}


@dataclass
class Sample:
    """One image with an optional authenticity label (None = unlabeled)."""

    image: np.ndarray  # (1, 3, h, w), values in [0, 1]
    label: int | None
    family: str
    id: int

    def without_label(self) -> "Sample":
        return Sample(image=self.image, label=None, family=self.family, id=self.id)


# ---------------------------------------------------------------------------
# Image synthesis
# ---------------------------------------------------------------------------

def _gaussian_taps(sigma: float) -> np.ndarray:
    radius = max(1, int(math.ceil(3.0 * sigma)))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-0.5 * (xs / sigma) ** 2)
    return taps / taps.sum()


def _blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur of a (c, h, w) image with reflect padding."""
    if sigma <= 0:
        return img
    taps = _gaussian_taps(sigma)
    r = (len(taps) - 1) // 2
    for axis in (1, 2):
        pad = [(0, 0)] * 3
        pad[axis] = (r, r)
        padded = np.pad(img, pad, mode="reflect")
        img = sliding_window_view(padded, len(taps), axis=axis) @ taps
    return img


def _blob_image(rng: Rng, h: int, w: int) -> np.ndarray:
    """Smooth face-like base texture: positive Gaussian blobs plus low noise.

    Each channel is a sum of 5 to 10 positive blobs (geometry shared across
    channels, amplitudes per channel) plus low-amplitude correlated noise,
    min-max normalized to [0, 1].
    """
    n_blobs = rng.randint(5, 11)
    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    img = np.zeros((3, h, w), dtype=np.float64)
    scale = min(h, w)
    for _ in range(n_blobs):
        cy = (0.1 + 0.8 * rng.uniform()) * h
        cx = (0.1 + 0.8 * rng.uniform()) * w
        sy = (0.08 + 0.2 * rng.uniform()) * scale
        sx = (0.08 + 0.2 * rng.uniform()) * scale
        amps = 0.25 + 0.75 * rng.uniform(3)
        blob = np.exp(-0.5 * (((ys - cy) / sy) ** 2 + ((xs - cx) / sx) ** 2))
        img += amps[:, None, None] * blob
    noise = rng.gaussian(3 * h * w).reshape(3, h, w)
    img += 0.08 * _blur(noise, 2.0)
    lo, hi = img.min(), img.max()
    return (img - lo) / max(hi - lo, 1e-9)


def _feather_mask(spec: FamilySpec, rng: Rng, h: int, w: int) -> np.ndarray:
    """Alpha mask of the central ellipse, feathered over blend_softness px."""
    ay = spec.region_scale * (h / 2.0) * (0.85 + 0.3 * rng.uniform())
    ax = spec.region_scale * (w / 2.0) * (0.85 + 0.3 * rng.uniform())
    rbar = 0.5 * (ax + ay)
    ys = (np.arange(h, dtype=np.float64) - (h - 1) / 2.0)[:, None]
    xs = (np.arange(w, dtype=np.float64) - (w - 1) / 2.0)[None, :]
    radius = np.sqrt((ys * (rbar / ay)) ** 2 + (xs * (rbar / ax)) ** 2)
    return np.clip((rbar - radius) / spec.blend_softness + 0.5, 0.0, 1.0)


def generate_real(spec: FamilySpec, rng: Rng, h: int, w: int, sample_id: int = 0) -> Sample:
    if h < 16 or w < 16:
        raise ValueError(f"image size must be at least 16x16, got {h}x{w}")
    img = _blob_image(rng, h, w)
    return Sample(image=img[None], label=LABEL_REAL, family=spec.name, id=sample_id)


def generate_fake(
    spec: FamilySpec,
    rng: Rng,
    h: int,
    w: int,
    sample_id: int = 0,
    target_seed: int | None = None,
    source_seed: int | None = None,
) -> Sample:
    """Splice a source region into a target image with the family's artifacts.

    Pixels strictly outside the feathered ellipse come from the target image
    bit for bit. The seed overrides exist so degenerate manipulations (same
    source and target) can be constructed directly.
    """
    if h < 16 or w < 16:
        raise ValueError(f"image size must be at least 16x16, got {h}x{w}")
    if target_seed is None:
        target_seed = rng.next_u64()
    if source_seed is None:
        source_seed = rng.next_u64()
    target = _blob_image(Rng(target_seed), h, w)
    source = _blob_image(Rng(source_seed), h, w)

    alpha = _feather_mask(spec, rng, h, w)
    signs = np.where(rng.uniform(3) < 0.5, -1.0, 1.0)
    mags = spec.color_shift * (0.7 + 0.6 * rng.uniform(3))
    shift = signs * mags

    inner = _blur(source, spec.smooth_sigma) + shift[:, None, None]
    fake = target * (1.0 - alpha) + inner * alpha
    np.clip(fake, 0.0, 1.0, out=fake)
    return Sample(image=fake[None], label=LABEL_FAKE, family=spec.name, id=sample_id)


def sample_rng(dataset_seed: int, sample_id: int) -> Rng:
    """Per-sample stream: SplitMix64 seeded with dataset_seed XOR sample_id."""
    return Rng(dataset_seed ^ sample_id)


# ---------------------------------------------------------------------------
# PPM (binary P6) I/O
# ---------------------------------------------------------------------------

class PpmError(ValueError):
    """Malformed PPM stream; carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


def save_ppm(image: np.ndarray) -> bytes:
    """Encode a (3, h, w) or (1, 3, h, w) [0,1] image as binary PPM.

    Quantization is floor(p * 255 + 0.5), clamped to [0, 255].
    """
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 4 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"expected a (3, h, w) image, got shape {arr.shape}")
    _, h, w = arr.shape
    quantized = np.clip(np.floor(arr * 255.0 + 0.5), 0, 255).astype(np.uint8)
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    return header + quantized.transpose(1, 2, 0).tobytes()


def _skip_ppm_space(data: bytes, pos: int) -> int:
    while pos < len(data):
        ch = data[pos : pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
        else:
            break
    return pos


def _read_ppm_int(data: bytes, pos: int, what: str) -> tuple[int, int]:
    pos = _skip_ppm_space(data, pos)
    start = pos
    while pos < len(data) and data[pos : pos + 1].isdigit():
        pos += 1
    if pos == start:
        raise PpmError(f"expected {what}", start)
    return int(data[start:pos]), pos


def load_ppm(data: bytes) -> np.ndarray:
    """Decode a binary PPM into a (1, 3, h, w) float64 image (p = v / 255)."""
    if data[:2] != b"P6":
        raise PpmError(f"expected magic 'P6', got {data[:2]!r}", 0)
    pos = 2
    width, pos = _read_ppm_int(data, pos, "width")
    height, pos = _read_ppm_int(data, pos, "height")
    maxval, pos = _read_ppm_int(data, pos, "maxval")
    if maxval != 255:
        raise PpmError(f"unsupported maxval {maxval}", pos)
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise PpmError("expected single whitespace after maxval", pos)
    pos += 1
    need = width * height * 3
    payload = data[pos : pos + need]
    if len(payload) != need:
        raise PpmError(
            f"truncated payload: wanted {need} bytes, got {len(payload)}", pos + len(payload)
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return (pixels.astype(np.float64) / 255.0).transpose(2, 0, 1)[None]


# ---------------------------------------------------------------------------
# Datasets on disk
# ---------------------------------------------------------------------------

@dataclass
class ManifestEntry:
    path: str  # relative to the manifest's directory
    label: int | None
    family: str
    id: int


@dataclass
class DatasetManifest:
    family: str
    counts: tuple[int, int, int, int]  # (real_train, fake_train, real_test, fake_test)
    seed: int
    root: str
    entries: list[ManifestEntry]


TRAIN_MANIFEST = "train_manifest.tsv"
TEST_MANIFEST = "test_manifest.tsv"


def write_manifest(entries: list[ManifestEntry], path: str) -> None:
    entries = sorted(entries, key=lambda e: e.id)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in entries:
            label = "-" if e.label is None else str(e.label)
            fh.write(f"{e.path}\t{label}\t{e.family}\t{e.id}\n")


def load_manifest(path: str) -> DatasetManifest:
    root = os.path.dirname(os.path.abspath(path))
    entries: list[ManifestEntry] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 tab-separated fields")
            rel, label_s, family, id_s = parts
            label = None if label_s == "-" else int(label_s)
            entries.append(ManifestEntry(path=rel, label=label, family=family, id=int(id_s)))
    families = {e.family for e in entries}
    family = families.pop() if len(families) == 1 else "mixed"
    labels = [e.label for e in entries]
    counts = (labels.count(0), labels.count(1), 0, 0)
    return DatasetManifest(family=family, counts=counts, seed=0, root=root, entries=entries)


def load_samples(manifest: DatasetManifest, dtype=np.float64) -> list[Sample]:
    samples = []
    for e in manifest.entries:
        with open(os.path.join(manifest.root, e.path), "rb") as fh:
            image = load_ppm(fh.read()).astype(dtype)
        samples.append(Sample(image=image, label=e.label, family=e.family, id=e.id))
    return samples


def make_dataset(
    spec: FamilySpec,
    counts: tuple[int, int, int, int],
    seed: int,
    out_dir: str,
    h: int,
    w: int,
) -> tuple[DatasetManifest, DatasetManifest]:
    """Generate one family's images and manifests under out_dir/<family>.

    ``counts`` is (real_train, fake_train, real_test, fake_test). Sample ids
    are consecutive from the family's seed space, so train and test sets are
    disjoint by construction and regeneration is byte-identical.
    """
    if any(c < 1 for c in counts):
        raise ValueError(f"all counts must be >= 1, got {counts}")
    family_dir = os.path.join(out_dir, spec.name)
    os.makedirs(family_dir, exist_ok=True)
    next_id = spec.seed_space[0]
    splits: list[list[ManifestEntry]] = []
    for split_idx, (n_real, n_fake) in enumerate([counts[0:2], counts[2:4]]):
        entries = []
        for label, n in ((LABEL_REAL, n_real), (LABEL_FAKE, n_fake)):
            for _ in range(n):
                sid = next_id
                next_id += 1
                rng = sample_rng(seed, sid)
                if label == LABEL_REAL:
                    sample = generate_real(spec, rng, h, w, sample_id=sid)
                else:
                    sample = generate_fake(spec, rng, h, w, sample_id=sid)
                fname = f"{sid:08d}.ppm"
                with open(os.path.join(family_dir, fname), "wb") as fh:
                    fh.write(save_ppm(sample.image))
                entries.append(ManifestEntry(path=fname, label=label, family=spec.name, id=sid))
        splits.append(entries)
    write_manifest(splits[0], os.path.join(family_dir, TRAIN_MANIFEST))
    write_manifest(splits[1], os.path.join(family_dir, TEST_MANIFEST))
    train = DatasetManifest(spec.name, counts, seed, family_dir, sorted(splits[0], key=lambda e: e.id))
    test = DatasetManifest(spec.name, counts, seed, family_dir, sorted(splits[1], key=lambda e: e.id))
    return train, test


# ---------------------------------------------------------------------------
# Batch assembly
# ---------------------------------------------------------------------------

class BatchStream:
    """Epoch-wise batch iterator over primary plus unlabeled foreign samples.

    ``floor(foreign_ratio * len(primary))`` foreign samples are drawn once
    (without replacement, split evenly across the foreign families and
    near-balanced between real and fake), stripped of their labels, and
    joined with the primary training set. Every epoch reshuffles the union.
    """

    def __init__(
        self,
        primary: list[Sample],
        foreign_sets: list[list[Sample]],
        batch_size: int,
        foreign_ratio: float,
        rng: Rng,
    ):
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        if foreign_ratio < 0:
            raise ValueError(f"foreign_ratio must be >= 0, got {foreign_ratio}")
        self.batch_size = batch_size
        self.rng = rng
        n_foreign = int(foreign_ratio * len(primary))
        if n_foreign > 0 and not foreign_sets:
            raise ValueError("foreign_ratio > 0 but no foreign samples were provided")
        self.foreign_count = n_foreign
        pool = list(primary)
        if n_foreign > 0:
            per_family = self._split_counts(n_foreign, len(foreign_sets))
            for family_samples, quota in zip(foreign_sets, per_family):
                pool.extend(self._draw_balanced(family_samples, quota))
        self.union = pool

    def _split_counts(self, total: int, ways: int) -> list[int]:
        base = total // ways
        counts = [base] * ways
        for i in range(total - base * ways):
            counts[i] += 1
        return counts

    def _draw_balanced(self, samples: list[Sample], quota: int) -> list[Sample]:
        reals = [s for s in samples if s.label == LABEL_REAL]
        fakes = [s for s in samples if s.label == LABEL_FAKE]
        n_real = quota - quota // 2
        n_fake = quota // 2
        if n_real > len(reals) or n_fake > len(fakes):
            raise ValueError(
                f"foreign family has too few samples: need {n_real} real / {n_fake} fake"
            )
        picked = [reals[i] for i in self.rng.sample_indices(len(reals), n_real)]
        picked += [fakes[i] for i in self.rng.sample_indices(len(fakes), n_fake)]
        return [s.without_label() for s in picked]

    def epoch_batches(self):
        """Yield one epoch of batches; the final short batch is kept."""
        order = list(self.union)
        self.rng.shuffle(order)
        for start in range(0, len(order), self.batch_size):
            yield order[start : start + self.batch_size]
