"""Dataset ingestion and the two-view augmentation pipeline.

Images are ``H x W x C`` float arrays in ``[0, 1]``.  Every random draw comes
from an explicit ``numpy.random.Generator``; :func:`view_rng` derives one
stream per ``(seed, record, epoch)`` so results never depend on how many
workers augment a batch.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from scipy.ndimage import gaussian_filter

CIFAR_RECORD = 3073
CIFAR_SIDE = 32
GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])


class CifarParseError(ValueError):
    pass


@dataclass(frozen=True)
class ImageRecord:
    label: int
    pixels: np.ndarray  # H x W x C in [0, 1]


@dataclass
class AugmentationConfig:
    crop_scale_range: Tuple[float, float] = (0.2, 1.0)
    crop_ratio_range: Tuple[float, float] = (3 / 4, 4 / 3)
    flip_prob: float = 0.5
    jitter_prob: float = 0.8
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    hue: float = 0.1
    grayscale_prob: float = 0.2
    blur_prob: float = 0.5
    asymmetric_blur: bool = False
    blur_prob_view_b: float = 0.1
    blur_sigma_range: Tuple[float, float] = (0.1, 2.0)
    output_size: Optional[int] = None  # None keeps the source resolution

    def __post_init__(self):
        for name in ("flip_prob", "jitter_prob", "grayscale_prob", "blur_prob", "blur_prob_view_b"):
            p = getattr(self, name)
            if not 0 <= p <= 1:
                raise ValueError(f"{name} must be a probability, got {p}")
        lo, hi = self.crop_scale_range
        if not 0 < lo <= hi <= 1:
            raise ValueError(f"crop_scale_range must lie in (0, 1], got {self.crop_scale_range}")

    @classmethod
    def identity(cls, output_size=None) -> "AugmentationConfig":
        return cls(crop_scale_range=(1.0, 1.0), flip_prob=0.0, jitter_prob=0.0,
                   grayscale_prob=0.0, blur_prob=0.0, blur_prob_view_b=0.0, output_size=output_size)


# ---------------------------------------------------------------- ingestion

def read_cifar10(path) -> List[ImageRecord]:
    """Parse a CIFAR-10 binary batch (1 label byte + 3x1024 channel planes)."""
    data = Path(path).read_bytes()
    count, rest = divmod(len(data), CIFAR_RECORD)
    if rest:
        raise CifarParseError(
            f"{path}: truncated record at byte offset {count * CIFAR_RECORD} "
            f"({rest} of {CIFAR_RECORD} bytes present)"
        )
    raw = np.frombuffer(data, dtype=np.uint8).reshape(count, CIFAR_RECORD)
    labels = raw[:, 0]
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        i = int(bad[0])
        raise CifarParseError(f"{path}: label {labels[i]} > 9 at byte offset {i * CIFAR_RECORD}")
    pixels = raw[:, 1:].reshape(count, 3, CIFAR_SIDE, CIFAR_SIDE).transpose(0, 2, 3, 1) / 255.0
    return [ImageRecord(int(labels[i]), pixels[i]) for i in range(count)]


def read_cifar10_dir(root, train: bool = True) -> List[ImageRecord]:
    root = Path(root)
    if root.is_file():
        return read_cifar10(root)
    names = sorted(root.glob("data_batch_*.bin")) if train else [root / "test_batch.bin"]
    if not names:
        raise FileNotFoundError(f"no CIFAR-10 batches under {root}")
    out: List[ImageRecord] = []
    for name in names:
        out.extend(read_cifar10(name))
    return out


def synth_clusters(k: int, per_class: int, image_size: int = 8, separation: float = 8.0,
                   seed: int = 0, noise: float = 0.05, channels: int = 3) -> List[ImageRecord]:
    """Gaussian clusters around smooth class prototypes.

    Prototype offsets are orthonormal low-frequency patterns scaled so that
    any two cluster centres are ``separation * noise`` apart.  Samples are
    clipped to ``[0, 1]``.
    """
    if k < 2:
        raise ValueError("need at least two clusters")
    if separation < 0:
        raise ValueError("separation must be non-negative")
    rng = np.random.default_rng(seed)
    coarse = max(2, image_size // 3)
    fields = []
    for _ in range(k):
        low = rng.normal(size=(coarse, coarse, channels))
        fields.append(resize_bilinear(low, image_size, image_size).ravel())
    basis, _ = np.linalg.qr(np.stack(fields, axis=1))
    centres = 0.5 + (separation * noise / np.sqrt(2.0)) * basis.T
    records = []
    shape = (image_size, image_size, channels)
    for c in range(k):
        samples = centres[c] + noise * rng.normal(size=(per_class, centres.shape[1]))
        for s in np.clip(samples, 0.0, 1.0):
            records.append(ImageRecord(c, s.reshape(shape)))
    return records


# ------------------------------------------------------------ augmentations

def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centres (edge-clamped)."""
    in_h, in_w = img.shape[:2]
    if (in_h, in_w) == (out_h, out_w):
        return img.copy()

    def coords(n_out, n_in):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, fy = coords(out_h, in_h)
    x0, x1, fx = coords(out_w, in_w)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bottom = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bottom * fy


def random_resized_crop(img, rng, scale, ratio, out_size):
    h, w = img.shape[:2]
    area = h * w
    log_r = (np.log(ratio[0]), np.log(ratio[1]))
    for _ in range(10):
        target = area * rng.uniform(*scale)
        r = np.exp(rng.uniform(*log_r))
        cw = int(round(np.sqrt(target * r)))
        ch = int(round(np.sqrt(target / r)))
        if 0 < cw <= w and 0 < ch <= h:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            break
    else:
        # fallback: whole image clamped to the ratio range, centred
        in_ratio = w / h
        if in_ratio < ratio[0]:
            cw, ch = w, int(round(w / ratio[0]))
        elif in_ratio > ratio[1]:
            ch, cw = h, int(round(h * ratio[1]))
        else:
            cw, ch = w, h
        top, left = (h - ch) // 2, (w - cw) // 2
    assert 0 <= top and top + ch <= h and 0 <= left and left + cw <= w, "crop escapes image"
    return resize_bilinear(img[top : top + ch, left : left + cw], out_size, out_size)


def hflip(img: np.ndarray) -> np.ndarray:
    return img[:, ::-1]


def to_gray(img: np.ndarray) -> np.ndarray:
    if img.shape[2] == 1:
        return img
    g = img[..., :3] @ GRAY_WEIGHTS
    return np.repeat(g[..., None], img.shape[2], axis=2)


def color_jitter(img, rng, brightness, contrast, saturation, hue):
    """Brightness, contrast, saturation, hue in that fixed order."""
    def factor(s):
        return rng.uniform(max(0.0, 1 - s), 1 + s)

    out = np.clip(img * factor(brightness), 0, 1)
    mean = to_gray(out).mean()
    out = np.clip((out - mean) * factor(contrast) + mean, 0, 1)
    if out.shape[2] == 3:
        gray = to_gray(out)
        out = np.clip((out - gray) * factor(saturation) + gray, 0, 1)
        shift = rng.uniform(-hue, hue)
        hsv = rgb_to_hsv(out)
        hsv[..., 0] = np.mod(hsv[..., 0] + shift, 1.0)
        out = np.clip(hsv_to_rgb(hsv), 0, 1)
    return out


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    return gaussian_filter(img, sigma=(sigma, sigma, 0), mode="reflect")


def augment(img: np.ndarray, config: AugmentationConfig, rng: np.random.Generator,
            blur_prob: Optional[float] = None) -> np.ndarray:
    """One draw from the augmentation family, returned as an image."""
    size = config.output_size or img.shape[0]
    out = random_resized_crop(img, rng, config.crop_scale_range, config.crop_ratio_range, size)
    if rng.random() < config.flip_prob:
        out = hflip(out)
    if rng.random() < config.jitter_prob:
        out = color_jitter(out, rng, config.brightness, config.contrast, config.saturation, config.hue)
    if rng.random() < config.grayscale_prob:
        out = to_gray(out)
    p = config.blur_prob if blur_prob is None else blur_prob
    if rng.random() < p:
        out = gaussian_blur(out, rng.uniform(*config.blur_sigma_range))
    return np.clip(out, 0.0, 1.0)


def two_views(record: ImageRecord, config: AugmentationConfig, rng: np.random.Generator):
    """Two independently augmented, flattened views of the same image."""
    blur_b = config.blur_prob_view_b if config.asymmetric_blur else config.blur_prob
    a = augment(record.pixels, config, rng)
    b = augment(record.pixels, config, rng, blur_prob=blur_b)
    return a.ravel(), b.ravel()


def eval_transform(record: ImageRecord, train_phase: bool, output_size: Optional[int] = None,
                   rng: Optional[np.random.Generator] = None,
                   crop_scale_range=(0.08, 1.0)) -> np.ndarray:
    """Linear-eval preprocessing: random crop + flip for training, resize +
    centre crop for testing.  Returns a flattened image."""
    img = record.pixels
    size = output_size or img.shape[0]
    if train_phase:
        if rng is None:
            raise ValueError("train-phase transform needs an rng")
        out = random_resized_crop(img, rng, crop_scale_range, (3 / 4, 4 / 3), size)
        if rng.random() < 0.5:
            out = hflip(out)
    else:
        h, w = img.shape[:2]
        scale = size / min(h, w)
        rh, rw = max(size, int(round(h * scale))), max(size, int(round(w * scale)))
        out = resize_bilinear(img, rh, rw)
        top, left = (rh - size) // 2, (rw - size) // 2
        out = out[top : top + size, left : left + size]
    return np.clip(out, 0.0, 1.0).ravel()


# ------------------------------------------------------------------ batching

def view_rng(seed: int, index: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, index, epoch])


def worker_count(default: int = 1) -> int:
    try:
        return max(1, int(os.environ.get("SIGCLR_THREADS", default)))
    except ValueError:
        return default


def two_view_batch(records: Sequence[ImageRecord], indices: Sequence[int], config: AugmentationConfig,
                   seed: int, epoch: int, workers: Optional[int] = None, dtype=np.float32) -> np.ndarray:
    """Stack views as ``[view A of every item; view B of every item]``."""
    def one(i):
        return two_views(records[i], config, view_rng(seed, int(i), epoch))

    workers = workers or worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            pairs = list(pool.map(one, indices))
    else:
        pairs = [one(i) for i in indices]
    a = np.stack([p[0] for p in pairs])
    b = np.stack([p[1] for p in pairs])
    return np.concatenate([a, b]).astype(dtype)
