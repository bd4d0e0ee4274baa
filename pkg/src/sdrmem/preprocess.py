"""Gray images and video frames to thin binary inputs.

Frames are 2-D numpy arrays indexed ``[row, col]``: gray images are uint8,
binary frames are bool. Everything here is a pure function of its inputs
(plus an explicit generator for the noise routines).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

MNIST_SHAPE = (24, 16)  # 16 wide x 24 tall
VIDEO_SHAPE = (60, 42)  # 42 wide x 60 tall
VIDEO_BOX = (84, 120)  # crop width, height


@dataclass
class Snippet:
    frames: list[np.ndarray]
    label: int
    actor: int
    variant: int = 0  # 0 = original, n = n-th noisy copy
    name: str = ""

    def __post_init__(self):
        if not self.frames:
            raise ValueError("a snippet needs at least one frame")
        shape = self.frames[0].shape
        if any(f.shape != shape for f in self.frames):
            raise ValueError("snippet frames differ in shape")

    @property
    def is_original(self) -> bool:
        return self.variant == 0


def edge_filter(img: np.ndarray, threshold: float = 0.25) -> np.ndarray:
    """Sobel gradient magnitude, kept where >= threshold * max magnitude.

    Borders replicate the outermost pixels so flat regions never produce edges.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ValueError("edge_filter needs a non-empty 2-D image")
    if not 0 < threshold <= 1:
        raise ValueError("threshold must be in (0, 1]")
    p = np.pad(img, 1, mode="edge")
    h, w = img.shape
    s = lambda dr, dc: p[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w]  # noqa: E731
    gx = (s(-1, 1) + 2 * s(0, 1) + s(1, 1)) - (s(-1, -1) + 2 * s(0, -1) + s(1, -1))
    gy = (s(1, -1) + 2 * s(1, 0) + s(1, 1)) - (s(-1, -1) + 2 * s(-1, 0) + s(-1, 1))
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak == 0:
        return np.zeros(img.shape, dtype=bool)
    return mag >= threshold * peak


def _neighbours(img: np.ndarray) -> list[np.ndarray]:
    """P2..P9 (N, NE, E, SE, S, SW, W, NW) for every pixel, zero outside."""
    p = np.pad(img, 1).astype(np.uint8)
    h, w = img.shape
    at = lambda dr, dc: p[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w]  # noqa: E731
    return [at(-1, 0), at(-1, 1), at(0, 1), at(1, 1), at(1, 0), at(1, -1), at(0, -1), at(-1, -1)]


def _zs_candidates(img: np.ndarray, first: bool) -> np.ndarray:
    P2, P3, P4, P5, P6, P7, P8, P9 = nb = _neighbours(img)
    B = sum(x.astype(np.int16) for x in nb)
    ring = nb + [P2]
    A = sum(((ring[i] == 0) & (ring[i + 1] == 1)).astype(np.int16) for i in range(8))
    if first:
        c1, c2 = P2 * P4 * P6, P4 * P6 * P8
    else:
        c1, c2 = P2 * P4 * P8, P2 * P6 * P8
    return img & (B >= 2) & (B <= 6) & (A == 1) & (c1 == 0) & (c2 == 0)


def _vanishing(img: np.ndarray, delete: np.ndarray) -> np.ndarray:
    """Pixels of components that ``delete`` would erase completely, one per component."""
    from scipy import ndimage

    labels, n = ndimage.label(img, structure=np.ones((3, 3)))
    if n == 0:
        return np.zeros_like(img)
    kept = np.bincount(labels[img & ~delete], minlength=n + 1)
    keep = np.zeros_like(img)
    for comp in np.flatnonzero(kept[1:] == 0) + 1:
        r, c = np.argwhere(labels == comp)[0]
        keep[r, c] = True
    return keep


def skeletonize(frame: np.ndarray) -> np.ndarray:
    """Zhang-Suen thinning, iterated to a fixpoint.

    The classic rules erase an isolated 2x2 block outright; when a
    sub-iteration would remove every pixel of a component, its first pixel in
    raster order is kept so no component disappears.
    """
    img = np.asarray(frame, dtype=bool).copy()
    while True:
        changed = False
        for first in (True, False):
            delete = _zs_candidates(img, first)
            if delete.any():
                delete &= ~_vanishing(img, delete)
                if delete.any():
                    img &= ~delete
                    changed = True
        if not changed:
            return img


def _fit_box(bits: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Tight-crop the set bits, then nearest-neighbour scale and centre into ``shape``."""
    rows, cols = np.nonzero(bits)
    crop = bits[rows.min() : rows.max() + 1, cols.min() : cols.max() + 1]
    ch, cw = crop.shape
    H, W = shape
    scale = min(H / ch, W / cw)
    oh, ow = max(1, min(H, int(round(ch * scale)))), max(1, min(W, int(round(cw * scale))))
    src_r = np.minimum((np.arange(oh) * ch / oh).astype(int), ch - 1)
    src_c = np.minimum((np.arange(ow) * cw / ow).astype(int), cw - 1)
    out = np.zeros(shape, dtype=bool)
    r0, c0 = (H - oh) // 2, (W - ow) // 2
    out[r0 : r0 + oh, c0 : c0 + ow] = crop[np.ix_(src_r, src_c)]
    return out


def preprocess_mnist(raw: np.ndarray, threshold: float = 0.25) -> tuple[np.ndarray, bool]:
    """28x28 digit -> (16 wide x 24 tall skeleton, empty flag)."""
    raw = np.asarray(raw)
    if raw.shape != (28, 28):
        raise ValueError(f"expected a 28x28 image, got {raw.shape}")
    edges = edge_filter(raw, threshold)
    if not edges.any():
        return np.zeros(MNIST_SHAPE, dtype=bool), True
    return _fit_box(skeletonize(edges), MNIST_SHAPE), False


def decimation_step(n: int, target: int = 10, minimum: int = 2) -> int:
    """Stride k whose output length ceil(n/k) is nearest ``target`` (ties: smaller k)."""
    if n < 1:
        raise ValueError("no frames")
    if n <= minimum:
        return 1
    best = None
    for k in range(1, n + 1):
        length = -(-n // k)
        if length < minimum:
            break
        score = abs(length - target)
        if best is None or score < best[0]:
            best = (score, k)
    return best[1]


def downsample2(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    return img[: h // 2 * 2, : w // 2 * 2].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def preprocess_video(
    frames: Sequence[np.ndarray],
    bbox: tuple[int, int, int, int],
    target: int = 10,
    threshold: float = 0.25,
) -> list[np.ndarray]:
    """Crop to ``bbox`` (x, y, 84, 120), halve to 42x60, edge+thin, decimate in time."""
    if len(frames) == 0:
        raise ValueError("empty video")
    x, y, w, h = bbox
    if (w, h) != VIDEO_BOX:
        raise ValueError(f"bounding box must be {VIDEO_BOX[0]}x{VIDEO_BOX[1]}")
    out = []
    for f in frames:
        f = np.asarray(f)
        if x < 0 or y < 0 or y + h > f.shape[0] or x + w > f.shape[1]:
            raise ValueError(f"bbox {bbox} outside frame {f.shape[1]}x{f.shape[0]}")
        small = downsample2(f[y : y + h, x : x + w].astype(np.float64))
        out.append(skeletonize(edge_filter(small, threshold)))
    k = decimation_step(len(out), target)
    return out[::k]


_RING8 = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def move_pixels(frame: np.ndarray, fraction: float, rng: np.random.Generator, radius: int = 2) -> tuple[np.ndarray, int]:
    """Move ``floor(fraction * n)`` set pixels to nearby clear spots.

    A moved pixel lands on a clear location within Chebyshev ``radius`` of
    where it was, 8-adjacent to a pixel that will stay set (one not picked for
    moving, or one already placed). Pixels with no such spot stay put; their
    number is returned alongside the new frame.
    """
    if not 0 <= fraction <= 1:
        raise ValueError("fraction must be in [0, 1]")
    out = np.asarray(frame, dtype=bool).copy()
    on = np.argwhere(out)
    n_move = int(np.floor(fraction * len(on)))
    if n_move == 0:
        return out, 0
    H, W = out.shape
    picked = rng.choice(len(on), size=n_move, replace=False)
    anchored = out.copy()  # pixels guaranteed to stay set
    anchored[tuple(on[picked].T)] = False
    fallback = 0
    for r, c in on[picked]:
        out[r, c] = False
        cands = []
        for rr in range(max(0, r - radius), min(H, r + radius + 1)):
            for cc in range(max(0, c - radius), min(W, c + radius + 1)):
                if out[rr, cc] or (rr, cc) == (r, c):
                    continue
                if any(0 <= rr + dr < H and 0 <= cc + dc < W and anchored[rr + dr, cc + dc] for dr, dc in _RING8):
                    cands.append((rr, cc))
        if cands:
            rr, cc = cands[rng.integers(len(cands))]
        else:
            rr, cc = r, c
            fallback += 1
        out[rr, cc] = True
        anchored[rr, cc] = True
    return out, fallback


def add_pixel_noise(frame: np.ndarray, fraction: float = 0.2, rng: np.random.Generator | None = None) -> np.ndarray:
    if rng is None:
        raise ValueError("add_pixel_noise needs an rng")
    return move_pixels(frame, fraction, rng)[0]


def augment_dataset(
    snippets: Sequence[Snippet], variants: int = 5, rng: np.random.Generator | None = None, fraction: float = 0.2
) -> list[Snippet]:
    """Originals followed by ``variants`` noisy copies of each, in input order."""
    if variants < 0:
        raise ValueError("variants must be >= 0")
    rng = rng if rng is not None else np.random.default_rng(0)
    out = list(snippets)
    for s in snippets:
        for v in range(1, variants + 1):
            frames = [add_pixel_noise(f, fraction, rng) for f in s.frames]
            out.append(replace(s, frames=frames, variant=v, name=f"{s.name}~{v}" if s.name else ""))
    return out
