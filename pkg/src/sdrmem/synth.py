"""Synthetic stand-in for a labelled action-video corpus.

Each class is a sparse outline shape with its own motion signature
(translation velocity, spin rate, size pulsation). Each "actor" of a class
draws the same signature with its own start position, scale, speed and phase,
so class identity lives in shape-plus-motion, not in any single frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .formats import write_json, write_pbm
from .preprocess import VIDEO_SHAPE, Snippet


def _polygon(n: int, phase: float = 0.0) -> list[list[tuple[float, float]]]:
    a = phase + np.linspace(0, 2 * np.pi, n + 1)
    return [list(zip(np.cos(a), np.sin(a)))]


SHAPES: list[list[list[tuple[float, float]]]] = [
    _polygon(4, np.pi / 4),  # square
    _polygon(3, np.pi / 2),  # triangle
    [[(-1, 0), (1, 0)], [(0, -1), (0, 1)]],  # plus
    [[(-0.6, -1), (-0.6, 1), (0.8, 1)]],  # L
    _polygon(14),  # circle
    [[(-1, -1), (1, 1)], [(-1, 1), (1, -1)]],  # X
    [[(-1, -0.6), (-0.5, 0.6), (0, -0.6), (0.5, 0.6), (1, -0.6)]],  # zigzag
    [[(-1, -1), (1, -1)], [(0, -1), (0, 1)]],  # T
    _polygon(4),  # diamond
    [[(-0.5, -1), (-0.5, 1)], [(0.5, -1), (0.5, 1)]],  # bars
]

# (vx, vy) in pixels/frame, spin in rad/frame, pulsation amplitude
MOTIONS = [
    (1.5, 0.0, 0.00, 0.0),
    (0.0, 1.8, 0.25, 0.0),
    (-1.2, 1.2, 0.00, 0.3),
    (1.0, -1.5, -0.30, 0.0),
    (0.0, 0.0, 0.00, 0.5),
    (-1.6, 0.0, 0.40, 0.0),
    (0.8, 0.8, 0.00, 0.0),
    (0.0, -1.6, -0.20, 0.2),
    (1.8, 1.0, 0.50, 0.0),
    (-0.6, -0.6, 0.00, 0.4),
]


@dataclass(frozen=True)
class SynthConfig:
    classes: int = 10
    actors: int = 9
    frames: int = 10
    height: int = VIDEO_SHAPE[0]
    width: int = VIDEO_SHAPE[1]

    def __post_init__(self):
        if not 1 <= self.classes <= len(SHAPES):
            raise ValueError(f"classes must be in [1, {len(SHAPES)}]")
        if self.actors < 1 or self.frames < 1:
            raise ValueError("actors and frames must be >= 1")
        if self.height < 16 or self.width < 16:
            raise ValueError("frames must be at least 16x16")


def draw(strokes, cx: float, cy: float, size: float, angle: float, shape: tuple[int, int]) -> np.ndarray:
    H, W = shape
    img = np.zeros(shape, dtype=bool)
    ca, sa = np.cos(angle), np.sin(angle)
    for stroke in strokes:
        pts = np.array(stroke, dtype=float) * size
        pts = pts @ np.array([[ca, sa], [-sa, ca]])
        for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
            n = int(max(abs(x1 - x0), abs(y1 - y0)) * 2) + 2
            xs = np.rint(cx + np.linspace(x0, x1, n)).astype(int)
            ys = np.rint(cy + np.linspace(y0, y1, n)).astype(int)
            ok = (xs >= 0) & (xs < W) & (ys >= 0) & (ys < H)
            img[ys[ok], xs[ok]] = True
    return img


def make_snippet(label: int, actor: int, cfg: SynthConfig, rng: np.random.Generator) -> Snippet:
    H, W = cfg.height, cfg.width
    vx, vy, spin, pulse = MOTIONS[label]
    speed = rng.uniform(0.8, 1.2)
    size = min(H, W) * rng.uniform(0.22, 0.3)
    angle0 = rng.uniform(-0.2, 0.2)
    phase = rng.uniform(0, 2 * np.pi)
    span_x, span_y = vx * speed * (cfg.frames - 1), vy * speed * (cfg.frames - 1)
    margin = size * 1.1
    lo_x, hi_x = margin - min(0.0, span_x), W - margin - max(0.0, span_x)
    lo_y, hi_y = margin - min(0.0, span_y), H - margin - max(0.0, span_y)
    cx = rng.uniform(lo_x, hi_x) if hi_x > lo_x else W / 2 - span_x / 2
    cy = rng.uniform(lo_y, hi_y) if hi_y > lo_y else H / 2 - span_y / 2
    frames = []
    for t in range(cfg.frames):
        s = size * (1 + pulse * np.sin(phase + 0.9 * t))
        frames.append(
            draw(SHAPES[label], cx + vx * speed * t, cy + vy * speed * t, s, angle0 + spin * speed * t, (H, W))
        )
    return Snippet(frames=frames, label=label, actor=actor, variant=0, name=f"c{label:02d}_a{actor:02d}")


def generate(cfg: SynthConfig, rng: np.random.Generator) -> list[Snippet]:
    return [make_snippet(c, a, cfg, rng) for c in range(cfg.classes) for a in range(cfg.actors)]


def write_snippets(snippets, out: str | Path) -> list[Path]:
    """One directory per snippet: ``f000.pbm ...`` plus ``meta.json``."""
    out = Path(out)
    dirs = []
    for s in snippets:
        d = out / s.name
        d.mkdir(parents=True, exist_ok=True)
        for t, f in enumerate(s.frames):
            write_pbm(d / f"f{t:03d}.pbm", f)
        write_json(d / "meta.json", {"label": s.label, "actor": s.actor, "variant": s.variant, "bbox": None})
        dirs.append(d)
    return dirs
