import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage

from sdrmem.preprocess import (
    MNIST_SHAPE,
    Snippet,
    add_pixel_noise,
    augment_dataset,
    decimation_step,
    edge_filter,
    move_pixels,
    preprocess_mnist,
    preprocess_video,
    skeletonize,
)


def grid(text):
    return np.array([[ch == "#" for ch in line.strip()] for line in text.strip().splitlines()])


# Zhang-Suen fixtures: each expected grid was traced by hand, sub-iteration by
# sub-iteration, from the input grid.
ZS_FIXTURES = {
    "single_pixel": (
        """
        .....
        ..#..
        .....
        """,
        """
        .....
        ..#..
        .....
        """,
    ),
    "thin_line": (
        """
        .......
        .#####.
        .......
        """,
        """
        .......
        .#####.
        .......
        """,
    ),
    "square_5x5": (
        """
        .......
        .#####.
        .#####.
        .#####.
        .#####.
        .#####.
        .......
        """,
        """
        .......
        .......
        .......
        ...#...
        .......
        .......
        .......
        """,
    ),
    "bar_3x7": (
        """
        .........
        .#######.
        .#######.
        .#######.
        .........
        """,
        """
        .........
        .........
        ..####...
        .........
        .........
        """,
    ),
    "block_2x2": (
        """
        ....
        .##.
        .##.
        ....
        """,
        """
        ....
        .#..
        ....
        ....
        """,
    ),
}


@pytest.mark.parametrize("name", sorted(ZS_FIXTURES))
def test_skeletonize_hand_traced(name):
    src, expected = ZS_FIXTURES[name]
    assert np.array_equal(skeletonize(grid(src)), grid(expected))


binary_frames = arrays(np.bool_, st.tuples(st.integers(1, 14), st.integers(1, 14)))


@settings(max_examples=150, deadline=None)
@given(binary_frames)
def test_skeleton_subset_idempotent_connected(img):
    sk = skeletonize(img)
    assert not (sk & ~img).any()
    assert np.array_equal(skeletonize(sk), sk)
    eight = np.ones((3, 3))
    labels, n = ndimage.label(img, structure=eight)
    _, n_sk = ndimage.label(sk, structure=eight)
    assert n_sk == n
    for comp in range(1, n + 1):
        assert sk[labels == comp].any()


# -- edge filter -----------------------------------------------------------


def test_edge_filter_constant_and_step():
    assert not edge_filter(np.full((6, 6), 77)).any()
    img = np.zeros((6, 6), np.uint8)
    img[:, 3:] = 255
    # hand convolution: gx = 4*255 at columns 2 and 3, zero elsewhere, gy = 0
    expected = np.zeros((6, 6), bool)
    expected[:, 2:4] = True
    for thr in (0.1, 0.25, 1.0):
        assert np.array_equal(edge_filter(img, thr), expected)


def test_edge_filter_threshold_one_keeps_only_max():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (10, 10))
    out = edge_filter(img, 1.0)
    assert out.any() and out.sum() < 10


def test_edge_filter_errors():
    with pytest.raises(ValueError):
        edge_filter(np.zeros((0, 0)))
    with pytest.raises(ValueError):
        edge_filter(np.zeros((3, 3)), 0)
    with pytest.raises(ValueError):
        edge_filter(np.zeros((3, 3)), 1.5)


# -- MNIST pipeline --------------------------------------------------------


def test_preprocess_mnist_blank_and_shape():
    frame, empty = preprocess_mnist(np.zeros((28, 28), np.uint8))
    assert empty and frame.shape == MNIST_SHAPE and not frame.any()
    with pytest.raises(ValueError):
        preprocess_mnist(np.zeros((20, 20)))


def test_thick_ring_becomes_thin_loop_filling_box():
    yy, xx = np.mgrid[:28, :28]
    r = np.hypot(yy - 13.5, xx - 13.5)
    img = ((r > 6) & (r < 10)).astype(np.uint8) * 255
    thin = skeletonize(edge_filter(img))
    # thinned before scaling: no 2x2 solid block remains
    blocks = thin[:-1, :-1] & thin[1:, :-1] & thin[:-1, 1:] & thin[1:, 1:]
    assert not blocks.any()
    frame, empty = preprocess_mnist(img)
    assert not empty and frame.shape == (24, 16)
    rows, cols = np.nonzero(frame)
    assert cols.min() == 0 and cols.max() == 15  # width-limited fit
    # still a closed loop: background splits into outside and a hole
    _, n_bg = ndimage.label(~frame)
    assert n_bg >= 2


# -- video -----------------------------------------------------------------


@pytest.mark.parametrize("n,k,length", [(120, 12, 10), (2, 1, 2), (1, 1, 1), (10, 1, 10), (25, 3, 9)])
def test_decimation_step(n, k, length):
    assert decimation_step(n) == k
    assert len(range(0, n, k)) == length


def test_preprocess_video_shapes_and_errors():
    rng = np.random.default_rng(0)
    frames = [rng.integers(0, 256, (144, 180)).astype(np.uint8) for _ in range(120)]
    out = preprocess_video(frames, (10, 5, 84, 120))
    assert len(out) == 10 and all(f.shape == (60, 42) for f in out)
    assert len(preprocess_video(frames[:2], (0, 0, 84, 120))) == 2
    with pytest.raises(ValueError):
        preprocess_video(frames[:3], (100, 0, 84, 120))
    with pytest.raises(ValueError):
        preprocess_video([], (0, 0, 84, 120))
    with pytest.raises(ValueError):
        preprocess_video(frames[:3], (0, 0, 80, 120))


# -- noise -----------------------------------------------------------------


def _noise_oracle_ok(before, after):
    """Count preserved and every newly set pixel touches another set pixel."""
    if before.sum() != after.sum():
        return False
    H, W = after.shape
    for r, c in np.argwhere(after & ~before):
        nb = after[max(0, r - 1) : r + 2, max(0, c - 1) : c + 2].sum() - 1
        if nb < 1:
            return False
    return True


def test_noise_preserves_count_and_adjacency_1000_seeds():
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        frame = skeletonize(rng.random((24, 16)) < 0.3)
        out, _ = move_pixels(frame, 0.2, rng)
        assert _noise_oracle_ok(frame, out), seed


def test_noise_moves_exact_count():
    frame = np.zeros((10, 10), bool)
    frame[5, :] = True
    out, fallback = move_pixels(frame, 0.2, np.random.default_rng(1))
    assert out.sum() == 10 and fallback == 0
    assert (frame & ~out).sum() <= 2
    assert np.array_equal(add_pixel_noise(np.zeros((4, 4), bool), 0.2, np.random.default_rng(0)), np.zeros((4, 4), bool))


def test_noise_fallback_is_counted():
    frame = np.zeros((1, 1), bool)
    frame[0, 0] = True
    out, fallback = move_pixels(frame, 1.0, np.random.default_rng(0))
    assert out[0, 0] and fallback == 1


def test_augment_dataset_counts():
    rng = np.random.default_rng(0)
    snippets = [
        Snippet([rng.random((6, 6)) < 0.3 for _ in range(3)], label=i % 10, actor=i // 10) for i in range(90)
    ]
    aug = augment_dataset(snippets, 5, np.random.default_rng(1))
    assert len(aug) == 540
    assert aug[:90] == snippets
    assert all(len(a.frames) == 3 for a in aug)
    assert sum(a.variant == 0 for a in aug) == 90
    assert augment_dataset(snippets, 0, rng) == snippets
    with pytest.raises(ValueError):
        augment_dataset(snippets, -1, rng)


def test_snippet_validation():
    with pytest.raises(ValueError):
        Snippet([], 0, 0)
    with pytest.raises(ValueError):
        Snippet([np.zeros((2, 2)), np.zeros((3, 3))], 0, 0)
