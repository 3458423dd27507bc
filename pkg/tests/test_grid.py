"""Grid kernel tests: analytic cases, independent oracles, backend parity."""

from collections import deque

import numpy as np
import pytest

import cavat.grid as grid
from cavat import _kernels_py
from cavat.errors import (
    InvalidArgumentError,
    InvalidDistributionError,
    InvalidSeedError,
)
from cavat.rng import RngState

from conftest import random_binary_mask


# ---------------------------------------------------------------- oracles --

def naive_box_sum(a, window):
    """Double-loop summation oracle, O(n^2 k^2)."""
    h, w = a.shape
    r = window // 2
    out = np.zeros_like(np.asarray(a, dtype=np.float64))
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for di in range(-r, r + 1):
                for dj in range(-r, r + 1):
                    ii, jj = i + di, j + dj
                    if 0 <= ii < h and 0 <= jj < w:
                        acc += a[ii, jj]
            out[i, j] = acc
    return out


def bfs_flood_fill(fg, seed, adjacency=4):
    """Breadth-first search reference, independent of the shipped kernels."""
    fg = np.asarray(fg) != 0
    h, w = fg.shape
    shifts = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    if adjacency == 8:
        shifts += [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    seen = {tuple(seed)}
    q = deque([tuple(seed)])
    while q:
        r, c = q.popleft()
        for dr, dc in shifts:
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and fg[nr, nc] and (nr, nc) not in seen:
                seen.add((nr, nc))
                q.append((nr, nc))
    out = np.zeros((h, w), dtype=bool)
    for r, c in seen:
        out[r, c] = True
    return out


# ---------------------------------------------------------------- box_sum --

def test_box_sum_all_ones_counts():
    out = grid.box_sum(np.ones((5, 5), dtype=np.int64), 3)
    assert out[2, 2] == 9
    assert out[0, 0] == out[0, 4] == out[4, 0] == out[4, 4] == 4
    assert out[0, 2] == 6


def test_box_sum_single_impulse():
    a = np.zeros((5, 5), dtype=np.int64)
    a[2, 2] = 1
    out = grid.box_sum(a, 3)
    expect = np.zeros((5, 5), dtype=np.int64)
    expect[1:4, 1:4] = 1
    assert np.array_equal(out, expect)


def test_box_sum_matches_naive_oracle_binary():
    rng = RngState(7)
    a = random_binary_mask(rng, 4, 4)
    out = grid.box_sum(a, 3)
    assert np.array_equal(out, naive_box_sum(a, 3).astype(np.int64))


@pytest.mark.parametrize("window", [1, 3, 5, 7])
def test_box_sum_matches_naive_oracle_random(window):
    rng = RngState(21 + window)
    for _ in range(20):
        a = random_binary_mask(rng, 9, 12)
        out = grid.box_sum(a, window)
        assert out.dtype == np.int64
        assert np.array_equal(out, naive_box_sum(a, window).astype(np.int64))


def test_box_sum_float_matches_naive_oracle():
    rng = RngState(3)
    a = rng.normal((8, 8))
    out = grid.box_sum(a, 3)
    assert np.allclose(out, naive_box_sum(a, 3), rtol=0, atol=1e-12)


@pytest.mark.parametrize("window", [0, 2, 4, -1])
def test_box_sum_rejects_even_or_nonpositive_window(window):
    with pytest.raises(InvalidArgumentError):
        grid.box_sum(np.ones((5, 5)), window)


def test_box_sum_rejects_oversized_window():
    with pytest.raises(InvalidArgumentError):
        grid.box_sum(np.ones((5, 5)), 7)


# ------------------------------------------------------------- flood_fill --

def test_flood_fill_singleton():
    fg = np.zeros((3, 3), dtype=np.int64)
    fg[1, 1] = 1
    comp = grid.flood_fill(fg, (1, 1))
    assert comp.sum() == 1 and comp[1, 1]


def test_flood_fill_diagonal_not_4_connected():
    fg = np.zeros((3, 3), dtype=np.int64)
    fg[0, 0] = fg[1, 1] = 1
    comp = grid.flood_fill(fg, (0, 0), adjacency=4)
    assert comp.sum() == 1 and comp[0, 0]
    comp8 = grid.flood_fill(fg, (0, 0), adjacency=8)
    assert comp8.sum() == 2


@pytest.mark.parametrize("adjacency", [4, 8])
def test_flood_fill_matches_bfs_oracle(adjacency):
    rng = RngState(99 + adjacency)
    for _ in range(1000):
        fg = random_binary_mask(rng, 16, 16, p_fg=0.45)
        coords = np.argwhere(fg)
        if coords.shape[0] == 0:
            continue
        k = int(rng.integers(coords.shape[0]))
        seed = tuple(coords[k])
        comp = grid.flood_fill(fg, seed, adjacency=adjacency)
        assert np.array_equal(comp, bfs_flood_fill(fg, seed, adjacency))


def test_flood_fill_component_closed_under_adjacency():
    rng = RngState(5)
    for _ in range(200):
        fg = random_binary_mask(rng, 12, 12, p_fg=0.5)
        coords = np.argwhere(fg)
        if coords.shape[0] == 0:
            continue
        comp = grid.flood_fill(fg, tuple(coords[0]))
        assert not (comp & ~(fg != 0)).any()
        grown = np.zeros_like(comp)
        grown[:-1, :] |= comp[1:, :]
        grown[1:, :] |= comp[:-1, :]
        grown[:, :-1] |= comp[:, 1:]
        grown[:, 1:] |= comp[:, :-1]
        # no foreground pixel adjacent to the component lies outside it
        assert not (grown & (fg != 0) & ~comp).any()


def test_flood_fill_invalid_seeds():
    fg = np.zeros((4, 4), dtype=np.int64)
    fg[1, 1] = 1
    with pytest.raises(InvalidSeedError):
        grid.flood_fill(fg, (0, 0))
    with pytest.raises(InvalidSeedError):
        grid.flood_fill(fg, (9, 0))
    with pytest.raises(InvalidArgumentError):
        grid.flood_fill(fg, (1, 1), adjacency=6)


def test_is_connected():
    fg = np.zeros((5, 5), dtype=np.int64)
    assert grid.is_connected(fg)
    fg[1, 1] = fg[1, 2] = 1
    assert grid.is_connected(fg)
    fg[4, 4] = 1
    assert not grid.is_connected(fg)
    assert not grid.is_connected(fg, adjacency=8)
    fg[2, 3] = fg[3, 3] = 1
    assert grid.is_connected(fg, adjacency=8)
    assert not grid.is_connected(fg, adjacency=4)


# -------------------------------------------------------------- sample_mask --

def test_sample_mask_one_hot_is_deterministic():
    p = np.zeros((4, 5, 3))
    p[..., 2] = 1.0
    mask = grid.sample_mask(p, RngState(0))
    assert np.array_equal(mask, np.full((4, 5), 2, dtype=np.int64))


def test_sample_mask_uniform_frequency():
    p = np.full((1, 1, 2), 0.5)
    rng = RngState(42)
    draws = np.array([grid.sample_mask(p, rng)[0, 0] for _ in range(10_000)])
    freq = draws.mean()
    assert 0.48 <= freq <= 0.52


def test_sample_mask_determinism():
    p = np.full((6, 6, 3), 1.0 / 3.0)
    m1 = grid.sample_mask(p, RngState(77))
    m2 = grid.sample_mask(p, RngState(77))
    assert np.array_equal(m1, m2)


def test_sample_mask_marginals_converge():
    rng = RngState(11)
    raw = rng.uniform((3, 3, 4))
    p = raw / raw.sum(axis=-1, keepdims=True)
    n = 4000
    counts = np.zeros((3, 3, 4))
    draw_rng = RngState(12)
    for _ in range(n):
        m = grid.sample_mask(p, draw_rng)
        for c in range(4):
            counts[..., c] += m == c
    freq = counts / n
    bound = 3.0 * np.sqrt(p * (1.0 - p) / n)
    assert (np.abs(freq - p) <= bound + 1e-12).mean() > 0.97


def test_sample_mask_rejects_unnormalized():
    p = np.full((2, 2, 2), 0.6)
    with pytest.raises(InvalidDistributionError):
        grid.sample_mask(p, RngState(0))
    with pytest.raises(InvalidDistributionError):
        grid.validate_probmap(np.full((2, 2, 2), [1.2, -0.2]))


# --------------------------------------------------------- backend parity --

_ext = pytest.importorskip("cavat._gridext", reason="compiled kernels not built")


def test_backends_agree_box_sum_int():
    rng = RngState(31)
    for window in (1, 3, 5):
        a = random_binary_mask(rng, 17, 13)
        assert np.array_equal(_ext.box_sum(a, window), _kernels_py.box_sum(a, window))


def test_backends_agree_box_sum_float_bitwise():
    rng = RngState(32)
    for window in (1, 3, 7):
        a = rng.normal((19, 23))
        be = _ext.box_sum(a, window)
        py = _kernels_py.box_sum(a, window)
        assert np.array_equal(be, py)


def test_backends_agree_flood_fill():
    rng = RngState(33)
    for adjacency in (4, 8):
        for _ in range(200):
            fg = random_binary_mask(rng, 16, 16, p_fg=0.5) != 0
            coords = np.argwhere(fg)
            if coords.shape[0] == 0:
                continue
            seed = tuple(coords[int(rng.integers(coords.shape[0]))])
            a = _ext.flood_fill(fg, seed[0], seed[1], adjacency)
            b = _kernels_py.flood_fill(fg, seed[0], seed[1], adjacency)
            assert np.array_equal(a, b)


def test_backends_agree_sampling_bitwise():
    rng = RngState(34)
    raw = rng.uniform((16, 16, 3))
    p = raw / raw.sum(axis=-1, keepdims=True)
    u = rng.uniform((16, 16))
    assert np.array_equal(
        _ext.sample_from_uniforms(p, u), _kernels_py.sample_from_uniforms(p, u)
    )


# ------------------------------------------------------------------- rng --

def test_rng_determinism_and_stream_independence():
    a = RngState(5).spawn("data").uniform(8)
    b = RngState(5).spawn("data").uniform(8)
    assert np.array_equal(a, b)
    c = RngState(5).spawn("init").uniform(8)
    assert not np.array_equal(a, c)
    # consuming one stream leaves siblings untouched
    root = RngState(5)
    s1 = root.spawn("data")
    s1.uniform(100)
    assert np.array_equal(root.spawn("init").uniform(8), c)


def test_rng_spawn_key_types():
    r = RngState(9).spawn("perturb", 12, 3)
    assert r.key and len(r.key) == 3
    with pytest.raises(ValueError):
        RngState(9).spawn(-1)
