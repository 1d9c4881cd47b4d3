from __future__ import annotations

import numpy as np
import pytest

from instlift import frontend as fe
from instlift.rng import stream


def blocks():
    img = np.zeros((30, 40), dtype=np.int64)
    img[2:12, 3:15] = 4
    img[15:28, 5:20] = 9
    img[5:25, 25:38] = 2
    img[26:29, 30:33] = 2  # second component of id 2
    return img


def same_partition(a, b) -> bool:
    """True when a and b differ only by a bijective renaming of nonzero labels."""
    if not np.array_equal(a == 0, b == 0):
        return False
    pairs = set(zip(a[a > 0].tolist(), b[b > 0].tolist()))
    return len(pairs) == len({p[0] for p in pairs}) == len({p[1] for p in pairs})


def test_permute_only_keeps_partition():
    img = blocks()
    m = fe.corrupt(img, fe.CorruptionParams(seed=3), frame_index=0)
    assert same_partition(m.labels, img)
    assert sorted(m.regions) == [1, 2, 3]


def test_permutation_depends_on_frame():
    img = blocks()
    p = fe.CorruptionParams(seed=3)
    labs = [tuple(fe.corrupt(img, p, i).labels[[5, 20, 10], [5, 10, 30]]) for i in range(8)]
    assert len(set(labs)) > 1


def test_dropout_all():
    m = fe.corrupt(blocks(), fe.CorruptionParams(dropout_prob=1.0), 0)
    assert not m.labels.any() and m.regions == {}


def test_all_zero_input():
    m = fe.corrupt(np.zeros((8, 8), dtype=np.int64), fe.CorruptionParams(split_prob=1, max_splits=3), 0)
    assert not m.labels.any()


def test_noop_equals_connected_components():
    img = blocks()
    m = fe.fast_regions(img, fe.CorruptionParams())
    assert same_partition(m.labels, fe.connected_regions(img))
    assert len(m.regions) == 4


def _oracle_split_count(img, seed, split_prob, max_splits):
    """Straight reimplementation of the split rule for a single-region frame."""
    rng = stream(seed, "corrupt", 0, "region", 1)
    pieces = [img == 1]
    todo = [0]
    made = 0
    while todo and made < max_splits:
        i = todo.pop(0)
        if rng.random() >= split_prob:
            continue
        rows, cols = np.nonzero(pieces[i])
        theta = rng.uniform(0.0, np.pi)
        r0 = rng.uniform(rows.min(), rows.max() + 1)
        c0 = rng.uniform(cols.min(), cols.max() + 1)
        front = np.zeros_like(pieces[i])
        for r, c in zip(rows, cols):
            if (r - r0) * np.cos(theta) + (c - c0) * np.sin(theta) > 0:
                front[r, c] = True
        back = pieces[i] & ~front
        if front.sum() == 0 or back.sum() == 0:
            continue
        pieces[i] = front
        pieces.append(back)
        todo += [i, len(pieces) - 1]
        made += 1
    return pieces


def test_seeded_split_matches_oracle():
    img = np.ones((40, 40), dtype=np.int64)
    p = fe.CorruptionParams(split_prob=1.0, max_splits=1, seed=7)
    m = fe.corrupt(img, p, 0)
    want = _oracle_split_count(img, 7, 1.0, 1)
    assert len(m.regions) == len(want) == 2
    got = sorted(m.regions[r].pixel_count for r in m.regions)
    assert got == sorted(int(x.sum()) for x in want)
    for piece in want:
        assert len(np.unique(m.labels[piece])) == 1


@pytest.mark.parametrize("seed", [1, 2, 3, 4])
def test_multi_split_matches_oracle(seed):
    img = np.ones((40, 40), dtype=np.int64)
    p = fe.CorruptionParams(split_prob=0.7, max_splits=3, seed=seed)
    m = fe.corrupt(img, p, 0)
    want = _oracle_split_count(img, seed, 0.7, 3)
    assert len(m.regions) == len(want)
    assert sorted(i.pixel_count for i in m.regions.values()) == sorted(int(x.sum()) for x in want)


def test_erosion_shrinks_regions():
    img = blocks()
    m = fe.corrupt(img, fe.CorruptionParams(erosion_radius=1, permute=False), 0)
    assert m.labels[2, 3] == 0 and m.labels[3, 4] != 0
    assert (m.labels > 0).sum() < (img > 0).sum()


def test_min_region_drops_small_pieces():
    img = blocks()
    m = fe.corrupt(img, fe.CorruptionParams(min_region_px=10), 0)
    # the 3x3 component survives because corrupt regions are whole instance ids
    assert len(m.regions) == 3
    m = fe.fast_regions(img, fe.CorruptionParams(min_region_px=10))
    assert len(m.regions) == 3


def test_region_index():
    m = fe.InstanceMask(np.array([[0, 1, 1], [2, 2, 0]]))
    assert m.regions[1] == fe.RegionInfo(2, (0, 1, 1, 3))
    assert m.regions[2].bbox == (1, 0, 2, 2)


def test_params_validated():
    with pytest.raises(ValueError):
        fe.CorruptionParams(split_prob=1.5)
    with pytest.raises(ValueError):
        fe.CorruptionParams(min_region_px=0)


def test_mask_round_trip(tmp_path):
    m = fe.corrupt(blocks(), fe.CorruptionParams(split_prob=1, max_splits=2, seed=2), 0)
    fe.write_mask(tmp_path / "m.pgm", m)
    back = fe.read_mask(tmp_path / "m.pgm")
    assert np.array_equal(back.labels, m.labels) and back.regions == m.regions
    assert (tmp_path / "m.txt").read_text().splitlines()[1].split()[0] == "1"


def test_deterministic():
    p = fe.CorruptionParams(split_prob=0.5, max_splits=2, erosion_radius=1, dropout_prob=0.2, seed=5)
    a = fe.corrupt(blocks(), p, 4)
    b = fe.corrupt(blocks(), p, 4)
    assert np.array_equal(a.labels, b.labels)
