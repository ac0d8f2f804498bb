import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgap.errors import ConfigError
from pgap.mining import (
    MiningConfig,
    build_ground_truth,
    mine_tuples,
    write_ground_truth_csv,
    write_tuples_csv,
)
from pgap.synthgen import OrchardSpec, generate


def violations(pos, seg, tuples, cfg):
    """Brute-force check of every tuple against the positive rules, one pair at a time."""

    def is_positive(a, p):
        close = float(np.sqrt(sum((pos[a][k] - pos[p][k]) ** 2 for k in range(3)))) <= cfg.r_th
        return close and p <= a - cfg.revisit_exclusion_window and seg[a] == seg[p]

    bad = []
    for t in tuples:
        if not is_positive(t.anchor, t.positive):
            bad.append((t.anchor, "positive"))
        for n in t.negatives:
            if is_positive(t.anchor, n) or n == t.anchor:
                bad.append((t.anchor, f"negative {n}"))
        if len(set(t.negatives)) != len(t.negatives):
            bad.append((t.anchor, "repeated negative"))
        if t.segments != [int(seg[f]) for f in t.frames]:
            bad.append((t.anchor, "labels"))
    return bad


def test_tuples_on_default_orchard_pass_brute_force(default_sequence):
    cfg = MiningConfig()
    pos, seg = default_sequence.positions(), default_sequence.segments()
    tuples = mine_tuples(default_sequence, cfg)
    assert tuples
    assert violations(pos, seg, tuples, cfg) == []
    assert all(len(t.negatives) == 20 for t in tuples)


def test_positive_is_the_closest_valid_one(default_sequence):
    cfg = MiningConfig()
    pos, seg = default_sequence.positions(), default_sequence.segments()
    for t in mine_tuples(default_sequence, cfg)[::7]:
        a = t.anchor
        cands = [p for p in range(a - cfg.revisit_exclusion_window + 1) if seg[p] == seg[a] and np.linalg.norm(pos[a] - pos[p]) <= cfg.r_th]
        best = min(cands, key=lambda p: (np.linalg.norm(pos[a] - pos[p]), p))
        assert t.positive == best


def test_second_lap_row_frames_are_anchors(default_sequence):
    tuples = mine_tuples(default_sequence, MiningConfig())
    per_lap = len(default_sequence) // 2
    assert all(t.anchor >= per_lap for t in tuples)
    assert all(t.positive < per_lap for t in tuples)


def test_adjacent_row_neighbours_are_not_positives():
    # anchor at the end, its only neighbour within 2 m sits in the next row
    pos = np.array([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [1.5, 0.0, 0.0]])
    seg = np.array([2, 1, 1])
    cfg = MiningConfig(revisit_exclusion_window=1, num_negatives=1)
    assert mine_tuples((pos, seg), cfg) == []
    tuples = mine_tuples((pos, np.array([1, 1, 1])), cfg)
    assert [(t.anchor, t.positive) for t in tuples] == [(2, 0)]


def test_straight_path_thinning():
    y = np.arange(101) * 0.1
    pos = np.column_stack([np.zeros(101), y, np.zeros(101)])
    pos = np.vstack([pos, pos + [0.05, 0.0, 0.0]])
    seg = np.ones(len(pos), dtype=int)
    cfg = MiningConfig(revisit_exclusion_window=101, num_negatives=1)
    tuples = mine_tuples((pos, seg), cfg)
    assert 0 < len(tuples) <= 21
    anchor_pos = pos[[t.anchor for t in tuples]]
    assert np.all(np.linalg.norm(np.diff(anchor_pos, axis=0), axis=1) >= 0.5 - 1e-12)


def test_negatives_are_resampled_per_epoch(default_sequence):
    a = mine_tuples(default_sequence, MiningConfig(), epoch=1)
    b = mine_tuples(default_sequence, MiningConfig(), epoch=2)
    assert [(t.anchor, t.positive) for t in a] == [(t.anchor, t.positive) for t in b]
    assert any(x.negatives != y.negatives for x, y in zip(a, b))
    again = mine_tuples(default_sequence, MiningConfig(), epoch=1)
    assert [t.negatives for t in a] == [t.negatives for t in again]


def test_too_many_negatives():
    pos = np.array([[0.0, 0, 0], [0.5, 0, 0], [9.0, 0, 0]])
    with pytest.raises(ConfigError):
        mine_tuples((pos, np.ones(3, dtype=int)), MiningConfig(revisit_exclusion_window=1, num_negatives=5))


@pytest.mark.parametrize("bad", [dict(r_th=0.0), dict(num_negatives=0), dict(eval_radius=1.0)])
def test_invalid_config(bad):
    with pytest.raises(ConfigError):
        MiningConfig(**bad).validate()


def test_minimum_negative_distance_is_honoured(default_sequence):
    cfg = MiningConfig(negative_min_distance=5.0)
    pos = default_sequence.positions()
    for t in mine_tuples(default_sequence, cfg):
        assert np.all(np.linalg.norm(pos[t.negatives] - pos[t.anchor], axis=1) >= 5.0)


@settings(max_examples=10)
@given(st.integers(0, 2**16))
def test_random_orchards_have_no_violations(seed):
    spec = OrchardSpec(rows=2, row_length=10.0, trees_per_row=5, points_per_tree=20, seed=seed)
    seq = generate(spec)
    cfg = MiningConfig(seed=seed, revisit_exclusion_window=20)
    assert violations(seq.positions(), seq.segments(), mine_tuples(seq, cfg), cfg) == []


# ---------------------------------------------------------------- ground truth


def test_segment_aware_differs_only_on_cross_segment_neighbours(default_sequence):
    cfg = MiningConfig()
    pos, seg = default_sequence.positions(), default_sequence.segments()
    on = build_ground_truth(default_sequence, cfg, segment_aware=True)
    off = build_ground_truth(default_sequence, cfg, segment_aware=False)
    for q in range(len(pos)):
        diff = set(off.true_sets[q]) - set(on.true_sets[q])
        assert set(on.true_sets[q]) <= set(off.true_sets[q])
        assert diff == {j for j in off.true_sets[q] if seg[j] != seg[q]}
        for j in off.true_sets[q]:
            assert j <= q - cfg.revisit_exclusion_window
            assert np.linalg.norm(pos[q] - pos[j]) <= cfg.eval_radius


def test_lateral_revisit_three_metres():
    n = 60
    y = np.linspace(0, 10, n)
    pos = np.vstack([np.column_stack([np.zeros(n), y, np.zeros(n)]), np.column_stack([np.full(n, 3.0), y, np.zeros(n)])])
    cfg = MiningConfig(revisit_exclusion_window=n)
    same = build_ground_truth((pos, np.ones(2 * n, dtype=int)), cfg, segment_aware=True)
    assert n // 2 in same.true_sets[n + n // 2]
    split = build_ground_truth((pos, np.r_[np.ones(n, dtype=int), np.full(n, 2)]), cfg, segment_aware=True)
    assert split.num_valid() == 0


def test_csv_exports(tmp_path, small_sequence):
    cfg = MiningConfig(revisit_exclusion_window=20, num_negatives=3)
    tuples = mine_tuples(small_sequence, cfg)
    write_tuples_csv(tmp_path / "t.csv", tuples)
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0] == ["anchor", "positive", "neg1", "neg2", "neg3"]
    assert [int(x) for x in rows[1]] == tuples[0].frames
    gt = build_ground_truth(small_sequence, cfg, segment_aware=True)
    write_ground_truth_csv(tmp_path / "g.csv", gt)
    rows = list(csv.reader(open(tmp_path / "g.csv")))
    assert len(rows) == len(gt) + 1
