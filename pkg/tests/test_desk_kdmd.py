"""Qualitative sweep findings checked on the desk Ra=1e5 dataset."""
from collections import Counter

import numpy as np

from rbc_koopman import experiments as ex


def table(sweep):
    return {(r.config["sigma"], r.config["snapshot_size"]): r.mean_nsse for r in sweep.rows}


def test_sigma_two_is_most_often_best(desk_kdmd_sweep):
    t = table(desk_kdmd_sweep)
    best = [min(ex.KDMD_SIGMAS, key=lambda s: t[(s, m)]) for m in ex.KDMD_SNAPSHOT_SIZES]
    counts = Counter(best)
    mode = max(counts.values())
    winners = sorted(s for s, c in counts.items() if c == mode)
    assert winners == [2.0], f"best sigma per snapshot size: {dict(zip(ex.KDMD_SNAPSHOT_SIZES, best))}"


def test_snapshot_sizes_above_sixty_change_little(desk_kdmd_sweep):
    t = table(desk_kdmd_sweep)
    base = t[(2.0, 60)]
    rel = {m: abs(t[(2.0, m)] - base) / base for m in (80, 100, 150)}
    assert max(rel.values()) < 0.1, f"relative change vs m=60 (NSSE {base:.3e}): {rel}"


def test_large_snapshot_sets_beat_tiny_ones(desk_kdmd_sweep):
    t = table(desk_kdmd_sweep)
    for s in ex.KDMD_SIGMAS:
        assert t[(s, 60)] < t[(s, 5)]
    assert np.isfinite(list(t.values())).all()
