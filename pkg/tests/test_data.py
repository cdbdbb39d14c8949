import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meshlearn.data import Dataset, EpochSampler, StaticView, StreamWindow, UnionView, next_batch


def block(i, n=2):
    return Dataset(np.full((n, 1), float(i)), np.zeros(n))


def test_stream_window_evicts_oldest():
    w = StreamWindow(3)
    for i in range(5):
        w.push(block(i))
    assert len(w) == 3
    assert sorted(set(w.current().x.ravel().tolist())) == [2.0, 3.0, 4.0]
    with pytest.raises(ValueError):
        StreamWindow(2).current()


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 20), st.integers(1, 10), st.integers(0, 10_000))
def test_epoch_sampler_covers_each_sample_once(n, bs, seed):
    s = EpochSampler(np.random.default_rng(seed))
    if bs >= n:
        assert s.indices(n, bs).tolist() == list(range(n))
        return
    seen = np.concatenate([s.indices(n, bs) for _ in range(n // bs)])
    assert len(set(seen.tolist())) == len(seen)


def test_sampler_resets_on_version_change():
    s = EpochSampler(np.random.default_rng(0))
    s.indices(10, 3, version=0)
    assert s.cursor == 3
    s.indices(10, 3, version=1)
    assert s.cursor == 3 and s.key == (10, 1)


def test_union_view_tracks_members():
    a, b = StreamWindow(5), StaticView(block(9, 3))
    a.push(block(1))
    u = UnionView([a, b])
    assert len(u.current()) == 5
    a.push(block(2))
    assert len(u.current()) == 7
    x, y = next_batch(u, EpochSampler(np.random.default_rng(0)), None)
    assert len(x) == 7
