import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sharpwave import montecarlo as mc


def test_stream_ids_are_stable_and_distinct():
    assert mc.stream_id("level", 1.0, 0.0625) == mc.stream_id("level", 1.0, 0.0625)
    assert mc.stream_id("level", 1.0, 0.0625) != mc.stream_id("level", 0.5, 0.0625)
    assert 0 <= mc.stream_id("x") < 2**32


def test_path_generators_are_independent_of_order():
    a = mc.path_generator(7, 3, 5).standard_normal(4)
    mc.path_generator(7, 3, 4).standard_normal(100)
    np.testing.assert_array_equal(a, mc.path_generator(7, 3, 5).standard_normal(4))
    assert not np.array_equal(a, mc.path_generator(7, 3, 6).standard_normal(4))
    assert not np.array_equal(a, mc.path_generator(8, 3, 5).standard_normal(4))


def test_noise_source_matches_per_path_generators():
    src = mc.NoiseSource(1, 2, range(10, 13), 5, 4, max_buffer=7)
    draws = np.stack([src.next() for _ in range(4)], axis=1)
    for i, p in enumerate(range(10, 13)):
        np.testing.assert_array_equal(draws[i], mc.path_generator(1, 2, p).standard_normal((4, 5)))


def test_blocks_and_thread_mapping():
    assert [len(b) for b in mc.blocks(10, 4)] == [4, 4, 2]
    assert mc.blocks(0, 4) == []
    out = mc.map_blocks(lambda r: {"x": np.array(list(r))}, 10, threads=3, block_size=3)
    np.testing.assert_array_equal(mc.concat_results(out)["x"], np.arange(10))
    with pytest.raises(ValueError):
        mc.set_default_threads(0)


def test_estimate_arithmetic():
    a, b = mc.Estimate(1.0, 0.3, 10), mc.Estimate(0.5, 0.4, 20)
    assert (a - b).value == 0.5 and (a - b).stderr == pytest.approx(0.5) and (a - b).n_paths == 10
    assert (a + b).value == 1.5
    assert a.scaled(-2).stderr == pytest.approx(0.6)
    assert a.ci == pytest.approx((1 - 1.96 * 0.3, 1 + 1.96 * 0.3), abs=1e-4)
    with pytest.raises(ValueError):
        mc.mean_estimate(np.ones(1))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=50))
def test_mean_estimate_agrees_with_columnwise(xs):
    x = np.array(xs)
    one = mc.mean_estimate(x)
    col = mc.mean_estimates(np.stack([x, 2 * x], axis=1))
    assert one.value == pytest.approx(col[0].value, abs=1e-9)
    assert one.stderr == pytest.approx(col[0].stderr, abs=1e-9)
    assert col[1].stderr == pytest.approx(2 * col[0].stderr, abs=1e-9)
    assert one.stderr == pytest.approx(np.std(x, ddof=1) / math.sqrt(len(x)), abs=1e-9)
