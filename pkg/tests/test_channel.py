import numpy as np
import pytest

from oafmtl.channel import (
    ChannelRound,
    EmptyScheduleError,
    draw_fading,
    effective_observation,
    scaled_noise_var,
    scheduled_normalizer,
    transmit,
)
from oafmtl.transform import forward, make_partial_dct
from oafmtl.transmitter import pack_complex, superpose


def test_fading_models():
    np.testing.assert_array_equal(draw_fading(20, "unit"), np.ones(20))
    h = draw_fading(10**5, "rayleigh", 3)
    assert np.mean(np.abs(h) ** 2) == pytest.approx(1.0, rel=0.01)
    np.testing.assert_array_equal(draw_fading(5, "rayleigh", 9), draw_fading(5, "rayleigh", 9))
    with pytest.raises(ValueError):
        draw_fading(0)


def test_transmit_examples(rng):
    s = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    np.testing.assert_array_equal(transmit([s], ChannelRound([1.0], 0.0)), s)
    h = np.array([0.7 + 0.2j, -0.3 + 0.9j])
    s2 = -(h[0] / h[1]) * s
    np.testing.assert_allclose(transmit([s, s2], ChannelRound(h, 0.0)), 0, atol=1e-15)
    with pytest.raises(ValueError):
        transmit([s, s[:3]], ChannelRound(h, 0.0))


def test_noise_calibration():
    n = 10**6
    r = transmit([np.zeros(n, complex)], ChannelRound([1.0], np.sqrt(0.1), seed=5))
    assert np.mean(np.abs(r) ** 2) == pytest.approx(0.1, rel=0.01)
    assert np.var(r.real) == pytest.approx(0.05, rel=0.02)


def test_transmit_linear(rng):
    h = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    ch = ChannelRound(h, 0.0)
    a = [rng.standard_normal(5) + 0j for _ in range(3)]
    b = [rng.standard_normal(5) + 0j for _ in range(3)]
    np.testing.assert_allclose(
        transmit([x + 2 * y for x, y in zip(a, b)], ch), transmit(a, ch) + 2 * transmit(b, ch), atol=1e-13
    )


def test_scheduled_set_rule():
    ch = ChannelRound([0.1, 0.5, 1.0, 0.49999], 0.0, threshold=0.5)
    assert ch.scheduled == frozenset({1, 2})


def test_effective_observation_identity(rng):
    op = make_partial_dct(16, 16, 0)
    g = rng.standard_normal(16)
    obs = effective_observation(pack_complex(forward(op, g)), ChannelRound([1.0], 0.0), 1.0, [[1]])
    np.testing.assert_allclose(obs.y, forward(op, g), atol=1e-15)
    assert obs.noise_var == 0.0


def test_paper_noise_value():
    assert scaled_noise_var(0.1, 1000.0, 50000) == pytest.approx(2.0e-17, rel=1e-12)
    assert scaled_noise_var(0.1, 1000.0, 50000, paper_sigma=True) == pytest.approx(1.0e-17, rel=1e-12)


def test_empty_schedule_rejected():
    ch = ChannelRound([0.1, 0.2], 0.1, threshold=1.0)
    with pytest.raises(EmptyScheduleError):
        effective_observation(np.zeros(4, complex), ch, 1.0, [[5, 5]])


def test_unequal_normalizers_rejected():
    with pytest.raises(ValueError):
        scheduled_normalizer([[1, 2], [2, 2]], frozenset({0, 1}))


def test_weighted_average_recovered(rng):
    op = make_partial_dct(32, 16, 2)
    K = [3, 5, 2]
    grads = [rng.standard_normal(32) for _ in K]
    xs = [superpose([forward(op, g)], [k]) for g, k in zip(grads, K)]
    ch = ChannelRound(np.ones(3), 0.0)
    obs = effective_observation(transmit([pack_complex(x) for x in xs], ch), ch, 1.0, [K])
    expected = forward(op, sum(k * g for k, g in zip(K, grads)) / sum(K))
    np.testing.assert_allclose(obs.y, expected, atol=1e-10)


def test_scheduled_subset_changes_normalizer(rng):
    K = [[4, 4, 4, 4]]
    ch = ChannelRound([1.0, 1.0, 0.1, 0.1], 0.0, threshold=0.5)
    obs = effective_observation(np.ones(2, complex), ch, 1.0, K)
    assert obs.normalizers == (8.0,)
    np.testing.assert_allclose(obs.y, [1 / 8, 1 / 8, 0, 0])


def test_noise_variance_matches_empirical():
    n = 10**6
    ch = ChannelRound([1.0], 0.3, seed=8)
    r = transmit([np.zeros(n // 2, complex)], ch)
    obs = effective_observation(r, ch, 2.0, [[5]])
    assert np.var(obs.y) == pytest.approx(obs.noise_var, rel=0.02)
