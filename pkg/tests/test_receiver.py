import numpy as np
import pytest

from oafmtl.analysis import SeConfig, SeTask, state_evolution
from oafmtl.channel import ChannelRound, effective_observation
from oafmtl.prior import BgPrior, sample_bg
from oafmtl.receiver import (
    MTurboCS,
    TurboOptions,
    TurboTaskState,
    extrinsic,
    m_turbo_cs,
    module_a_update,
    scheme2_recover,
    scheme2_recover_all,
)
from oafmtl.transform import forward, make_partial_dct
from oracles import dct_entry_matrix

REF_PRIORS = [BgPrior(0.5515, 0.2175), BgPrior(0.5230, 0.1281)]


def test_options_validation():
    with pytest.raises(ValueError):
        TurboOptions(max_iters=0)
    with pytest.raises(ValueError):
        TurboOptions(var_floor=1.0, var_ceil=0.5)


def test_module_a_square_noiseless(rng):
    op = make_partial_dct(32, 32, 1)
    g = rng.standard_normal(32)
    st = [TurboTaskState.initial(32, 1.0)]
    module_a_update(st, forward(op, g), [op], 0.0)
    np.testing.assert_allclose(st[0].g_a_post, g, atol=1e-13)
    assert st[0].v_a_post == 1e-12


def test_module_a_confident_prior(rng):
    ops = [make_partial_dct(16, 8, s) for s in (0, 1)]
    states = [TurboTaskState(g_a_pri=rng.standard_normal(16), v_a_pri=1e-300) for _ in ops]
    before = [s.g_a_pri.copy() for s in states]
    module_a_update(states, rng.standard_normal(8), ops, 0.1)
    for s, b in zip(states, before):
        np.testing.assert_allclose(s.g_a_post, b, atol=1e-250)


def test_module_a_dense_oracle(rng):
    d, rows, nv = 64, 48, 0.05
    F = dct_entry_matrix(d)
    ops = [make_partial_dct(d, rows, s) for s in (3, 4)]
    A = [F[op.row_selection] for op in ops]
    g_pri = [rng.standard_normal(d) for _ in ops]
    v_pri = [0.7, 0.3]
    y = rng.standard_normal(rows)
    states = [TurboTaskState(g_a_pri=g.copy(), v_a_pri=v) for g, v in zip(g_pri, v_pri)]
    module_a_update(states, y, ops, nv)
    total = sum(v_pri) + nv
    resid = y - A[0] @ g_pri[0] - A[1] @ g_pri[1]
    for n in range(2):
        np.testing.assert_allclose(states[n].g_a_post, g_pri[n] + v_pri[n] * A[n].T @ resid / total, atol=1e-10)
        assert states[n].v_a_post == pytest.approx(v_pri[n] - (rows / d) * v_pri[n] ** 2 / total, abs=1e-10)
    states = [TurboTaskState(g_a_pri=g.copy(), v_a_pri=v) for g, v in zip(g_pri, v_pri)]
    module_a_update(states, y, ops, nv, TurboOptions(paper_ratio=True))
    assert states[0].v_a_post == pytest.approx(v_pri[0] - (rows / 2 / d) * v_pri[0] ** 2 / total, abs=1e-10)


def test_module_a_rejects_negative_noise():
    op = make_partial_dct(8, 4, 0)
    with pytest.raises(ValueError):
        module_a_update([TurboTaskState.initial(8, 1.0)], np.zeros(4), [op], -1.0)


def test_extrinsic_examples(rng):
    post = rng.standard_normal(5)
    m, v = extrinsic(post, 0.3, rng.standard_normal(5), 1e18)
    np.testing.assert_allclose(m, post, rtol=1e-12)
    assert v == pytest.approx(0.3, rel=1e-12)
    m, v = extrinsic(post, 0.5, np.zeros(5), 1.0)
    assert v == pytest.approx(1.0, rel=1e-14)
    np.testing.assert_allclose(m, 2 * post, rtol=1e-14)
    m, v = extrinsic(post, 2.0, np.zeros(5), 1.0)
    assert v == 1e12
    np.testing.assert_array_equal(m, post)
    with pytest.raises(ValueError):
        extrinsic(np.array([np.nan]), 1.0, np.zeros(1), 2.0)
    with pytest.raises(ValueError):
        extrinsic(post, 0.0, post, 1.0)


def test_square_noiseless_one_iteration(rng):
    op = make_partial_dct(128, 128, 2)
    g = sample_bg(128, BgPrior(0.3, 1.0), 7)
    res = m_turbo_cs(forward(op, g), [op], [BgPrior(0.3, 1.0)], TurboOptions(max_iters=1), noise_var=0.0)
    assert np.mean((res.estimates[0] - g) ** 2) <= 1e-20


def test_single_task_matches_scheme2_bitwise():
    op = make_partial_dct(256, 192, 5)
    prior = BgPrior(0.2, 1.0)
    g = sample_bg(256, prior, 1)
    y = forward(op, g) + 0.01 * np.random.default_rng(0).standard_normal(192)
    for p in (prior, "estimate"):
        opts = TurboOptions(em_enabled=p == "estimate", max_iters=15)
        a = m_turbo_cs(y, [op], [p], opts, noise_var=1e-4)
        b = scheme2_recover(y, op, p, opts, noise_var=1e-4)
        np.testing.assert_array_equal(a.estimates[0], b.estimates[0])
        assert a.trace == b.trace


def test_scheme2_alone_equals_joint_when_other_task_absent():
    ops = [make_partial_dct(256, 192, s) for s in (5, 6)]
    prior = BgPrior(0.2, 1.0)
    g = sample_bg(256, prior, 1)
    y = forward(ops[0], g)
    opts = TurboOptions(max_iters=10)
    a = m_turbo_cs(y, ops[:1], [prior], opts, noise_var=1e-4)
    b = scheme2_recover_all(y, ops[:1], [prior], opts, noise_var=1e-4)[0]
    np.testing.assert_array_equal(a.estimates[0], b.estimates[0])


def test_zero_observation_gives_zero():
    ops = [make_partial_dct(64, 48, s) for s in (0, 1)]
    for est in m_turbo_cs(np.zeros(48), ops, REF_PRIORS, noise_var=1e-3).estimates:
        np.testing.assert_allclose(est, 0.0, atol=1e-300)
    np.testing.assert_allclose(scheme2_recover(np.zeros(48), ops[0], REF_PRIORS[0], noise_var=1e-3).estimates[0], 0.0)


def test_accepts_effective_observation(rng):
    op = make_partial_dct(16, 16, 0)
    g = rng.standard_normal(16)
    obs = effective_observation(forward(op, g)[:8] + 1j * forward(op, g)[8:], ChannelRound([1.0], 0.0), 1.0, [[1]])
    res = m_turbo_cs(obs, [op], [BgPrior(1.0, 1.0)], TurboOptions(max_iters=1))
    np.testing.assert_allclose(res.estimates[0], g, atol=1e-12)
    with pytest.raises(ValueError):
        m_turbo_cs(np.zeros(16), [op], [BgPrior(1.0, 1.0)])


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        m_turbo_cs(np.zeros(10), [make_partial_dct(16, 8, 0)], [BgPrior(0.5, 1.0)], noise_var=0.1)
    with pytest.raises(ValueError):
        m_turbo_cs(np.zeros(8), [make_partial_dct(16, 8, 0)], [BgPrior(0.5, 1.0)] * 2, noise_var=0.1)


def test_trace_columns():
    ops = [make_partial_dct(64, 48, s) for s in (0, 1)]
    truth = [sample_bg(64, p, s) for s, p in enumerate(REF_PRIORS)]
    y = sum(forward(o, g) for o, g in zip(ops, truth))
    res = m_turbo_cs(y, ops, REF_PRIORS, TurboOptions(max_iters=3, rel_tol=0), noise_var=1e-3, truth=truth)
    assert len(res.trace) == 6
    assert set(res.trace[0]) == {"iter", "task", "v_a_pri", "v_b_pri", "v_b_post", "empirical_mse"}
    assert all(r["v_b_pri"] > 0 and r["v_b_post"] > 0 for r in res.trace)


def test_deterministic():
    ops = [make_partial_dct(128, 96, s) for s in (0, 1)]
    y = np.random.default_rng(3).standard_normal(96)
    a = m_turbo_cs(y, ops, "estimate", TurboOptions(em_enabled=True), noise_var=1e-2)
    b = m_turbo_cs(y, ops, "estimate", TurboOptions(em_enabled=True), noise_var=1e-2)
    for x, z in zip(a.estimates, b.estimates):
        np.testing.assert_array_equal(x, z)


def _joint_vs_se(d, seeds, nv):
    rows = 3 * d // 4
    opts = TurboOptions(max_iters=30, rel_tol=1e-6, init="prior")
    mse = np.zeros(2)
    mse2 = np.zeros(2)
    for s in seeds:
        ops = [make_partial_dct(d, rows, 1000 * s + k) for k in range(2)]
        truth = [sample_bg(d, p, 1000 * s + 10 + k) for k, p in enumerate(REF_PRIORS)]
        y = sum(forward(o, g) for o, g in zip(ops, truth))
        y = y + np.sqrt(nv) * np.random.default_rng(s).standard_normal(rows)
        res = m_turbo_cs(y, ops, REF_PRIORS, opts, noise_var=nv)
        mse += [np.mean((e - g) ** 2) for e, g in zip(res.estimates, truth)]
        for k, r2 in enumerate(scheme2_recover_all(y, ops, REF_PRIORS, opts, noise_var=nv)):
            mse2[k] += np.mean((r2.estimates[0] - truth[k]) ** 2)
    se = state_evolution(SeConfig([SeTask(d, rows, p) for p in REF_PRIORS], noise_var=nv, max_iters=30, rel_tol=1e-6))
    return mse / len(seeds), mse2 / len(seeds), np.array(se.fixed_point)


@pytest.mark.slow
def test_final_mse_tracks_se_fixed_point():
    mse, mse2, fp = _joint_vs_se(2048, range(20), 1e-3)
    gap_db = np.abs(10 * np.log10(mse / fp))
    assert np.all(gap_db <= 0.5), (mse, fp)
    # interference-blind recovery is worse on both tasks
    assert np.all(mse2 > mse)


def test_estimator_api():
    ops = [make_partial_dct(64, 48, s) for s in (0, 1)]
    truth = [sample_bg(64, p, s) for s, p in enumerate(REF_PRIORS)]
    y = sum(forward(o, g) for o, g in zip(ops, truth))
    est = MTurboCS(priors=REF_PRIORS, noise_var=1e-6, em_enabled=False, max_iters=20)
    assert est.get_params()["max_iters"] == 20
    est.fit(y, ops)
    assert len(est.coef_) == 2 and est.n_iter_ >= 1
    assert est.predict(ops).shape == y.shape
    with pytest.raises(ValueError):
        est.fit(np.zeros((2, 48)), ops)
