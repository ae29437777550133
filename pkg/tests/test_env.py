import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from aris_hppo import ConfigError
from aris_hppo.channel import ChannelParams, Topology, compose_channels, mean_fading
from aris_hppo.env import (HOVER, N_BASE_FEATURES, CompNomaEnv, EnvConfig, HybridAction, Violations,
                           decode_action, default_rate_norm, reward)
from aris_hppo.noma import ALPHA_MAX, ALPHA_MIN, PowerAllocation, RateReport, compute_rates

RNORM = default_rate_norm(10e6)


def report(sum_rate, effective=None, sic_ok=True):
    s = np.atleast_1d(np.float64(sum_rate))
    e = s if effective is None else np.atleast_1d(np.float64(effective))
    return RateReport(r_fu=s * 0, r_nu=np.zeros((1, 3)), sum_rate=s, effective_sum_rate=e,
                      sic_ok=np.atleast_1d(sic_ok), sinr_fu=s * 0, sinr_nu=np.zeros((1, 3)),
                      sinr_fu_at_nu=np.zeros((1, 2)), bandwidth_hz=10e6)


def viol(oob=False, sic=False):
    return Violations(out_of_area=np.array([oob]), sic_violation=np.array([sic]))


ORIGIN = np.zeros((1, 3))


def call(design, rep, v, cfg=None, new=ORIGIN, maneuver=HOVER):
    return reward(design, rep, v, ORIGIN, new, np.array([maneuver]), cfg or EnvConfig(), 15.0, RNORM)


class TestDecode:
    def test_endpoints_and_midpoint(self):
        c = np.array([[-1.0, 0.0, 1.0, 0.0, 0.0]])
        _, ph, _, alpha = decode_action(HybridAction(np.array([HOVER]), c), 3, 0, 5.0)
        assert np.allclose(ph, [[0.0, np.pi, 0.0]])
        assert np.allclose(alpha, [[0.75, 0.75]], rtol=0, atol=1e-15)

    def test_alpha_bounds(self):
        c = np.array([[-1.0, 1.0]])
        _, _, _, alpha = decode_action(HybridAction(np.array([HOVER]), c), 0, 0, 5.0)
        assert alpha[0, 0] == pytest.approx(0.55) and alpha[0, 1] == pytest.approx(0.95)

    @given(arrays(np.float64, (4, 7), elements=st.floats(-5, 5)), st.integers(0, 4))
    def test_closure(self, c, m):
        disp, pa, pt, alpha = decode_action(
            HybridAction(np.full(4, m), c).clamped(), 3, 2, 5.0)
        assert np.all((pa >= 0) & (pa < 2 * np.pi)) and np.all((pt >= 0) & (pt < 2 * np.pi))
        assert np.all((alpha >= ALPHA_MIN - 1e-12) & (alpha <= ALPHA_MAX + 1e-12))
        assert np.allclose(np.linalg.norm(disp, axis=-1), 0.0 if m == HOVER else 5.0)

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            decode_action(HybridAction(np.array([0]), np.zeros((1, 4))), 3, 0, 5.0)


class TestReward:
    def test_penalized_worked_example(self):
        r = call("PENALIZED", report(0.8 * RNORM), viol(oob=True))
        assert r[0] == pytest.approx(0.3, abs=1e-12)

    def test_penalized_equals_sum_without_violations(self):
        rep = report(1.3 * RNORM)
        assert call("PENALIZED", rep, viol())[0] == call("SUM", rep, viol())[0]

    def test_compound_degenerates_to_sum(self):
        cfg = EnvConfig(reward_design="COMPOUND", weights=(1, 0, 0), lambda_oob=0, lambda_sic=0)
        rep = report(1.1 * RNORM)
        assert call("COMPOUND", rep, viol(), cfg)[0] == pytest.approx(call("SUM", rep, viol())[0])

    def test_compound_stability_term(self):
        cfg = EnvConfig(weights=(0, 0, 1), lambda_oob=0, lambda_sic=0)
        moved = np.array([[5.0, 0.0, 0.0]])
        assert call("COMPOUND", report(RNORM), viol(), cfg, new=moved, maneuver=0)[0] == -1.0
        assert call("COMPOUND", report(RNORM), viol(), cfg)[0] == 0.0

    def test_compound_energy_efficiency(self):
        cfg = EnvConfig(weights=(0, 1, 0), lambda_oob=0, lambda_sic=0)
        hover = call("COMPOUND", report(RNORM), viol(), cfg)[0]
        move = call("COMPOUND", report(RNORM), viol(), cfg, new=ORIGIN, maneuver=1)[0]
        assert hover == pytest.approx(1.0) and move < hover

    def test_multi_vector(self):
        r = call("MULTI", report(RNORM), viol(sic=True))
        assert r.shape == (1, 3) and r[0, 2] == -0.5

    @settings(max_examples=50)
    @given(st.floats(0, 5), st.floats(0, 1), st.booleans(), st.booleans())
    def test_penalized_never_above_sum(self, s, frac, oob, sic):
        rep = report(s * RNORM, effective=s * frac * RNORM if sic else s * RNORM, sic_ok=not sic)
        if oob or sic:
            assert call("PENALIZED", rep, viol(oob, sic))[0] <= call("SUM", rep, viol(oob, sic))[0]

    def test_unknown_design(self):
        with pytest.raises(ConfigError):
            call("MAXMIN", report(1.0), viol())
        with pytest.raises(ConfigError):
            EnvConfig(reward_design="MAXMIN")


class TestDynamics:
    def test_reset_state(self, small_env):
        s = small_env.reset(seed=1)
        assert s.shape == (2, small_env.state_dim)
        assert np.allclose(s[:, :2], 0.0)
        assert np.array_equal(s, small_env.reset(seed=1))

    def test_state_dimension_formula(self, topology):
        env = CompNomaEnv(topology, ChannelParams(n_aris=16, n_tris=16), n_envs=1)
        assert env.state_dim == N_BASE_FEATURES + 32
        assert env.state_layout()[-1][1] == env.state_dim
        env = CompNomaEnv(topology, ChannelParams(n_aris=16, n_tris=16),
                          EnvConfig(per_element_csi=False), n_envs=1)
        assert env.state_dim == N_BASE_FEATURES

    def test_features_bounded(self, small_env):
        s = small_env.reset(seed=0)
        rng = np.random.default_rng(0)
        for _ in range(10):
            a = HybridAction(rng.integers(0, 5, 2), rng.uniform(-1, 1, (2, small_env.continuous_dim)))
            s = small_env.step(a).next_state
            assert np.all(np.isfinite(s)) and np.all(np.abs(s) < 3)

    def test_hover_and_clamp(self, topology, small_params):
        env = CompNomaEnv(topology, small_params, EnvConfig(horizon=40), n_envs=1)
        env.reset(seed=0)
        c = np.zeros((1, env.continuous_dim))
        out = env.step(HybridAction(np.array([HOVER]), c))
        assert np.allclose(out.positions[0, :2], [75, 75])
        for _ in range(15):
            out = env.step(HybridAction(np.array([0]), c))
        assert out.positions[0, 0] == 150.0 and not out.violations.out_of_area[0]
        out = env.step(HybridAction(np.array([0]), c))
        assert out.positions[0, 0] == 150.0 and out.violations.out_of_area[0]

    def test_horizon(self, small_env):
        small_env.reset(seed=0)
        a = HybridAction(np.full(2, HOVER), np.zeros((2, small_env.continuous_dim)))
        dones = [small_env.step(a).done for _ in range(10)]
        assert dones == [False] * 9 + [True]
        with pytest.raises(RuntimeError):
            small_env.step(a)

    def test_frozen_mean_fading_matches_pipeline(self, topology, small_params):
        cfg = EnvConfig(reward_design="PENALIZED")
        env = CompNomaEnv(topology, small_params, cfg, n_envs=1)
        fading = mean_fading(small_params)
        env.freeze_fading(fading)
        env.reset(seed=0)
        c = np.linspace(-0.9, 0.9, env.continuous_dim)[None]
        out = env.step(HybridAction(np.array([2]), c))
        # hand pipeline
        pos = topology.center() + np.array([0.0, 5.0, 0.0])
        ch = compose_channels(topology, small_params, fading, pos)
        ph = np.mod(np.pi * (c[0, :5] + 1), 2 * np.pi)
        alpha = 0.55 + 0.4 * (c[0, 5:] + 1) / 2
        rep = compute_rates(ch, ph[:3], ph[3:], PowerAllocation(alpha, small_params.p_tx_dbm),
                            small_params)
        expected = rep.effective_sum_rate / RNORM - 0.5 * (not rep.sic_ok)
        assert out.reward[0] == pytest.approx(expected, rel=1e-12)

    def test_random_phase_variant_ignores_aris_action(self, topology, small_params):
        rewards = []
        for c0 in (-0.5, 0.5):
            env = CompNomaEnv(topology, small_params, EnvConfig(variant="HPPO_RANDOM_ARIS_PHASES"),
                              n_envs=1)
            env.reset(seed=3)
            c = np.zeros((1, env.continuous_dim))
            c[0, :3] = c0
            rewards.append(env.step(HybridAction(np.array([HOVER]), c)).reward[0])
        assert rewards[0] == rewards[1]

    def test_no_aris_variant(self, topology, small_params):
        env = CompNomaEnv(topology, small_params, EnvConfig(variant="PPO_NO_ARIS"), n_envs=1)
        env.reset(seed=0)
        out = env.step(HybridAction(np.array([HOVER]), np.zeros((1, env.continuous_dim))))
        assert out.report.r_fu[0] == 0.0

    def test_fixed_variant_never_moves(self, topology, small_params):
        env = CompNomaEnv(topology, small_params, EnvConfig(variant="PPO_FIXED_ARIS"), n_envs=1)
        env.reset(seed=0)
        assert not env.has_maneuver
        out = env.step(HybridAction(np.array([0]), np.zeros((1, env.continuous_dim))))
        assert np.allclose(out.positions[0, :2], [75, 75])

    def test_aligned_action_from_residual_features(self, topology):
        p = ChannelParams(n_aris=4, n_tris=0)
        env = CompNomaEnv(topology, p, n_envs=1)
        s = env.reset(seed=4)
        c = np.zeros((1, env.continuous_dim))
        c[0, :4] = -s[0, N_BASE_FEATURES:N_BASE_FEATURES + 4]
        ch = env.channels()
        _, ph, _, _ = decode_action(HybridAction(np.array([HOVER]), c), 4, 0, 5.0)
        amp = np.sqrt(10 ** (p.p_tx_dbm / 10))
        combined = amp * (ch.g_bs_aris[0, 0] + ch.g_bs_aris[0, 1]) * ch.g_aris_fu[0]
        gain = abs(np.sum(combined * np.exp(1j * ph[0])))
        assert gain == pytest.approx(np.sum(np.abs(combined)), rel=1e-9)
