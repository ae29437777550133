import dataclasses

import numpy as np
import pytest

from aris_hppo import ConfigError
from aris_hppo.channel import ChannelParams, cascaded_gain, compose_channels, sample_fading
from aris_hppo.oracle import (SearchGrid, aligned_phase_heuristic, alpha_pairs, brute_force_max,
                              evaluate_config, phase_combinations, snapshot_oracle)

from reference_model import enumerate_optimum


def single_bs_snapshot(params, seed):
    """Fading with the second CoMP BS -> ARIS link switched off."""
    f = sample_fading(params, np.random.default_rng(seed))
    bs_aris = f.bs_aris.copy()
    bs_aris[1] = 0
    return dataclasses.replace(f, bs_aris=bs_aris)


class TestGrid:
    def test_count_and_budget(self, topology):
        g = SearchGrid(positions_per_axis=5, phase_levels=16, alpha_levels=5, budget=10 ** 8)
        assert g.count(topology, 4, 0) == 25 * 16 ** 4 * 25
        with pytest.raises(ConfigError, match="exceeds budget"):
            g.check_budget(topology, 6, 0)

    def test_brute_force_refuses_over_budget(self, topology):
        p = ChannelParams(n_aris=4, n_tris=0)
        g = SearchGrid(budget=1000)
        with pytest.raises(ConfigError):
            brute_force_max(topology, p, g, sample_fading(p, np.random.default_rng(0)))

    def test_lattice(self, topology):
        xy = SearchGrid(positions_per_axis=3).xy(topology)
        assert xy.shape == (9, 2) and xy.min() == 0 and xy.max() == 150
        assert np.allclose(SearchGrid(alpha_levels=3).alphas(), [0.55, 0.75, 0.95])

    def test_combinations_order(self):
        c = phase_combinations(3, 2)
        assert c.shape == (9, 2) and c[1].tolist() == [0, 1] and c[3].tolist() == [1, 0]
        assert alpha_pairs([1, 2]).tolist() == [[1, 1], [1, 2], [2, 1], [2, 2]]

    def test_bad_positions(self):
        with pytest.raises(ConfigError):
            SearchGrid(positions=np.zeros((3, 3)))


class TestEquivalence:
    @pytest.mark.parametrize("seed", [0, 1])
    def test_matches_reference_enumeration(self, topology, seed):
        p = ChannelParams(n_aris=2, n_tris=0)
        g = SearchGrid(positions_per_axis=3, phase_levels=16, alpha_levels=3)
        f = sample_fading(p, np.random.default_rng(seed))
        res = brute_force_max(topology, p, g, f)
        ref, arg = enumerate_optimum(topology, p, f, g.xy(topology), 16, list(g.alphas()))
        assert res.sum_rate == pytest.approx(ref, rel=1e-9)
        assert tuple(res.position[:2]) == arg[0]
        assert np.allclose(res.aris_phases, arg[1]) and np.allclose(res.alpha, arg[2])

    def test_nominal_objective(self, topology):
        p = ChannelParams(n_aris=2, n_tris=0)
        g = SearchGrid(positions_per_axis=2, phase_levels=8, alpha_levels=3)
        f = sample_fading(p, np.random.default_rng(4))
        res = brute_force_max(topology, p, g, f, objective="nominal")
        ref, _ = enumerate_optimum(topology, p, f, g.xy(topology), 8, list(g.alphas()), "nominal")
        assert res.sum_rate == pytest.approx(ref, rel=1e-9)
        assert res.sum_rate >= brute_force_max(topology, p, g, f).sum_rate

    def test_result_reproduces_under_evaluate(self, topology):
        p = ChannelParams(n_aris=2, n_tris=2)
        g = SearchGrid(positions_per_axis=2, phase_levels=4, alpha_levels=2)
        f = sample_fading(p, np.random.default_rng(5))
        res = brute_force_max(topology, p, g, f)
        val = evaluate_config(topology, p, f, res.position, res.aris_phases, res.tris_phases,
                              res.alpha)
        assert val == res.sum_rate

    def test_separable_tris_equals_joint(self, topology):
        p = ChannelParams(n_aris=1, n_tris=2)
        g = SearchGrid(positions_per_axis=2, phase_levels=4, alpha_levels=2)
        f = sample_fading(p, np.random.default_rng(6))
        res = brute_force_max(topology, p, g, f)
        best = -np.inf
        ph = g.phases()
        for xy in g.xy(topology):
            pos = np.array([*xy, topology.aris_altitude])
            for a in ph:
                for t0 in ph:
                    for t1 in ph:
                        for al in alpha_pairs(g.alphas()):
                            best = max(best, evaluate_config(topology, p, f, pos, [a], [t0, t1], al))
        assert res.sum_rate == pytest.approx(best, rel=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_closed_form_alignment_within_quantization_gap(self, topology, seed):
        p = ChannelParams(n_aris=3, n_tris=0)
        g = SearchGrid(positions_per_axis=2, phase_levels=16, alpha_levels=2)
        f = single_bs_snapshot(p, seed)
        res = brute_force_max(topology, p, g, f, objective="nominal")
        ch = compose_channels(topology, p, f, res.position)
        aligned = aligned_phase_heuristic(ch, 0)
        best = abs(cascaded_gain(ch.g_bs_aris[0], aligned, ch.g_aris_fu))
        found = abs(cascaded_gain(ch.g_bs_aris[0], res.aris_phases, ch.g_aris_fu))
        assert found <= best * (1 + 1e-12)
        assert found >= best * np.cos(np.pi / 16)

    def test_tris_heuristic(self, topology):
        p = ChannelParams(n_aris=1, n_tris=3)
        ch = compose_channels(topology, p, sample_fading(p, np.random.default_rng(0)),
                              topology.center())
        th = aligned_phase_heuristic(ch, "tris")
        assert abs(cascaded_gain(ch.g_bs_tris, th, ch.g_tris_nu)) == pytest.approx(
            np.sum(np.abs(ch.g_bs_tris * ch.g_tris_nu)))
        with pytest.raises(ValueError):
            aligned_phase_heuristic(ch, 2)

    def test_snapshot_oracle_deterministic(self, topology):
        p = ChannelParams(n_aris=1, n_tris=0)
        g = SearchGrid(positions_per_axis=2, phase_levels=4, alpha_levels=2)
        a = snapshot_oracle(topology, p, g, [1, 2])
        b = snapshot_oracle(topology, p, g, [1, 2])
        assert [r.sum_rate for r in a] == [r.sum_rate for r in b]

    def test_unknown_objective(self, topology):
        p = ChannelParams(n_aris=1, n_tris=0)
        with pytest.raises(ConfigError):
            brute_force_max(topology, p, SearchGrid(), sample_fading(p, np.random.default_rng(0)),
                            objective="max")
