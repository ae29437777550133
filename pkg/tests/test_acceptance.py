"""Acceptance criteria 1-9.

Each test prints one ``ACCEPTANCE <n> PASS|FAIL`` line. Criteria 4-7 train
agents on the reference config; their cells are cached (see
``acceptance_runs``), so only the first run is slow.
"""

import numpy as np
import pytest

from aris_hppo.channel import (ChannelParams, cascaded_gain, compose_channels, sample_fading,
                               sample_nakagami_gain)
from aris_hppo.cli import main as cli_main
from aris_hppo.hppo import compute_gae, surrogate_loss
from aris_hppo.oracle import SearchGrid, aligned_phase_heuristic, brute_force_max
from aris_hppo.selfcheck import policy_gradient_error

import acceptance_runs as runs
from reference_model import enumerate_optimum
from test_oracle import single_bs_snapshot

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {detail}")
        return ok
    return emit


@pytest.fixture(scope="module")
def cfg():
    return runs.reference_config()


# Criteria 5 and 7 are reproduced shortfalls; the assertions are unchanged and
# strict, so an unexpected pass surfaces as a failure. See README, "Known shortfalls".
SHORTFALL = pytest.mark.xfail(strict=True, reason="known shortfall, see README")


def pooled_std(a, b):
    return float(np.sqrt((np.var(a, ddof=1) + np.var(b, ddof=1)) / 2.0))


def test_1_gradient_correctness(report):
    errs = [policy_gradient_error(seed, width=8) for seed in range(20)]
    assert report(1, max(errs) < 1e-4, f"max rel err {max(errs):.2e} over 20 policies")


def test_2_channel_statistics(report):
    rng = np.random.default_rng(2024)
    worst_mean = worst_var = 0.0
    for m in (0.5, 1.0, 3.0):
        p = np.abs(sample_nakagami_gain(m, 1.0, rng, size=10 ** 6)) ** 2
        worst_mean = max(worst_mean, abs(p.mean() - 1.0))
        worst_var = max(worst_var, abs(p.var() * m - 1.0))
    ok = worst_mean < 0.01 and worst_var < 0.02
    assert report(2, ok, f"mean rel err {worst_mean:.4f}, var rel err {worst_var:.4f}")


def test_3_oracle_equivalence(report, topology):
    p = ChannelParams(n_aris=3, n_tris=0)
    # closed-form alignment with one CoMP BS feeding the ARIS
    ratios = []
    for seed in range(3):
        f = single_bs_snapshot(p, seed)
        g = SearchGrid(positions_per_axis=2, phase_levels=16, alpha_levels=2)
        res = brute_force_max(topology, p, g, f, objective="nominal")
        ch = compose_channels(topology, p, f, res.position)
        best = abs(cascaded_gain(ch.g_bs_aris[0], aligned_phase_heuristic(ch, 0), ch.g_aris_fu))
        ratios.append(abs(cascaded_gain(ch.g_bs_aris[0], res.aris_phases, ch.g_aris_fu)) / best)
    aligned_ok = all(np.cos(np.pi / 16) <= r <= 1 + 1e-12 for r in ratios)
    # full search against the straight-line enumeration
    g = SearchGrid(positions_per_axis=5, phase_levels=16, alpha_levels=5)
    f = sample_fading(p, np.random.default_rng(11))
    res = brute_force_max(topology, p, g, f)
    ref, arg = enumerate_optimum(topology, p, f, g.xy(topology), 16, list(g.alphas()))
    rel = abs(res.sum_rate - ref) / ref
    ok = aligned_ok and rel < 1e-9 and tuple(res.position[:2]) == arg[0]
    assert report(3, ok, f"aligned ratios {min(ratios):.4f}..{max(ratios):.4f} "
                         f"(floor {np.cos(np.pi / 16):.4f}); enumeration rel diff {rel:.1e}")


def test_4_near_optimality(report, cfg):
    ratios, oracle = runs.near_optimality(cfg)
    med = float(np.median(ratios))
    assert report(4, med >= 0.85, f"median policy/oracle {med:.4f} (oracle {oracle:.3f} bit/s/Hz, "
                                  f"per seed {np.round(ratios, 4).tolist()})")


@SHORTFALL
def test_5_variant_ordering(report, cfg):
    res = runs.variant_runs(cfg)
    plateau = {v: [r["cum_reward"] for r in rs] for v, rs in res.items()}
    flat = all(r["plateaued"] for rs in res.values() for r in rs)
    pairs = [("HPPO_ARIS_TRIS", "PPO_FIXED_ARIS"), ("PPO_FIXED_ARIS", "PPO_NO_ARIS"),
             ("HPPO_ARIS_TRIS", "HPPO_RANDOM_ARIS_PHASES")]
    gaps = {f"{a}>{b}": (np.mean(plateau[a]) - np.mean(plateau[b])) / pooled_std(plateau[a], plateau[b])
            for a, b in pairs}
    ok = flat and all(g > 1.0 for g in gaps.values())
    means = {v: round(float(np.mean(x)), 2) for v, x in plateau.items()}
    detail = ", ".join(f"{k} {g:+.2f} std" for k, g in gaps.items())
    assert report(5, ok, f"all plateaued={flat}; {detail}; means {means}")


def test_6_element_gap(report, cfg):
    out = runs.element_gap(cfg)
    (lo, hi) = runs.GAP_ELEMENTS
    ok = out[hi][0] < out[lo][0]
    assert report(6, ok, f"median ratio n={lo}: {out[lo][0]:.4f}, n={hi}: {out[hi][0]:.4f}")


@SHORTFALL
def test_7_reward_design_ordering(report, cfg):
    res = runs.design_runs(cfg)
    rate = {d: np.array([r["effective_sum_rate"] for r in rs]) for d, rs in res.items()}
    viol = {d: float(np.mean([r["violation_rate"] for r in rs])) for d, rs in res.items()}

    def geq(a, b):
        return rate[a].mean() >= rate[b].mean() - pooled_std(rate[a], rate[b])

    order_ok = geq("COMPOUND", "PENALIZED") and geq("PENALIZED", "SUM")
    viol_ok = viol["SUM"] > viol["PENALIZED"] and viol["SUM"] >= 2.0 * viol["PENALIZED"]
    means = {d: round(float(r.mean()), 3) for d, r in rate.items()}
    assert report(7, order_ok and viol_ok,
                  f"sum rate {means}; violation SUM {viol['SUM']:.4f} vs PENALIZED {viol['PENALIZED']:.4f}")


def test_8_cli_determinism(report, tmp_path, capsys):
    from test_cli import sets
    files = {"train": ["curve_seed7.csv", "episodes_seed7.csv"], "oracle": ["oracle.csv"],
             "eval": ["eval.csv"], "sweep-elements": ["sweep_elements.csv", "sweep_elements_detail.csv"],
             "sweep-power": ["sweep_power.csv"]}
    same = {}
    for cmd, names in files.items():
        blobs = []
        for rep in range(2):
            out = tmp_path / f"{cmd}{rep}"
            extra = ["--checkpoint", str(tmp_path / "train0" / "policy_seed7.ckpt")] if cmd == "eval" else []
            assert cli_main([cmd, *sets(), *extra, "--out", str(out)]) == 0
            blobs.append([(out / n).read_bytes() for n in names])
        same[cmd] = blobs[0] == blobs[1]
    capsys.readouterr()
    assert report(8, all(same.values()), f"byte-identical reruns {same}")


def test_9_hand_cases(report):
    adv, _ = compute_gae([1.0, 1.0], [0.0, 0.0, 0.0], [False, False], 1.0, 1.0)
    loss, _, _ = surrogate_loss(np.log([1.5]), np.zeros(1), np.ones(1), 0.2)
    ok = adv.tolist() == [2.0, 1.0] and abs(loss + 1.2) < 1e-12
    assert report(9, ok, f"GAE advantages {adv.tolist()}, clipped surrogate loss {loss:.12f}")
