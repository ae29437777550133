"""Straight-line re-implementation of the signal model and the exhaustive search.

Written independently of the package's vectorized code paths: scalar
complex arithmetic per configuration for rates, explicit nested loops for
the search. Used only as a test oracle.
"""

import cmath
import itertools
import math

import numpy as np

from aris_hppo.channel import compose_channels


def dbm_to_mw(x):
    return 10 ** (x / 10)


def rates(ch, aris_phases, tris_phases, alpha, p_dbm, bandwidth, n0_dbm, coherent=True):
    """Return (sum_rate, effective_sum_rate, sic_ok) in bits/s for one configuration."""
    p = [dbm_to_mw(p_dbm)] * 3
    n0 = dbm_to_mw(n0_dbm)
    g = []
    for b in (0, 1):
        acc = 0j
        for n, th in enumerate(aris_phases):
            acc += ch.g_bs_aris[b][n] * cmath.exp(1j * th) * ch.g_aris_fu[n]
        g.append(acc)
    if coherent:
        sig = abs(math.sqrt(alpha[0] * p[0]) * g[0] + math.sqrt(alpha[1] * p[1]) * g[1]) ** 2
    else:
        sig = alpha[0] * p[0] * abs(g[0]) ** 2 + alpha[1] * p[1] * abs(g[1]) ** 2
    intra = (1 - alpha[0]) * p[0] * abs(g[0]) ** 2 + (1 - alpha[1]) * p[1] * abs(g[1]) ** 2
    sinr_fu = sig / (intra + p[2] * abs(ch.h_intf_fu) ** 2 + n0)

    h = [complex(ch.h_bs_nu[b]) for b in range(3)]
    t = ch.tris_target
    for n, th in enumerate(tris_phases):
        h[t] += ch.g_bs_tris[n] * cmath.exp(1j * th) * ch.g_tris_nu[n]
    sic_ok = True
    r_nu = []
    for b in range(3):
        own = p[b] * abs(h[b]) ** 2
        floor = n0 + sum(p[k] * abs(ch.h_cross[k][b]) ** 2 for k in range(3) if k != b)
        if b < 2:
            fu_at_nu = alpha[b] * own / ((1 - alpha[b]) * own + floor)
            sic_ok = sic_ok and fu_at_nu >= sinr_fu
            r_nu.append(bandwidth * math.log2(1 + (1 - alpha[b]) * own / floor))
        else:
            r_nu.append(bandwidth * math.log2(1 + own / floor))
    r_fu = bandwidth * math.log2(1 + sinr_fu)
    total = r_fu + sum(r_nu)
    return total, (total if sic_ok else sum(r_nu)), sic_ok


def enumerate_optimum(topology, params, fading, positions, levels, alphas, objective="effective"):
    """Exhaustive search with first-found tie-breaking; TRIS disabled (n_tris must be 0)."""
    assert params.n_tris == 0
    n0_dbm = params.noise_psd_dbm_per_hz + 10 * math.log10(params.bandwidth_hz)
    phase_grid = [2 * math.pi * k / levels for k in range(levels)]
    best, arg = -math.inf, None
    for xy in positions:
        pos = np.array([xy[0], xy[1], topology.aris_altitude])
        ch = compose_channels(topology, params, fading, pos)
        for combo in itertools.product(phase_grid, repeat=params.n_aris):
            for a0 in alphas:
                for a1 in alphas:
                    nominal, eff, _ = rates(ch, combo, (), (a0, a1), params.p_tx_dbm,
                                            params.bandwidth_hz, n0_dbm, params.coherent_comp)
                    val = eff if objective == "effective" else nominal
                    if val > best:
                        best, arg = val, (tuple(xy), combo, (a0, a1))
    return best, arg
