"""Exhaustive and closed-form reference optimizers for small instances.

The brute-force search enumerates ARIS positions on a lattice, quantized
RIS phase vectors and quantized NOMA power splits for one frozen fading
snapshot. The TRIS only shapes the serving link of the non-CoMP near user,
which nothing else depends on, so its phases are searched separately; the
joint optimum is the sum of the two independent maxima.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from ._validation import ConfigError, check_positive_int
from .channel import (NON_COMP_BS, ChannelParams, ChannelSet, SmallScaleFading, Topology,
                      aligned_phases, compose_channels, sample_fading)
from .noma import ALPHA_MAX, ALPHA_MIN, PowerAllocation, compute_rates

DEFAULT_BUDGET = 10 ** 8
OBJECTIVES = ("effective", "nominal")
RESULT_COLUMNS = ("n_elements", "snapshot_seed", "best_sum_rate", "best_position_x",
                  "best_position_y")


@dataclass
class SearchGrid:
    """Enumeration lattice of the brute-force search.

    Args:
        positions_per_axis: Lattice points per axis over the flight area
            (ignored when ``positions`` is given).
        phase_levels: Quantization count L; level k is the phase 2*pi*k/L.
        alpha_levels: Power-split levels per CoMP BS, evenly spaced over the
            feasible interval.
        budget: Maximum number of joint configurations.
        positions: Optional explicit (P, 2) list of ARIS xy positions.
    """

    positions_per_axis: int = 5
    phase_levels: int = 16
    alpha_levels: int = 5
    budget: int = DEFAULT_BUDGET
    positions: np.ndarray | None = None

    def __post_init__(self):
        check_positive_int(self.positions_per_axis, "positions_per_axis")
        check_positive_int(self.phase_levels, "phase_levels")
        check_positive_int(self.alpha_levels, "alpha_levels")
        check_positive_int(self.budget, "budget")
        if self.positions is not None:
            self.positions = np.atleast_2d(np.asarray(self.positions, dtype=np.float64))
            if self.positions.shape[1] != 2 or not len(self.positions):
                raise ConfigError(f"positions must be a non-empty (P, 2) array, "
                                  f"got {self.positions.shape}")

    def xy(self, topology: Topology):
        if self.positions is not None:
            return self.positions
        x0, x1, y0, y1 = topology.area_bounds
        xs = np.linspace(x0, x1, self.positions_per_axis)
        ys = np.linspace(y0, y1, self.positions_per_axis)
        return np.array([(x, y) for x in xs for y in ys])

    def phases(self):
        return 2.0 * np.pi * np.arange(self.phase_levels) / self.phase_levels

    def alphas(self):
        if self.alpha_levels == 1:
            return np.array([0.5 * (ALPHA_MIN + ALPHA_MAX)])
        return np.linspace(ALPHA_MIN, ALPHA_MAX, self.alpha_levels)

    def n_positions(self, topology):
        return len(self.xy(topology))

    def count(self, topology: Topology, n_aris, n_tris):
        return (self.n_positions(topology) * self.phase_levels ** (n_aris + n_tris)
                * self.alpha_levels ** 2)

    def check_budget(self, topology, n_aris, n_tris):
        total = self.count(topology, n_aris, n_tris)
        if total > self.budget:
            raise ConfigError(
                f"oracle enumeration of {total:.3g} configurations exceeds budget {self.budget:.3g} "
                f"(positions={self.n_positions(topology)}, L={self.phase_levels}, "
                f"n_aris={n_aris}, n_tris={n_tris}, alpha_levels={self.alpha_levels})")
        return total


@dataclass
class OracleResult:
    position: np.ndarray        # (3,) ARIS position
    aris_phases: np.ndarray
    tris_phases: np.ndarray
    alpha: np.ndarray           # (2,)
    sum_rate: float             # bits/s under the search objective
    index: tuple                # (position, aris combo, alpha pair, tris combo)
    n_evaluated: int


def phase_combinations(levels, n):
    """All L**n phase-index vectors in lexicographic order (element 0 most significant)."""
    if n == 0:
        return np.zeros((1, 0), dtype=np.int64)
    return np.array(list(itertools.product(range(levels), repeat=n)), dtype=np.int64)


def alpha_pairs(alphas):
    return np.array([(a0, a1) for a0 in alphas for a1 in alphas])


def _objective(report, objective):
    return report.effective_sum_rate if objective == "effective" else report.sum_rate


def _tris_search(channels: ChannelSet, grid: SearchGrid, params: ChannelParams, p_tx, chunk):
    """Best quantized TRIS phases for the non-CoMP near user's rate."""
    n_tris = channels.n_tris
    combos = phase_combinations(grid.phase_levels, n_tris)
    if n_tris == 0:
        return 0, np.zeros(0)
    phase_table = grid.phases()
    alloc = PowerAllocation.uniform(ALPHA_MIN, p_tx)
    best_val, best_idx = -np.inf, 0
    n_aris = channels.n_aris
    for start in range(0, len(combos), chunk):
        theta = phase_table[combos[start:start + chunk]]
        rep = compute_rates(channels, np.zeros(n_aris), theta, alloc, params)
        r = rep.r_nu[..., NON_COMP_BS]
        i = int(np.argmax(r))
        if r[i] > best_val:
            best_val, best_idx = r[i], start + i
    return best_idx, phase_table[combos[best_idx]]


def brute_force_max(topology: Topology, params: ChannelParams, grid: SearchGrid,
                    snapshot: SmallScaleFading, objective="effective", chunk=16384):
    """Exhaustive search over ARIS position, RIS phases and power split.

    Args:
        topology: Node placement; the ARIS altitude is kept fixed.
        params: Radio parameters (element counts, power).
        grid: Enumeration lattice and budget.
        snapshot: Frozen small-scale fading; the search is per realization.
        objective: ``"effective"`` (FU counted only when SIC succeeds) or
            ``"nominal"`` sum rate.

    Returns:
        :class:`OracleResult`. Ties resolve to the lexicographically smallest
        configuration index.
    """
    if objective not in OBJECTIVES:
        raise ConfigError(f"unknown oracle objective {objective!r}")
    n_aris, n_tris = params.n_aris, params.n_tris
    total = grid.check_budget(topology, n_aris, n_tris)
    p_tx = params.p_tx_dbm
    xy = grid.xy(topology)
    positions = np.column_stack([xy, np.full(len(xy), topology.aris_altitude)])
    phase_table = grid.phases()
    combos = phase_combinations(grid.phase_levels, n_aris)
    pairs = alpha_pairs(grid.alphas())
    alloc = PowerAllocation(pairs, p_tx)

    # TRIS is searched once: its channels do not depend on the ARIS position
    ch0 = compose_channels(topology, params, snapshot, positions[0])
    tris_idx, tris_phases = _tris_search(ch0, grid, params, p_tx, chunk)

    best = (-np.inf, None)
    for p, pos in enumerate(positions):
        ch = compose_channels(topology, params, snapshot, pos)
        for start in range(0, len(combos), chunk):
            theta = phase_table[combos[start:start + chunk]][:, None, :]
            rep = compute_rates(ch, theta, tris_phases, alloc, params)
            val = np.broadcast_to(_objective(rep, objective), (len(theta), len(pairs)))
            flat = int(np.argmax(val))
            if val.flat[flat] > best[0]:
                c, a = np.unravel_index(flat, val.shape)
                best = (float(val.flat[flat]), (p, start + int(c), int(a)))
    p, c, a = best[1]
    return OracleResult(
        position=positions[p], aris_phases=phase_table[combos[c]], tris_phases=tris_phases,
        alpha=pairs[a], sum_rate=best[0], index=(p, c, a, tris_idx), n_evaluated=total)


def evaluate_config(topology, params, snapshot, position, aris_phases, tris_phases, alpha,
                    objective="effective"):
    """Objective value of one explicit configuration (no search)."""
    ch = compose_channels(topology, params, snapshot, np.asarray(position, dtype=np.float64))
    rep = compute_rates(ch, aris_phases, tris_phases, PowerAllocation(alpha, params.p_tx_dbm),
                        params)
    return float(_objective(rep, objective))


def aligned_phase_heuristic(channels: ChannelSet, target):
    """Closed-form co-phasing of a single cascaded link.

    Args:
        channels: Realized channels (unbatched).
        target: ``0`` or ``1`` for the CoMP BS -> ARIS -> FU cascade of that
            BS, or ``"tris"`` for the TRIS cascade to its served near user.

    Returns:
        Phase vector in [0, 2*pi); elements with zero cascade gain get 0.
    """
    if target == "tris":
        return aligned_phases(channels.g_bs_tris, channels.g_tris_nu)
    if target in (0, 1):
        return aligned_phases(channels.g_bs_aris[..., target, :], channels.g_aris_fu)
    raise ValueError(f"unknown cascade target {target!r}")


def snapshot_oracle(topology, params, grid, seeds, objective="effective"):
    """Brute-force optimum for each fading snapshot seed; returns list of results."""
    return [brute_force_max(topology, params, grid,
                            sample_fading(params, np.random.default_rng(int(s))), objective)
            for s in seeds]
