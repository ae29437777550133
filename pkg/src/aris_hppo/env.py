"""Time-slotted MDP for joint ARIS trajectory, RIS phase and NOMA power control.

One :class:`CompNomaEnv` steps ``n_envs`` independent instances in lockstep
(each with its own random stream), which keeps rollout collection cheap in
numpy. With ``n_envs=1`` it is an ordinary single environment.

Slot timing: the small-scale fading of slot ``t`` is drawn when the slot
begins and is visible in the state (perfect CSI). The agent's action then
moves the ARIS, large-scale loss is recomputed at the new position, and the
slot's rates are evaluated with the chosen phases and power split.

State layout (see :meth:`CompNomaEnv.state_layout`)::

    [0:2]    ARIS (x, y) normalized to [-1, 1], area centre at 0
    [2]      slot index / horizon
    [3:7]    previous-slot rates (FU, NU0, NU1, NU2) / per-user rate scale
    [7]      previous-slot SIC feasibility (+1 ok, -1 violated, 0 at reset)
    [8:10]   best-case cascaded SNR via ARIS from CoMP BS 0, 1 (scaled dB)
    [10:13]  direct serving-link SINR of NU 0..2 (scaled dB)
    [13]     non-CoMP BS -> FU interference-to-noise ratio (scaled dB)
    [14]     best-case TRIS cascade SNR (scaled dB)
    then, when ``per_element_csi`` is on:
    [15:15+N]      each ARIS element's phase residual / pi
    [15+N:15+N+M]  each TRIS element's phase residual / pi

A phase residual ``r`` is defined so that the raw continuous action
``-r / pi`` (decoded phase ``pi - r``) co-phases that element.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._validation import ConfigError, check_positive_int, check_scalar_range
from .channel import (COMP_BS, NON_COMP_BS, ChannelParams, SmallScaleFading, Topology,
                      aris_amplitudes, compose_channels, sample_fading)
from .noma import (ALPHA_MARGIN, ALPHA_MIN, PowerAllocation, RateReport, compute_rates,
                   dbm_to_mw, noise_power_dbm)

MANEUVERS = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0], [0.0, 0.0]])
MANEUVER_NAMES = ("+x", "-x", "+y", "-y", "hover")
HOVER = 4
N_MANEUVERS = len(MANEUVERS)

REWARD_DESIGNS = ("SUM", "PENALIZED", "MULTI", "COMPOUND")
VARIANTS = ("HPPO_ARIS_TRIS", "HPPO_RANDOM_ARIS_PHASES", "PPO_FIXED_ARIS", "PPO_NO_ARIS")
N_USERS = 4
N_BASE_FEATURES = 15
DB_OFFSET = 10.0
DB_SCALE = 30.0


@dataclass
class HybridAction:
    """One discrete maneuver plus raw continuous controls, batched over envs.

    ``continuous`` is laid out as ``[ARIS phases (n_aris), TRIS phases
    (n_tris), alpha_0, alpha_1]`` with every entry in [-1, 1].
    """

    maneuver: np.ndarray
    continuous: np.ndarray

    def __post_init__(self):
        self.maneuver = np.atleast_1d(np.asarray(self.maneuver, dtype=np.int64))
        self.continuous = np.atleast_2d(np.asarray(self.continuous, dtype=np.float64))
        if np.any((self.maneuver < 0) | (self.maneuver >= N_MANEUVERS)):
            raise ValueError(f"maneuver index out of range: {self.maneuver}")

    def clamped(self):
        return HybridAction(self.maneuver, np.clip(self.continuous, -1.0, 1.0))


@dataclass
class Violations:
    out_of_area: np.ndarray
    sic_violation: np.ndarray

    @property
    def any(self):
        return self.out_of_area | self.sic_violation


@dataclass
class StepOutcome:
    next_state: np.ndarray
    reward: np.ndarray
    report: RateReport
    violations: Violations
    done: bool
    positions: np.ndarray


@dataclass
class EnvConfig:
    """Episode, reward and ablation settings.

    ``rate_norm`` defaults to ``B * log2(1 + 1e4)``, one user at 40 dB SINR.
    """

    horizon: int = 200
    step_m: float = 5.0
    reward_design: str = "PENALIZED"
    lambda_oob: float = 0.5
    lambda_sic: float = 0.5
    weights: tuple = (0.6, 0.2, 0.2)
    p_hover_w: float = 100.0
    p_move_w: float = 20.0
    rate_norm: float | None = None
    per_element_csi: bool = True
    variant: str = "HPPO_ARIS_TRIS"

    def __post_init__(self):
        check_positive_int(self.horizon, "horizon")
        check_scalar_range(self.step_m, "step_m", low=0, low_inclusive=False)
        if self.reward_design not in REWARD_DESIGNS:
            raise ConfigError(f"unknown reward design {self.reward_design!r}; "
                              f"expected one of {REWARD_DESIGNS}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        self.weights = tuple(float(w) for w in self.weights)
        if len(self.weights) != 3:
            raise ConfigError("weights must hold three values (sum rate, energy efficiency, stability)")


def default_rate_norm(bandwidth_hz):
    return bandwidth_hz * np.log2(1.0 + 1e4)


def decode_action(raw: HybridAction, n_aris, n_tris, step_m):
    """Map raw head outputs to (displacement, ARIS phases, TRIS phases, alpha).

    Phases are ``pi * (c + 1)`` wrapped into [0, 2*pi); the power split is
    the affine map of [-1, 1] onto [0.5 + margin, 1 - margin].
    """
    c = np.clip(raw.continuous, -1.0, 1.0)
    k = n_aris + n_tris + 2
    if c.shape[-1] != k:
        raise ValueError(f"continuous action must have length {k}, got {c.shape[-1]}")
    phases = np.mod(np.pi * (c[..., :n_aris + n_tris] + 1.0), 2.0 * np.pi)
    span = 1.0 - 2.0 * ALPHA_MARGIN - 0.5
    alpha = ALPHA_MIN + span * (c[..., n_aris + n_tris:] + 1.0) / 2.0
    disp = np.zeros(raw.maneuver.shape + (3,))
    disp[..., :2] = step_m * MANEUVERS[raw.maneuver]
    return disp, phases[..., :n_aris], phases[..., n_aris:], alpha


def uav_power_w(maneuver, cfg: EnvConfig):
    return cfg.p_hover_w + cfg.p_move_w * (np.asarray(maneuver) != HOVER)


def reward(design, report: RateReport, violations: Violations, prev_position, new_position,
           maneuver, cfg: EnvConfig, p_tx_dbm, rate_norm):
    """Per-slot reward for one of the four designs.

    SUM counts the nominal sum rate even when SIC is infeasible; the other
    designs count the FU only when it is decodable and subtract penalties.
    MULTI returns a (..., 3) vector: sum rate, energy efficiency, -penalties.
    """
    if design not in REWARD_DESIGNS:
        raise ConfigError(f"unknown reward design {design!r}")
    nominal = report.sum_rate / rate_norm
    effective = report.effective_sum_rate / rate_norm
    penalty = (cfg.lambda_oob * violations.out_of_area.astype(np.float64)
               + cfg.lambda_sic * violations.sic_violation.astype(np.float64))
    if design == "SUM":
        return nominal
    if design == "PENALIZED":
        return effective - penalty
    p_tx_w = np.sum(dbm_to_mw(p_tx_dbm)) / 1e3
    # energy efficiency relative to hovering at the normalizing rate
    ee = effective * (p_tx_w + cfg.p_hover_w) / (p_tx_w + uav_power_w(maneuver, cfg))
    if design == "MULTI":
        return np.stack([effective, ee, -penalty], axis=-1)
    moved = np.linalg.norm(np.asarray(new_position)[..., :2] - np.asarray(prev_position)[..., :2],
                           axis=-1)
    stability = -moved / cfg.step_m
    w1, w2, w3 = cfg.weights
    return w1 * effective + w2 * ee + w3 * stability - penalty


def _scaled_db(power_ratio):
    return (10.0 * np.log10(np.maximum(power_ratio, 1e-30)) - DB_OFFSET) / DB_SCALE


def _wrap(angle):
    return np.angle(np.exp(1j * angle))


class CompNomaEnv:
    """Vectorized ARIS-assisted CoMP-NOMA environment.

    Args:
        topology: Node placement (the ARIS position inside it is not used;
            each instance tracks its own).
        params: Radio parameters; ``params.p_tx_dbm`` is the per-BS power.
        config: Episode/reward/ablation settings.
        n_envs: Number of lockstep instances.
    """

    def __init__(self, topology: Topology, params: ChannelParams, config: EnvConfig | None = None,
                 n_envs=1):
        self.topology = topology
        self.params = params
        self.config = config or EnvConfig()
        self.n_envs = check_positive_int(n_envs, "n_envs")
        self.rate_norm = (self.config.rate_norm if self.config.rate_norm is not None
                          else default_rate_norm(params.bandwidth_hz))
        self.user_rate_norm = self.rate_norm
        self.p_tx_dbm = np.full(3, params.p_tx_dbm)
        self._p_mw = dbm_to_mw(self.p_tx_dbm)
        self._n0 = dbm_to_mw(noise_power_dbm(params.bandwidth_hz, params.noise_psd_dbm_per_hz))
        self._rngs = None
        self.fading = None
        self.positions = None
        self.slot = 0
        self.frozen_fading = None

    # -- static description -------------------------------------------------
    @property
    def n_aris(self):
        return self.params.n_aris

    @property
    def n_tris(self):
        return self.params.n_tris

    @property
    def continuous_dim(self):
        return self.n_aris + self.n_tris + 2

    @property
    def state_dim(self):
        extra = self.n_aris + self.n_tris if self.config.per_element_csi else 0
        return N_BASE_FEATURES + extra

    @property
    def has_maneuver(self):
        return self.config.variant not in ("PPO_FIXED_ARIS", "PPO_NO_ARIS")

    @property
    def controlled_mask(self):
        """Which continuous components the agent actually controls."""
        mask = np.ones(self.continuous_dim, dtype=bool)
        if self.config.variant in ("HPPO_RANDOM_ARIS_PHASES", "PPO_NO_ARIS"):
            mask[:self.n_aris] = False
        return mask

    def state_layout(self):
        """List of (start, stop, description) rows documenting the state vector."""
        rows = [
            (0, 2, "ARIS (x, y) normalized to [-1, 1]"),
            (2, 3, "slot index / horizon"),
            (3, 7, "previous rates FU, NU0, NU1, NU2 / per-user scale"),
            (7, 8, "previous SIC feasibility (+1/-1, 0 at reset)"),
            (8, 10, "best-case ARIS cascade SNR from CoMP BS 0, 1 (scaled dB)"),
            (10, 13, "direct serving-link SINR of NU 0..2 (scaled dB)"),
            (13, 14, "non-CoMP BS -> FU INR (scaled dB)"),
            (14, 15, "best-case TRIS cascade SNR (scaled dB)"),
        ]
        if self.config.per_element_csi:
            a = N_BASE_FEATURES
            b = a + self.n_aris
            rows.append((a, b, f"ARIS element phase residuals / pi, x {self.n_aris}"))
            rows.append((b, b + self.n_tris, f"TRIS element phase residuals / pi, x {self.n_tris}"))
        return rows

    # -- dynamics -----------------------------------------------------------
    def reset(self, seed=None):
        """Start new episodes; with a seed the per-instance streams are re-created."""
        if seed is not None or self._rngs is None:
            ss = np.random.SeedSequence(0 if seed is None else seed)
            self._rngs = [np.random.default_rng(s) for s in ss.spawn(self.n_envs)]
        self.positions = np.tile(self.topology.center(), (self.n_envs, 1))
        self.slot = 0
        self._prev_rates = np.zeros((self.n_envs, N_USERS))
        self._prev_sic = np.zeros(self.n_envs)
        self._draw_fading()
        return self._observe()

    def freeze_fading(self, fading: SmallScaleFading | None):
        """Hold every slot's fading at a fixed (unbatched) snapshot; None to release."""
        self.frozen_fading = fading

    def _draw_fading(self):
        if self.frozen_fading is not None:
            self.fading = SmallScaleFading.stack([self.frozen_fading] * self.n_envs)
        else:
            self.fading = SmallScaleFading.stack([sample_fading(self.params, r) for r in self._rngs])

    def channels(self, positions=None):
        ch = compose_channels(self.topology, self.params, self.fading,
                              self.positions if positions is None else positions)
        if self.config.variant == "PPO_NO_ARIS":
            ch = ch.without_aris()
        return ch

    def step(self, action: HybridAction) -> StepOutcome:
        if self.positions is None:
            raise RuntimeError("call reset() before step()")
        if self.slot >= self.config.horizon:
            raise RuntimeError("episode finished; call reset()")
        action = action.clamped()
        if action.continuous.shape != (self.n_envs, self.continuous_dim):
            raise ValueError(f"expected continuous actions of shape {(self.n_envs, self.continuous_dim)}, "
                             f"got {action.continuous.shape}")
        maneuver = action.maneuver if self.has_maneuver else np.full(self.n_envs, HOVER)
        decoded = decode_action(HybridAction(maneuver, action.continuous),
                                self.n_aris, self.n_tris, self.config.step_m)
        disp, aris_ph, tris_ph, alpha = decoded
        if self.config.variant == "HPPO_RANDOM_ARIS_PHASES":
            aris_ph = np.stack([r.uniform(0.0, 2.0 * np.pi, self.n_aris) for r in self._rngs])

        prev = self.positions
        new, oob = self.topology.clamp(prev + disp)
        self.positions = new
        ch = self.channels()
        report = compute_rates(ch, aris_ph, tris_ph, PowerAllocation(alpha, self.p_tx_dbm),
                               self.params)
        violations = Violations(out_of_area=oob, sic_violation=~report.sic_ok)
        r = reward(self.config.reward_design, report, violations, prev, new, maneuver,
                   self.config, self.p_tx_dbm, self.rate_norm)

        self.slot += 1
        self._prev_rates = np.column_stack([report.r_fu, report.r_nu]) / self.user_rate_norm
        self._prev_sic = np.where(report.sic_ok, 1.0, -1.0)
        self._draw_fading()
        return StepOutcome(next_state=self._observe(), reward=r, report=report,
                           violations=violations, done=self.slot >= self.config.horizon,
                           positions=new.copy())

    # -- observation --------------------------------------------------------
    def _observe(self):
        E = self.n_envs
        ch = self.channels()
        p, n0 = self._p_mw, self._n0
        feats = np.empty((E, self.state_dim))
        feats[:, 0:2] = self.topology.normalize_xy(self.positions)
        feats[:, 2] = self.slot / self.config.horizon
        feats[:, 3:7] = self._prev_rates
        feats[:, 7] = self._prev_sic

        comp = list(COMP_BS)
        best = np.sum(np.abs(ch.g_bs_aris) * np.abs(ch.g_aris_fu)[:, None, :], axis=-1)
        feats[:, 8:10] = _scaled_db(p[comp] * best ** 2 / n0)
        cross = np.einsum("k,ekb->eb", p, np.abs(ch.h_cross) ** 2)
        feats[:, 10:13] = _scaled_db(p * np.abs(ch.h_bs_nu) ** 2 / (cross + n0))
        feats[:, 13] = _scaled_db(p[NON_COMP_BS] * np.abs(ch.h_intf_fu) ** 2 / n0)
        if self.n_tris:
            tbest = np.sum(np.abs(ch.g_bs_tris) * np.abs(ch.g_tris_nu), axis=-1)
            feats[:, 14] = _scaled_db(p[ch.tris_target] * tbest ** 2 / n0)
        else:
            feats[:, 14] = _scaled_db(0.0)

        if self.config.per_element_csi:
            a = N_BASE_FEATURES
            # residual r/pi: the co-phasing action is exactly -r/pi
            feats[:, a:a + self.n_aris] = self._aris_residuals(ch) / np.pi
            if self.n_tris:
                b = a + self.n_aris
                res_t = _wrap(np.angle(ch.g_bs_tris * ch.g_tris_nu)
                              - np.angle(ch.h_bs_nu[:, ch.tris_target])[:, None] + np.pi)
                feats[:, b:] = res_t / np.pi
        return feats

    def _aris_residuals(self, ch):
        amp = np.sqrt(self._p_mw[list(COMP_BS)])
        combined = np.sum(amp[None, :, None] * ch.g_bs_aris, axis=1) * ch.g_aris_fu
        ref = np.angle(combined[:, :1])
        res = _wrap(np.angle(combined) - ref)
        return np.where(np.abs(combined) > 0, res, 0.0)

    def aris_large_scale(self, positions=None):
        return aris_amplitudes(self.topology, self.params,
                               self.positions if positions is None else positions)
