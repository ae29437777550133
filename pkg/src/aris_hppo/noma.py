"""SINR, SIC feasibility and sum-rate evaluation for the CoMP-NOMA downlink."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import COMP_BS, N_BS, NON_COMP_BS, ChannelParams, ChannelSet, cascaded_gain

ALPHA_MARGIN = 0.05
ALPHA_MIN = 0.5 + ALPHA_MARGIN
ALPHA_MAX = 1.0 - ALPHA_MARGIN


def noise_power_dbm(bandwidth_hz, psd_dbm_per_hz):
    if not bandwidth_hz > 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth_hz}")
    return psd_dbm_per_hz + 10.0 * np.log10(bandwidth_hz)


def dbm_to_mw(dbm):
    return 10.0 ** (np.asarray(dbm, dtype=np.float64) / 10.0)


@dataclass
class PowerAllocation:
    """NOMA power split of the two CoMP BSs.

    ``alpha[..., b]`` is the share of BS ``b``'s power spent on the FU
    symbol; the NU gets ``1 - alpha``. ``p_tx_dbm`` holds the per-BS total.
    """

    alpha: np.ndarray
    p_tx_dbm: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        self.p_tx_dbm = np.broadcast_to(np.asarray(self.p_tx_dbm, dtype=np.float64), (N_BS,))
        if self.alpha.shape[-1:] != (2,):
            raise ValueError(f"alpha must have a trailing axis of length 2, got {self.alpha.shape}")

    @classmethod
    def uniform(cls, alpha, p_tx_dbm):
        return cls(alpha=np.array([alpha, alpha], dtype=np.float64), p_tx_dbm=p_tx_dbm)

    def is_feasible(self, atol=1e-12):
        return bool(np.all((self.alpha >= ALPHA_MIN - atol) & (self.alpha <= ALPHA_MAX + atol)))

    def fu_power_mw(self):
        return self.alpha * dbm_to_mw(self.p_tx_dbm[list(COMP_BS)])

    def nu_power_mw(self):
        return (1.0 - self.alpha) * dbm_to_mw(self.p_tx_dbm[list(COMP_BS)])


@dataclass
class RateReport:
    """Per-user rates in bits/s.

    ``sum_rate`` is the nominal total ``r_fu + sum(r_nu)``.
    ``effective_sum_rate`` drops the FU term when SIC is infeasible, since
    the near users could not cancel a FU message sent at that rate.
    """

    r_fu: np.ndarray
    r_nu: np.ndarray          # (..., 3)
    sum_rate: np.ndarray
    effective_sum_rate: np.ndarray
    sic_ok: np.ndarray
    sinr_fu: np.ndarray
    sinr_nu: np.ndarray       # (..., 3) own-symbol SINR after SIC
    sinr_fu_at_nu: np.ndarray  # (..., 2) FU symbol as seen by each CoMP NU
    bandwidth_hz: float

    @property
    def sinr_detail(self):
        return {"fu": self.sinr_fu, "nu": self.sinr_nu, "fu_at_nu": self.sinr_fu_at_nu}

    @property
    def spectral_efficiency(self):
        return self.sum_rate / self.bandwidth_hz


def effective_fu_gain(channels: ChannelSet, aris_phases):
    """Cascaded gain from each CoMP BS to the FU via the ARIS: shape (..., 2)."""
    theta = np.asarray(aris_phases, dtype=np.float64)
    return cascaded_gain(channels.g_bs_aris, theta[..., None, :], channels.g_aris_fu[..., None, :])


def serving_links(channels: ChannelSet, tris_phases):
    """Direct BS->NU links with the TRIS cascade added coherently to its target."""
    h = np.array(channels.h_bs_nu, dtype=np.complex128, copy=True)
    if channels.n_tris:
        tris = cascaded_gain(channels.g_bs_tris, tris_phases, channels.g_tris_nu)
        # phase batches may carry leading axes the channels lack
        h = np.array(np.broadcast_to(h, np.broadcast_shapes(h.shape, np.shape(tris) + (h.shape[-1],))))
        h[..., channels.tris_target] = h[..., channels.tris_target] + tris
    return h


def compute_rates(channels: ChannelSet, aris_phases, tris_phases,
                  power_alloc: PowerAllocation, params: ChannelParams) -> RateReport:
    """Evaluate all user rates for one slot (batched over leading axes).

    Signal model:

    * FU: both CoMP BSs send the FU symbol through the ARIS; amplitudes add
      coherently (power-add when ``params.coherent_comp`` is False). NU
      symbols of the CoMP BSs and the non-CoMP BS direct link interfere.
    * CoMP NU ``b`` first decodes the FU symbol, cancels it, then decodes
      its own. Every other BS's full transmission is interference.
    * Non-CoMP NU decodes its own symbol directly.
    """
    comp = list(COMP_BS)
    p_mw = dbm_to_mw(power_alloc.p_tx_dbm)
    alpha = power_alloc.alpha
    n0 = dbm_to_mw(noise_power_dbm(params.bandwidth_hz, params.noise_psd_dbm_per_hz))

    g = effective_fu_gain(channels, aris_phases)
    amp_fu = np.sqrt(alpha * p_mw[comp])
    if params.coherent_comp:
        signal_fu = np.abs(np.sum(amp_fu * g, axis=-1)) ** 2
    else:
        signal_fu = np.sum(alpha * p_mw[comp] * np.abs(g) ** 2, axis=-1)
    intra = np.sum((1.0 - alpha) * p_mw[comp] * np.abs(g) ** 2, axis=-1)
    intf_fu = p_mw[NON_COMP_BS] * np.abs(channels.h_intf_fu) ** 2
    sinr_fu = signal_fu / (intra + intf_fu + n0)

    h = serving_links(channels, tris_phases)
    own = p_mw * np.abs(h) ** 2                                   # (..., 3)
    cross = np.einsum("k,...kb->...b", p_mw, np.abs(channels.h_cross) ** 2)
    floor = cross + n0

    own_comp = own[..., comp]
    sinr_fu_at_nu = alpha * own_comp / ((1.0 - alpha) * own_comp + floor[..., comp])
    sinr_comp = (1.0 - alpha) * own_comp / floor[..., comp]
    sinr_other = own[..., NON_COMP_BS:] / floor[..., NON_COMP_BS:]
    lead = np.broadcast_shapes(sinr_comp.shape[:-1], sinr_other.shape[:-1])
    sinr_nu = np.concatenate([np.broadcast_to(sinr_comp, lead + (2,)),
                              np.broadcast_to(sinr_other, lead + (1,))], axis=-1)

    sic_ok = np.all(sinr_fu_at_nu >= sinr_fu[..., None], axis=-1)

    bw = params.bandwidth_hz
    r_fu = bw * np.log2(1.0 + sinr_fu)
    r_nu = bw * np.log2(1.0 + sinr_nu)
    nu_total = np.sum(r_nu, axis=-1)
    sum_rate = r_fu + nu_total
    return RateReport(
        r_fu=r_fu, r_nu=r_nu, sum_rate=sum_rate,
        effective_sum_rate=np.where(sic_ok, sum_rate, nu_total),
        sic_ok=sic_ok, sinr_fu=sinr_fu, sinr_nu=sinr_nu, sinr_fu_at_nu=sinr_fu_at_nu,
        bandwidth_hz=bw,
    )
