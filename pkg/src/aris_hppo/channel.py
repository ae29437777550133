"""Geometry, Nakagami-m small-scale fading and cascaded RIS channel synthesis.

Index conventions used throughout the package:

* BSs 0 and 1 form the CoMP pair serving the far user (FU) through the ARIS.
* BS 2 is the non-CoMP BS; it serves its own near user and interferes at the FU.
* NU ``b`` is the near user attached to BS ``b``.

All channel arrays may carry arbitrary leading batch dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ._validation import check_positive_int, check_scalar_range

SPEED_OF_LIGHT = 3e8
N_BS = 3
COMP_BS = (0, 1)
NON_COMP_BS = 2

# link classes: ARIS-touching links, TRIS-touching links, direct terrestrial links
LINK_CLASSES = ("aris", "tris", "terrestrial")


def path_loss_db(distance_m, freq_hz, exponent):
    """Log-distance path loss anchored at the 1 m free-space loss.

    Args:
        distance_m: Link distance(s) in meters, each >= 1.
        freq_hz: Carrier frequency in Hz.
        exponent: Path-loss exponent, >= 2.

    Returns:
        Path loss in dB, same shape as ``distance_m``.
    """
    d = np.asarray(distance_m, dtype=np.float64)
    if np.any(~np.isfinite(d)) or np.any(d < 1.0):
        raise ValueError("path loss model requires distance >= 1 m")
    if freq_hz <= 0:
        raise ValueError(f"frequency must be positive, got {freq_hz}")
    if exponent < 2:
        raise ValueError(f"path-loss exponent must be >= 2, got {exponent}")
    fspl_1m = 20.0 * np.log10(4.0 * np.pi * freq_hz / SPEED_OF_LIGHT)
    pl = fspl_1m + 10.0 * exponent * np.log10(d)
    return float(pl) if pl.ndim == 0 else pl


def sample_nakagami_gain(m, omega, rng, size=None):
    """Draw complex gains with Nakagami-m envelope and uniform phase.

    The envelope power follows Gamma(shape=m, scale=omega/m), so that
    ``E[|h|^2] = omega`` and ``Var(|h|^2) = omega**2 / m``.
    """
    if not m >= 0.5:
        raise ValueError(f"Nakagami m must be >= 0.5, got {m}")
    if not omega > 0:
        raise ValueError(f"omega must be positive, got {omega}")
    power = rng.gamma(shape=m, scale=omega / m, size=size)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=size)
    return np.sqrt(power) * np.exp(1j * phase)


def cascaded_gain(g_in, phases, g_out):
    """Sum over RIS elements of ``g_in[n] * exp(j*phases[n]) * g_out[n]``.

    Reduction is over the last axis; leading axes broadcast.
    """
    g_in = np.asarray(g_in)
    g_out = np.asarray(g_out)
    phases = np.asarray(phases, dtype=np.float64)
    n = {np.shape(g_in)[-1], np.shape(g_out)[-1], np.shape(phases)[-1]}
    if len(n) != 1:
        raise ValueError(
            f"cascade length mismatch: g_in {np.shape(g_in)}, phases {np.shape(phases)}, "
            f"g_out {np.shape(g_out)}"
        )
    if 0 in n:
        return np.zeros(np.broadcast_shapes(g_in.shape[:-1], g_out.shape[:-1], phases.shape[:-1]),
                        dtype=np.complex128)
    return np.sum(g_in * np.exp(1j * phases) * g_out, axis=-1)


def aligned_phases(g_in, g_out):
    """Closed-form phases that co-phase every element of one cascaded link."""
    prod = np.asarray(g_in) * np.asarray(g_out)
    theta = np.mod(-np.angle(prod), 2.0 * np.pi)
    theta = np.where(np.abs(prod) == 0.0, 0.0, theta)
    # -0.0 and 2*pi round-off both map to 0
    return np.where(theta >= 2.0 * np.pi, 0.0, theta) + 0.0


@dataclass
class Topology:
    """Node placement for the 3-BS CoMP-NOMA network (meters).

    Attributes:
        bs_positions: (3, 3) rows are BS 0..2; BS 0 and 1 are the CoMP pair.
        nu_positions: (3, 3) near user of each BS.
        fu_position: (3,) far user.
        tris_position: (3,) terrestrial RIS centre.
        tris_normal: (3,) direction the TRIS faces; links behind it are dark.
        tris_serves: index of the BS/NU pair the TRIS assists.
        area_bounds: (x_min, x_max, y_min, y_max) flight area of the ARIS.
        aris_altitude: fixed ARIS altitude.
        aris_position: current ARIS position; reset puts it at the area centre.
    """

    bs_positions: np.ndarray
    nu_positions: np.ndarray
    fu_position: np.ndarray
    tris_position: np.ndarray
    tris_normal: np.ndarray
    area_bounds: tuple = (0.0, 150.0, 0.0, 150.0)
    aris_altitude: float = 35.0
    tris_serves: int = NON_COMP_BS
    aris_position: np.ndarray = field(default=None)

    def __post_init__(self):
        self.bs_positions = np.asarray(self.bs_positions, dtype=np.float64).reshape(N_BS, 3)
        self.nu_positions = np.asarray(self.nu_positions, dtype=np.float64).reshape(N_BS, 3)
        self.fu_position = np.asarray(self.fu_position, dtype=np.float64).reshape(3)
        self.tris_position = np.asarray(self.tris_position, dtype=np.float64).reshape(3)
        self.tris_normal = np.asarray(self.tris_normal, dtype=np.float64).reshape(3)
        self.area_bounds = tuple(float(v) for v in self.area_bounds)
        self.aris_altitude = float(self.aris_altitude)
        if self.aris_position is None:
            self.aris_position = self.center()
        else:
            self.aris_position = np.asarray(self.aris_position, dtype=np.float64).reshape(3)
        self.validate()

    @classmethod
    def default(cls):
        return cls(
            bs_positions=[[0.0, 150.0, 10.0], [150.0, 0.0, 10.0], [-150.0, -150.0, 25.0]],
            nu_positions=[[8.0, 142.0, 1.5], [142.0, 8.0, 1.5], [-110.0, -110.0, 1.5]],
            fu_position=[140.0, 140.0, 1.5],
            tris_position=[-110.0, -104.0, 6.0],
            tris_normal=[0.0, -1.0, 0.0],
        )

    def center(self):
        x0, x1, y0, y1 = self.area_bounds
        return np.array([(x0 + x1) / 2.0, (y0 + y1) / 2.0, self.aris_altitude])

    def reset_aris(self):
        self.aris_position = self.center()
        return self.aris_position

    def clamp(self, positions):
        """Clamp (..., 3) positions to the flight area; returns (clamped, moved_outside)."""
        x0, x1, y0, y1 = self.area_bounds
        p = np.array(positions, dtype=np.float64, copy=True)
        outside = (p[..., 0] < x0) | (p[..., 0] > x1) | (p[..., 1] < y0) | (p[..., 1] > y1)
        p[..., 0] = np.clip(p[..., 0], x0, x1)
        p[..., 1] = np.clip(p[..., 1], y0, y1)
        p[..., 2] = self.aris_altitude
        return p, outside

    def normalize_xy(self, positions):
        """Map ARIS (x, y) into [-1, 1]^2 with the area centre at the origin."""
        x0, x1, y0, y1 = self.area_bounds
        p = np.asarray(positions, dtype=np.float64)
        nx = (p[..., 0] - (x0 + x1) / 2.0) / ((x1 - x0) / 2.0)
        ny = (p[..., 1] - (y0 + y1) / 2.0) / ((y1 - y0) / 2.0)
        return np.stack([nx, ny], axis=-1)

    def validate(self):
        x0, x1, y0, y1 = self.area_bounds
        if not (x1 > x0 and y1 > y0):
            raise ValueError(f"degenerate area bounds {self.area_bounds}")
        if not self.aris_altitude > 0:
            raise ValueError("ARIS altitude must be positive")
        if self.tris_serves not in range(N_BS):
            raise ValueError(f"tris_serves must be a BS index, got {self.tris_serves}")
        if not np.linalg.norm(self.tris_normal) > 0:
            raise ValueError("TRIS normal must be a nonzero vector")
        fixed = np.vstack([self.bs_positions, self.nu_positions, self.fu_position,
                           self.tris_position])
        if not np.all(np.isfinite(fixed)) or not np.all(np.isfinite(self.aris_position)):
            raise ValueError("all positions must be finite")
        if abs(self.aris_position[2] - self.aris_altitude) > 1e-9:
            raise ValueError("ARIS must fly at the configured altitude")
        d = np.linalg.norm(fixed[:, None, :] - fixed[None, :, :], axis=-1)
        np.fill_diagonal(d, np.inf)
        if d.min() < 1.0:
            raise ValueError("entities must be at least 1 m apart")
        # the ARIS flies over the whole area: nothing may sit within 1 m of its plane
        x_in = (fixed[:, 0] >= x0 - 1) & (fixed[:, 0] <= x1 + 1)
        y_in = (fixed[:, 1] >= y0 - 1) & (fixed[:, 1] <= y1 + 1)
        near_alt = np.abs(fixed[:, 2] - self.aris_altitude) < 1.0
        if np.any(x_in & y_in & near_alt):
            raise ValueError("a fixed node lies within 1 m of the ARIS flight plane")


@dataclass
class ChannelParams:
    """Radio and fading parameters.

    ``nakagami_m`` and ``path_loss_exponents`` are keyed by link class
    (``aris``, ``tris``, ``terrestrial``).
    """

    carrier_freq_hz: float = 2.4e9
    bandwidth_hz: float = 10e6
    noise_psd_dbm_per_hz: float = -174.0
    n_aris: int = 8
    n_tris: int = 8
    p_tx_dbm: float = 15.0
    nakagami_m: dict = field(default_factory=lambda: {"aris": 3.0, "tris": 3.0, "terrestrial": 2.0})
    path_loss_exponents: dict = field(
        default_factory=lambda: {"aris": 2.2, "tris": 2.2, "terrestrial": 3.5})
    bs_antenna_gain_dbi: float = 15.0
    ris_element_gain_db: float = 15.0
    coherent_comp: bool = True

    def __post_init__(self):
        self.nakagami_m = dict(self.nakagami_m)
        self.path_loss_exponents = dict(self.path_loss_exponents)
        self.validate()

    def validate(self):
        check_scalar_range(self.carrier_freq_hz, "carrier_freq_hz", low=0, low_inclusive=False)
        check_scalar_range(self.bandwidth_hz, "bandwidth_hz", low=0, low_inclusive=False)
        check_positive_int(self.n_aris, "n_aris")
        check_positive_int(self.n_tris, "n_tris", allow_zero=True)
        for cls in LINK_CLASSES:
            if cls not in self.nakagami_m or cls not in self.path_loss_exponents:
                raise ValueError(f"missing link class {cls!r}")
            check_scalar_range(self.nakagami_m[cls], f"nakagami_m[{cls}]", low=0.5)
            check_scalar_range(self.path_loss_exponents[cls], f"path_loss_exponents[{cls}]", low=2.0)

    def with_elements(self, n_aris=None, n_tris=None):
        return replace(self,
                       n_aris=self.n_aris if n_aris is None else n_aris,
                       n_tris=self.n_tris if n_tris is None else n_tris)


@dataclass
class ChannelSet:
    """One slot's complex channel coefficients (optionally batched).

    Direct CoMP-BS to FU links and the non-CoMP-BS to ARIS link do not
    exist in this network, so there are no fields for them.
    """

    g_bs_aris: np.ndarray  # (..., 2, n_aris) CoMP BS -> ARIS elements
    g_aris_fu: np.ndarray  # (..., n_aris)    ARIS elements -> FU
    h_bs_nu: np.ndarray    # (..., 3)         BS b -> its own NU
    h_cross: np.ndarray    # (..., 3, 3)      [k, b]: BS k -> NU b, zero diagonal
    h_intf_fu: np.ndarray  # (...,)           non-CoMP BS -> FU
    g_bs_tris: np.ndarray  # (..., n_tris)    served BS -> TRIS elements
    g_tris_nu: np.ndarray  # (..., n_tris)    TRIS elements -> served NU
    tris_target: int = NON_COMP_BS

    @property
    def n_aris(self):
        return self.g_aris_fu.shape[-1]

    @property
    def n_tris(self):
        return self.g_tris_nu.shape[-1]

    def without_aris(self):
        return replace(self, g_bs_aris=np.zeros_like(self.g_bs_aris),
                       g_aris_fu=np.zeros_like(self.g_aris_fu))

    def take(self, index):
        """Select one element of a batched channel set."""
        return ChannelSet(
            g_bs_aris=self.g_bs_aris[index], g_aris_fu=self.g_aris_fu[index],
            h_bs_nu=self.h_bs_nu[index], h_cross=self.h_cross[index],
            h_intf_fu=self.h_intf_fu[index], g_bs_tris=self.g_bs_tris[index],
            g_tris_nu=self.g_tris_nu[index], tris_target=self.tris_target)


@dataclass
class SmallScaleFading:
    """Unit-mean-power fading coefficients for one slot; shapes mirror ChannelSet."""

    bs_aris: np.ndarray
    aris_fu: np.ndarray
    bs_nu: np.ndarray      # (..., 3, 3) [k, b]: BS k -> NU b, diagonal = serving link
    bs3_fu: np.ndarray
    bs_tris: np.ndarray
    tris_nu: np.ndarray

    @classmethod
    def stack(cls, items):
        return cls(*(np.stack([getattr(it, f) for it in items]) for f in
                     ("bs_aris", "aris_fu", "bs_nu", "bs3_fu", "bs_tris", "tris_nu")))

    def take(self, index):
        return SmallScaleFading(self.bs_aris[index], self.aris_fu[index], self.bs_nu[index],
                                self.bs3_fu[index], self.bs_tris[index], self.tris_nu[index])


def sample_fading(params: ChannelParams, rng) -> SmallScaleFading:
    """Draw one slot of independent Nakagami fading for every link.

    The draw order is fixed so that a seeded generator always yields the
    same realization.
    """
    m = params.nakagami_m
    return SmallScaleFading(
        bs_aris=sample_nakagami_gain(m["aris"], 1.0, rng, size=(2, params.n_aris)),
        aris_fu=sample_nakagami_gain(m["aris"], 1.0, rng, size=params.n_aris),
        bs_nu=sample_nakagami_gain(m["terrestrial"], 1.0, rng, size=(N_BS, N_BS)),
        bs3_fu=sample_nakagami_gain(m["terrestrial"], 1.0, rng, size=None),
        bs_tris=sample_nakagami_gain(m["tris"], 1.0, rng, size=params.n_tris),
        tris_nu=sample_nakagami_gain(m["tris"], 1.0, rng, size=params.n_tris),
    )


def mean_fading(params: ChannelParams) -> SmallScaleFading:
    """Fading frozen at unit gain, leaving only the large-scale loss."""
    return SmallScaleFading(
        bs_aris=np.ones((2, params.n_aris), dtype=np.complex128),
        aris_fu=np.ones(params.n_aris, dtype=np.complex128),
        bs_nu=np.ones((N_BS, N_BS), dtype=np.complex128),
        bs3_fu=np.complex128(1.0),
        bs_tris=np.ones(params.n_tris, dtype=np.complex128),
        tris_nu=np.ones(params.n_tris, dtype=np.complex128),
    )


def _amplitude(distance, params, link_class, extra_gain_db=0.0):
    pl = path_loss_db(np.maximum(distance, 1.0), params.carrier_freq_hz,
                      params.path_loss_exponents[link_class])
    return np.sqrt(10.0 ** (-(pl - extra_gain_db) / 10.0))


def _static_amplitudes(topology: Topology, params: ChannelParams):
    """Large-scale amplitudes of links that do not touch the ARIS."""
    bs, nu = topology.bs_positions, topology.nu_positions
    g_bs = params.bs_antenna_gain_dbi
    d_bs_nu = np.linalg.norm(bs[:, None, :] - nu[None, :, :], axis=-1)
    bs_nu = _amplitude(d_bs_nu, params, "terrestrial", g_bs)
    d_fu = np.linalg.norm(bs[NON_COMP_BS] - topology.fu_position)
    bs3_fu = _amplitude(d_fu, params, "terrestrial", g_bs)

    t = topology.tris_serves
    normal = topology.tris_normal / np.linalg.norm(topology.tris_normal)
    src, dst = bs[t], nu[t]
    facing = (np.dot(src - topology.tris_position, normal) > 0
              and np.dot(dst - topology.tris_position, normal) > 0)
    if facing:
        bs_tris = _amplitude(np.linalg.norm(src - topology.tris_position), params, "tris", g_bs)
        tris_nu = _amplitude(np.linalg.norm(dst - topology.tris_position), params, "tris",
                             params.ris_element_gain_db)
    else:
        bs_tris = tris_nu = 0.0
    return bs_nu, bs3_fu, bs_tris, tris_nu


def aris_amplitudes(topology: Topology, params: ChannelParams, aris_positions=None):
    """Large-scale amplitudes of the CoMP-BS->ARIS (..., 2) and ARIS->FU (...) hops."""
    p = topology.aris_position if aris_positions is None else np.asarray(aris_positions)
    comp = topology.bs_positions[list(COMP_BS)]
    d_in = np.linalg.norm(p[..., None, :] - comp, axis=-1)
    d_out = np.linalg.norm(p - topology.fu_position, axis=-1)
    a_in = _amplitude(d_in, params, "aris", params.bs_antenna_gain_dbi)
    a_out = _amplitude(d_out, params, "aris", params.ris_element_gain_db)
    return a_in, a_out


def compose_channels(topology: Topology, params: ChannelParams, fading: SmallScaleFading,
                     aris_positions=None) -> ChannelSet:
    """Combine large-scale loss at the given ARIS position(s) with slot fading."""
    bs_nu, bs3_fu, bs_tris, tris_nu = _static_amplitudes(topology, params)
    a_in, a_out = aris_amplitudes(topology, params, aris_positions)
    full = bs_nu * fading.bs_nu
    diag = np.diagonal(full, axis1=-2, axis2=-1)
    cross = full * (1.0 - np.eye(N_BS))
    return ChannelSet(
        g_bs_aris=a_in[..., :, None] * fading.bs_aris,
        g_aris_fu=np.asarray(a_out)[..., None] * fading.aris_fu,
        h_bs_nu=np.array(diag),
        h_cross=cross,
        h_intf_fu=bs3_fu * np.asarray(fading.bs3_fu),
        g_bs_tris=bs_tris * fading.bs_tris,
        g_tris_nu=tris_nu * fading.tris_nu,
        tris_target=topology.tris_serves,
    )


def realize_channels(topology: Topology, params: ChannelParams, rng, fading=None,
                     aris_position=None) -> ChannelSet:
    """Realize one slot's channels.

    Args:
        topology: Node placement; the ARIS position is read from it unless
            ``aris_position`` is given.
        params: Radio parameters.
        rng: ``numpy.random.Generator`` supplying the fading draws.
        fading: Optional pre-drawn :class:`SmallScaleFading`, or ``"mean"``
            to freeze every fading coefficient at unit gain.
    """
    if fading is None:
        fading = sample_fading(params, rng)
    elif isinstance(fading, str):
        if fading != "mean":
            raise ValueError(f"unknown fading mode {fading!r}")
        fading = mean_fading(params)
    return compose_channels(topology, params, fading, aris_position)
