"""
Closed-form spin dynamics of the neutral exciton and the negative trion.

Both two-level systems precess about the in-plane x axis: the exciton because
of its fine-structure splitting, the trion's hole because of an in-plane
magnetic field. The photon of an exciton carries the whole spin state, the
photon of a trion is entangled with the electron left behind so only its
circular component survives.

Units: energies in ueV, times in ps, coherence times (T2*) in ns, fields in T.
"""

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np

from .exceptions import ValidationError
from .polarization import (
    PAULI,
    BasisLabel,
    BlochVector,
    JonesVector,
    basis_state,
    projection_probability,
    to_bloch,
)


logger = logging.getLogger(__name__)

PS_PER_NS = 1000.0

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class PhysicalConstants:
    """CODATA constants in the package's unit system."""

    hbar: float = 658.2119569  # ueV ps
    h: float = 4135.667696  # ueV ps
    mu_bohr: float = 57.88381806  # ueV / T

    def __post_init__(self):
        if abs(self.h - 2.0 * math.pi * self.hbar) > 1e-9 * self.h:
            raise ValidationError("Inconsistent constants: h != 2 pi hbar")


CONSTANTS = PhysicalConstants()
HBAR = CONSTANTS.hbar
H_PLANCK = CONSTANTS.h
MU_BOHR = CONSTANTS.mu_bohr


def _require_positive(name: str, value: float, allow_zero: bool = False):
    if value is None or math.isnan(value) or value < 0 or (value == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise ValidationError(f"{name} must be {bound}, got {value!r}")


@dataclass(frozen=True)
class ExcitonParams:
    """Neutral exciton: fine-structure splitting, radiative lifetime, dephasing."""

    e_fss: float  # ueV
    lifetime_tau: float  # ps
    t2_star: float = math.inf  # ns

    def __post_init__(self):
        _require_positive("e_fss", self.e_fss, allow_zero=True)
        _require_positive("lifetime_tau", self.lifetime_tau)
        _require_positive("t2_star", self.t2_star)

    @property
    def splitting(self) -> float:
        return self.e_fss


@dataclass(frozen=True)
class TrionParams:
    """Negative trion in an in-plane field along x.

    Zeeman splittings are derived from the absolute g-factors and never stored.
    """

    g_hole: float
    g_electron: float
    b_field: float  # T
    lifetime_tau: float  # ps
    t2_star_hole: float = math.inf  # ns
    t2_star_electron: float = math.inf  # ns

    def __post_init__(self):
        _require_positive("g_hole", self.g_hole)
        _require_positive("g_electron", self.g_electron)
        _require_positive("b_field", self.b_field, allow_zero=True)
        _require_positive("lifetime_tau", self.lifetime_tau)
        _require_positive("t2_star_hole", self.t2_star_hole)
        _require_positive("t2_star_electron", self.t2_star_electron)

    @property
    def hole_splitting(self) -> float:
        return zeeman_splitting(self.g_hole, self.b_field)

    @property
    def electron_splitting(self) -> float:
        return zeeman_splitting(self.g_electron, self.b_field)

    @property
    def splitting(self) -> float:
        """Splitting of the excited level, the one visible after pulsed excitation."""
        return self.hole_splitting


class DopTriple(NamedTuple):
    """DOP_X, DOP_Y, DOP_Z; scalars or arrays of equal shape."""

    dop_x: ArrayLike
    dop_y: ArrayLike
    dop_z: ArrayLike


# ----------------------------------------------------------------------
# Unit conversions


def zeeman_splitting(g: float, b: float) -> float:
    """Zeeman splitting g mu_B B in ueV for an absolute g-factor and field in T."""
    if b < 0:
        raise ValidationError(f"Field must be >= 0 T, got {b}")
    return g * MU_BOHR * b


def splitting_to_frequency(delta_e: float) -> float:
    """Observable oscillation frequency delta_E / h in GHz."""
    return delta_e / H_PLANCK * PS_PER_NS


def frequency_to_splitting(freq_ghz: float) -> float:
    return freq_ghz * H_PLANCK / PS_PER_NS


def splitting_to_period(delta_e: float) -> float:
    """Oscillation period T = 2 pi hbar / delta_E in ps."""
    if not delta_e > 0:
        raise ValidationError(f"Splitting must be > 0 ueV, got {delta_e!r}")
    return 2.0 * math.pi * HBAR / delta_e


def period_to_splitting(period: float) -> float:
    """Energy splitting in ueV from an oscillation period in ps."""
    if not period > 0:
        raise ValidationError(f"Period must be > 0 ps, got {period!r}")
    return 2.0 * math.pi * HBAR / period


def precession_angle(splitting: float, t: ArrayLike) -> ArrayLike:
    """Bloch rotation angle splitting * t / hbar accumulated after ``t`` ps."""
    return splitting * np.asarray(t, dtype=float) / HBAR


def dephasing_factor(t2_star: float, dt: ArrayLike) -> ArrayLike:
    """exp(-dt / T2*) with dt in ps and T2* in ns; identically 1 for T2* = inf."""
    if math.isinf(t2_star):
        return np.ones_like(np.asarray(dt, dtype=float))
    return np.exp(-np.asarray(dt, dtype=float) / (t2_star * PS_PER_NS))


# ----------------------------------------------------------------------
# Bloch-vector geometry


def precess_about_x(vectors: np.ndarray, angles: ArrayLike) -> np.ndarray:
    """Right-handed rotation of Bloch vectors about x; vectorized over rows."""
    vectors = np.asarray(vectors, dtype=float)
    cos, sin = np.cos(angles), np.sin(angles)
    x, y, z = vectors[..., 0], vectors[..., 1], vectors[..., 2]
    return np.stack(np.broadcast_arrays(x, y * cos - z * sin, y * sin + z * cos), axis=-1)


def evolve_bloch(
    vectors: np.ndarray, splitting: float, t: ArrayLike, t2_star: float = math.inf
) -> np.ndarray:
    """Precession about x for ``t`` ps followed by transverse dephasing."""
    rotated = precess_about_x(vectors, precession_angle(splitting, t))
    factor = dephasing_factor(t2_star, t)
    rotated[..., 1] *= factor
    rotated[..., 2] *= factor
    return rotated


def dephase(s: BlochVector, axis: BlochVector, t2_star: float, dt: float) -> BlochVector:
    """Shrink the components of ``s`` perpendicular to ``axis`` by exp(-dt/T2*).

    Args:
        s: Bloch vector
        axis: Unit precession axis
        t2_star: Dephasing time in ns (inf disables dephasing)
        dt: Elapsed time in ps
    """
    a = axis.as_array() / axis.norm
    v = s.as_array()
    parallel = np.dot(v, a) * a
    return BlochVector.from_array(parallel + (v - parallel) * float(dephasing_factor(t2_star, dt)))


# ----------------------------------------------------------------------
# Neutral exciton


def evolve_exciton(initial: JonesVector, params: ExcitonParams, t: float) -> JonesVector:
    """Schroedinger evolution in the |+-X> (= H/V) eigenbasis for ``t`` ps."""
    half_angle = params.e_fss * t / (2.0 * HBAR)
    return JonesVector(
        initial.amp_h * np.exp(-1j * half_angle),
        initial.amp_v * np.exp(1j * half_angle),
    )


def exciton_projection_probs(state: JonesVector) -> dict[BasisLabel, float]:
    """Projection probabilities onto H, V, D, A, R, L (in that order)."""
    return {label: projection_probability(state, label) for label in BasisLabel}


def dop_from_probabilities(probs: dict[BasisLabel, float]) -> DopTriple:
    def one(co, cross):
        return (probs[co] - probs[cross]) / (probs[co] + probs[cross])

    return DopTriple(
        one(BasisLabel.H, BasisLabel.V),
        one(BasisLabel.D, BasisLabel.A),
        one(BasisLabel.R, BasisLabel.L),
    )


def exciton_dop_analytic(params: ExcitonParams, t: ArrayLike) -> DopTriple:
    """DOPs after writing |-Y> (the A polarization): (0, -cos, -sin)(E_FSS t / hbar)."""
    angle = precession_angle(params.e_fss, t)
    decay = dephasing_factor(params.t2_star, t)
    return DopTriple(np.zeros_like(angle), -np.cos(angle) * decay, -np.sin(angle) * decay)


def exciton_dop_for_pump(
    params: ExcitonParams, pump: Union[str, BasisLabel], t: ArrayLike, init_leakage: float = 0.0
) -> DopTriple:
    """DOPs of exciton photons for any pump polarization (qubit writing).

    ``init_leakage`` rotates the written Bloch vector about z before it
    starts precessing.
    """
    initial = to_bloch(basis_state(pump)).as_array()
    if init_leakage:
        initial = _leak(initial, init_leakage)
    s = evolve_bloch(np.broadcast_to(initial, np.shape(t) + (3,)).copy(), params.e_fss, t, params.t2_star)
    return DopTriple(s[..., 0], s[..., 1], s[..., 2])


def _leak(vector: np.ndarray, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    x, y, z = vector
    return np.array([c * x - s * y, s * x + c * y, z])


# ----------------------------------------------------------------------
# Negative trion


def trion_joint_state(params: TrionParams, t: float) -> np.ndarray:
    """Photon-electron state right after the trion recombines at time ``t``.

    The trion starts in (|T+> + |T->)/sqrt(2).

    Returns:
        2x2 complex amplitudes indexed ``[spin, photon]`` with spin order
        (up, down) and photon order (R, L)
    """
    omega_t = params.hole_splitting * t / (2.0 * HBAR)
    early, late = np.exp(-1j * omega_t), np.exp(1j * omega_t)
    amplitudes = np.zeros((2, 2), dtype=complex)
    amplitudes[0, 0] = 0.5 * (early + 1j * late)
    amplitudes[1, 1] = 0.5 * (early - 1j * late)
    return amplitudes


def photon_stokes_from_joint(amplitudes: np.ndarray) -> BlochVector:
    """Stokes vector of the photon after tracing out the spin.

    Args:
        amplitudes: ``[spin, photon]`` amplitudes with photon order (R, L)
    """
    circular = np.column_stack([basis_state("R").as_array(), basis_state("L").as_array()])
    # photon states conditioned on each spin, in the (H, V) basis
    conditioned = np.asarray(amplitudes) @ circular.T
    rho = np.einsum("si,sj->ij", conditioned, conditioned.conj())
    trace = np.trace(rho).real
    return BlochVector.from_array(np.einsum("kij,ji->k", PAULI, rho).real / trace)


def trion_dop_analytic(params: TrionParams, t: ArrayLike) -> DopTriple:
    """DOPs of trion photons from (|T+> + |T->)/sqrt(2): (0, 0, -sin(delta t / hbar))."""
    angle = precession_angle(params.hole_splitting, t)
    decay = dephasing_factor(params.t2_star_hole, t)
    zeros = np.zeros_like(angle)
    return DopTriple(zeros, zeros.copy(), -np.sin(angle) * decay)


def trion_dop_for_pump(
    params: TrionParams, pump: Union[str, BasisLabel], t: ArrayLike, init_leakage: float = 0.0
) -> DopTriple:
    """Trion DOPs when the pump writes the hole along the pump's Bloch axis.

    Only the circular component of the hole survives in the photon.
    """
    initial = to_bloch(basis_state(pump)).as_array()
    if init_leakage:
        initial = _leak(initial, init_leakage)
    s = evolve_bloch(
        np.broadcast_to(initial, np.shape(t) + (3,)).copy(),
        params.hole_splitting,
        t,
        params.t2_star_hole,
    )
    zeros = np.zeros_like(s[..., 2])
    return DopTriple(zeros, zeros.copy(), s[..., 2])
