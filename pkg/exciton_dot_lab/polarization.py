"""
Polarization and two-level-state algebra in the quantum-dot frame.

Photon polarization and the exciton spin share one geometry. The H/V frame is
the fine-structure eigenframe of the dot, so H/V map to the poles of the Bloch
x-axis, D/A to the y-axis and R/L to the z-axis (the optical axis). Jones
vectors are always written in the (H, V) amplitude basis with

    sqrt(2)|R> = |H> - i|V>      sqrt(2)|L> = |H> + i|V>
    sqrt(2)|D> = |H> - |V>       sqrt(2)|A> = |H> + |V>

Any other sign convention for the V phase flips the sign of DOP_Z.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np
from scipy.spatial.transform import Rotation

from .exceptions import ValidationError


logger = logging.getLogger(__name__)

ALGEBRA_TOL = 1e-12

_SQRT_HALF = 1.0 / math.sqrt(2.0)


class BasisLabel(str, Enum):
    """The six canonical polarizations, serialized as single characters."""

    H = "H"
    V = "V"
    D = "D"
    A = "A"
    R = "R"
    L = "L"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, value: Union[str, "BasisLabel"]) -> "BasisLabel":
        """Coerce a character (any case) to a label.

        Raises:
            ValidationError: If ``value`` is not one of H, V, D, A, R, L
        """
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().upper())
        except ValueError:
            raise ValidationError(
                f"Unknown polarization label {value!r}: expected one of H, V, D, A, R, L"
            ) from None

    @property
    def axis(self) -> "BlochVector":
        """Bloch/Stokes axis this polarization points along."""
        return BlochVector(*_AXES[self.value])

    @property
    def partner(self) -> "BasisLabel":
        """The orthogonal (antipodal) polarization."""
        return BasisLabel(_PARTNERS[self.value])


_AXES = {
    "H": (1.0, 0.0, 0.0),
    "V": (-1.0, 0.0, 0.0),
    "D": (0.0, 1.0, 0.0),
    "A": (0.0, -1.0, 0.0),
    "R": (0.0, 0.0, 1.0),
    "L": (0.0, 0.0, -1.0),
}
_PARTNERS = {"H": "V", "V": "H", "D": "A", "A": "D", "R": "L", "L": "R"}

# Detection bases by name, co-polarized channel first
BASIS_PAIRS = {
    "HV": (BasisLabel.H, BasisLabel.V),
    "DA": (BasisLabel.D, BasisLabel.A),
    "RL": (BasisLabel.R, BasisLabel.L),
}

DetectionPair = tuple[BasisLabel, BasisLabel]


def detection_pair(value) -> DetectionPair:
    """Validate an antipodal pair of analyzer channels.

    Args:
        value: A two-character name such as ``"RL"`` or ``"LR"``, or a
            sequence of two labels

    Returns:
        The pair as ``(co, cross)`` labels

    Raises:
        ValidationError: If the two channels are not antipodal
    """
    if isinstance(value, str):
        if len(value.strip()) != 2:
            raise ValidationError(f"Invalid basis pair {value!r}: expected two letters")
        value = tuple(value.strip())
    labels = [BasisLabel.parse(v) for v in value]
    if len(labels) != 2:
        raise ValidationError(f"Invalid basis pair {value!r}: expected two channels")
    co, cross = labels
    if co.partner is not cross:
        raise ValidationError(f"Invalid basis pair {co}{cross}: channels are not orthogonal")
    return co, cross


@dataclass(frozen=True)
class BlochVector:
    """Real 3-vector of Pauli expectations (equivalently, a normalized Stokes vector)."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        for name in ("x", "y", "z"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.x * self.x + self.y * self.y + self.z * self.z > 1.0 + ALGEBRA_TOL:
            raise ValidationError(f"Bloch vector {self.as_tuple()} lies outside the unit ball")

    @classmethod
    def from_array(cls, values) -> "BlochVector":
        x, y, z = np.asarray(values, dtype=float)
        return cls(x, y, z)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple())

    @property
    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def dot(self, other: "BlochVector") -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z


X_AXIS = BlochVector(1.0, 0.0, 0.0)
Y_AXIS = BlochVector(0.0, 1.0, 0.0)
Z_AXIS = BlochVector(0.0, 0.0, 1.0)


@dataclass(frozen=True)
class JonesVector:
    """Normalized pure polarization (or spin) state in the (H, V) amplitude basis.

    Global phase carries no meaning; compare states with
    :func:`equals_up_to_phase`, never amplitude-wise.
    """

    amp_h: complex
    amp_v: complex

    def __post_init__(self):
        object.__setattr__(self, "amp_h", complex(self.amp_h))
        object.__setattr__(self, "amp_v", complex(self.amp_v))
        if abs(self.norm_squared - 1.0) > ALGEBRA_TOL:
            raise ValidationError(
                f"Jones vector ({self.amp_h}, {self.amp_v}) is not normalized "
                f"(|amp|^2 = {self.norm_squared!r})"
            )

    @classmethod
    def from_amplitudes(cls, amp_h: complex, amp_v: complex) -> "JonesVector":
        """Build a state from arbitrary (nonzero) amplitudes, normalizing them."""
        norm = math.hypot(abs(amp_h), abs(amp_v))
        if norm == 0.0:
            raise ValidationError("Cannot normalize the zero Jones vector")
        return cls(amp_h / norm, amp_v / norm)

    @classmethod
    def from_array(cls, values) -> "JonesVector":
        amp_h, amp_v = np.asarray(values, dtype=complex)
        return cls(amp_h, amp_v)

    @property
    def norm_squared(self) -> float:
        return abs(self.amp_h) ** 2 + abs(self.amp_v) ** 2

    def as_array(self) -> np.ndarray:
        return np.array([self.amp_h, self.amp_v], dtype=complex)


# Pauli operators in the (H, V) basis whose expectations give (x, y, z) under
# H/V -> +-X, D/A -> +-Y, R/L -> +-Z. They satisfy sx @ sy = 1j * sz.
PAULI_X = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI_Y = np.array([[0, -1], [-1, 0]], dtype=complex)
PAULI_Z = np.array([[0, 1j], [-1j, 0]], dtype=complex)
PAULI = np.stack([PAULI_X, PAULI_Y, PAULI_Z])


def basis_state(label: Union[str, BasisLabel]) -> JonesVector:
    """Return the Jones vector of one of the six canonical polarizations."""
    label = BasisLabel.parse(label)
    s = _SQRT_HALF
    return {
        BasisLabel.H: JonesVector(1.0, 0.0),
        BasisLabel.V: JonesVector(0.0, 1.0),
        BasisLabel.D: JonesVector(s, -s),
        BasisLabel.A: JonesVector(s, s),
        BasisLabel.R: JonesVector(s, -1j * s),
        BasisLabel.L: JonesVector(s, 1j * s),
    }[label]


def _as_amplitudes(state) -> np.ndarray:
    if isinstance(state, JonesVector):
        return state.as_array()
    amplitudes = np.asarray(state, dtype=complex)
    if amplitudes.shape != (2,):
        raise ValidationError(f"Expected two Jones amplitudes, got shape {amplitudes.shape}")
    norm_squared = float(np.sum(np.abs(amplitudes) ** 2))
    if abs(norm_squared - 1.0) > ALGEBRA_TOL:
        raise ValidationError(f"Unnormalized state: |amp|^2 = {norm_squared!r}")
    return amplitudes


def to_bloch(state) -> BlochVector:
    """Map a pure state to its Bloch (Stokes) vector.

    Args:
        state: A :class:`JonesVector` or two normalized complex amplitudes

    Raises:
        ValidationError: For unnormalized amplitudes
    """
    amp_h, amp_v = _as_amplitudes(state)
    cross = np.conj(amp_h) * amp_v
    return BlochVector(
        abs(amp_h) ** 2 - abs(amp_v) ** 2,
        -2.0 * cross.real,
        -2.0 * cross.imag,
    )


def from_bloch(vector: BlochVector) -> JonesVector:
    """Inverse of :func:`to_bloch` for unit vectors, fixing amp_h real and >= 0."""
    if abs(vector.norm - 1.0) > 1e-9:
        raise ValidationError(f"Only unit Bloch vectors describe pure states, norm={vector.norm}")
    amp_h = math.sqrt(max(0.0, (1.0 + vector.x) / 2.0))
    if amp_h < 1e-12:
        return JonesVector(0.0, 1.0)
    amp_v = -(vector.y + 1j * vector.z) / (2.0 * amp_h)
    return JonesVector.from_amplitudes(amp_h, amp_v)


def stokes_from_density(rho: np.ndarray) -> BlochVector:
    """Stokes vector of a (possibly mixed, possibly unnormalized) 2x2 density matrix."""
    rho = np.asarray(rho, dtype=complex)
    trace = np.trace(rho).real
    if trace <= 0.0:
        raise ValidationError("Density matrix has no weight")
    return BlochVector.from_array(np.einsum("kij,ji->k", PAULI, rho).real / trace)


def inner(bra: JonesVector, ket: JonesVector) -> complex:
    """Return <bra|ket>."""
    return bra.amp_h.conjugate() * ket.amp_h + bra.amp_v.conjugate() * ket.amp_v


def equals_up_to_phase(a: JonesVector, b: JonesVector, tol: float = ALGEBRA_TOL) -> bool:
    return abs(abs(inner(a, b)) - 1.0) <= tol


def projection_probability(state, analyzer: Union[str, BasisLabel]) -> float:
    """Probability |<analyzer|state>|^2 of a photon passing the analyzer.

    Equals (1 + S.a)/2 with S the state's Bloch vector and a the analyzer axis.
    """
    amplitudes = _as_amplitudes(state)
    reference = basis_state(analyzer).as_array()
    return float(abs(np.vdot(reference, amplitudes)) ** 2)


def dop(count_co: float, count_cross: float) -> float:
    """Degree of polarization (co - cross) / (co + cross).

    Raises:
        ValidationError: For negative counts or an empty bin
    """
    if count_co < 0 or count_cross < 0:
        raise ValidationError(f"Counts must be nonnegative, got ({count_co}, {count_cross})")
    total = count_co + count_cross
    if total <= 0:
        raise ValidationError("empty bin")
    return (count_co - count_cross) / total


def retarder_matrix(retardance: float, fast_axis_angle: float) -> np.ndarray:
    """Jones matrix of a linear retarder, fast axis at ``fast_axis_angle`` from H."""
    c, s = math.cos(fast_axis_angle), math.sin(fast_axis_angle)
    rotation = np.array([[c, s], [-s, c]])
    phases = np.diag([np.exp(-0.5j * retardance), np.exp(0.5j * retardance)])
    return rotation.T @ phases @ rotation


def retarder(state: JonesVector, retardance: float, fast_axis_angle: float) -> JonesVector:
    """Pass a state through a linear retarder (wave plate or LC variable retarder)."""
    out = retarder_matrix(retardance, fast_axis_angle) @ state.as_array()
    return JonesVector.from_amplitudes(*out)


def rotate_bloch(vectors, axis: BlochVector, angle) -> np.ndarray:
    """Rotate Bloch vectors right-handedly about ``axis``.

    Args:
        vectors: Array of shape (3,) or (n, 3)
        axis: Rotation axis (normalized internally)
        angle: Scalar angle or array of n angles in radians

    Returns:
        Rotated vectors with the input's shape
    """
    direction = axis.as_array()
    direction = direction / np.linalg.norm(direction)
    vectors = np.asarray(vectors, dtype=float)
    rotvec = np.multiply.outer(np.atleast_1d(np.asarray(angle, dtype=float)), direction)
    rotated = Rotation.from_rotvec(rotvec).apply(np.atleast_2d(vectors))
    if vectors.ndim == 1 and np.ndim(angle) == 0:
        return rotated[0]
    return rotated
