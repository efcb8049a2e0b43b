"""
Data containers shared by the simulator and the analysis pipeline
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass(frozen=True, eq=False)
class Histogram:
    """Counts per time bin, optionally restricted to one polarization channel.

    ``edges`` has one more entry than ``counts``; times are in ps.
    """

    edges: np.ndarray
    counts: np.ndarray
    channel: Optional[str] = None

    @property
    def bin_centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def bin_width(self) -> float:
        return float(self.edges[1] - self.edges[0])

    @property
    def total(self) -> float:
        return float(np.sum(self.counts))

    def same_binning(self, other: "Histogram") -> bool:
        return self.edges.shape == other.edges.shape and np.allclose(
            self.edges, other.edges, rtol=0.0, atol=1e-9
        )


@dataclass(frozen=True, eq=False)
class DopTrace:
    """Degree of polarization per time bin with binomial errors.

    ``counts`` holds co + cross per bin when the trace came from histograms.
    """

    bin_center: np.ndarray
    dop: np.ndarray
    dop_err: np.ndarray
    counts: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.bin_center)


@dataclass(frozen=True, eq=False)
class CorrelationTrace:
    """Coincidence histogram over delays symmetric about zero (ps)."""

    delay: np.ndarray
    value: np.ndarray
    normalized: bool = False
    error: Optional[np.ndarray] = None
    normalization: Optional["FitResult"] = None

    def __len__(self) -> int:
        return len(self.delay)

    @property
    def bin_width(self) -> float:
        return float(self.delay[1] - self.delay[0])

    def is_uniform(self, rtol: float = 1e-6) -> bool:
        steps = np.diff(self.delay)
        return steps.size > 0 and np.allclose(steps, steps[0], rtol=rtol, atol=0.0)


@dataclass(frozen=True, eq=False)
class FrequencySpectrum:
    """Centered discrete Fourier transform of a correlation trace.

    ``delay`` and ``mean`` keep what the inverse transform needs to rebuild
    the source trace.
    """

    freq: np.ndarray  # GHz, ascending
    amplitude: np.ndarray
    delay: np.ndarray
    mean: float = 0.0

    @property
    def resolution(self) -> float:
        return float(self.freq[1] - self.freq[0])

    def is_hermitian(self, rtol: float = 1e-9) -> bool:
        scale = max(float(np.max(np.abs(self.amplitude))), 1e-300)
        return bool(
            np.allclose(self.freq, -self.freq[::-1])
            and np.allclose(self.amplitude, np.conj(self.amplitude[::-1]), rtol=0.0, atol=rtol * scale)
        )


@dataclass
class FitResult:
    """Named parameters with 1-sigma errors from a least-squares fit."""

    params: dict[str, float]
    errors: dict[str, float]
    chi2_reduced: float
    converged: bool
    flags: list[str] = field(default_factory=list)
    metadata: dict[str, str] = field(default_factory=dict)

    def __getitem__(self, name: str) -> float:
        return self.params[name]

    def error(self, name: str) -> float:
        return self.errors.get(name, math.nan)

    def flag(self, name: str) -> None:
        if name not in self.flags:
            self.flags.append(name)
