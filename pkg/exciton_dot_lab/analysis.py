"""
Extraction pipeline: DOP traces, lifetime and damped-cosine fits, g2
normalization, Fourier isolation of Larmor components and g-factor regression.

Fits are weighted least squares (``scipy.optimize.curve_fit``); parameter
errors come from the covariance at the optimum. Non-convergence is reported
through ``FitResult.converged`` and ``FitResult.flags`` and logged, never
swallowed.
"""

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit
from scipy.signal import find_peaks, lombscargle, peak_widths

from .dynamics import HBAR, MU_BOHR, PS_PER_NS
from .exceptions import ComponentNotDetected, FitError, ValidationError
from .montecarlo import PhotonRecords, correlate
from .polarization import BasisLabel
from .traces import CorrelationTrace, DopTrace, FitResult, FrequencySpectrum, Histogram


logger = logging.getLogger(__name__)

PULSED = "pulsed"
TWO_SIDED = "two_sided"

# noise floor of a magnitude spectrum: rms of the Rayleigh distribution
# expressed through its median
_RAYLEIGH_RMS_PER_MEDIAN = math.sqrt(2.0) / math.sqrt(2.0 * math.log(2.0))


# ----------------------------------------------------------------------
# DOP traces


def normalize_by_area(hist: Histogram) -> Histogram:
    """Divide a time trace by its time-integrated signal."""
    area = hist.total * hist.bin_width
    if area <= 0:
        raise ValidationError("Cannot normalize an empty histogram")
    return Histogram(edges=hist.edges, counts=hist.counts / area, channel=hist.channel)


def dop_trace(hist_co: Histogram, hist_cross: Histogram) -> DopTrace:
    """Per-bin (co - cross)/(co + cross) with binomial errors; empty bins are dropped."""
    if not hist_co.same_binning(hist_cross):
        raise ValidationError("binning mismatch between co- and cross-polarized histograms")
    co = np.asarray(hist_co.counts, dtype=float)
    cross = np.asarray(hist_cross.counts, dtype=float)
    total = co + cross
    keep = total > 0
    co, cross, total = co[keep], cross[keep], total[keep]
    return DopTrace(
        bin_center=hist_co.bin_centers[keep],
        dop=(co - cross) / total,
        dop_err=2.0 * np.sqrt(co * cross / total**3),
        counts=total,
    )


def integrated_dop(records: PhotonRecords, co: Union[str, BasisLabel]) -> tuple[float, float]:
    """Time-integrated DOP of a record set in the basis of ``co``, with binomial error."""
    co = BasisLabel.parse(co)
    n_co, n_cross = records.count(co), records.count(co.partner)
    total = n_co + n_cross
    if total == 0:
        raise ValidationError("no records")
    return (n_co - n_cross) / total, 2.0 * math.sqrt(n_co * n_cross / total**3)


def polarization_memory(records_r_pump: PhotonRecords, records_l_pump: PhotonRecords) -> tuple[float, float]:
    """Circular polarization memory averaged over R and L excitation.

    Each input is a zero-field pulsed run detected in R/L; the L-pump DOP is
    sign-corrected before averaging.
    """
    if not len(records_r_pump) or not len(records_l_pump):
        raise ValidationError("no records: polarization memory needs both R- and L-pump runs")
    memory_r, err_r = integrated_dop(records_r_pump, BasisLabel.R)
    memory_l, err_l = integrated_dop(records_l_pump, BasisLabel.L)
    return 0.5 * (memory_r + memory_l), 0.5 * math.hypot(err_r, err_l)


# ----------------------------------------------------------------------
# Lifetime


def fit_exponential_lifetime(hist: Histogram, fit_window: tuple[float, float]) -> FitResult:
    """Fit A exp(-(t - t0)/tau) + background inside ``fit_window`` (ps).

    Bins are weighted with Poisson errors. A decay too slow to be told apart
    from a flat background is reported with ``converged = False``.
    """
    lo, hi = (float(v) for v in fit_window)
    if lo < hist.edges[0] - 1e-9 or hi > hist.edges[-1] + 1e-9 or not hi > lo:
        raise ValidationError(
            f"Fit window ({lo}, {hi}) lies outside the histogram range "
            f"({hist.edges[0]}, {hist.edges[-1]})"
        )
    centers = hist.bin_centers
    inside = (centers >= lo) & (centers <= hi)
    if np.count_nonzero(inside) < 4:
        raise FitError("Lifetime fit needs at least 4 bins inside the window")
    t = centers[inside] - lo
    y = np.asarray(hist.counts, dtype=float)[inside]
    sigma = np.sqrt(np.maximum(y, 1.0))
    span = float(t[-1] - t[0]) or hist.bin_width

    # a constant that already describes the window leaves nothing to fit
    level = np.average(y, weights=sigma**-2.0)
    flat_chi2 = float(np.sum(((y - level) / sigma) ** 2) / (y.size - 1))
    if flat_chi2 <= 1.0 + 3.0 * math.sqrt(2.0 / (y.size - 1)):
        logger.warning("Lifetime unbounded: the histogram is flat inside (%g, %g) ps", lo, hi)
        level_err = float(np.sqrt(1.0 / np.sum(sigma**-2.0)))
        return FitResult(
            params={"amplitude": 0.0, "background": float(level), "lifetime_tau": math.inf},
            errors={"amplitude": math.inf, "background": level_err, "lifetime_tau": math.inf},
            chi2_reduced=flat_chi2,
            converged=False,
            flags=["lifetime_unbounded"],
        )

    def model(t, amplitude, gamma, background):
        return amplitude * np.exp(-gamma * t) + background

    tail = y[-max(1, y.size // 10):]
    background0 = max(0.0, float(np.min(tail)))
    positive = y - background0 > 0
    gamma0 = 1.0 / span
    if np.count_nonzero(positive) >= 2:
        slope = np.polyfit(t[positive], np.log(y[positive] - background0), 1, w=np.sqrt(y[positive]))[0]
        if slope < 0:
            gamma0 = -slope
    p0 = (max(y[0] - background0, 1e-12), gamma0, background0)

    result = _least_squares(
        model,
        t,
        y,
        sigma,
        p0,
        names=("amplitude", "gamma", "background"),
        bounds=([-np.inf, 0.0, -np.inf], [np.inf, np.inf, np.inf]),
    )
    if result is None:
        logger.warning("Lifetime fit did not converge in window (%g, %g) ps", lo, hi)
        return FitResult(
            params={"lifetime_tau": math.nan},
            errors={"lifetime_tau": math.inf},
            chi2_reduced=math.nan,
            converged=False,
            flags=["not_converged"],
        )
    params, errors, chi2 = result
    gamma, gamma_err = params.pop("gamma"), errors.pop("gamma")
    fit = FitResult(params=params, errors=errors, chi2_reduced=chi2, converged=True)
    if gamma <= 0 or 1.0 / gamma > 100.0 * span or not math.isfinite(gamma_err):
        logger.warning("Lifetime unbounded: the histogram is flat inside (%g, %g) ps", lo, hi)
        fit.params["lifetime_tau"] = math.inf if gamma <= 0 else 1.0 / gamma
        fit.errors["lifetime_tau"] = math.inf
        fit.converged = False
        fit.flag("lifetime_unbounded")
    else:
        fit.params["lifetime_tau"] = 1.0 / gamma
        fit.errors["lifetime_tau"] = gamma_err / gamma**2
    return fit


# ----------------------------------------------------------------------
# Damped cosine


_COSINE_PARAMS = ("amplitude", "omega", "gamma", "phi", "offset")

# a T2* beyond this many fit spans is reported but not trusted
_T2_SPAN_LIMIT = 10.0


def _pulsed_model(t, amplitude, omega, gamma, phi, offset):
    return amplitude * np.exp(-gamma * t) * np.cos(omega * t + phi) + offset


def _two_sided_model(t, amplitude, omega, gamma, phi, offset):
    return _pulsed_model(np.abs(t), amplitude, omega, gamma, phi, offset)


def _trace_arrays(trace) -> tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    if isinstance(trace, DopTrace):
        err = np.asarray(trace.dop_err, dtype=float)
        if trace.counts is not None:
            err = np.maximum(err, 1.0 / np.asarray(trace.counts, dtype=float))
        sigma = err if np.all(err > 0) else None
        return np.asarray(trace.bin_center, dtype=float), np.asarray(trace.dop, dtype=float), sigma
    if isinstance(trace, CorrelationTrace):
        return np.asarray(trace.delay, dtype=float), np.asarray(trace.value, dtype=float), None
    raise ValidationError(f"Cannot fit a {type(trace).__name__}")


def _omega_guess(t: np.ndarray, y: np.ndarray, span: float) -> float:
    steps = np.diff(np.unique(t))
    nyquist = math.pi / float(np.median(steps)) if steps.size else 2.0 * math.pi / span
    low = 2.0 * math.pi / span
    if nyquist <= low:
        return low
    grid = np.linspace(low, nyquist, 4000)
    power = lombscargle(t, y - np.mean(y), grid)
    return float(grid[int(np.argmax(power))])


def fit_damped_cosine(
    trace,
    form: str = PULSED,
    init: Optional[Mapping[str, float]] = None,
    fixed: Optional[Mapping[str, float]] = None,
    window: Optional[tuple[float, float]] = None,
) -> FitResult:
    """Fit a * exp(-t/T2*) * cos(omega t + phi) + offset to a trace.

    The ``two_sided`` form uses |t| in place of t, for correlation traces
    symmetric about zero delay. Time is fitted in ns, so ``omega`` is in
    rad/ns and ``t2_star`` in ns; the result also reports ``frequency_ghz``,
    ``period_ps`` and ``splitting_uev`` (hbar omega).

    Args:
        trace: :class:`DopTrace` or :class:`CorrelationTrace`
        form: ``"pulsed"`` or ``"two_sided"``
        init: Starting values by name (amplitude, omega, t2_star, phi, offset)
        fixed: Parameters held constant, by the same names
        window: Restrict the fit to ``(start, stop)`` ps

    Raises:
        FitError: Fewer than 8 bins, or a period longer than the window
    """
    if form not in (PULSED, TWO_SIDED):
        raise ValidationError(f"Unknown fit form {form!r}")
    init = dict(init or {})
    fixed = dict(fixed or {})
    for values in (init, fixed):
        if "t2_star" in values:
            t2 = values.pop("t2_star")
            values["gamma"] = 0.0 if math.isinf(t2) else 1.0 / t2

    t, y, sigma = _trace_arrays(trace)
    if window is not None:
        inside = (t >= window[0]) & (t <= window[1])
        t, y = t[inside], y[inside]
        sigma = sigma[inside] if sigma is not None else None
    if t.size < 8:
        raise FitError(f"Damped-cosine fit needs at least 8 bins, got {t.size}")
    t = t / PS_PER_NS
    reach = np.abs(t) if form == TWO_SIDED else t
    span = float(reach.max() - reach.min())

    if np.ptp(y) == 0.0:
        logger.warning("Flat trace: no oscillation to fit")
        return FitResult(
            params={"amplitude": 0.0, "omega": math.nan, "t2_star": math.nan, "offset": float(y[0])},
            errors={"amplitude": 0.0, "omega": math.inf, "t2_star": math.inf, "offset": 0.0},
            chi2_reduced=math.nan,
            converged=False,
            flags=["amplitude_consistent_with_zero", "omega_unconstrained"],
            metadata={"form": form},
        )

    omega_init = fixed.get("omega", init.get("omega"))
    if omega_init is not None and 2.0 * math.pi / omega_init > span:
        raise FitError(
            f"unresolvable frequency: period {2e3 * math.pi / omega_init:.1f} ps exceeds "
            f"the {span * PS_PER_NS:.1f} ps window"
        )
    if "omega" in fixed:
        omegas = [fixed["omega"]]
    else:
        omegas = [_omega_guess(reach, y, span)]
        if "omega" in init:
            omegas.insert(0, init["omega"])
    phis = [fixed["phi"]] if "phi" in fixed else ([init["phi"]] if "phi" in init else [])
    phis = phis or [0.0, 0.5 * math.pi, math.pi, -0.5 * math.pi]

    start = {
        "amplitude": init.get("amplitude", 0.5 * float(np.ptp(y))),
        "gamma": init.get("gamma", 0.5 / span),
        "offset": init.get("offset", float(np.mean(y))),
    }
    lower = {"amplitude": 0.0, "omega": 0.0, "gamma": 0.0, "phi": -np.inf, "offset": -np.inf}
    free = [name for name in _COSINE_PARAMS if name not in fixed]
    full_model = _two_sided_model if form == TWO_SIDED else _pulsed_model

    def model(t, *values):
        named = dict(fixed)
        named.update(zip(free, values))
        return full_model(t, *(named[name] for name in _COSINE_PARAMS))

    best = None
    for omega0 in omegas:
        for phi0 in phis:
            guess = dict(start, omega=omega0, phi=phi0)
            result = _least_squares(
                model,
                t,
                y,
                sigma,
                [guess[name] for name in free],
                names=free,
                bounds=([lower[n] for n in free], [np.inf] * len(free)),
            )
            if result is not None and (best is None or result[2] < best[2]):
                best = result

    if best is None:
        logger.warning("Damped-cosine fit did not converge")
        return FitResult(
            params={}, errors={}, chi2_reduced=math.nan, converged=False,
            flags=["not_converged"], metadata={"form": form},
        )
    params, errors, chi2 = best
    for name, value in fixed.items():
        params[name], errors[name] = value, 0.0
    return _finish_cosine_fit(params, errors, chi2, span, form)


def _finish_cosine_fit(params, errors, chi2, span, form) -> FitResult:
    omega, omega_err = params["omega"], errors["omega"]
    gamma, gamma_err = params.pop("gamma"), errors.pop("gamma")
    params["phi"] = math.remainder(params["phi"], 2.0 * math.pi)
    # nan-safe: an undetermined amplitude counts as zero
    quiet = not params["amplitude"] >= 2.0 * errors["amplitude"]
    if (omega <= 0 or 2.0 * math.pi / omega > span) and not quiet:
        raise FitError(
            f"unresolvable frequency: fitted period exceeds the {span * PS_PER_NS:.1f} ps window"
        )
    omega = max(omega, 1e-300)
    params["t2_star"] = math.inf if gamma <= 0 else 1.0 / gamma
    errors["t2_star"] = math.inf if gamma <= 0 else gamma_err / gamma**2
    params["frequency_ghz"] = omega / (2.0 * math.pi)
    errors["frequency_ghz"] = omega_err / (2.0 * math.pi)
    params["period_ps"] = 2.0 * math.pi / omega * PS_PER_NS
    errors["period_ps"] = params["period_ps"] * omega_err / omega
    params["splitting_uev"] = HBAR * omega / PS_PER_NS
    errors["splitting_uev"] = HBAR * omega_err / PS_PER_NS

    fit = FitResult(params=params, errors=errors, chi2_reduced=chi2, converged=True, metadata={"form": form})
    if not all(math.isfinite(errors[name]) for name in ("amplitude", "omega")):
        fit.flag("covariance_undetermined")
    # envelope decays too slowly to measure inside the window, or not at all
    if params["t2_star"] > _T2_SPAN_LIMIT * span or not errors["t2_star"] <= params["t2_star"]:
        fit.flag("t2_star_unconstrained")
    if quiet:
        fit.flag("amplitude_consistent_with_zero")
        fit.flag("omega_unconstrained")
    return fit


def _least_squares(model, x, y, sigma, p0, names, bounds):
    """curve_fit wrapper returning (params, errors, chi2_reduced) or None."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OptimizeWarning)
            popt, pcov = curve_fit(
                model,
                x,
                y,
                p0=p0,
                sigma=sigma,
                absolute_sigma=sigma is not None,
                bounds=bounds,
                method="trf",
                x_scale="jac",
                ftol=1e-12,
                xtol=1e-12,
                gtol=1e-12,
                max_nfev=20000,
            )
    except (RuntimeError, ValueError) as exc:
        logger.debug("Least squares failed from %s: %s", p0, exc)
        return None
    residual = y - model(x, *popt)
    if sigma is not None:
        residual = residual / sigma
    dof = max(1, y.size - len(popt))
    chi2 = float(np.sum(residual**2) / dof)
    perr = np.sqrt(np.abs(np.diag(pcov))) if np.all(np.isfinite(pcov)) else np.full(len(popt), np.inf)
    return (
        {name: float(v) for name, v in zip(names, popt)},
        {name: float(e) for name, e in zip(names, perr)},
        chi2,
    )


def qubit_writing_phases(fits: Mapping[Union[str, BasisLabel], FitResult]) -> dict[BasisLabel, float]:
    """Phase lag of each pump's DOP_Z oscillation relative to the R pump.

    A trace cos(omega t + phi) lags by -phi; lags are wrapped into [0, 2 pi)
    relative to R, so ideal writing gives R: 0, D: pi/2, L: pi, A: 3 pi/2.
    """
    fits = {BasisLabel.parse(label): fit for label, fit in fits.items()}
    if BasisLabel.R not in fits:
        raise ValidationError("Qubit-writing phases are referenced to the R pump")
    reference = -fits[BasisLabel.R]["phi"]
    return {
        label: (-fit["phi"] - reference) % (2.0 * math.pi)
        for label, fit in fits.items()
        if label in (BasisLabel.R, BasisLabel.D, BasisLabel.L, BasisLabel.A)
    }


# ----------------------------------------------------------------------
# g2: normalization and Fourier analysis


def normalize_antibunching(trace: CorrelationTrace, plateau_fraction: float = 0.25) -> CorrelationTrace:
    """Divide a raw coincidence histogram by a fit C (1 - a exp(-|tau|/tau_d)).

    When no dip is found (``a`` consistent with zero) the trace is divided by
    its far-delay plateau instead and a warning is logged.
    """
    delay = np.asarray(trace.delay, dtype=float)
    y = np.asarray(trace.value, dtype=float)
    reach = np.abs(delay)
    plateau = reach >= (1.0 - plateau_fraction) * reach.max()
    level = float(np.mean(y[plateau]))
    if not level > 0:
        raise ValidationError("Empty correlation: no coincidences on the plateau")
    error = trace.error if trace.error is not None else np.sqrt(np.maximum(y, 1.0))
    sigma = np.maximum(np.asarray(error, dtype=float), 1e-12 * level)

    def model(tau, scale, depth, tau_d):
        return scale * (1.0 - depth * np.exp(-np.abs(tau) / tau_d))

    bin_width = trace.bin_width
    centre = reach <= 2.0 * bin_width
    depth0 = float(np.clip(1.0 - np.mean(y[centre]) / level, 0.05, 1.0))
    result = _least_squares(
        model,
        delay,
        y,
        sigma,
        (level, depth0, reach.max() / 10.0),
        names=("scale", "depth", "tau_d"),
        bounds=([0.0, -1.0, 0.1 * bin_width], [np.inf, 2.0, np.inf]),
    )
    dip = result is not None and result[0]["depth"] > 3.0 * result[1]["depth"]
    if not dip:
        logger.warning("No antibunching dip detected: normalizing by the plateau only")
        fit = FitResult(
            params={"scale": level}, errors={}, chi2_reduced=math.nan,
            converged=result is not None, flags=["no_dip"],
        )
        reference = np.full_like(y, level)
    else:
        params, errors, chi2 = result
        fit = FitResult(params=params, errors=errors, chi2_reduced=chi2, converged=True)
        reference = model(delay, params["scale"], params["depth"], params["tau_d"])
    return CorrelationTrace(
        delay=delay,
        value=y / reference,
        normalized=True,
        error=np.asarray(error, dtype=float) / reference,
        normalization=fit,
    )


def fourier_spectrum(trace: CorrelationTrace) -> FrequencySpectrum:
    """Centered DFT of the mean-subtracted trace; frequencies in GHz."""
    if len(trace) < 2 or not trace.is_uniform():
        raise ValidationError("Fourier analysis needs a uniformly binned trace")
    values = np.asarray(trace.value, dtype=float)
    mean = float(np.mean(values))
    step_ns = trace.bin_width / PS_PER_NS
    return FrequencySpectrum(
        freq=np.fft.fftshift(np.fft.fftfreq(values.size, d=step_ns)),
        amplitude=np.fft.fftshift(np.fft.fft(values - mean)),
        delay=np.asarray(trace.delay, dtype=float),
        mean=mean,
    )


def inverse_transform(spectrum: FrequencySpectrum, mask: Optional[np.ndarray] = None) -> CorrelationTrace:
    """Rebuild a trace from the spectrum bins selected by ``mask`` (all by default).

    The removed mean is restored only when the zero-frequency bin is kept.
    """
    if mask is None:
        mask = np.ones(spectrum.freq.shape, dtype=bool)
    kept = np.where(mask, spectrum.amplitude, 0.0)
    values = np.fft.ifft(np.fft.ifftshift(kept)).real
    if np.any(mask & (spectrum.freq == 0.0)):
        values = values + spectrum.mean
    return CorrelationTrace(delay=spectrum.delay, value=values, normalized=True)


def one_sided_magnitude(spectrum: FrequencySpectrum) -> np.ndarray:
    """|DFT| of the positive-delay half of the trace, on the ``spectrum.freq`` grid.

    The symmetric transform of exp(-gamma |t|) cos(omega |t| + phi) changes
    shape with phi and, near phi = pi/2, is dispersive with a zero at omega.
    The positive-delay half gives one peak at omega for every phi. The
    zero-delay bin counts half, and the level of the outer half of the trace
    is removed first.
    """
    values = np.fft.ifft(np.fft.ifftshift(spectrum.amplitude)).real
    reach = np.abs(spectrum.delay)
    values = values - np.median(values[reach >= 0.5 * reach.max()])
    weight = np.where(spectrum.delay > 0, 1.0, 0.0)
    weight[spectrum.delay == 0] = 0.5
    return np.abs(np.fft.fftshift(np.fft.fft(values * weight)))


def spectral_noise_floor(
    spectrum: FrequencySpectrum,
    dc_cutoff: float = 0.2,
    magnitude: Optional[np.ndarray] = None,
) -> float:
    """RMS magnitude of spectral noise, estimated robustly from the median above ``dc_cutoff``.

    ``magnitude`` replaces |amplitude|, e.g. by :func:`one_sided_magnitude`.
    """
    if magnitude is None:
        magnitude = np.abs(spectrum.amplitude)
    magnitude = np.asarray(magnitude)[spectrum.freq > dc_cutoff]
    if not magnitude.size:
        raise ValidationError(f"No spectrum above the {dc_cutoff} GHz DC cutoff")
    return float(np.median(magnitude)) * _RAYLEIGH_RMS_PER_MEDIAN


class SpectralPeak(NamedTuple):
    centre: float  # GHz
    centre_err: float
    width: float  # Gaussian sigma, GHz
    width_err: float
    height: float


@dataclass(frozen=True, eq=False)
class IsolatedComponent:
    """One band-passed Larmor component.

    ``window`` is the (low, high) pass band in GHz applied at +-f;
    ``window_err`` the uncertainty of each band edge.
    """

    trace: CorrelationTrace
    window: tuple[float, float]
    window_err: float
    peak: float = math.nan
    peak_err: float = math.nan
    width: float = math.nan


def _band_mask(freq: np.ndarray, window: tuple[float, float]) -> np.ndarray:
    reach = np.abs(freq)
    return (reach >= window[0]) & (reach <= window[1])


def locate_component(
    spec: FrequencySpectrum,
    peak_guess: float,
    dc_cutoff: float = 0.2,
    search_halfwidth: Optional[float] = None,
    threshold: float = 3.0,
    limits: Optional[tuple[float, float]] = None,
) -> SpectralPeak:
    """Gaussian fit to the strongest one-sided spectral maximum near ``peak_guess`` GHz.

    Raises:
        ComponentNotDetected: If the guess is not above ``dc_cutoff``, no
            local maximum lies within reach, or the maximum is below
            ``threshold`` noise floors
    """
    if not peak_guess > dc_cutoff:
        raise ComponentNotDetected(
            f"component not detected: {peak_guess:.3f} GHz is not above the {dc_cutoff:g} GHz DC cutoff"
        )
    df = spec.resolution
    halfwidth = search_halfwidth or max(0.3 * peak_guess, 5.0 * df)
    magnitude = one_sided_magnitude(spec)
    region = (spec.freq > dc_cutoff) & (np.abs(spec.freq - peak_guess) <= halfwidth)
    if limits is not None:
        region &= (spec.freq > limits[0]) & (spec.freq < limits[1])
    if not np.any(region):
        raise ComponentNotDetected(f"component not detected: nothing to search near {peak_guess:.3f} GHz")
    noise = spectral_noise_floor(spec, dc_cutoff, magnitude)
    indices = np.flatnonzero(region)
    # one neighbour either side so a maximum on the region edge is still a peak
    lo, hi = max(indices[0] - 1, 0), min(indices[-1] + 2, magnitude.size)
    maxima = find_peaks(magnitude[lo:hi])[0] + lo
    maxima = maxima[region[maxima]]
    if not maxima.size:
        raise ComponentNotDetected(f"component not detected: no spectral maximum near {peak_guess:.3f} GHz")
    peak_index = maxima[int(np.argmax(magnitude[maxima]))]
    if magnitude[peak_index] < threshold * noise:
        raise ComponentNotDetected(
            f"component not detected near {peak_guess:.3f} GHz: peak "
            f"{magnitude[peak_index]:.3g} below {threshold:g} x noise floor {noise:.3g}"
        )

    def gaussian(f, height, centre, width, base):
        return height * np.exp(-0.5 * ((f - centre) / width) ** 2) + base

    reach = max(halfwidth, 6.0 * df)
    around = (spec.freq > dc_cutoff) & (np.abs(spec.freq - spec.freq[peak_index]) <= reach)
    f, m = spec.freq[around], magnitude[around]
    base0 = float(np.min(m))
    result = _least_squares(
        gaussian,
        f,
        m,
        None,
        (magnitude[peak_index] - base0, spec.freq[peak_index], 2.0 * df, base0),
        names=("height", "centre", "width", "base"),
        bounds=([0.0, f.min(), 0.25 * df, -np.inf], [np.inf, f.max(), reach, np.inf]),
    )
    if result is None:
        raise ComponentNotDetected(f"component not detected: Gaussian fit failed near {peak_guess:.3f} GHz")
    params, errors, _ = result
    return SpectralPeak(
        centre=params["centre"],
        centre_err=errors["centre"] if math.isfinite(errors["centre"]) else df,
        width=params["width"],
        width_err=errors["width"] if math.isfinite(errors["width"]) else df,
        height=params["height"],
    )


def isolate_component(
    spec: FrequencySpectrum,
    peak_guess: float,
    dc_cutoff: float = 0.2,
    search_halfwidth: Optional[float] = None,
    window_sigmas: float = 2.0,
    threshold: float = 3.0,
    window: Optional[tuple[float, float]] = None,
    limits: Optional[tuple[float, float]] = None,
) -> IsolatedComponent:
    """Band-pass one spectral peak and transform it back to the delay domain.

    The pass band is the center +- ``window_sigmas`` widths of the peak found
    by :func:`locate_component`, applied symmetrically at +-f and never
    reaching below ``dc_cutoff``.

    Args:
        spec: Spectrum from :func:`fourier_spectrum`
        peak_guess: Expected frequency in GHz
        dc_cutoff: Frequencies below this (GHz) are never searched
        search_halfwidth: Search radius around the guess (GHz)
        window_sigmas: Half-width of the pass band in Gaussian sigmas
        threshold: Minimum peak height in units of the spectral noise floor
        window: Explicit pass band; skips detection and the Gaussian fit
        limits: (low, high) GHz that neither the search nor the pass band
            crosses, such as the midpoints to neighbouring components

    Raises:
        ComponentNotDetected: If no peak clears the threshold
    """
    if window is not None:
        return IsolatedComponent(
            trace=inverse_transform(spec, _band_mask(spec.freq, window)),
            window=(float(window[0]), float(window[1])),
            window_err=0.0,
        )

    peak = locate_component(spec, peak_guess, dc_cutoff, search_halfwidth, threshold, limits)
    lo = max(peak.centre - window_sigmas * peak.width, dc_cutoff, 0.5 * spec.resolution)
    hi = peak.centre + window_sigmas * peak.width
    if limits is not None:
        lo, hi = max(lo, limits[0]), min(hi, limits[1])
    if not hi > lo:
        raise ComponentNotDetected(f"component not detected: no pass band left around {peak.centre:.3f} GHz")
    band = (float(lo), float(hi))
    return IsolatedComponent(
        trace=inverse_transform(spec, _band_mask(spec.freq, band)),
        window=band,
        window_err=math.hypot(peak.centre_err, window_sigmas * peak.width_err),
        peak=peak.centre,
        peak_err=peak.centre_err,
        width=peak.width,
    )


def find_components(
    spec: FrequencySpectrum,
    dc_cutoff: float = 0.2,
    threshold: float = 3.0,
    max_components: int = 2,
    min_separation: float = 0.1,
) -> dict[str, float]:
    """Locate the strongest non-DC peaks of the one-sided magnitude and name them.

    With two peaks the higher frequency is the ground-level electron (larger
    in-plane g-factor) and the lower one the hole; a single peak is the
    electron. Two maxima closer than their mean full width at half maximum
    belong to one line and only the stronger is kept.

    Returns:
        Peak frequency in GHz by component name, possibly empty
    """
    magnitude = one_sided_magnitude(spec)
    noise = spectral_noise_floor(spec, dc_cutoff, magnitude)
    # start one bin below the cutoff so the first searched bin can be a peak
    start = max(int(np.searchsorted(spec.freq, dc_cutoff, side="right")) - 1, 0)
    freq, magnitude = spec.freq[start:], magnitude[start:]
    distance = max(1, int(round(min_separation / spec.resolution)))
    peaks, props = find_peaks(
        magnitude, height=threshold * noise, prominence=threshold * noise, distance=distance
    )
    above = freq[peaks] > dc_cutoff
    peaks, heights = peaks[above], props["peak_heights"][above]
    if not peaks.size:
        return {}
    strongest = peaks[np.argsort(heights)[::-1][:max_components]]
    if strongest.size == 2:
        widths = peak_widths(magnitude, strongest, rel_height=0.5)[0] * spec.resolution
        if abs(freq[strongest[0]] - freq[strongest[1]]) <= float(np.mean(widths)):
            strongest = strongest[:1]
    found = sorted(float(freq[i]) for i in strongest)
    names = ["electron"] if len(found) == 1 else ["hole", "electron"]
    return dict(zip(names, found))


def fit_isolated_component(
    spec: FrequencySpectrum,
    peak_guess: float,
    **isolate_options,
) -> tuple[IsolatedComponent, FitResult]:
    """Isolate a component and fit it with the two-sided damped cosine.

    The pass-band edge uncertainty is folded into the omega and T2* errors by
    refitting with the band widened and narrowed by ``window_err``.
    """
    component = isolate_component(spec, peak_guess, **isolate_options)
    init = {"omega": 2.0 * math.pi * component.peak}
    if math.isfinite(component.width) and component.width > 0:
        init["t2_star"] = float(np.clip(1.0 / (2.0 * math.pi * 1.177 * component.width), 0.05, 100.0))
    fit = fit_damped_cosine(component.trace, form=TWO_SIDED, init=init)
    if not fit.converged:
        return component, fit

    lo, hi = component.window
    spread = {"omega": 0.0, "t2_star": 0.0}
    for delta in (component.window_err, -component.window_err):
        band = (max(lo - delta, 0.5 * spec.resolution), hi + delta)
        if not band[1] > band[0] or delta == 0.0:
            continue
        try:
            refit = fit_damped_cosine(
                inverse_transform(spec, _band_mask(spec.freq, band)),
                form=TWO_SIDED,
                init={"omega": fit["omega"], "t2_star": fit["t2_star"], "phi": fit["phi"]},
            )
        except FitError:
            continue
        if refit.converged:
            for name in spread:
                if math.isfinite(refit[name]) and math.isfinite(fit[name]):
                    spread[name] = max(spread[name], abs(refit[name] - fit[name]))

    omega = fit["omega"]
    fit.errors["omega"] = math.hypot(fit.errors["omega"], spread["omega"])
    fit.errors["t2_star"] = math.hypot(fit.errors["t2_star"], spread["t2_star"])
    fit.errors["frequency_ghz"] = fit.errors["omega"] / (2.0 * math.pi)
    fit.errors["period_ps"] = fit["period_ps"] * fit.errors["omega"] / omega
    fit.errors["splitting_uev"] = HBAR * fit.errors["omega"] / PS_PER_NS
    fit.metadata.update(
        window_lo_ghz=f"{lo:.6g}",
        window_hi_ghz=f"{hi:.6g}",
        window_err_ghz=f"{component.window_err:.3g}",
        peak_ghz=f"{component.peak:.6g}",
    )
    return component, fit


_LINE_PARAMS = ("c", "s", "gamma", "omega")


def refine_components(
    raw: CorrelationTrace,
    fits: Mapping[str, FitResult],
    dip: Optional[FitResult] = None,
    exclude: Optional[float] = None,
) -> dict[str, FitResult]:
    """Fit every component at once to the raw correlation.

    The model is scale * (1 - depth exp(-|t| kappa) + sum_k exp(-|t|/T2*_k)
    (c_k cos(omega_k |t|) - s_k sin(omega_k |t|))), weighted by Poisson
    errors. Lines start from ``fits`` (isolated fits by name) and the dip
    from ``dip`` (the antibunching normalization). Bins with |t| <=
    ``exclude`` ps, three bins by default, are left out: jitter and dead time
    shape them.

    Returns:
        Fits by name with the keys of a ``two_sided`` :func:`fit_damped_cosine`
        result; ``amplitude`` is relative to the scale. Components whose
        refined line cannot be resolved are left out.

    Raises:
        FitError: If the joint fit does not converge
    """
    names = [
        name for name, fit in fits.items()
        if fit.converged and math.isfinite(fit.params.get("omega", math.nan))
    ]
    if not names:
        return {}
    delay = np.asarray(raw.delay, dtype=float)
    exclude = 3.0 * raw.bin_width if exclude is None else exclude
    keep = np.abs(delay) > exclude
    t = np.abs(delay[keep]) / PS_PER_NS
    y = np.asarray(raw.value, dtype=float)[keep]
    if t.size <= 3 + 4 * len(names):
        raise FitError(f"Joint component fit needs more than {3 + 4 * len(names)} bins, got {t.size}")
    span = float(t.max() - t.min())
    sigma = np.sqrt(np.maximum(y, 1.0))

    dip_params = dip.params if dip is not None else {}
    tail = float(np.median(y[t >= 0.5 * t.max()]))
    start = [
        dip_params.get("scale", tail),
        float(np.clip(dip_params.get("depth", 0.5), -1.0, 2.0)),
        PS_PER_NS / dip_params["tau_d"] if dip_params.get("tau_d", 0.0) > 0 else 1.0,
    ]
    lower, upper = [0.0, -1.0, 0.0], [np.inf, 2.0, np.inf]
    for name in names:
        fit = fits[name]
        amplitude, phi, t2 = fit["amplitude"], fit.params.get("phi", 0.0), fit["t2_star"]
        start += [
            amplitude * math.cos(phi),
            amplitude * math.sin(phi),
            1.0 / t2 if 0.0 < t2 < math.inf else 0.5 / span,
            fit["omega"],
        ]
        lower += [-np.inf, -np.inf, 0.0, 0.0]
        upper += [np.inf] * 4
    labels = ["scale", "depth", "kappa"] + [f"{name}_{p}" for name in names for p in _LINE_PARAMS]

    def model(t, scale, depth, kappa, *lines):
        shape = 1.0 - depth * np.exp(-kappa * t)
        for k in range(0, len(lines), 4):
            c, s, gamma, omega = lines[k:k + 4]
            shape = shape + np.exp(-gamma * t) * (c * np.cos(omega * t) - s * np.sin(omega * t))
        return scale * shape

    result = _least_squares(model, t, y, sigma, start, names=labels, bounds=(lower, upper))
    if result is None:
        raise FitError(f"Joint fit of {', '.join(names)} did not converge")
    params, errors, chi2 = result
    inflate = math.sqrt(max(chi2, 1.0))
    logger.debug("Joint component fit: chi2 %.3g, scale %.4g", chi2, params["scale"])

    refined = {}
    for name in names:
        c, s = params[f"{name}_c"], params[f"{name}_s"]
        dc, ds = errors[f"{name}_c"], errors[f"{name}_s"]
        amplitude = math.hypot(c, s)
        if amplitude > 0:
            amplitude_err = math.hypot(c * dc, s * ds) / amplitude
            phi_err = math.hypot(s * dc, c * ds) / amplitude**2
        else:
            amplitude_err, phi_err = math.hypot(dc, ds), math.inf
        values = {
            "amplitude": amplitude,
            "omega": params[f"{name}_omega"],
            "gamma": params[f"{name}_gamma"],
            "phi": math.atan2(s, c),
        }
        spreads = {
            "amplitude": amplitude_err * inflate,
            "omega": errors[f"{name}_omega"] * inflate,
            "gamma": errors[f"{name}_gamma"] * inflate,
            "phi": phi_err * inflate,
        }
        try:
            refined[name] = _finish_cosine_fit(values, spreads, chi2, span, TWO_SIDED)
        except FitError as exc:
            logger.warning("%s component after the joint fit: %s", name, exc)
    return refined


@dataclass(frozen=True, eq=False)
class G2Analysis:
    raw: CorrelationTrace
    normalized: CorrelationTrace
    spectrum: FrequencySpectrum
    components: dict[str, tuple[IsolatedComponent, FitResult]]


def _neighbour_limits(guesses: Mapping[str, float]) -> dict[str, tuple[float, float]]:
    ordered = sorted(guesses.items(), key=lambda item: item[1])
    limits = {}
    for i, (name, guess) in enumerate(ordered):
        low = 0.5 * (ordered[i - 1][1] + guess) if i > 0 else 0.0
        high = 0.5 * (guess + ordered[i + 1][1]) if i + 1 < len(ordered) else math.inf
        limits[name] = (low, high)
    return limits


def analyze_g2(
    tags: np.ndarray,
    bin_width: float,
    max_delay: float,
    peak_guesses: Optional[Mapping[str, float]] = None,
    refine: bool = True,
    **isolate_options,
) -> G2Analysis:
    """correlate -> normalize -> Fourier transform -> isolate -> fit -> joint refit.

    Args:
        tags: Sorted detection times in ps
        bin_width: Correlation bin width in ps
        max_delay: Correlation range in ns
        peak_guesses: Component name -> expected frequency in GHz; located
            automatically when empty
        refine: Replace the isolated fits by one joint fit of the raw
            correlation (:func:`refine_components`) when it lands inside
            each pass band
    """
    raw = correlate(tags, bin_width, max_delay)
    normalized = normalize_antibunching(raw)
    spectrum = fourier_spectrum(normalized)
    guesses = dict(peak_guesses or {})
    if not guesses:
        guesses = find_components(
            spectrum,
            dc_cutoff=isolate_options.get("dc_cutoff", 0.2),
            threshold=isolate_options.get("threshold", 3.0),
        )
    limits = _neighbour_limits(guesses)
    components = {}
    for name, guess in guesses.items():
        try:
            components[name] = fit_isolated_component(spectrum, guess, limits=limits[name], **isolate_options)
        except ComponentNotDetected as exc:
            logger.info("%s: %s", name, exc)
        except FitError as exc:
            logger.warning("%s component could not be fitted: %s", name, exc)
    if refine and components:
        _refine_in_place(raw, normalized.normalization, components)
    return G2Analysis(raw=raw, normalized=normalized, spectrum=spectrum, components=components)


def _refine_in_place(raw, dip, components) -> None:
    try:
        refined = refine_components(raw, {name: fit for name, (_, fit) in components.items()}, dip)
    except FitError as exc:
        logger.warning("Keeping the isolated fits: %s", exc)
        return
    for name, fit in refined.items():
        component, isolated = components[name]
        lo, hi = component.window
        if not lo <= fit["frequency_ghz"] <= hi:
            logger.warning(
                "%s: joint fit moved to %.4g GHz, outside the (%.4g, %.4g) GHz band; keeping the isolated fit",
                name, fit["frequency_ghz"], lo, hi,
            )
            continue
        fit.metadata.update((key, value) for key, value in isolated.metadata.items() if key != "form")
        fit.metadata.update(refined="true", isolated_frequency_ghz=f"{isolated['frequency_ghz']:.6g}")
        components[name] = (component, fit)


# ----------------------------------------------------------------------
# g-factor regression


class SplittingPoint(NamedTuple):
    b_field: float  # T
    splitting: float  # ueV
    error: float = 0.0  # ueV


class Residual(NamedTuple):
    b_field: float
    splitting: float
    predicted: float
    residual: float
    normalized: float
    outlier: bool


def gfactor_fit(points: Sequence[SplittingPoint], weighted: bool = True) -> FitResult:
    """Linear fit splitting = slope * B + intercept and |g| = slope / mu_B.

    Points are weighted by 1/error^2 when ``weighted`` and every error is
    positive; otherwise the fit is unweighted and parameter errors are scaled
    by the residual scatter. The intercept is free and serves as a
    consistency check against zero.
    """
    points = [SplittingPoint(*p) for p in points]
    if len(points) < 2:
        raise ValidationError(f"A g-factor fit needs at least 2 points, got {len(points)}")
    b = np.array([p.b_field for p in points], dtype=float)
    y = np.array([p.splitting for p in points], dtype=float)
    err = np.array([p.error for p in points], dtype=float)
    if np.unique(b).size < 2:
        raise ValidationError("A g-factor fit needs at least two distinct fields (all-identical fields)")

    use_weights = weighted and bool(np.all(err > 0))
    (slope, intercept), cov = np.polyfit(b, y, 1, w=1.0 / err if use_weights else None, cov="unscaled")
    residual = y - (slope * b + intercept)
    dof = b.size - 2
    w = err**-2.0 if use_weights else np.ones_like(b)
    chi2 = float(np.sum(w * residual**2) / dof) if dof > 0 else 0.0
    flags = []
    if not use_weights:
        cov = cov * chi2
        if dof == 0:
            flags.append("errors_undetermined")
    slope_err, intercept_err = (math.sqrt(max(float(v), 0.0)) for v in np.diag(cov))
    if intercept_err > 0 and abs(intercept) > 3.0 * intercept_err:
        logger.warning("g-factor fit intercept %.3g +- %.2g ueV is inconsistent with zero", intercept, intercept_err)
        flags.append("intercept_nonzero")
    return FitResult(
        params={"g": slope / MU_BOHR, "slope": float(slope), "intercept": float(intercept)},
        errors={"g": slope_err / MU_BOHR, "slope": slope_err, "intercept": intercept_err},
        chi2_reduced=chi2,
        converged=True,
        flags=flags,
        metadata={"weighted": "true" if use_weights else "false", "n_points": str(b.size)},
    )


def gfactor_residuals(points: Sequence[SplittingPoint], fit: FitResult, limit: float = 3.0) -> list[Residual]:
    """Per-point residuals in units of the point error; beyond ``limit`` sigma is an outlier.

    A point without an error is scaled by the scatter of the other residuals,
    so an outlier never inflates its own scale; that needs three other points.
    """
    points = [SplittingPoint(*p) for p in points]
    predicted = [fit["slope"] * p.b_field + fit["intercept"] for p in points]
    raw = np.array([p.splitting - q for p, q in zip(points, predicted)])
    # rounding level of the splittings; residuals below it count as exact
    tolerance = 1e-9 * float(np.max(np.abs([p.splitting for p in points]), initial=0.0))
    table = []
    for i, (point, guess, r) in enumerate(zip(points, predicted, raw)):
        if point.error > 0:
            scale = point.error
        elif raw.size > 3:
            scale = max(float(np.std(np.delete(raw, i), ddof=1)), tolerance)
        else:
            scale = 0.0
        normalized = r / scale if scale > 0 and abs(r) > tolerance else 0.0
        outlier = abs(normalized) > limit
        if outlier:
            logger.warning("Outlier at B = %g T: residual %.2f sigma", point.b_field, normalized)
        table.append(Residual(point.b_field, point.splitting, guess, float(r), float(normalized), outlier))
    return table
