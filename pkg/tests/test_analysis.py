import math

import numpy as np
import pytest

from exciton_dot_lab import analysis
from exciton_dot_lab.dynamics import MU_BOHR
from exciton_dot_lab.exceptions import ComponentNotDetected, FitError, ValidationError
from exciton_dot_lab.montecarlo import PhotonRecords
from exciton_dot_lab.traces import CorrelationTrace, DopTrace, FitResult, Histogram


def records_from_channels(channels):
    n = len(channels)
    index = np.arange(n, dtype=np.int64)
    return PhotonRecords(index, index, np.zeros(n), np.zeros(n), np.array(channels, dtype="<U1"))


def cosine_trace(t, amplitude=0.8, period=114.3, t2_star=2.0, phi=0.3, offset=0.0):
    dop = amplitude * np.exp(-t / (t2_star * 1000.0)) * np.cos(2 * math.pi * t / period + phi) + offset
    return DopTrace(bin_center=t, dop=dop, dop_err=np.full(t.size, 0.01))


def two_tone(delay, components, noise=0.0, seed=0):
    reach = np.abs(delay) / 1000.0
    value = np.ones_like(delay)
    for amplitude, freq, t2, *phase in components:
        value = value + amplitude * np.exp(-reach / t2) * np.cos(2 * math.pi * freq * reach + sum(phase))
    if noise:
        value = value + np.random.default_rng(seed).normal(0.0, noise, delay.size)
    return CorrelationTrace(delay=delay, value=value, normalized=True)


DELAY = np.arange(-500, 501) * 20.0


def test_normalize_by_area():
    hist = Histogram(edges=np.array([0.0, 2.0, 4.0]), counts=np.array([1, 3]))
    assert analysis.normalize_by_area(hist).counts.tolist() == [0.125, 0.375]
    with pytest.raises(ValidationError):
        analysis.normalize_by_area(Histogram(edges=np.array([0.0, 1.0]), counts=np.array([0])))


def test_dop_trace_drops_empty_bins():
    edges = np.array([0.0, 8.0, 16.0, 24.0])
    trace = analysis.dop_trace(
        Histogram(edges=edges, counts=np.array([10, 0, 5])), Histogram(edges=edges, counts=np.array([0, 0, 5]))
    )
    assert trace.bin_center.tolist() == [4.0, 20.0]
    assert trace.dop.tolist() == [1.0, 0.0]
    assert trace.dop_err == pytest.approx([0.0, 2 * math.sqrt(25 / 1000)])
    assert trace.counts.tolist() == [10.0, 10.0]


def test_dop_trace_binning_mismatch():
    with pytest.raises(ValidationError, match="binning mismatch"):
        analysis.dop_trace(
            Histogram(edges=np.array([0.0, 8.0, 16.0]), counts=np.array([1, 1])),
            Histogram(edges=np.array([0.0, 16.0, 32.0]), counts=np.array([1, 1])),
        )


def test_polarization_memory():
    r_pump = records_from_channels(["R"] * 80 + ["L"] * 20)
    l_pump = records_from_channels(["L"] * 70 + ["R"] * 30)
    memory, error = analysis.polarization_memory(r_pump, l_pump)
    assert memory == pytest.approx(0.5)
    assert error == pytest.approx(0.5 * math.hypot(2 * math.sqrt(0.16 / 100), 2 * math.sqrt(0.21 / 100)))
    with pytest.raises(ValidationError, match="no records"):
        analysis.polarization_memory(r_pump, PhotonRecords.empty())


def test_integrated_dop():
    dop, _ = analysis.integrated_dop(records_from_channels(["H", "H", "H", "V"]), "V")
    assert dop == pytest.approx(-0.5)


def test_lifetime_fit():
    edges = np.arange(0, 6001, 8.0)
    centers = 0.5 * (edges[1:] + edges[:-1])
    hist = Histogram(edges=edges, counts=1000.0 * np.exp(-centers / 1015.0) + 5.0)
    fit = analysis.fit_exponential_lifetime(hist, (40.0, 5000.0))
    assert fit.converged
    assert fit["lifetime_tau"] == pytest.approx(1015.0, rel=1e-4)
    assert fit["background"] == pytest.approx(5.0, abs=1e-2)
    assert fit.flags == []


def test_lifetime_fit_flat_histogram():
    edges = np.arange(0, 6001, 8.0)
    hist = Histogram(edges=edges, counts=np.full(edges.size - 1, 50.0))
    fit = analysis.fit_exponential_lifetime(hist, (40.0, 5000.0))
    assert not fit.converged
    assert "lifetime_unbounded" in fit.flags
    assert math.isinf(fit["lifetime_tau"])


def test_lifetime_fit_window_checks():
    hist = Histogram(edges=np.arange(0, 101, 8.0), counts=np.arange(12, 0, -1.0))
    with pytest.raises(ValidationError):
        analysis.fit_exponential_lifetime(hist, (0.0, 500.0))
    with pytest.raises(FitError):
        analysis.fit_exponential_lifetime(hist, (0.0, 20.0))


def test_damped_cosine_noiseless():
    t = np.arange(0.0, 3000.0, 8.0) + 4.0
    fit = analysis.fit_damped_cosine(cosine_trace(t))
    assert fit.converged
    assert fit["period_ps"] == pytest.approx(114.3, rel=1e-5)
    assert fit["splitting_uev"] == pytest.approx(36.17, rel=1e-3)
    assert fit["frequency_ghz"] == pytest.approx(1000.0 / 114.3, rel=1e-5)
    assert fit["t2_star"] == pytest.approx(2.0, rel=1e-4)
    assert fit["amplitude"] == pytest.approx(0.8, rel=1e-4)
    assert fit["phi"] == pytest.approx(0.3, abs=1e-4)
    assert fit.metadata["form"] == "pulsed"
    assert "amplitude_consistent_with_zero" not in fit.flags
    assert "t2_star_unconstrained" not in fit.flags


def test_damped_cosine_fixed_and_window():
    t = np.arange(0.0, 3000.0, 8.0) + 4.0
    fit = analysis.fit_damped_cosine(
        cosine_trace(t, t2_star=math.inf), fixed={"t2_star": math.inf}, window=(0.0, 1500.0)
    )
    assert math.isinf(fit["t2_star"])
    assert fit["period_ps"] == pytest.approx(114.3, rel=1e-5)
    assert "t2_star_unconstrained" in fit.flags


def test_damped_cosine_flags_undamped_envelope():
    t = np.arange(0.0, 1500.0, 8.0) + 4.0
    fit = analysis.fit_damped_cosine(cosine_trace(t, t2_star=math.inf))
    assert fit.converged
    assert fit["period_ps"] == pytest.approx(114.3, rel=1e-4)
    assert fit["t2_star"] > 10 * 1.5
    assert "t2_star_unconstrained" in fit.flags
    assert "amplitude_consistent_with_zero" not in fit.flags


def test_damped_cosine_flat_trace():
    t = np.arange(0.0, 800.0, 8.0)
    trace = DopTrace(bin_center=t, dop=np.full(t.size, 0.2), dop_err=np.full(t.size, 0.01))
    fit = analysis.fit_damped_cosine(trace)
    assert not fit.converged
    assert "amplitude_consistent_with_zero" in fit.flags
    assert "omega_unconstrained" in fit.flags


def test_damped_cosine_errors():
    short = np.arange(5) * 8.0
    with pytest.raises(FitError):
        analysis.fit_damped_cosine(cosine_trace(short))
    t = np.arange(0.0, 100.0, 4.0)
    with pytest.raises(FitError, match="unresolvable frequency"):
        analysis.fit_damped_cosine(cosine_trace(t, period=6000.0), init={"omega": 1.0})
    with pytest.raises(ValidationError):
        analysis.fit_damped_cosine(cosine_trace(t), form="one_sided")


def test_damped_cosine_two_sided():
    trace = two_tone(DELAY, [(0.3, 1.61, 3.0)])
    fit = analysis.fit_damped_cosine(trace, form="two_sided")
    assert fit["frequency_ghz"] == pytest.approx(1.61, rel=1e-4)
    assert fit["t2_star"] == pytest.approx(3.0, rel=1e-3)
    assert fit["offset"] == pytest.approx(1.0, abs=1e-4)


def test_qubit_writing_phases():
    fits = {
        label: FitResult(params={"phi": phi}, errors={}, chi2_reduced=1.0, converged=True)
        for label, phi in [("R", 0.4), ("D", 0.4 - math.pi / 2), ("L", 0.4 + math.pi), ("A", 0.4 + math.pi / 2)]
    }
    fits["H"] = FitResult(params={"phi": 0.0}, errors={}, chi2_reduced=1.0, converged=True)
    lags = {str(label): value for label, value in analysis.qubit_writing_phases(fits).items()}
    assert sorted(lags) == ["A", "D", "L", "R"]
    assert lags["R"] == pytest.approx(0.0, abs=1e-12)
    assert lags["D"] == pytest.approx(math.pi / 2)
    assert lags["L"] == pytest.approx(math.pi)
    assert lags["A"] == pytest.approx(3 * math.pi / 2)
    with pytest.raises(ValidationError):
        analysis.qubit_writing_phases({"D": fits["D"]})


def test_normalize_antibunching():
    value = 100.0 * (1.0 - 0.9 * np.exp(-np.abs(DELAY) / 1000.0))
    raw = CorrelationTrace(delay=DELAY, value=value, error=np.sqrt(value))
    normalized = analysis.normalize_antibunching(raw)
    assert normalized.normalized
    assert np.allclose(normalized.value, 1.0, atol=1e-6)
    fit = normalized.normalization
    assert fit["depth"] == pytest.approx(0.9, rel=1e-5)
    assert fit["tau_d"] == pytest.approx(1000.0, rel=1e-4)
    assert "no_dip" not in fit.flags


def test_normalize_without_dip():
    raw = CorrelationTrace(delay=DELAY, value=np.full(DELAY.size, 40.0))
    normalized = analysis.normalize_antibunching(raw)
    assert np.allclose(normalized.value, 1.0)
    assert "no_dip" in normalized.normalization.flags
    with pytest.raises(ValidationError):
        analysis.normalize_antibunching(CorrelationTrace(delay=DELAY, value=np.zeros(DELAY.size)))


def test_fourier_spectrum():
    trace = two_tone(DELAY, [(0.3, 1.61, math.inf)])
    spectrum = analysis.fourier_spectrum(trace)
    assert spectrum.is_hermitian()
    assert spectrum.mean == pytest.approx(np.mean(trace.value))
    positive = spectrum.freq > 0
    peak = spectrum.freq[positive][np.argmax(np.abs(spectrum.amplitude[positive]))]
    assert peak == pytest.approx(1.61, abs=spectrum.resolution)
    rebuilt = analysis.inverse_transform(spectrum)
    assert np.allclose(rebuilt.value, trace.value)
    with pytest.raises(ValidationError):
        analysis.fourier_spectrum(CorrelationTrace(delay=np.array([0.0, 1.0, 3.0]), value=np.ones(3)))


def test_inverse_transform_without_dc_drops_mean():
    spectrum = analysis.fourier_spectrum(two_tone(DELAY, [(0.3, 1.61, 2.0)]))
    band = analysis.inverse_transform(spectrum, np.abs(spectrum.freq) > 0.0)
    assert np.mean(band.value) == pytest.approx(0.0, abs=1e-9)


def test_isolate_two_components():
    trace = two_tone(DELAY, [(0.3, 0.5, 2.0), (0.2, 1.6, 2.0)], noise=0.005, seed=4)
    spectrum = analysis.fourier_spectrum(trace)
    found = analysis.find_components(spectrum)
    assert sorted(found) == ["electron", "hole"]
    assert found["hole"] == pytest.approx(0.5, abs=2 * spectrum.resolution)
    assert found["electron"] == pytest.approx(1.6, abs=2 * spectrum.resolution)

    component, fit = analysis.fit_isolated_component(spectrum, 1.6)
    assert component.window[0] < 1.6 < component.window[1]
    assert component.window[0] > 0.5
    assert fit["frequency_ghz"] == pytest.approx(1.6, abs=0.03)
    assert fit.errors["frequency_ghz"] > 0
    assert {"window_lo_ghz", "window_hi_ghz", "window_err_ghz", "peak_ghz"} <= set(fit.metadata)


def test_isolate_explicit_window():
    spectrum = analysis.fourier_spectrum(two_tone(DELAY, [(0.3, 0.5, 2.0), (0.2, 1.6, 2.0)]))
    component = analysis.isolate_component(spectrum, 1.6, window=(1.2, 2.0))
    assert component.window == (1.2, 2.0)
    assert component.window_err == 0.0
    assert math.isnan(component.peak)
    assert len(component.trace) == DELAY.size


def test_white_noise_has_no_component():
    noise = CorrelationTrace(delay=DELAY, value=1.0 + np.random.default_rng(3).normal(0.0, 0.01, DELAY.size))
    spectrum = analysis.fourier_spectrum(noise)
    with pytest.raises(ComponentNotDetected, match="not detected"):
        analysis.isolate_component(spectrum, 1.6)
    assert analysis.spectral_noise_floor(spectrum) > 0


def test_single_component_is_the_electron():
    spectrum = analysis.fourier_spectrum(two_tone(DELAY, [(0.3, 1.6, 2.0)], noise=0.005))
    found = analysis.find_components(spectrum, threshold=10.0)
    assert list(found) == ["electron"]


def test_sine_like_line_is_one_peak():
    # a quarter-period phase makes the symmetric spectrum dispersive, with a zero at the line
    spectrum = analysis.fourier_spectrum(two_tone(DELAY, [(0.3, 1.6, 2.0, math.pi / 2)]))
    line = np.argmin(np.abs(spectrum.freq - 1.6))
    near = np.abs(spectrum.freq - 1.6) < 0.3
    assert abs(spectrum.amplitude[line]) < 0.5 * np.abs(spectrum.amplitude[near]).max()

    magnitude = analysis.one_sided_magnitude(spectrum)
    positive = spectrum.freq > 0.2
    assert spectrum.freq[positive][np.argmax(magnitude[positive])] == pytest.approx(1.6, abs=spectrum.resolution)
    assert analysis.locate_component(spectrum, 1.6).centre == pytest.approx(1.6, abs=0.02)
    assert list(analysis.find_components(spectrum)) == ["electron"]

    component, fit = analysis.fit_isolated_component(spectrum, 1.6)
    assert component.window[0] < 1.6 < component.window[1]
    assert fit["frequency_ghz"] == pytest.approx(1.6, abs=0.03)


def test_peak_on_the_first_searched_bin():
    spectrum = analysis.fourier_spectrum(two_tone(DELAY, [(0.3, 0.25, 2.0), (0.2, 1.6, 2.0)]))
    first = spectrum.freq[spectrum.freq > 0.2][0]
    assert first == pytest.approx(0.25, abs=spectrum.resolution / 2)
    found = analysis.find_components(spectrum, dc_cutoff=0.2)
    assert sorted(found) == ["electron", "hole"]
    assert found["hole"] == pytest.approx(0.25, abs=spectrum.resolution)
    assert found["electron"] == pytest.approx(1.6, abs=spectrum.resolution)


def test_hole_emerges_above_the_dc_cutoff():
    low = analysis.fourier_spectrum(two_tone(DELAY, [(0.3, 0.15, 2.0), (0.2, 1.6, 2.0)]))
    with pytest.raises(ComponentNotDetected, match="DC cutoff"):
        analysis.isolate_component(low, 0.15, dc_cutoff=0.2)
    assert list(analysis.find_components(low, dc_cutoff=0.2)) == ["electron"]

    high = analysis.fourier_spectrum(two_tone(DELAY, [(0.3, 0.6, 2.0), (0.2, 1.6, 2.0)]))
    component = analysis.isolate_component(high, 0.6, dc_cutoff=0.2)
    assert component.peak == pytest.approx(0.6, abs=high.resolution)


def test_pass_band_respects_limits():
    spectrum = analysis.fourier_spectrum(two_tone(DELAY, [(0.3, 0.5, 2.0), (0.2, 1.6, 2.0)]))
    component = analysis.isolate_component(spectrum, 1.6, window_sigmas=20.0, limits=(1.05, 2.0))
    assert component.window[0] == pytest.approx(1.05)
    assert component.window[1] == pytest.approx(2.0)


def raw_g2(delay, lines, scale=1000.0, depth=0.9, tau_d=0.6):
    reach = np.abs(delay) / 1000.0
    shape = 1.0 - depth * np.exp(-reach / tau_d)
    for amplitude, freq, t2, phi in lines:
        shape = shape + amplitude * np.exp(-reach / t2) * np.cos(2 * math.pi * freq * reach + phi)
    value = scale * shape
    return CorrelationTrace(delay=delay, value=value, error=np.sqrt(value))


def seed_fit(frequency, t2, amplitude=0.1, phi=0.0):
    return FitResult(
        params={"amplitude": amplitude, "omega": 2 * math.pi * frequency, "t2_star": t2, "phi": phi},
        errors={},
        chi2_reduced=1.0,
        converged=True,
    )


def test_refine_components_recovers_both_lines():
    raw = raw_g2(DELAY, [(0.2, 0.5, 1.0, 0.3), (0.05, 3.6, 0.7, 1.4)])
    dip = FitResult(
        params={"scale": 1000.0, "depth": 0.9, "tau_d": 600.0}, errors={}, chi2_reduced=1.0, converged=True
    )
    refined = analysis.refine_components(
        raw, {"hole": seed_fit(0.52, 1.2), "electron": seed_fit(3.55, 0.8)}, dip
    )
    hole, electron = refined["hole"], refined["electron"]
    assert hole["frequency_ghz"] == pytest.approx(0.5, rel=1e-4)
    assert electron["frequency_ghz"] == pytest.approx(3.6, rel=1e-4)
    assert hole["t2_star"] == pytest.approx(1.0, rel=1e-3)
    assert electron["t2_star"] == pytest.approx(0.7, rel=1e-3)
    assert hole["amplitude"] == pytest.approx(0.2, rel=1e-3)
    assert electron["phi"] == pytest.approx(1.4, abs=1e-3)
    assert electron.metadata["form"] == "two_sided"
    assert "splitting_uev" in electron.params


def test_refine_components_skips_unconverged():
    raw = raw_g2(DELAY, [(0.2, 0.5, 1.0, 0.0)])
    failed = FitResult(params={}, errors={}, chi2_reduced=math.nan, converged=False)
    assert analysis.refine_components(raw, {"hole": failed}) == {}


def gfactor_points(g=2.876, offset=0.0, error=0.05):
    fields = [0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09]
    return [analysis.SplittingPoint(b, g * MU_BOHR * b + offset, error) for b in fields]


def test_gfactor_fit_exact():
    fit = analysis.gfactor_fit(gfactor_points())
    assert fit["g"] == pytest.approx(2.876, rel=1e-7)
    assert fit["intercept"] == pytest.approx(0.0, abs=1e-7)
    assert fit.errors["g"] > 0
    assert fit.flags == []
    assert fit.metadata == {"weighted": "true", "n_points": "7"}


def test_gfactor_fit_unweighted():
    fit = analysis.gfactor_fit(gfactor_points(error=0.0))
    assert fit.metadata["weighted"] == "false"
    assert fit["g"] == pytest.approx(2.876, rel=1e-7)
    two = analysis.gfactor_fit([(0.1, 1.0), (0.2, 2.0)], weighted=False)
    assert "errors_undetermined" in two.flags
    assert two["slope"] == pytest.approx(10.0)


def test_gfactor_fit_intercept_flag():
    fit = analysis.gfactor_fit(gfactor_points(offset=1.0))
    assert "intercept_nonzero" in fit.flags
    assert fit["g"] == pytest.approx(2.876, rel=1e-7)


def test_gfactor_fit_validation():
    with pytest.raises(ValidationError):
        analysis.gfactor_fit([(0.1, 1.0, 0.1)])
    with pytest.raises(ValidationError, match="identical"):
        analysis.gfactor_fit([(0.1, 1.0, 0.1), (0.1, 1.1, 0.1)])


def test_gfactor_residuals_flag_outlier():
    points = gfactor_points()
    points[3] = points[3]._replace(splitting=points[3].splitting + 1.0)
    fit = analysis.gfactor_fit(points)
    residuals = analysis.gfactor_residuals(points, fit)
    worst = max(residuals, key=lambda r: abs(r.normalized))
    assert worst.b_field == 0.06
    assert worst.outlier
    clean = analysis.gfactor_residuals(gfactor_points(), analysis.gfactor_fit(gfactor_points()))
    assert not any(r.outlier for r in clean)


def test_gfactor_residuals_flag_outlier_without_errors():
    points = gfactor_points(error=0.0)
    points[3] = points[3]._replace(splitting=points[3].splitting * 1.1)
    residuals = analysis.gfactor_residuals(points, analysis.gfactor_fit(points))
    assert [r.b_field for r in residuals if r.outlier] == [0.06]
    assert all(abs(r.normalized) < 1.0 for r in residuals if r.b_field != 0.06)
    exact = gfactor_points(error=0.0)
    assert not any(r.outlier for r in analysis.gfactor_residuals(exact, analysis.gfactor_fit(exact)))


def test_gfactor_fit_errors_match_the_covariance():
    b = np.array([0.03, 0.05, 0.07, 0.09])
    y = np.array([5.1, 8.2, 11.9, 14.8])
    err = np.array([0.1, 0.2, 0.1, 0.3])
    w = err**-2.0
    s, sx, sxx = w.sum(), (w * b).sum(), (w * b * b).sum()
    delta = s * sxx - sx**2
    fit = analysis.gfactor_fit([analysis.SplittingPoint(*p) for p in zip(b, y, err)])
    assert fit.errors["slope"] == pytest.approx(math.sqrt(s / delta), rel=1e-9)
    assert fit.errors["intercept"] == pytest.approx(math.sqrt(sxx / delta), rel=1e-9)

    unweighted = analysis.gfactor_fit([analysis.SplittingPoint(*p) for p in zip(b, y)])
    slope, intercept = np.polyfit(b, y, 1)
    chi2 = np.sum((y - slope * b - intercept) ** 2) / 2
    n_delta = b.size * np.sum(b**2) - b.sum() ** 2
    assert unweighted["slope"] == pytest.approx(slope)
    assert unweighted.errors["slope"] == pytest.approx(math.sqrt(chi2 * b.size / n_delta), rel=1e-9)
