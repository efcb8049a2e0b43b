"""Closed loops: simulate with known parameters, analyse, and recover them."""

import math
import os

import pytest

from exciton_dot_lab import analysis, files
from exciton_dot_lab.commands import cmd_analyze, cmd_gfactor, cmd_simulate
from exciton_dot_lab.config import field_dirname, load_config
from exciton_dot_lab.dynamics import MU_BOHR, ExcitonParams, TrionParams, splitting_to_period
from exciton_dot_lab.montecarlo import (
    DetectorConfig,
    EmitterConfig,
    build_histogram,
    simulate_cw_g2,
    simulate_pulsed,
    visibility_factor,
)


def run_config(tmp_path, text):
    path = tmp_path / "run.toml"
    path.write_text(text, encoding="utf-8")
    return load_config(str(path))


def exciton_emitter(pump):
    return EmitterConfig(
        kind="neutral_exciton", exciton=ExcitonParams(e_fss=36.17, lifetime_tau=1015.0), pump_polarization=pump
    )


def circular_fit(records, fixed=None):
    hist_r = build_histogram(records, 8.0, (0.0, 3000.0), "R")
    hist_l = build_histogram(records, 8.0, (0.0, 3000.0), "L")
    trace = analysis.dop_trace(hist_r, hist_l)
    return analysis.fit_damped_cosine(trace, window=(40.0, 3000.0), fixed=fixed)


@pytest.mark.slow
def test_exciton_fine_structure_is_recovered(tmp_path):
    config = run_config(
        tmp_path,
        f"""experiment = "pulsed_x0"
output_dir = "{tmp_path / 'x0'}"
run.pump_polarizations = ["A"]
run.detection_bases = ["DA"]
run.n_pulses = 200000
analysis.fit_stop_ps = 3000.0
""",
    )
    cmd_simulate(config)
    cmd_analyze(config.output_dir)
    fit = files.read_fit_result(os.path.join(config.output_dir, "analysis", "fit_pump-A_basis-DA.txt"))
    assert fit.converged
    assert fit["splitting_uev"] == pytest.approx(36.17, rel=0.01)
    # 28 ps jitter washes out part of the 114 ps oscillation
    assert 0.6 < fit["amplitude"] < 0.95


@pytest.mark.slow
def test_trion_hole_gfactor_is_recovered(tmp_path):
    config = run_config(
        tmp_path,
        f"""experiment = "pulsed_trion"
output_dir = "{tmp_path / 'trion'}"
trion.b_field_t = 0.2
emitter.depolarization = 0.34
run.pump_polarizations = ["R"]
run.detection_bases = ["RL"]
run.n_pulses = 300000
analysis.bin_width_ps = 16.0
""",
    )
    cmd_simulate(config)
    cmd_analyze(config.output_dir)
    fit = files.read_fit_result(os.path.join(config.output_dir, "analysis", "fit_pump-R_basis-RL.txt"))
    assert fit.metadata["component"] == "hole"
    assert fit["period_ps"] == pytest.approx(602.0, rel=0.02)
    assert fit["splitting_uev"] / (MU_BOHR * 0.2) == pytest.approx(0.593, rel=0.02)
    assert fit["amplitude"] == pytest.approx(0.66, abs=0.06)


@pytest.mark.slow
def test_both_gfactors_from_the_g2_sweep_preset(tmp_path):
    config = load_config("paper-g2-sweep", overrides={"output_dir": str(tmp_path / "sweep")})
    cmd_simulate(config)
    cmd_analyze(config.output_dir)
    analysis_dir = os.path.join(config.output_dir, "analysis")

    electron_40 = files.read_fit_result(os.path.join(analysis_dir, field_dirname(0.04), "fit_electron.txt"))
    assert electron_40["frequency_ghz"] == pytest.approx(1.61, rel=0.10)
    for b_field in (0.06, 0.07, 0.08, 0.09):
        assert os.path.isfile(os.path.join(analysis_dir, field_dirname(b_field), "fit_hole.txt"))

    report_dir = str(tmp_path / "report")
    cmd_gfactor([analysis_dir], out=report_dir)
    electron = files.read_fit_result(os.path.join(report_dir, "gfactor_electron.txt"))
    hole = files.read_fit_result(os.path.join(report_dir, "gfactor_hole.txt"))
    assert electron["g"] == pytest.approx(2.876, rel=0.02)
    assert hole["g"] == pytest.approx(0.593, rel=0.02)


@pytest.mark.slow
def test_hole_coherence_outlasts_the_electron():
    b_field = 0.07
    trion = TrionParams(
        g_hole=0.593, g_electron=2.876, b_field=b_field, lifetime_tau=1135.0, t2_star_hole=8.6, t2_star_electron=2.5
    )
    emitter = EmitterConfig(kind="negative_trion", trion=trion, pump_rate=2.0)
    guesses = {"electron": 40.25 * b_field, "hole": 8.30 * b_field}
    seeds = range(1, 6)
    usable = ordered = 0
    for seed in seeds:
        tags = simulate_cw_g2(emitter, DetectorConfig(jitter_fwhm=28.0), "R", 2.0e6, seed=seed)
        result = analysis.analyze_g2(tags, 20.0, 10.0, peak_guesses=guesses)
        if not {"hole", "electron"} <= result.components.keys():
            continue
        hole, electron = result.components["hole"][1], result.components["electron"][1]
        if "t2_star_unconstrained" in hole.flags + electron.flags:
            continue
        usable += 1
        ordered += hole["t2_star"] > electron["t2_star"]
    assert usable >= 3
    assert ordered >= 0.9 * usable


@pytest.mark.slow
def test_jitter_attenuates_the_dop_by_the_visibility_factor():
    emitter = exciton_emitter("A")
    amplitudes = {}
    for jitter in (0.0, 28.0):
        records = simulate_pulsed(emitter, DetectorConfig(jitter_fwhm=jitter), "DA", 400000, seed=5)
        hist_d = build_histogram(records, 8.0, (0.0, 3000.0), "D")
        hist_a = build_histogram(records, 8.0, (0.0, 3000.0), "A")
        fit = analysis.fit_damped_cosine(analysis.dop_trace(hist_d, hist_a), window=(100.0, 3000.0))
        assert fit["period_ps"] == pytest.approx(splitting_to_period(36.17), rel=0.01)
        amplitudes[jitter] = fit["amplitude"]
    expected = visibility_factor(28.0, splitting_to_period(36.17))
    assert expected == pytest.approx(0.806, abs=0.003)
    assert amplitudes[28.0] / amplitudes[0.0] == pytest.approx(expected, rel=0.02)


@pytest.mark.slow
def test_polarization_memory_at_zero_field():
    trion = TrionParams(
        g_hole=0.593, g_electron=2.876, b_field=0.0, lifetime_tau=1135.0, t2_star_hole=math.inf
    )
    runs = {}
    for pump in ("R", "L"):
        emitter = EmitterConfig(kind="negative_trion", trion=trion, pump_polarization=pump, depolarization=0.34)
        runs[pump] = simulate_pulsed(emitter, DetectorConfig(jitter_fwhm=28.0), "RL", 200000, seed=3)
    memory, error = analysis.polarization_memory(runs["R"], runs["L"])
    assert memory == pytest.approx(0.66, abs=0.02)
    assert error < 0.005


@pytest.mark.slow
def test_qubit_writing_phases_step_by_a_quarter_turn():
    detector = DetectorConfig(jitter_fwhm=28.0)
    fits = {}
    for seed, pump in enumerate(("R", "D", "L", "A"), start=11):
        fits[pump] = circular_fit(simulate_pulsed(exciton_emitter(pump), detector, "RL", 200000, seed=seed))
        assert fits[pump].converged
    lags = {str(label): value for label, value in analysis.qubit_writing_phases(fits).items()}
    for step, pump in enumerate(("D", "L", "A"), start=1):
        sigma = math.hypot(fits[pump].error("phi"), fits["R"].error("phi"))
        assert abs(lags[pump] - step * math.pi / 2) <= 3.0 * sigma

    omega = fits["R"]["omega"]
    for seed, pump in enumerate(("H", "V"), start=21):
        records = simulate_pulsed(exciton_emitter(pump), detector, "RL", 200000, seed=seed)
        fit = circular_fit(records, fixed={"omega": omega, "t2_star": math.inf})
        assert fit["amplitude"] < 0.05
        assert fit["amplitude"] <= 4.0 * fit.error("amplitude")
