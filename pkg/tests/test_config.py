import math
import os

import pytest

from exciton_dot_lab import config
from exciton_dot_lab.exceptions import ConfigError, ValidationError
from exciton_dot_lab.montecarlo import EmitterKind
from exciton_dot_lab.polarization import BasisLabel


def write(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_defaults(tmp_path):
    run = config.load_config(write(tmp_path, 'experiment = "pulsed_x0"\noutput_dir = "out"\n'))
    assert run.experiment == config.PULSED_X0
    assert run.emitter.kind is EmitterKind.NEUTRAL_EXCITON
    assert run.emitter.exciton.e_fss == 36.17
    assert math.isinf(run.emitter.exciton.t2_star)
    assert run.pump_polarizations == tuple(BasisLabel(p) for p in config.ALL_PUMPS)
    assert run.detection_bases == config.ALL_BASES
    assert run.detector.jitter_fwhm == 28.0
    assert run.analysis.fit_window == (40.0, 5000.0)
    assert run.seed == 1
    assert not run.is_sweep


def test_cw_defaults_to_r_pump(tmp_path):
    run = config.load_config(write(tmp_path, 'experiment = "cw_g2"\noutput_dir = "out"\n'))
    assert run.pump_polarizations == (BasisLabel.R,)
    assert run.emitter.is_trion
    assert run.emitter.trion.b_field == 0.2


def test_dotted_keys_and_tables_mix(tmp_path):
    text = 'experiment = "pulsed_trion"\noutput_dir = "out"\n\n[trion]\nb_field_t = 0.1\ng_hole = 0.6\n'
    run = config.load_config(write(tmp_path, text))
    assert run.emitter.trion.b_field == 0.1
    assert run.emitter.trion.g_hole == 0.6


def test_unknown_key_reports_line(tmp_path):
    path = write(tmp_path, 'experiment = "pulsed_trion"\noutput_dir = "out"\ntrion.gfactor = 0.5\n')
    with pytest.raises(ConfigError) as info:
        config.load_config(path)
    assert info.value.line == 3
    assert str(info.value) == f"{path}:3: unknown key 'trion.gfactor'"


def test_bad_value_reports_line(tmp_path):
    path = write(tmp_path, 'experiment = "pulsed_x0"\n\noutput_dir = "out"\nrun.n_pulses = -5\n')
    with pytest.raises(ConfigError) as info:
        config.load_config(path)
    assert info.value.line == 4
    assert "run.n_pulses" in str(info.value)


def test_missing_experiment(tmp_path):
    with pytest.raises(ConfigError, match="missing required key 'experiment'"):
        config.load_config(write(tmp_path, 'output_dir = "out"\n'))


def test_unknown_experiment(tmp_path):
    with pytest.raises(ConfigError, match="expected one of"):
        config.load_config(write(tmp_path, 'experiment = "biexciton"\noutput_dir = "out"\n'))


def test_toml_syntax_error(tmp_path):
    with pytest.raises(ConfigError) as info:
        config.load_config(write(tmp_path, 'experiment = "pulsed_x0"\noutput_dir = \n'))
    assert info.value.line == 2


def test_cw_rejects_linear_pump(tmp_path):
    text = 'experiment = "cw_g2"\noutput_dir = "out"\nrun.pump_polarizations = ["H"]\n'
    with pytest.raises(ConfigError) as info:
        config.load_config(write(tmp_path, text))
    assert info.value.line == 3


def test_bad_basis_pair(tmp_path):
    text = 'experiment = "pulsed_x0"\noutput_dir = "out"\nrun.detection_bases = ["HD"]\n'
    with pytest.raises(ConfigError, match="not orthogonal"):
        config.load_config(write(tmp_path, text))


def test_empty_fit_window(tmp_path):
    text = 'experiment = "pulsed_x0"\noutput_dir = "out"\nanalysis.fit_start_ps = 600.0\nanalysis.fit_stop_ps = 500.0\n'
    with pytest.raises(ConfigError, match="empty"):
        config.load_config(write(tmp_path, text))


def test_config_errors_are_validation_errors():
    assert issubclass(ConfigError, ValidationError)
    assert issubclass(ConfigError, ValueError)


def test_overrides(tmp_path):
    path = write(tmp_path, 'experiment = "pulsed_x0"\noutput_dir = "out"\nseed = 3\n')
    run = config.load_config(path, {"seed": 9, "output_dir": None})
    assert run.seed == 9
    assert run.output_dir == "out"


def test_manifest_reproduces_run(tmp_path):
    text = (
        'experiment = "pulsed_trion"\noutput_dir = "out"\nseed = 42\n'
        'run.pump_polarizations = ["R", "L"]\nemitter.depolarization = 0.34\n'
    )
    run = config.load_config(write(tmp_path, text))
    manifest = run.to_manifest()
    assert "seed = 42" in manifest
    assert 'run.pump_polarizations = ["R", "L"]' in manifest
    assert "exciton.t2_star_ns = inf" in manifest
    again = config.load_config(write(tmp_path, manifest, config.MANIFEST_NAME))
    assert again.values == run.values
    assert again.emitter == run.emitter


@pytest.mark.parametrize(
    "value,text",
    [(True, "true"), (0.2, "0.2"), (math.inf, "inf"), (("R", "L"), '["R", "L"]'), ('a"b', '"a\\"b"'), (7, "7")],
)
def test_format_value(value, text):
    assert config.format_value(value) == text


def test_sweep_for_field(tmp_path):
    text = 'experiment = "sweep_b"\noutput_dir = "sweep"\nsweep.b_fields_t = [0.03, 0.05]\n'
    run = config.load_config(write(tmp_path, text))
    assert run.is_sweep
    assert run.b_fields == (0.03, 0.05)
    child = run.for_field(1, 0.05)
    assert child.experiment == config.CW_G2
    assert child.emitter.trion.b_field == 0.05
    assert child.output_dir == os.path.join("sweep", "b_50mT")
    assert child.seed == config.derive_seed(run.seed, 1)
    assert child.seed != run.for_field(0, 0.03).seed


@pytest.mark.parametrize("b_field,name", [(0.03, "b_30mT"), (0.2, "b_200mT"), (0.0375, "b_37.5mT"), (0.0, "b_0mT")])
def test_field_dirname(b_field, name):
    assert config.field_dirname(b_field) == name


def test_peak_guesses():
    settings = config.AnalysisConfig(electron_guess_per_t=40.25, hole_guess_per_t=8.3)
    guesses = settings.peak_guesses(0.04)
    assert guesses["electron"] == pytest.approx(1.61)
    assert guesses["hole"] == pytest.approx(0.332)
    assert config.AnalysisConfig().peak_guesses(0.04) == {}


def test_presets():
    names = config.list_presets()
    assert names == ["paper-g2-sweep", "paper-trion-b200", "paper-x0"]
    for name in names:
        run = config.load_config(name)
        assert run.output_dir.startswith("out")
    with pytest.raises(ConfigError, match="Unknown preset"):
        config.preset_text("nothing")
    with pytest.raises(ConfigError, match="No such config"):
        config.load_config("nothing")


def test_trion_preset():
    run = config.load_config("paper-trion-b200")
    assert run.experiment == config.PULSED_TRION
    assert run.emitter.depolarization == 0.34
    assert run.pump_polarizations == (BasisLabel.R, BasisLabel.L)


SOURCES = ("measured", "fitted", "derived", "assumed")


@pytest.mark.parametrize("name", config.list_presets())
def test_preset_physical_values_name_their_source(name):
    comment = ""
    for line in config.preset_text(name).splitlines():
        if line.startswith("#"):
            comment += line
            continue
        key, _, rest = line.partition("=")
        if key.strip().split(".")[0] in ("exciton", "trion", "emitter", "detector"):
            note = rest.partition("#")[2] or comment
            assert note.strip(" #").split(":")[0] in SOURCES, line
        comment = ""
