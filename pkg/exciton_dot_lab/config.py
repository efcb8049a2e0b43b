"""
Run configuration: a flat table of dotted ``key = value`` settings.

Files are TOML restricted to one assignment per line, e.g.::

    experiment = "pulsed_trion"
    trion.b_field_t = 0.2   # T
    run.pump_polarizations = ["R", "L"]

Every key has a parser and a documented default except ``experiment`` and
``output_dir``. Unknown keys are an error reported at the line where they
appear.
"""

import logging
import math
import os
import re
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Callable, Mapping, NamedTuple, Optional

import numpy as np

from .dynamics import ExcitonParams, TrionParams
from .exceptions import ConfigError, ValidationError
from .montecarlo import DetectorConfig, EmitterConfig, EmitterKind
from .polarization import BasisLabel, detection_pair


logger = logging.getLogger(__name__)

PULSED_X0 = "pulsed_x0"
PULSED_TRION = "pulsed_trion"
CW_G2 = "cw_g2"
SWEEP_B = "sweep_b"
EXPERIMENTS = (PULSED_X0, PULSED_TRION, CW_G2, SWEEP_B)
SWEEP_BASES = (PULSED_TRION, CW_G2)

ALL_PUMPS = ("H", "V", "D", "A", "R", "L")
ALL_BASES = ("HV", "DA", "RL")

MANIFEST_NAME = "manifest.toml"


# ----------------------------------------------------------------------
# Value parsers


def _number(value) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"expected a number, got {value!r}")
    return float(value)


def _positive(value) -> float:
    value = _number(value)
    if not value > 0:
        raise ValueError(f"expected a number > 0, got {value!r}")
    return value


def _nonnegative(value) -> float:
    value = _number(value)
    if not value >= 0:
        raise ValueError(f"expected a number >= 0, got {value!r}")
    return value


def _probability(value) -> float:
    value = _number(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"expected a probability in [0, 1], got {value!r}")
    return value


def _count(value) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError(f"expected an integer, got {value!r}")
    if value < 1:
        raise ValueError(f"expected an integer >= 1, got {value!r}")
    return value


def _seed(value) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise ValueError(f"expected a nonnegative integer, got {value!r}")
    return value


def _flag(value) -> bool:
    if not isinstance(value, bool):
        raise ValueError(f"expected true or false, got {value!r}")
    return value


def _text(value) -> str:
    if not isinstance(value, str):
        raise ValueError(f"expected a quoted string, got {value!r}")
    return value


def _choice(*options) -> Callable:
    def parse(value) -> str:
        value = _text(value)
        if value not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {value!r}")
        return value

    return parse


def _channel(value) -> str:
    return BasisLabel.parse(_text(value)).value


def _pumps(value) -> Optional[tuple]:
    if value is None:
        return None
    if not isinstance(value, (list, tuple)) or not value:
        raise ValueError(f"expected a non-empty list of polarizations, got {value!r}")
    return tuple(BasisLabel.parse(_text(v)).value for v in value)


def _bases(value) -> tuple:
    if not isinstance(value, (list, tuple)) or not value:
        raise ValueError(f"expected a non-empty list of basis pairs, got {value!r}")
    return tuple("".join(p.value for p in detection_pair(_text(v))) for v in value)


def _fields(value) -> tuple:
    if not isinstance(value, (list, tuple)) or not value:
        raise ValueError(f"expected a non-empty list of fields, got {value!r}")
    return tuple(_nonnegative(v) for v in value)


class Setting(NamedTuple):
    parse: Callable[[Any], Any]
    default: Any
    doc: str


REQUIRED = object()

SETTINGS: dict[str, Setting] = {
    "experiment": Setting(_choice(*EXPERIMENTS), REQUIRED, "pulsed_x0, pulsed_trion, cw_g2 or sweep_b"),
    "output_dir": Setting(_text, REQUIRED, "directory receiving every output file"),
    "seed": Setting(_seed, 1, "run seed"),
    "emitter.detection_efficiency": Setting(_probability, 1.0, "probability an emitted photon is recorded"),
    "emitter.depolarization": Setting(_probability, 0.0, "probability a photon leaves unpolarized"),
    "emitter.init_leakage_rad": Setting(_number, 0.0, "rotation about z of the written Bloch vector"),
    "emitter.pump_rate_per_ns": Setting(_positive, 0.5, "CW excitation rate, 1/ns"),
    "exciton.e_fss_uev": Setting(_nonnegative, 36.17, "fine-structure splitting, ueV"),
    "exciton.lifetime_ps": Setting(_positive, 1015.0, "radiative lifetime, ps"),
    "exciton.t2_star_ns": Setting(_positive, math.inf, "dephasing time, ns"),
    "trion.g_hole": Setting(_positive, 0.593, "in-plane hole |g|"),
    "trion.g_electron": Setting(_positive, 2.876, "in-plane electron |g|"),
    "trion.b_field_t": Setting(_nonnegative, 0.2, "in-plane field, T"),
    "trion.lifetime_ps": Setting(_positive, 1135.0, "radiative lifetime, ps"),
    "trion.t2_star_hole_ns": Setting(_positive, 8.6, "hole dephasing time, ns"),
    "trion.t2_star_electron_ns": Setting(_positive, 2.5, "electron dephasing time, ns"),
    "detector.jitter_fwhm_ps": Setting(_nonnegative, 28.0, "Gaussian timing response FWHM, ps"),
    "detector.dead_time_ps": Setting(_nonnegative, 0.0, "dead time after each detection, ps"),
    "detector.analyzer_rotation_rad": Setting(_number, 0.0, "analyzer frame rotation about the optical axis"),
    "run.pump_polarizations": Setting(_pumps, None, "pump polarizations; all six for pulsed runs, R for CW"),
    "run.detection_bases": Setting(_bases, ALL_BASES, "analyzer pairs for pulsed runs"),
    "run.detect_channel": Setting(_channel, "R", "CW analyzer channel, R or L"),
    "run.n_pulses": Setting(_count, 1_000_000, "pulses per pump and basis"),
    "run.duration_ns": Setting(_positive, 2.0e6, "CW integration time, ns"),
    "run.threads": Setting(_count, 1, "concurrent blocks inside one pulsed run"),
    "sweep.base": Setting(_choice(*SWEEP_BASES), CW_G2, "experiment repeated at every field"),
    "sweep.b_fields_t": Setting(_fields, (0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09), "fields, T"),
    "analysis.bin_width_ps": Setting(_positive, 8.0, "lifetime histogram bin, ps"),
    "analysis.histogram_stop_ps": Setting(_positive, 6000.0, "lifetime histogram range end, ps"),
    "analysis.fit_start_ps": Setting(_nonnegative, 40.0, "fit window start, ps"),
    "analysis.fit_stop_ps": Setting(_positive, 5000.0, "fit window end, ps"),
    "analysis.use_emit_time": Setting(_flag, False, "histogram emit times instead of detect times"),
    "analysis.correlation_bin_ps": Setting(_positive, 20.0, "g2 bin width, ps"),
    "analysis.max_delay_ns": Setting(_positive, 10.0, "g2 delay range, ns"),
    "analysis.dc_cutoff_ghz": Setting(_nonnegative, 0.2, "spectral search starts above this, GHz"),
    "analysis.noise_threshold": Setting(_positive, 3.0, "detection threshold in noise-floor units"),
    "analysis.window_sigmas": Setting(_positive, 2.0, "pass-band half-width in Gaussian widths"),
    "analysis.joint_fit": Setting(_flag, True, "refine all g2 components with one fit of the raw correlation"),
    "analysis.electron_guess_ghz_per_t": Setting(_nonnegative, 0.0, "electron frequency per tesla; 0 searches"),
    "analysis.hole_guess_ghz_per_t": Setting(_nonnegative, 0.0, "hole frequency per tesla; 0 searches"),
    "analysis.weighted": Setting(_flag, True, "weight the g-factor regression by point errors"),
}


# ----------------------------------------------------------------------
# Resolved configuration


@dataclass(frozen=True)
class AnalysisConfig:
    bin_width: float = 8.0  # ps
    histogram_stop: float = 6000.0  # ps
    fit_window: tuple[float, float] = (40.0, 5000.0)  # ps
    use_emit_time: bool = False
    correlation_bin: float = 20.0  # ps
    max_delay: float = 10.0  # ns
    dc_cutoff: float = 0.2  # GHz
    noise_threshold: float = 3.0
    window_sigmas: float = 2.0
    joint_fit: bool = True
    electron_guess_per_t: float = 0.0  # GHz / T
    hole_guess_per_t: float = 0.0  # GHz / T
    weighted: bool = True

    def __post_init__(self):
        lo, hi = self.fit_window
        if not hi > lo:
            raise ValidationError(f"Fit window ({lo}, {hi}) is empty")

    def peak_guesses(self, b_field: float) -> dict[str, float]:
        """Expected component frequencies at ``b_field``; empty means search."""
        guesses = {}
        if self.electron_guess_per_t > 0 and b_field > 0:
            guesses["electron"] = self.electron_guess_per_t * b_field
        if self.hole_guess_per_t > 0 and b_field > 0:
            guesses["hole"] = self.hole_guess_per_t * b_field
        return guesses

    def isolate_options(self) -> dict[str, float]:
        return {
            "dc_cutoff": self.dc_cutoff,
            "threshold": self.noise_threshold,
            "window_sigmas": self.window_sigmas,
        }


@dataclass(frozen=True)
class RunConfig:
    """A fully resolved run; ``values`` keeps every setting, defaults expanded."""

    experiment: str
    output_dir: str
    seed: int
    emitter: EmitterConfig
    detector: DetectorConfig
    pump_polarizations: tuple[BasisLabel, ...]
    detection_bases: tuple[str, ...]
    detect_channel: BasisLabel
    n_pulses: int
    duration: float  # ns
    threads: int
    sweep_base: str
    b_fields: tuple[float, ...]
    analysis: AnalysisConfig
    values: Mapping[str, Any] = field(default_factory=dict, compare=False)

    @property
    def is_sweep(self) -> bool:
        return self.experiment == SWEEP_B

    def to_manifest(self) -> str:
        """The resolved settings as a config file that reproduces this run."""
        from .files import render_template

        sections: dict[str, list[tuple[str, str]]] = {}
        for key in SETTINGS:
            section, _, name = key.rpartition(".")
            sections.setdefault(section, []).append((key, format_value(self.values[key])))
        return render_template("manifest.toml.j2", sections=sections)

    def for_field(self, index: int, b_field: float) -> "RunConfig":
        """The single-field run of a sweep, written to its own subdirectory."""
        values = dict(self.values)
        values.update(
            {
                "experiment": self.sweep_base,
                "output_dir": os.path.join(self.output_dir, field_dirname(b_field)),
                "seed": derive_seed(self.seed, index),
                "trion.b_field_t": b_field,
            }
        )
        return resolve(values)


def field_dirname(b_field: float) -> str:
    return f"b_{round(b_field * 1e3, 3):g}mT"


def derive_seed(seed: int, *keys: int) -> int:
    """Independent child seed for one run inside a larger job."""
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def format_value(value) -> str:
    """TOML rendering of a setting value."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(format_value(v) for v in value) + "]"
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


def resolve(values: Mapping[str, Any], path: str = None, lines: Mapping[str, int] = None) -> RunConfig:
    """Validate raw settings and build the :class:`RunConfig` tree.

    Args:
        values: Flat dotted-key settings
        path: Source file, for error messages
        lines: Line number of each key in ``path``
    """
    lines = lines or {}
    resolved = {}
    for key, value in values.items():
        if key not in SETTINGS:
            raise ConfigError(f"unknown key '{key}'", path, lines.get(key))
        try:
            resolved[key] = SETTINGS[key].parse(value)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}", path, lines.get(key)) from None
    for key, setting in SETTINGS.items():
        if key not in resolved:
            if setting.default is REQUIRED:
                raise ConfigError(f"missing required key '{key}'", path)
            resolved[key] = setting.default

    experiment = resolved["experiment"]
    base = resolved["sweep.base"] if experiment == SWEEP_B else experiment
    cw = base == CW_G2
    if resolved["run.pump_polarizations"] is None:
        resolved["run.pump_polarizations"] = ("R",) if cw else ALL_PUMPS
    pumps = tuple(BasisLabel.parse(p) for p in resolved["run.pump_polarizations"])
    if cw and (len(pumps) != 1 or pumps[0] not in (BasisLabel.R, BasisLabel.L)):
        raise ConfigError(
            "run.pump_polarizations: CW runs take exactly one circular pump, R or L",
            path,
            lines.get("run.pump_polarizations"),
        )

    try:
        if base == PULSED_X0:
            kind, exciton, trion = EmitterKind.NEUTRAL_EXCITON, _exciton(resolved), None
        else:
            kind, exciton, trion = EmitterKind.NEGATIVE_TRION, None, _trion(resolved)
        emitter = EmitterConfig(
            kind=kind,
            exciton=exciton,
            trion=trion,
            pump_rate=resolved["emitter.pump_rate_per_ns"],
            pump_polarization=pumps[0],
            detection_efficiency=resolved["emitter.detection_efficiency"],
            depolarization=resolved["emitter.depolarization"],
            init_leakage=resolved["emitter.init_leakage_rad"],
        )
        detector = DetectorConfig(
            jitter_fwhm=resolved["detector.jitter_fwhm_ps"],
            dead_time=resolved["detector.dead_time_ps"],
            analyzer_rotation=resolved["detector.analyzer_rotation_rad"],
        )
        analysis = AnalysisConfig(
            bin_width=resolved["analysis.bin_width_ps"],
            histogram_stop=resolved["analysis.histogram_stop_ps"],
            fit_window=(resolved["analysis.fit_start_ps"], resolved["analysis.fit_stop_ps"]),
            use_emit_time=resolved["analysis.use_emit_time"],
            correlation_bin=resolved["analysis.correlation_bin_ps"],
            max_delay=resolved["analysis.max_delay_ns"],
            dc_cutoff=resolved["analysis.dc_cutoff_ghz"],
            noise_threshold=resolved["analysis.noise_threshold"],
            window_sigmas=resolved["analysis.window_sigmas"],
            joint_fit=resolved["analysis.joint_fit"],
            electron_guess_per_t=resolved["analysis.electron_guess_ghz_per_t"],
            hole_guess_per_t=resolved["analysis.hole_guess_ghz_per_t"],
            weighted=resolved["analysis.weighted"],
        )
    except ValidationError as exc:
        raise ConfigError(str(exc), path) from None

    if cw and resolved["run.detect_channel"] not in ("R", "L"):
        raise ConfigError("run.detect_channel must be R or L", path, lines.get("run.detect_channel"))

    return RunConfig(
        experiment=experiment,
        output_dir=resolved["output_dir"],
        seed=resolved["seed"],
        emitter=emitter,
        detector=detector,
        pump_polarizations=pumps,
        detection_bases=resolved["run.detection_bases"],
        detect_channel=BasisLabel.parse(resolved["run.detect_channel"]),
        n_pulses=resolved["run.n_pulses"],
        duration=resolved["run.duration_ns"],
        threads=resolved["run.threads"],
        sweep_base=resolved["sweep.base"],
        b_fields=resolved["sweep.b_fields_t"],
        analysis=analysis,
        values=resolved,
    )


def _exciton(resolved) -> ExcitonParams:
    return ExcitonParams(
        e_fss=resolved["exciton.e_fss_uev"],
        lifetime_tau=resolved["exciton.lifetime_ps"],
        t2_star=resolved["exciton.t2_star_ns"],
    )


def _trion(resolved) -> TrionParams:
    return TrionParams(
        g_hole=resolved["trion.g_hole"],
        g_electron=resolved["trion.g_electron"],
        b_field=resolved["trion.b_field_t"],
        lifetime_tau=resolved["trion.lifetime_ps"],
        t2_star_hole=resolved["trion.t2_star_hole_ns"],
        t2_star_electron=resolved["trion.t2_star_electron_ns"],
    )


# ----------------------------------------------------------------------
# Reading


_TOML_LINE = re.compile(r"at line (\d+)")
_KEY_LINE = re.compile(r"^\s*([A-Za-z0-9_.\-\"' ]+?)\s*=")


def _flatten(table: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    flat = {}
    for key, value in table.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, f"{name}."))
        else:
            flat[name] = value
    return flat


def _key_lines(text: str) -> dict[str, int]:
    lines = {}
    for number, line in enumerate(text.splitlines(), start=1):
        match = _KEY_LINE.match(line)
        if match:
            key = re.sub(r"\s*\.\s*", ".", match.group(1)).replace('"', "").replace("'", "")
            lines.setdefault(key, number)
    return lines


def parse_config(text: str, path: str = None) -> tuple[dict[str, Any], dict[str, int]]:
    """Parse config text into flat settings and the line of each key."""
    try:
        table = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        match = _TOML_LINE.search(str(exc))
        message = str(exc).split(" (at line")[0]
        raise ConfigError(message, path, int(match.group(1)) if match else None) from None
    return _flatten(table), _key_lines(text)


def load_config(source: str, overrides: Mapping[str, Any] = None) -> RunConfig:
    """Read a config file or a preset by name and resolve it.

    Args:
        source: Path to a config file, or a preset name such as ``paper-x0``
        overrides: Settings taking precedence over the file (e.g. ``seed``)
    """
    if os.path.isfile(source):
        path = source
        with open(path, encoding="utf-8") as f:
            text = f.read()
    elif source in list_presets():
        path = f"preset:{source}"
        text = preset_text(source)
    else:
        raise ConfigError(f"No such config file or preset: {source}")
    values, lines = parse_config(text, path)
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
            lines.pop(key, None)
    config = resolve(values, path, lines)
    logger.debug("Loaded %s config from %s", config.experiment, path)
    return config


# ----------------------------------------------------------------------
# Presets


def _preset_dir():
    return resources.files("exciton_dot_lab").joinpath("presets")


def list_presets() -> list[str]:
    return sorted(
        entry.name[: -len(".toml")]
        for entry in _preset_dir().iterdir()
        if entry.name.endswith(".toml")
    )


def preset_text(name: str) -> str:
    if name not in list_presets():
        raise ConfigError(f"Unknown preset '{name}'; available: {', '.join(list_presets())}")
    return _preset_dir().joinpath(f"{name}.toml").read_text(encoding="utf-8")
