"""
Subcommand implementations: simulate, analyze and gfactor.

Each command reads and writes files only through :mod:`exciton_dot_lab.files`
and returns the list of paths it wrote.
"""

import glob
import logging
import math
import os
import re
from typing import Optional

from joblib import Parallel, delayed

from . import analysis
from .config import (
    ALL_BASES,
    ALL_PUMPS,
    CW_G2,
    MANIFEST_NAME,
    AnalysisConfig,
    RunConfig,
    derive_seed,
    field_dirname,
    load_config,
)
from .exceptions import FitError, ValidationError
from .files import (
    RECORD_COLUMNS,
    TAG_COLUMNS,
    format_fit_result,
    parse_field_argument,
    read_fit_result,
    read_records,
    read_tags,
    render_template,
    sniff_columns,
    write_correlation,
    write_dop_trace,
    write_fit_result,
    write_gfactor_residuals,
    write_histogram,
    write_records,
    write_spectrum,
    write_tags,
    write_text,
)
from .montecarlo import PhotonRecords, build_histogram, simulate_cw_g2, simulate_pulsed
from .polarization import BasisLabel, detection_pair
from .traces import FitResult


logger = logging.getLogger(__name__)

THREADS_VARIABLE = "EDL_THREADS"

RECORDS_PATTERN = re.compile(r"records_pump-([HVDARL])_basis-([HVDARL]{2})\.csv$")
TAGS_NAME = "tags.csv"


def max_workers(n_tasks: int) -> int:
    """Concurrent sweep runs, capped by ``EDL_THREADS`` when set."""
    limit = os.environ.get(THREADS_VARIABLE)
    if limit:
        try:
            cap = int(limit)
        except ValueError:
            raise ValidationError(f"{THREADS_VARIABLE} must be an integer, got {limit!r}") from None
        if cap < 1:
            raise ValidationError(f"{THREADS_VARIABLE} must be >= 1, got {cap}")
    else:
        cap = os.cpu_count() or 1
    return max(1, min(n_tasks, cap))


def records_name(pump, basis: str) -> str:
    return f"records_pump-{BasisLabel.parse(pump)}_basis-{basis}.csv"


# ----------------------------------------------------------------------
# simulate


def cmd_simulate(config: RunConfig, gnuplot: bool = False) -> list[str]:
    """Generate records or tags for ``config`` plus a manifest that reproduces them."""
    os.makedirs(config.output_dir, exist_ok=True)
    if config.is_sweep:
        return _simulate_sweep(config, gnuplot)
    logger.info("Simulating %s into %s (seed %d)", config.experiment, config.output_dir, config.seed)
    written = []
    if config.experiment == CW_G2:
        tags = simulate_cw_g2(
            config.emitter, config.detector, config.detect_channel, config.duration, config.seed
        )
        written.append(write_tags(os.path.join(config.output_dir, TAGS_NAME), tags))
    else:
        for pump in config.pump_polarizations:
            for basis in config.detection_bases:
                records = simulate_pulsed(
                    config.emitter.with_pump(pump),
                    config.detector,
                    basis,
                    config.n_pulses,
                    derive_seed(config.seed, ALL_PUMPS.index(pump.value), ALL_BASES.index(basis)),
                    n_jobs=config.threads,
                )
                logger.info("pump %s basis %s: %d photons", pump, basis, len(records))
                written.append(write_records(os.path.join(config.output_dir, records_name(pump, basis)), records))
    written.append(write_text(os.path.join(config.output_dir, MANIFEST_NAME), config.to_manifest()))
    if gnuplot:
        written.append(_records_plot(config))
    return written


def _simulate_sweep(config: RunConfig, gnuplot: bool) -> list[str]:
    runs = [config.for_field(i, b) for i, b in enumerate(config.b_fields)]
    n_jobs = max_workers(len(runs))
    logger.info(
        "Sweeping %s over %d fields with %d worker(s)", config.sweep_base, len(runs), n_jobs
    )
    if n_jobs == 1:
        results = [cmd_simulate(run, gnuplot) for run in runs]
    else:
        results = Parallel(n_jobs=n_jobs)(delayed(cmd_simulate)(run, gnuplot) for run in runs)
    written = [path for paths in results for path in paths]
    written.append(write_text(os.path.join(config.output_dir, MANIFEST_NAME), config.to_manifest()))
    return written


def _records_plot(config: RunConfig) -> str:
    if config.experiment == CW_G2:
        context = {"channels": [], "tags": TAGS_NAME, "bin_width": config.analysis.correlation_bin}
    else:
        channels = []
        for pump in config.pump_polarizations:
            for basis in config.detection_bases:
                channels.extend((records_name(pump, basis), label.value) for label in detection_pair(basis))
        context = {"channels": channels, "tags": None, "bin_width": config.analysis.bin_width}
    return write_text(os.path.join(config.output_dir, "records.gp"), render_template("records.gp.j2", **context))


# ----------------------------------------------------------------------
# analyze


def cmd_analyze(
    path: str,
    config: Optional[RunConfig] = None,
    out: Optional[str] = None,
    gnuplot: bool = False,
) -> list[str]:
    """Run the analysis pipeline on a records/tags file or a simulate output directory.

    Without ``config`` the directory's manifest supplies the settings.
    Outputs go to ``out``, by default an ``analysis`` directory next to the
    input.
    """
    if os.path.isdir(path):
        if config is None:
            manifest = os.path.join(path, MANIFEST_NAME)
            if not os.path.isfile(manifest):
                raise ValidationError(f"{path} has no {MANIFEST_NAME}; pass --config")
            config = load_config(manifest)
        directory = path
    elif os.path.isfile(path):
        directory = os.path.dirname(path) or "."
    else:
        raise ValidationError(f"No such file or directory: {path}")
    out = out or os.path.join(directory, "analysis")
    os.makedirs(out, exist_ok=True)

    if config is not None and config.is_sweep:
        return _analyze_sweep(path, config, out, gnuplot)

    if os.path.isdir(path):
        tags = os.path.join(path, TAGS_NAME)
        records = sorted(glob.glob(os.path.join(path, "records_pump-*_basis-*.csv")))
        if os.path.isfile(tags):
            return _analyze_tags(tags, config, out, gnuplot)
        if not records:
            raise ValidationError(f"no records: {path} holds neither {TAGS_NAME} nor records files")
        return _analyze_records(records, config, out, gnuplot)

    columns = sniff_columns(path)
    if columns == TAG_COLUMNS:
        return _analyze_tags(path, config, out, gnuplot)
    if columns == RECORD_COLUMNS:
        return _analyze_records([path], config, out, gnuplot)
    raise ValidationError(f"{path}: header {','.join(columns)} is neither a records nor a tags file")


def _analyze_sweep(path: str, config: RunConfig, out: str, gnuplot: bool) -> list[str]:
    jobs = []
    for b_field in config.b_fields:
        subdir = os.path.join(path, field_dirname(b_field))
        if not os.path.isdir(subdir):
            raise ValidationError(f"Sweep directory {subdir} is missing")
        jobs.append((subdir, os.path.join(out, field_dirname(b_field))))
    n_jobs = max_workers(len(jobs))
    if n_jobs == 1:
        results = [cmd_analyze(subdir, None, sub_out, gnuplot) for subdir, sub_out in jobs]
    else:
        results = Parallel(n_jobs=n_jobs)(
            delayed(cmd_analyze)(subdir, None, sub_out, gnuplot) for subdir, sub_out in jobs
        )
    return [p for paths in results for p in paths]


def _analyze_records(paths: list[str], config: Optional[RunConfig], out: str, gnuplot: bool) -> list[str]:
    settings = config.analysis if config is not None else AnalysisConfig()
    trion = config is not None and config.emitter.is_trion
    component = "hole" if trion else "exciton"
    b_field = config.emitter.trion.b_field if trion else None
    time_range = (0.0, settings.histogram_stop)
    written = []
    fits: dict[tuple[str, str], FitResult] = {}
    by_pump: dict[str, list] = {}
    circular: dict[str, PhotonRecords] = {}

    for path in paths:
        records = read_records(path)
        if not len(records):
            raise ValidationError(f"no records in {path}")
        match = RECORDS_PATTERN.search(os.path.basename(path))
        if match:
            pump, basis = match.groups()
        else:
            present = sorted(set(records.channel.tolist()))
            pump, basis = None, _basis_from_channels(present, path)
        co, cross = detection_pair(basis)
        stem = os.path.basename(path)[len("records_"):-len(".csv")] if match else _stem(path)
        by_pump.setdefault(pump, []).append(records)
        if basis == "RL" and pump in ("R", "L"):
            circular[pump] = records

        hist_co = build_histogram(records, settings.bin_width, time_range, co, settings.use_emit_time)
        hist_cross = build_histogram(records, settings.bin_width, time_range, cross, settings.use_emit_time)
        written.append(write_histogram(os.path.join(out, f"hist_{stem}_{co}.csv"), hist_co))
        written.append(write_histogram(os.path.join(out, f"hist_{stem}_{cross}.csv"), hist_cross))
        trace = analysis.dop_trace(hist_co, hist_cross)
        trace_path = write_dop_trace(os.path.join(out, f"dop_{stem}.csv"), trace)
        written.append(trace_path)

        fit = _fit_dop(trace, settings, label=stem)
        if fit is not None:
            fit.metadata.update(component=component, basis=basis)
            if pump:
                fit.metadata["pump"] = pump
            if b_field is not None:
                fit.metadata["b_field_t"] = repr(b_field)
            fits[(pump, basis)] = fit
            written.append(write_fit_result(os.path.join(out, f"fit_{stem}.txt"), fit))
        if gnuplot:
            written.append(_dop_plot(out, os.path.basename(trace_path), stem, fit))

    for pump, parts in by_pump.items():
        written.extend(_lifetime(parts, settings, out, pump))
    written.extend(_memory_and_phases(circular, fits, out))
    return written


def _stem(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def _basis_from_channels(present: list[str], path: str) -> str:
    for basis in ALL_BASES:
        if set(present) <= set(basis):
            return basis
    raise ValidationError(f"{path}: channels {', '.join(present)} do not form one analyzer basis")


def _fit_dop(trace, settings, label: str) -> Optional[FitResult]:
    try:
        fit = analysis.fit_damped_cosine(trace, form=analysis.PULSED, window=settings.fit_window)
    except FitError as exc:
        logger.warning("%s: %s", label, exc)
        return None
    if not fit.converged:
        logger.warning("%s: damped-cosine fit did not converge", label)
    return fit


def _lifetime(parts, settings, out: str, pump) -> list[str]:
    records = PhotonRecords.concatenate(parts)
    hist = build_histogram(records, settings.bin_width, (0.0, settings.histogram_stop), None, settings.use_emit_time)
    name = f"pump-{pump}" if pump else "all"
    written = [write_histogram(os.path.join(out, f"lifetime_{name}.csv"), hist)]
    try:
        fit = analysis.fit_exponential_lifetime(hist, settings.fit_window)
    except FitError as exc:
        logger.warning("Lifetime fit for %s: %s", name, exc)
        return written
    written.append(write_fit_result(os.path.join(out, f"lifetime_{name}.txt"), fit))
    return written


def _memory_and_phases(circular, fits, out: str) -> list[str]:
    written = []
    if "R" in circular and "L" in circular:
        memory, error = analysis.polarization_memory(circular["R"], circular["L"])
        fit = FitResult(
            params={"polarization_memory": memory},
            errors={"polarization_memory": error},
            chi2_reduced=math.nan,
            converged=True,
        )
        written.append(write_fit_result(os.path.join(out, "polarization_memory.txt"), fit))

    writing = {
        pump: fit
        for (pump, basis), fit in fits.items()
        if basis == "RL" and pump in ("R", "D", "L", "A") and fit.converged
    }
    if "R" in writing and len(writing) > 1:
        lags = analysis.qubit_writing_phases(writing)
        fit = FitResult(
            params={f"lag_{label}": value for label, value in lags.items()},
            errors={
                f"lag_{label}": math.hypot(writing[label.value].error("phi"), writing["R"].error("phi"))
                for label in lags
            },
            chi2_reduced=math.nan,
            converged=True,
        )
        written.append(write_fit_result(os.path.join(out, "writing_phases.txt"), fit))
    return written


def _dop_plot(out: str, trace_file: str, title: str, fit: Optional[FitResult]) -> str:
    context = None
    if fit is not None and fit.converged:
        context = {
            name: repr(fit[name]) if math.isfinite(fit[name]) else "1e300"
            for name in ("amplitude", "omega", "t2_star", "phi", "offset")
        }
    script = render_template("dop.gp.j2", trace=trace_file, title=title, fit=context)
    return write_text(os.path.join(out, f"dop_{title}.gp"), script)


def _analyze_tags(path: str, config: Optional[RunConfig], out: str, gnuplot: bool) -> list[str]:
    settings = config.analysis if config is not None else AnalysisConfig()
    b_field = config.emitter.trion.b_field if config is not None and config.emitter.is_trion else 0.0
    tags = read_tags(path)
    if tags.size < 2:
        raise ValidationError(f"no records: {path} holds {tags.size} time tag(s)")
    result = analysis.analyze_g2(
        tags,
        settings.correlation_bin,
        settings.max_delay,
        peak_guesses=settings.peak_guesses(b_field),
        refine=settings.joint_fit,
        **settings.isolate_options(),
    )
    written = [
        write_correlation(os.path.join(out, "g2_raw.csv"), result.raw),
        write_correlation(os.path.join(out, "g2.csv"), result.normalized),
        write_spectrum(os.path.join(out, "spectrum.csv"), result.spectrum),
    ]
    if result.normalized.normalization is not None:
        written.append(write_fit_result(os.path.join(out, "g2_normalization.txt"), result.normalized.normalization))
    plotted = []
    for name, (component, fit) in result.components.items():
        fit.metadata.update(component=name, b_field_t=repr(b_field))
        written.append(write_correlation(os.path.join(out, f"component_{name}.csv"), component.trace))
        written.append(write_fit_result(os.path.join(out, f"fit_{name}.txt"), fit))
        plotted.append((name, f"component_{name}.csv"))
    if not result.components:
        logger.warning("%s: no Larmor component found", path)
    if gnuplot:
        script = render_template("g2.gp.j2", correlation="g2.csv", spectrum="spectrum.csv", components=plotted)
        written.append(write_text(os.path.join(out, "g2.gp"), script))
    return written


# ----------------------------------------------------------------------
# gfactor


def collect_fit_inputs(arguments: list[str]) -> list[tuple[str, Optional[float]]]:
    """Expand ``FILE[@B]`` arguments; a directory stands for every fit file below it."""
    inputs = []
    for argument in arguments:
        path, b_field = parse_field_argument(argument)
        if os.path.isdir(path):
            found = sorted(glob.glob(os.path.join(path, "**", "fit_*.txt"), recursive=True))
            if not found:
                raise ValidationError(f"No fit_*.txt files below {path}")
            inputs.extend((p, b_field) for p in found)
        else:
            inputs.append((path, b_field))
    return inputs


def cmd_gfactor(arguments: list[str], out: str = ".", weighted: bool = True, gnuplot: bool = False) -> list[str]:
    """Linear fit of splitting against field for each labelled component.

    Args:
        arguments: FitResult files as ``FILE`` or ``FILE@B`` (B in T);
            without ``@B`` the file's ``b_field_t`` metadata is used
        out: Report directory
        weighted: Weight points by their splitting errors
    """
    inputs = collect_fit_inputs(arguments)
    if len(inputs) < 2:
        raise ValidationError(f"A g-factor fit needs at least 2 fit results, got {len(inputs)}")

    groups: dict[str, list[analysis.SplittingPoint]] = {}
    for path, b_field in inputs:
        fit = read_fit_result(path)
        if b_field is None:
            if "b_field_t" not in fit.metadata:
                raise ValidationError(f"{path}: missing B metadata; pass it as {path}@B")
            b_field = float(fit.metadata["b_field_t"])
        if not fit.converged or "amplitude_consistent_with_zero" in fit.flags:
            logger.warning("Skipping %s: no resolved oscillation", path)
            continue
        if "splitting_uev" not in fit.params:
            raise ValidationError(f"{path}: no splitting_uev parameter")
        error = fit.error("splitting_uev")
        point = analysis.SplittingPoint(b_field, fit["splitting_uev"], error if math.isfinite(error) else 0.0)
        groups.setdefault(fit.metadata.get("component", "component"), []).append(point)

    usable = {name: points for name, points in groups.items() if len(points) >= 2}
    if not usable:
        raise ValidationError("A g-factor fit needs at least 2 usable points for one component")
    os.makedirs(out, exist_ok=True)
    written = []
    for name, points in sorted(usable.items()):
        points.sort()
        fit = analysis.gfactor_fit(points, weighted=weighted)
        fit.metadata["component"] = name
        residuals = analysis.gfactor_residuals(points, fit)
        logger.info("%s: |g| = %.4f +- %.4f from %d points", name, fit["g"], fit.error("g"), len(points))
        report = render_template(
            "gfactor_report.txt.j2",
            fit_text=format_fit_result(fit),
            g=fit["g"],
            g_err=fit.error("g"),
            intercept=fit["intercept"],
            intercept_err=fit.error("intercept"),
            residuals=residuals,
        )
        written.append(write_text(os.path.join(out, f"gfactor_{name}.txt"), report))
        written.append(write_gfactor_residuals(os.path.join(out, f"residuals_{name}.csv"), points, residuals))
        if gnuplot:
            script = render_template(
                "gfactor.gp.j2",
                residuals=f"residuals_{name}.csv",
                component=name,
                slope=repr(fit["slope"]),
                intercept=repr(fit["intercept"]),
                g=fit["g"],
            )
            written.append(write_text(os.path.join(out, f"gfactor_{name}.gp"), script))
    for name, points in groups.items():
        if name not in usable:
            logger.warning("Component %s has a single point; no g-factor fitted", name)
    return written
