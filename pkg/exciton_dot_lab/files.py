"""
Reading and writing of every file the package produces.

CSV files use ``.`` as decimal separator and LF line endings and are written
atomically: the content goes to a temporary file next to the destination,
which is then renamed over it.
"""

import logging
import math
import os
import re
import tempfile
from typing import Union

import jinja2
import numpy as np
import pandas as pd

from .exceptions import DataFormatError, ValidationError
from .montecarlo import PhotonRecords
from .polarization import BasisLabel
from .traces import CorrelationTrace, DopTrace, FitResult, FrequencySpectrum, Histogram


logger = logging.getLogger(__name__)

RECORD_COLUMNS = ["trajectory_id", "pulse_index", "emit_time_ps", "detect_time_ps", "channel"]
TAG_COLUMNS = ["detect_time_ps"]
HISTOGRAM_COLUMNS = ["bin_center_ps", "count"]
DOP_COLUMNS = ["time_ps", "dop", "dop_err"]
SPECTRUM_COLUMNS = ["freq_ghz", "re", "im"]
CORRELATION_COLUMNS = ["delay_ps", "value", "error"]

TIME_FORMAT = "%.4f"

templates_dir = os.path.join(os.path.dirname(os.path.abspath(__file__)), "templates")
_environment = jinja2.Environment(
    loader=jinja2.FileSystemLoader([templates_dir]),
    undefined=jinja2.StrictUndefined,
    keep_trailing_newline=True,
    trim_blocks=True,
    lstrip_blocks=True,
)


def render_template(name: str, **context) -> str:
    return _environment.get_template(name).render(**context)


# ----------------------------------------------------------------------
# Atomic writes


def write_text(path: str, text: str) -> str:
    """Write ``text`` to ``path`` atomically and return the path."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    handle, tmp = tempfile.mkstemp(dir=directory, prefix=".", suffix=".tmp")
    try:
        with os.fdopen(handle, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    logger.info("Wrote %s", path)
    return path


def _write_frame(path: str, frame: pd.DataFrame, float_format: str = "%.10g") -> str:
    text = frame.to_csv(index=False, lineterminator="\n", float_format=float_format, na_rep="nan")
    return write_text(path, text)


def write_records(path: str, records: PhotonRecords) -> str:
    frame = pd.DataFrame(
        {
            "trajectory_id": records.trajectory_id,
            "pulse_index": records.pulse_index,
            "emit_time_ps": records.emit_time,
            "detect_time_ps": records.detect_time,
            "channel": records.channel.astype(str),
        },
        columns=RECORD_COLUMNS,
    )
    return _write_frame(path, frame, TIME_FORMAT)


def write_tags(path: str, tags: np.ndarray) -> str:
    return _write_frame(path, pd.DataFrame({"detect_time_ps": np.asarray(tags, dtype=float)}), TIME_FORMAT)


def write_histogram(path: str, hist: Histogram) -> str:
    return _write_frame(path, pd.DataFrame({"bin_center_ps": hist.bin_centers, "count": hist.counts}))


def write_dop_trace(path: str, trace: DopTrace) -> str:
    return _write_frame(
        path, pd.DataFrame({"time_ps": trace.bin_center, "dop": trace.dop, "dop_err": trace.dop_err})
    )


def write_spectrum(path: str, spectrum: FrequencySpectrum) -> str:
    return _write_frame(
        path,
        pd.DataFrame(
            {"freq_ghz": spectrum.freq, "re": spectrum.amplitude.real, "im": spectrum.amplitude.imag}
        ),
    )


def write_correlation(path: str, trace: CorrelationTrace) -> str:
    error = trace.error if trace.error is not None else np.full(len(trace), np.nan)
    return _write_frame(path, pd.DataFrame({"delay_ps": trace.delay, "value": trace.value, "error": error}))


# ----------------------------------------------------------------------
# CSV readers


def _read_frame(path: str, columns: list[str]) -> pd.DataFrame:
    """Read a CSV as text and check the header; data start on file line 2."""
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=True)
    except pd.errors.EmptyDataError:
        raise DataFormatError("empty file, expected header " + ",".join(columns), path, 1) from None
    except pd.errors.ParserError as exc:
        match = re.search(r"line (\d+)", str(exc))
        raise DataFormatError(f"malformed CSV: {exc}", path, int(match.group(1)) if match else None) from None
    if list(frame.columns) != columns:
        raise DataFormatError(
            f"expected header {','.join(columns)}, got {','.join(map(str, frame.columns))}", path, 1
        )
    return frame


def _numeric(frame: pd.DataFrame, column: str, path: str, integer: bool = False) -> np.ndarray:
    raw = frame[column].str.strip()
    values = pd.to_numeric(raw, errors="coerce")
    bad = values.isna() & ~raw.str.lower().isin(["nan"])
    if integer:
        bad |= values.notna() & (values != values.round())
    if bad.any():
        index = int(np.flatnonzero(bad.to_numpy())[0])
        raise DataFormatError(
            f"expected {'an integer' if integer else 'a number'}, got {raw.iloc[index]!r}",
            path,
            index + 2,
            column,
        )
    return values.to_numpy(dtype=np.int64 if integer else float)


def read_records(path: str) -> PhotonRecords:
    frame = _read_frame(path, RECORD_COLUMNS)
    channel = frame["channel"].str.strip()
    valid = channel.isin([label.value for label in BasisLabel])
    if not valid.all():
        index = int(np.flatnonzero(~valid.to_numpy())[0])
        raise DataFormatError(
            f"expected one of H, V, D, A, R, L, got {channel.iloc[index]!r}", path, index + 2, "channel"
        )
    return PhotonRecords(
        trajectory_id=_numeric(frame, "trajectory_id", path, integer=True),
        pulse_index=_numeric(frame, "pulse_index", path, integer=True),
        emit_time=_numeric(frame, "emit_time_ps", path),
        detect_time=_numeric(frame, "detect_time_ps", path),
        channel=channel.to_numpy(dtype="<U1"),
    )


def read_tags(path: str) -> np.ndarray:
    tags = _numeric(_read_frame(path, TAG_COLUMNS), "detect_time_ps", path)
    if np.any(np.diff(tags) < 0):
        row = int(np.flatnonzero(np.diff(tags) < 0)[0]) + 3
        raise DataFormatError("time tags must be sorted", path, row, "detect_time_ps")
    return tags


def read_dop_trace(path: str) -> DopTrace:
    frame = _read_frame(path, DOP_COLUMNS)
    return DopTrace(*(_numeric(frame, name, path) for name in DOP_COLUMNS))


def read_correlation(path: str) -> CorrelationTrace:
    frame = _read_frame(path, CORRELATION_COLUMNS)
    error = _numeric(frame, "error", path)
    return CorrelationTrace(
        delay=_numeric(frame, "delay_ps", path),
        value=_numeric(frame, "value", path),
        normalized=True,
        error=None if np.all(np.isnan(error)) else error,
    )


def sniff_columns(path: str) -> list[str]:
    """Header of a CSV file, used to tell records from tags."""
    with open(path, encoding="utf-8") as f:
        return [name.strip() for name in f.readline().strip().split(",")]


# ----------------------------------------------------------------------
# Fit results


def _number_text(value: float) -> str:
    return repr(float(value))


def format_fit_result(fit: FitResult) -> str:
    rows = [(name, _number_text(value), _number_text(fit.error(name))) for name, value in fit.params.items()]
    return render_template(
        "fit_result.txt.j2",
        metadata=fit.metadata,
        rows=rows,
        chi2=_number_text(fit.chi2_reduced),
        converged="true" if fit.converged else "false",
        flags=fit.flags,
    )


def write_fit_result(path: str, fit: FitResult) -> str:
    return write_text(path, format_fit_result(fit))


_METADATA = re.compile(r"^#\s*([A-Za-z0-9_]+)\s*=\s*(.*?)\s*$")
_PARAMETER = re.compile(r"^([A-Za-z0-9_]+)\s*=\s*(\S+)\s*(?:±|\+-|\+/-)\s*(\S+)\s*$")
_SCALAR = re.compile(r"^([A-Za-z0-9_]+)\s*=\s*(.*?)\s*$")


def parse_fit_result(text: str, path: str = None) -> FitResult:
    """Inverse of :func:`format_fit_result`."""
    params, errors, metadata, flags = {}, {}, {}, []
    chi2, converged = math.nan, None
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            meta = _METADATA.match(line)
            if meta:
                metadata[meta.group(1)] = meta.group(2)
                continue
            if line.startswith("#"):
                continue
            parameter = _PARAMETER.match(line)
            if parameter:
                name = parameter.group(1)
                params[name] = float(parameter.group(2))
                errors[name] = float(parameter.group(3))
                continue
            scalar = _SCALAR.match(line)
            if not scalar:
                raise ValueError(f"cannot parse {line!r}")
            name, value = scalar.groups()
            if name == "chi2_reduced":
                chi2 = float(value)
            elif name == "converged":
                if value not in ("true", "false"):
                    raise ValueError(f"converged must be true or false, got {value!r}")
                converged = value == "true"
            elif name == "flags":
                flags = [flag.strip() for flag in value.split(",") if flag.strip()]
            else:
                raise ValueError(f"parameter '{name}' has no error")
        except ValueError as exc:
            raise DataFormatError(str(exc), path, number) from None
    if converged is None:
        raise DataFormatError("missing 'converged' line", path)
    return FitResult(
        params=params, errors=errors, chi2_reduced=chi2, converged=converged, flags=flags, metadata=metadata
    )


def read_fit_result(path: str) -> FitResult:
    with open(path, encoding="utf-8") as f:
        return parse_fit_result(f.read(), path)


def parse_field_argument(argument: str) -> tuple[str, Union[float, None]]:
    """Split ``FILE@B`` into the path and the field in T (None without ``@``)."""
    path, sep, field = argument.rpartition("@")
    if not sep:
        return argument, None
    try:
        return path, float(field)
    except ValueError:
        raise ValidationError(f"Bad field in {argument!r}: expected FILE@B with B in T") from None


def write_gfactor_residuals(path: str, points, residuals) -> str:
    """Per-point table of a g-factor fit, plottable with error bars."""
    frame = pd.DataFrame(
        {
            "b_field_t": [p.b_field for p in points],
            "splitting_uev": [p.splitting for p in points],
            "error_uev": [p.error for p in points],
            "predicted_uev": [r.predicted for r in residuals],
            "residual_uev": [r.residual for r in residuals],
            "normalized": [r.normalized for r in residuals],
            "outlier": ["yes" if r.outlier else "no" for r in residuals],
        }
    )
    return _write_frame(path, frame)
