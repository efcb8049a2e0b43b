import math

import numpy as np
import pytest

from exciton_dot_lab import files
from exciton_dot_lab.analysis import Residual, SplittingPoint
from exciton_dot_lab.exceptions import DataFormatError, ValidationError
from exciton_dot_lab.montecarlo import PhotonRecords
from exciton_dot_lab.traces import CorrelationTrace, DopTrace, FitResult, Histogram


def sample_records():
    return PhotonRecords(
        trajectory_id=np.array([0, 3, 4]),
        pulse_index=np.array([0, 3, 4]),
        emit_time=np.array([12.5, 300.25, 1000.0]),
        detect_time=np.array([10.0, 301.5, 999.125]),
        channel=np.array(["R", "L", "R"], dtype="<U1"),
    )


def test_records_file(tmp_path):
    path = str(tmp_path / "records.csv")
    files.write_records(path, sample_records())
    with open(path, encoding="utf-8") as f:
        lines = f.read().split("\n")
    assert lines[0] == ",".join(files.RECORD_COLUMNS)
    assert lines[1] == "0,0,12.5000,10.0000,R"
    records = files.read_records(path)
    assert records.channel.tolist() == ["R", "L", "R"]
    assert records.detect_time.tolist() == [10.0, 301.5, 999.125]
    assert records.pulse_index.dtype == np.int64
    assert files.sniff_columns(path) == files.RECORD_COLUMNS


def test_write_is_atomic(tmp_path):
    path = str(tmp_path / "sub" / "tags.csv")
    files.write_tags(path, np.array([1.0, 2.0]))
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["tags.csv"]
    assert files.read_tags(path).tolist() == [1.0, 2.0]


def test_bad_cell_is_located(tmp_path):
    path = tmp_path / "records.csv"
    path.write_text(
        "trajectory_id,pulse_index,emit_time_ps,detect_time_ps,channel\n"
        "0,0,1.0,1.0,R\n"
        "1,1,2.0,oops,L\n",
        encoding="utf-8",
    )
    with pytest.raises(DataFormatError) as info:
        files.read_records(str(path))
    assert info.value.row == 3
    assert info.value.column == "detect_time_ps"
    assert "line 3, column 'detect_time_ps'" in str(info.value)


def test_bad_channel(tmp_path):
    path = tmp_path / "records.csv"
    path.write_text(
        "trajectory_id,pulse_index,emit_time_ps,detect_time_ps,channel\n0,0,1.0,1.0,X\n", encoding="utf-8"
    )
    with pytest.raises(DataFormatError, match="expected one of") as info:
        files.read_records(str(path))
    assert info.value.row == 2


def test_bad_header(tmp_path):
    path = tmp_path / "tags.csv"
    path.write_text("time\n1.0\n", encoding="utf-8")
    with pytest.raises(DataFormatError, match="expected header") as info:
        files.read_tags(str(path))
    assert info.value.row == 1


def test_unsorted_tags(tmp_path):
    path = tmp_path / "tags.csv"
    path.write_text("detect_time_ps\n1.0\n5.0\n3.0\n", encoding="utf-8")
    with pytest.raises(DataFormatError, match="sorted") as info:
        files.read_tags(str(path))
    assert info.value.row == 4


def test_empty_file(tmp_path):
    path = tmp_path / "tags.csv"
    path.write_text("", encoding="utf-8")
    with pytest.raises(DataFormatError, match="empty file"):
        files.read_tags(str(path))


def test_traces(tmp_path):
    dop = DopTrace(np.array([4.0, 12.0]), np.array([0.5, -0.25]), np.array([0.1, 0.2]))
    files.write_dop_trace(str(tmp_path / "dop.csv"), dop)
    again = files.read_dop_trace(str(tmp_path / "dop.csv"))
    assert again.dop.tolist() == [0.5, -0.25]

    trace = CorrelationTrace(delay=np.array([-20.0, 0.0, 20.0]), value=np.array([1.0, 0.1, 1.0]))
    files.write_correlation(str(tmp_path / "g2.csv"), trace)
    again = files.read_correlation(str(tmp_path / "g2.csv"))
    assert again.value.tolist() == [1.0, 0.1, 1.0]
    assert again.error is None

    hist = Histogram(edges=np.array([0.0, 8.0, 16.0]), counts=np.array([3, 4]))
    files.write_histogram(str(tmp_path / "hist.csv"), hist)
    assert (tmp_path / "hist.csv").read_text(encoding="utf-8") == "bin_center_ps,count\n4,3\n12,4\n"


def test_fit_result_text():
    fit = FitResult(
        params={"omega": 54.97, "t2_star": math.inf},
        errors={"omega": 0.012, "t2_star": math.inf},
        chi2_reduced=1.04,
        converged=True,
        flags=["covariance_undetermined"],
        metadata={"component": "hole", "b_field_t": "0.2"},
    )
    text = files.format_fit_result(fit)
    assert "# component = hole\n" in text
    assert "omega = 54.97 ± 0.012\n" in text
    assert "converged = true\n" in text
    assert "flags = covariance_undetermined\n" in text
    again = files.parse_fit_result(text)
    assert again.params["omega"] == 54.97
    assert math.isinf(again.params["t2_star"])
    assert again.errors["omega"] == 0.012
    assert again.chi2_reduced == 1.04
    assert again.converged
    assert again.flags == ["covariance_undetermined"]
    assert again.metadata == {"component": "hole", "b_field_t": "0.2"}


def test_fit_result_accepts_ascii_plus_minus():
    fit = files.parse_fit_result("g = 2.876 +- 0.01\nslope = 1.5 +/- 0.1\nconverged = false\n")
    assert fit.errors == {"g": 0.01, "slope": 0.1}
    assert not fit.converged
    assert math.isnan(fit.chi2_reduced)


@pytest.mark.parametrize(
    "text,line",
    [
        ("omega = 1.0\nconverged = true\n", 1),
        ("omega = 1.0 ± 0.1\nconverged = maybe\n", 2),
        ("omega = one ± 0.1\nconverged = true\n", 1),
    ],
)
def test_fit_result_errors(text, line):
    with pytest.raises(DataFormatError) as info:
        files.parse_fit_result(text, "fit.txt")
    assert info.value.row == line


def test_fit_result_needs_converged():
    with pytest.raises(DataFormatError, match="converged"):
        files.parse_fit_result("omega = 1.0 ± 0.1\n")


@pytest.mark.parametrize(
    "argument,expected",
    [
        ("fit.txt@0.04", ("fit.txt", 0.04)),
        ("fit.txt", ("fit.txt", None)),
        ("runs/a@b/fit.txt@0.2", ("runs/a@b/fit.txt", 0.2)),
    ],
)
def test_parse_field_argument(argument, expected):
    assert files.parse_field_argument(argument) == expected


def test_parse_field_argument_bad_field():
    with pytest.raises(ValidationError, match="FILE@B"):
        files.parse_field_argument("fit.txt@strong")


def test_gfactor_residuals_file(tmp_path):
    points = [SplittingPoint(0.03, 5.0, 0.1), SplittingPoint(0.05, 8.4, 0.1)]
    residuals = [Residual(0.03, 5.0, 5.0, 0.0, 0.0, False), Residual(0.05, 8.4, 8.3, 0.1, 1.0, False)]
    path = files.write_gfactor_residuals(str(tmp_path / "residuals.csv"), points, residuals)
    lines = open(path, encoding="utf-8").read().splitlines()
    assert lines[0] == "b_field_t,splitting_uev,error_uev,predicted_uev,residual_uev,normalized,outlier"
    assert lines[2].endswith(",no")
