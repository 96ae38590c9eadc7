import pytest

from aggdiff.exceptions import PlotError
from aggdiff.mesh import build_grid, write_field
from aggdiff.profiles import gaussian
from aggdiff.workbench import series_header

pytest.importorskip("matplotlib")

from aggdiff.plotting import plot, plot_fields, plot_series  # noqa: E402


@pytest.fixture
def series_csv(tmp_path):
    header = series_header(1)
    rows = [[step, 0.1 * step, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0 ** -step, 0.0, 0.0, 1] for step in range(6)]
    path = tmp_path / "series.csv"
    path.write_text(",".join(header) + "\n" + "\n".join(",".join(str(v) for v in row) for row in rows) + "\n")
    return path


def test_series_plot_is_reproducible(series_csv, tmp_path):
    first = plot_series(str(series_csv), str(tmp_path / "a.svg"))
    second = plot_series(str(series_csv), str(tmp_path / "b.svg"))
    with open(first, "rb") as a, open(second, "rb") as b:
        assert a.read() == b.read()


def test_relative_series_plot(series_csv, tmp_path):
    out = plot(str(series_csv), str(tmp_path / "rel.svg"), relative=True)
    assert out.endswith("rel.svg")
    with pytest.raises(PlotError):
        plot(str(series_csv), str(tmp_path / "missing.svg"), column="E_nope")


def test_field_plots(tmp_path):
    line = build_grid(1, 32, (-2.0, 2.0))
    a, b = tmp_path / "a.adfv", tmp_path / "b.adfv"
    write_field(str(a), gaussian(line, center=-0.5, width=0.4))
    write_field(str(b), gaussian(line, center=0.5, width=0.4))
    assert plot(f"{a},{b}").endswith("a.svg")
    plane = build_grid(2, 16, (-2.0, 2.0))
    fields = [gaussian(plane, center=(-0.5, 0.0), width=0.4), gaussian(plane, center=(0.5, 0.0), width=0.4)]
    assert plot_fields(fields, str(tmp_path / "overlay.svg")).endswith("overlay.svg")
    assert plot_fields(fields[:1], str(tmp_path / "heat.svg")).endswith("heat.svg")
    with pytest.raises(PlotError):
        plot_fields([fields[0], gaussian(line)], str(tmp_path / "mixed.svg"))


def test_malformed_inputs(tmp_path):
    junk = tmp_path / "junk.adfv"
    junk.write_bytes(b"not a field")
    with pytest.raises(PlotError):
        plot(str(junk))
    with pytest.raises(PlotError):
        plot(str(tmp_path / "absent.adfv"))
    with pytest.raises(PlotError):
        plot_fields([], str(tmp_path / "empty.svg"))
