import pytest

from can_ssl import costs
from can_ssl.plotting import (
    CSVFormatError, plot_loss, plot_mask_sweep, read_table, render, write_table,
)


def _write(path, text):
    path.write_text(text)
    return path


SWEEP = """method,mask_rate,accuracy,std
can,0.25,61.0,0.4
can,0.5,62.5,0.3
can,0.75,60.1,0.5
simclr,0.0,58.0,0.6
mae,0.75,55.0,
"""


def test_read_table_types_and_kind(tmp_path):
    kind, header, rows = read_table(_write(tmp_path / "s.csv", SWEEP))
    assert kind == "mask_sweep"
    assert header == ["method", "mask_rate", "accuracy", "std"]
    assert rows[0] == {"method": "can", "mask_rate": 0.25, "accuracy": 61.0, "std": 0.4}
    assert rows[-1]["std"] is None


@pytest.mark.parametrize("text, line, needle", [
    ("", 1, "empty file"),
    ("a,b\n1,2\n", 1, "unrecognised columns"),
    ("method,mask_rate,accuracy\n", 2, "no data rows"),
    ("method,mask_rate,accuracy\ncan,0.5,60\ncan,0.7\n", 3, "expected 3 fields"),
    ("method,mask_rate,accuracy\ncan,0.5,60\ncan,0.7,abc\n", 3, "not a number"),
    ("method,mask_rate,accuracy\ncan,,60\n", 2, "missing value for mask_rate"),
])
def test_malformed_csv_names_the_line(tmp_path, text, line, needle):
    path = _write(tmp_path / "bad.csv", text)
    with pytest.raises(CSVFormatError) as e:
        read_table(path)
    assert e.value.line == line
    assert f"bad.csv:{line}:" in str(e.value) and needle in str(e.value)


def test_write_table_roundtrip(tmp_path):
    rows = [{"method": "can", "mask_rate": 0.5, "accuracy": 60.0, "std": None}]
    write_table(tmp_path / "o.csv", ["method", "mask_rate", "accuracy", "std"], rows)
    assert (tmp_path / "o.csv").read_text().splitlines() == ["method,mask_rate,accuracy,std", "can,0.5,60,"]
    assert read_table(tmp_path / "o.csv")[2] == rows


def test_mask_sweep_figure_content(tmp_path):
    _, _, rows = read_table(_write(tmp_path / "s.csv", SWEEP))
    fig = plot_mask_sweep(rows, tmp_path / "s.svg")
    ax = fig.axes[0]
    assert ax.get_xlabel() == "Masking rate (%)"
    assert ax.get_ylabel() == "Linear probe top-1 (%)"
    lines = {ln.get_label(): ln for ln in ax.get_lines()}
    assert set(lines) == {"CAN", "SIMCLR", "MAE"}
    assert list(lines["CAN"].get_xdata()) == [25.0, 50.0, 75.0]
    assert (tmp_path / "s.svg").read_text().startswith("<?xml")


def test_loss_figure_has_a_panel_per_logged_term(tmp_path):
    rows = [{"step": s, "l_infonce": None, "l_rec": 1.0 / s, "l_denoise": 0.1, "l_total": 0.5 / s}
            for s in range(1, 6)]
    fig = plot_loss({"mae": rows}, tmp_path / "l.svg")
    assert [ax.get_ylabel() for ax in fig.axes] == ["reconstruction loss", "denoising loss", "total loss"]


def test_render_flops_roundtrip(tmp_path):
    src = tmp_path / "flops.csv"
    reports = costs.compare(("vit-b", "vit-l"))
    costs.write_csv(reports, src)
    svg, data = render([src], tmp_path / "fig")
    assert svg.name == "flops.flops.svg" and svg.exists()
    kind, _, rows = read_table(data)
    assert kind == "flops"
    assert [int(r["total"]) for r in rows] == [r.total for r in reports]


def test_render_is_deterministic(tmp_path):
    src = _write(tmp_path / "s.csv", SWEEP)
    a, _ = render([src], tmp_path / "a")
    b, _ = render([src], tmp_path / "b")
    assert a.read_bytes() == b.read_bytes()


def test_render_combines_loss_runs(tmp_path):
    for run in ("x", "y"):
        (tmp_path / run).mkdir()
        _write(tmp_path / run / "metrics.csv", "step,lr,l_infonce,l_rec,l_denoise,l_total\n1,0.1,2,1,1,1.5\n")
    svg, data = render([tmp_path / "x" / "metrics.csv", tmp_path / "y" / "metrics.csv"], tmp_path / "out")
    assert svg.name == "combined.loss.svg"
    _, header, rows = read_table(data)
    assert header[0] == "run" and [r["run"] for r in rows] == ["x", "y"]


def test_render_writes_nothing_on_bad_input(tmp_path):
    good = _write(tmp_path / "s.csv", SWEEP)
    bad = _write(tmp_path / "bad.csv", "")
    out = tmp_path / "out"
    with pytest.raises(CSVFormatError):
        render([good, bad], out)
    assert not out.exists()
    costs.write_csv(costs.compare(("vit-s",)), tmp_path / "f.csv")
    with pytest.raises(ValueError, match="mix"):
        render([good, tmp_path / "f.csv"], out)
    assert not out.exists()
