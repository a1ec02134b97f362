"""Static SVG figures from metrics, sweep and cost CSVs.

Each figure is written next to a CSV holding exactly the rows it plots, so
numbers in a figure can always be traced back without re-running anything.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .costs import CSV_COLUMNS as FLOPS_COLUMNS  # noqa: E402

GOLDEN = (5 ** 0.5 - 1) / 2
WIDTH = 3.4  # single column, inches

STYLE = {
    "font.family": "serif",
    "font.size": 8,
    "axes.labelsize": 9,
    "axes.linewidth": 0.6,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 7,
    "legend.frameon": False,
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "xtick.major.width": 0.6,
    "ytick.major.width": 0.6,
    "figure.figsize": (WIDTH, WIDTH * GOLDEN),
    "svg.hashsalt": "can-ssl",  # stable element ids, so identical data gives identical files
    "svg.fonttype": "none",
}

METHOD_STYLE = {"can": ("C3", "o"), "simclr": ("C0", "s"), "mae": ("C2", "^")}
LOSS_COLUMNS = ("l_infonce", "l_rec", "l_denoise", "l_total")
LOSS_LABELS = {"l_infonce": "InfoNCE", "l_rec": "reconstruction", "l_denoise": "denoising", "l_total": "total"}

KINDS = {
    "flops": FLOPS_COLUMNS,
    "frontier": ("method", "flops", "accuracy"),
    "mask_sweep": ("method", "mask_rate", "accuracy"),
    "loss": ("step", "l_total"),
}
TEXT_COLUMNS = {"method", "model", "label", "run"}


class CSVFormatError(ValueError):
    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.line = line


def detect_kind(header) -> str:
    for kind, required in KINDS.items():
        if set(required) <= set(header):
            return kind
    raise ValueError(f"unrecognised columns {list(header)}")


def read_table(path) -> tuple[str, list[str], list[dict]]:
    """Parse and type-check a CSV; returns (kind, header, rows).

    Numeric columns must parse as floats; empty cells become None.  Errors
    carry the 1-based line number of the offending row.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise CSVFormatError(path, 1, "empty file")
        try:
            kind = detect_kind(header)
        except ValueError as e:
            raise CSVFormatError(path, 1, str(e)) from None
        rows = []
        for cells in reader:
            line = reader.line_num
            if not cells:
                continue
            if len(cells) != len(header):
                raise CSVFormatError(path, line, f"expected {len(header)} fields, got {len(cells)}")
            row = {}
            for col, cell in zip(header, cells):
                if col in TEXT_COLUMNS:
                    row[col] = cell
                elif cell == "":
                    if col in KINDS[kind]:
                        raise CSVFormatError(path, line, f"missing value for {col}")
                    row[col] = None
                else:
                    try:
                        row[col] = float(cell)
                    except ValueError:
                        raise CSVFormatError(path, line, f"{col}: not a number: {cell!r}") from None
            rows.append(row)
    if not rows:
        raise CSVFormatError(path, 2, "no data rows")
    return kind, header, rows


def write_table(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(["" if row.get(c) is None else _cell(row[c]) for c in header])


def _cell(v):
    if isinstance(v, float) and v.is_integer() and abs(v) < 2 ** 63:
        return str(int(v))
    return str(v)


def _method_style(method, i):
    return METHOD_STYLE.get(method, (f"C{(i + 4) % 10}", "D"))


def _finish(fig, path):
    # closed figures keep their artists, so callers can still inspect what was drawn
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
    return fig


def plot_loss(series: dict[str, list[dict]], path):
    """Loss terms vs step; one panel per term, one line per run."""
    terms = [t for t in LOSS_COLUMNS if any(r.get(t) is not None for rows in series.values() for r in rows)]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(terms), figsize=(WIDTH * len(terms) / 1.6, WIDTH * GOLDEN), squeeze=False)
        for ax, term in zip(axes[0], terms):
            for i, (label, rows) in enumerate(series.items()):
                pts = [(r["step"], r[term]) for r in rows if r.get(term) is not None]
                if pts:
                    ax.plot(*zip(*pts), color=f"C{i}", label=label)
            ax.set_xlabel("Training step")
            ax.set_ylabel(f"{LOSS_LABELS[term]} loss")
        if len(series) > 1:
            axes[0][0].legend()
        return _finish(fig, path)


def plot_mask_sweep(rows, path):
    """Accuracy vs masking rate, one curve per method."""
    by_method = defaultdict(list)
    for r in rows:
        by_method[r["method"]].append(r)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for i, (method, pts) in enumerate(sorted(by_method.items())):
            pts = sorted(pts, key=lambda r: r["mask_rate"])
            color, marker = _method_style(method, i)
            x = [100 * r["mask_rate"] for r in pts]
            y = [r["accuracy"] for r in pts]
            ax.plot(x, y, color=color, marker=marker, label=method.upper() if method in METHOD_STYLE else method)
            if all(r.get("std") is not None for r in pts):
                lo = [a - r["std"] for a, r in zip(y, pts)]
                hi = [a + r["std"] for a, r in zip(y, pts)]
                ax.fill_between(x, lo, hi, color=color, alpha=0.15, linewidth=0)
        ax.set_xlabel("Masking rate (%)")
        ax.set_ylabel("Linear probe top-1 (%)")
        ax.legend()
        return _finish(fig, path)


def plot_frontier(rows, path):
    """Accuracy vs pretraining FLOPs per image, one curve per method."""
    by_method = defaultdict(list)
    for r in rows:
        by_method[r["method"]].append(r)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for i, (method, pts) in enumerate(sorted(by_method.items())):
            pts = sorted(pts, key=lambda r: r["flops"])
            color, marker = _method_style(method, i)
            ax.plot([r["flops"] / 1e9 for r in pts], [r["accuracy"] for r in pts], color=color, marker=marker,
                    label=method.upper() if method in METHOD_STYLE else method)
            for r in pts:
                if r.get("model"):
                    ax.annotate(r["model"], (r["flops"] / 1e9, r["accuracy"]), fontsize=6,
                                xytext=(3, -6), textcoords="offset points")
        ax.set_xscale("log")
        ax.set_xlabel("Pretraining GFLOPs per image")
        ax.set_ylabel("Linear probe top-1 (%)")
        ax.legend()
        return _finish(fig, path)


def plot_flops(rows, path):
    """Grouped bars of forward GFLOPs per image, stacked encoder/decoder/heads."""
    models = list(dict.fromkeys(r["model"] for r in rows))
    methods = list(dict.fromkeys(r["method"] for r in rows))
    width = 0.8 / len(methods)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(WIDTH * 1.4, WIDTH * GOLDEN))
        for j, method in enumerate(methods):
            color, _ = _method_style(method, j)
            for i, model in enumerate(models):
                match = [r for r in rows if r["model"] == model and r["method"] == method]
                if not match:
                    continue
                r = match[0]
                x = i + (j - (len(methods) - 1) / 2) * width
                enc, dec = r["encoder_flops"] / 1e9, r["decoder_flops"] / 1e9
                ax.bar(x, enc, width, color=color, label=method.upper() if i == 0 else None)
                ax.bar(x, dec, width, bottom=enc, color=color, alpha=0.45, hatch="//", linewidth=0)
        ax.set_xticks(range(len(models)), [m.upper() for m in models])
        ax.set_ylabel("Forward GFLOPs per image")
        ax.set_yscale("log")
        ax.legend(title="hatched: decoder", title_fontsize=6)
        return _finish(fig, path)


def render(inputs, out_dir, labels=None) -> list[Path]:
    """Plot one or more CSVs of the same kind; returns the written paths (SVG, data CSV).

    Every input is parsed before anything is written, so a bad file leaves
    ``out_dir`` untouched.
    """
    inputs = [Path(p) for p in inputs]
    if not inputs:
        raise ValueError("no input files")
    parsed = [read_table(p) for p in inputs]
    kinds = {k for k, _, _ in parsed}
    if len(kinds) != 1:
        raise ValueError(f"inputs mix different table kinds: {sorted(kinds)}")
    kind = kinds.pop()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = inputs[0].stem if len(inputs) == 1 else "combined"
    svg, data = out_dir / f"{stem}.{kind}.svg", out_dir / f"{stem}.{kind}.csv"
    if kind == "loss":
        labels = labels or [p.parent.name or p.stem for p in inputs]
        series = dict(zip(labels, (rows for _, _, rows in parsed)))
        plot_loss(series, svg)
        header = ["run"] + list(parsed[0][1])
        rows = [{"run": label, **r} for label, rs in series.items() for r in rs]
        write_table(data, header, rows)
        return [svg, data]
    header = parsed[0][1]
    rows = [r for _, h, rs in parsed for r in rs]
    {"mask_sweep": plot_mask_sweep, "frontier": plot_frontier, "flops": plot_flops}[kind](rows, svg)
    write_table(data, header, rows)
    return [svg, data]

