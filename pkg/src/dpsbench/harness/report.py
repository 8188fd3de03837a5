"""CSV schemas and table rendering.

Per-item files (``results/gaps.csv``, ``results/coverage.csv``) have the
columns ``operator, law, method, denoiser, item, value``; ``denoiser`` is
``-`` for point estimators and the gold standard.  Coverage values are 1
(covered) or 0.

Aggregates written to ``report/``:

``table_gap.csv``
    ``operator, method, denoiser, law, mean, std, n`` (gap in dB).
``table_delta.csv``
    ``operator, method, denoiser, reference, law, mean_delta, median_delta,
    p_value, stars, n``: change of the gap when ``reference`` is replaced
    by ``denoiser`` on the same items, with a two-sided Wilcoxon
    signed-rank test (``*`` p < 0.05, ``**`` p < 0.01, ``***`` p < 0.001).
``table_coverage.csv``
    ``operator, method, denoiser, law, coverage, n``.

Each has a ``.txt`` rendering with one column per law; cells without data
stay blank.
"""

import csv
import io
from collections import defaultdict
from pathlib import Path

import numpy as np

from ..errors import InsufficientSamplesError
from ..evaluation import wilcoxon_signed_rank

ITEM_HEADER = ["operator", "law", "method", "denoiser", "item", "value"]


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if v is None else _fmt(v) for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")


def write_rows(path, rows):
    write_table(path, ITEM_HEADER, sorted(rows, key=lambda r: tuple(r[:5])))


def read_rows(path):
    path = Path(path)
    if not path.exists():
        return []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        return [(r["operator"], r["law"], r["method"], r["denoiser"], int(r["item"]), float(r["value"])) for r in reader]


def _group(rows):
    out = defaultdict(dict)
    for op, law, method, den, item, value in rows:
        out[(op, method, den, law)][item] = value
    return out


def _stars(p):
    if p is None:
        return ""
    return "***" if p < 1e-3 else "**" if p < 1e-2 else "*" if p < 0.05 else ""


def _ordered(keys, order):
    def rank(values, v):
        return values.index(v) if v in values else len(values)

    return sorted(keys, key=lambda k: (rank(order["operators"], k[0]), rank(order["methods"], k[1]), k[2],
                                       rank(order["laws"], k[3]), k[3]))


def render(rows, laws, cell):
    """Plain-text table: one line per (operator, method, denoiser), one column per law."""
    lines = {}
    for key in rows:
        lines.setdefault(key[:3], {})[key[3]] = cell(key)
    header = ["operator", "method"] + list(laws)
    body = []
    for (op, method, den), cells in lines.items():
        name = method if den == "-" else f"{method}/{den}"
        body.append([op, name] + [cells.get(law, "") for law in laws])
    widths = [max(len(str(r[j])) for r in [header] + body) for j in range(len(header))]
    fmt = lambda r: "  ".join(str(v).ljust(w) for v, w in zip(r, widths)).rstrip()
    return "\n".join([fmt(header), fmt(["-" * w for w in widths])] + [fmt(r) for r in body]) + "\n"


def gap_table(rows, order):
    groups = _group(rows)
    out = []
    for key in _ordered(groups, order):
        vals = np.array([groups[key][i] for i in sorted(groups[key])])
        std = float(np.std(vals, ddof=1)) if len(vals) > 1 else None
        out.append(key + (float(np.mean(vals)), std, len(vals)))
    return out


def delta_table(rows, order):
    groups = _group(rows)
    ref = order["reference"]
    out = []
    for key in _ordered(groups, order):
        op, method, den, law = key
        base = groups.get((op, method, ref, law))
        if den in ("-", ref) or base is None:
            continue
        items = sorted(set(base) & set(groups[key]))
        if not items:
            continue
        diffs = np.array([groups[key][i] - base[i] for i in items])
        try:
            p = wilcoxon_signed_rank(diffs)["p_two_sided"]
        except InsufficientSamplesError:
            p = None
        out.append((op, method, den, ref, law, float(diffs.mean()), float(np.median(diffs)), p, _stars(p), len(items)))
    return out


def coverage_table(rows, order):
    groups = _group(rows)
    return [key + (float(np.mean(list(groups[key].values()))), len(groups[key])) for key in _ordered(groups, order)]


def build_report(gaps_csv, coverage_csv, out_dir, order):
    """Aggregate per-item CSVs into the gap, delta and coverage tables."""
    out_dir = Path(out_dir)
    laws = order["laws"]
    gap = gap_table(read_rows(gaps_csv), order)
    write_table(out_dir / "table_gap.csv", ["operator", "method", "denoiser", "law", "mean", "std", "n"], gap)
    cells = {r[:4]: r for r in gap}
    text = render(cells, laws, lambda k: f"{cells[k][4]:.2f}" + ("" if cells[k][5] is None else f" ± {cells[k][5]:.2f}"))
    (out_dir / "table_gap.txt").write_text(text, encoding="utf-8")

    delta = delta_table(read_rows(gaps_csv), order)
    write_table(out_dir / "table_delta.csv", ["operator", "method", "denoiser", "reference", "law", "mean_delta",
                                              "median_delta", "p_value", "stars", "n"], delta)
    dcells = {(r[0], r[1], r[2], r[4]): r for r in delta}
    text = render(dcells, laws, lambda k: f"{dcells[k][5]:+.2f}{dcells[k][8]}") if delta else \
        "no second denoiser variant to compare\n"
    (out_dir / "table_delta.txt").write_text(text, encoding="utf-8")

    cov = coverage_table(read_rows(coverage_csv), order)
    write_table(out_dir / "table_coverage.csv", ["operator", "method", "denoiser", "law", "coverage", "n"], cov)
    ccells = {r[:4]: r for r in cov}
    (out_dir / "table_coverage.txt").write_text(render(ccells, laws, lambda k: f"{ccells[k][4]:.2f}"), encoding="utf-8")
