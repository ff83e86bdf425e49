"""Aggregate result CSVs into table-shaped summaries and a text report.

The bandwidth header carries both byte labels: the headline fraction label
(B x 24 KB, e.g. "2.4 KB" at 10%) and the enforced floor-based accounting
(3 x 128 x floor(B*64) bytes, e.g. 2.25 KB at 10%); enforcement always uses
the floor.
"""

import csv
import io
import os
from collections import Counter

from .channel import N_SENDERS, REGION_BYTES, regions_for_budget
from .errors import ConfigError
from .evaluator import read_records, summarize, write_summary
from .formats import atomic_write_text


def dedupe(records):
    seen = {}
    for r in records:
        key = (r.policy, r.budget, r.occlusion, r.drop_rate, r.seed)
        seen.setdefault(key, r)
    return list(seen.values())


def load_all(paths):
    records = []
    for p in paths:
        if not os.path.exists(p):
            raise ConfigError(f"missing results file {p}")
        records.extend(read_records(p))
    if not records:
        raise ConfigError("no records found in the given CSVs")
    return dedupe(records)


def _native_occlusion(records):
    return Counter(r.occlusion for r in records).most_common(1)[0][0]


def _cell_text(rows, policy, **match):
    for row in rows:
        if row["policy"] == policy and all(row[k] == v for k, v in match.items()):
            return f"{row['ap_mean']:.4f}±{row['ap_std']:.4f}"
    return "-"


def budget_header(budget):
    if budget == 0.0:
        return "no comm"
    enforced = N_SENDERS * REGION_BYTES * regions_for_budget(budget)
    return f"{budget * 100:g}% (label {budget * 24:g} KB, enforced {enforced} B)"


def bandwidth_table(rows, native_occ):
    cells = [r for r in rows if r["drop_rate"] == 0.0 and r["occlusion"] == native_occ]
    budgets = sorted({r["budget"] for r in cells if r["budget"] > 0.0})
    if not budgets:
        return None
    policies = _ordered_policies(cells)
    table = [["policy"] + [budget_header(b) for b in budgets]]
    for pol in policies:
        if pol == "nocomm":
            row = [pol] + [_cell_text(cells, pol, budget=0.0)] * len(budgets)
        else:
            row = [pol] + [_cell_text(cells, pol, budget=b) for b in budgets]
        table.append(row)
    return table


def occlusion_table(rows):
    cells = [r for r in rows if r["drop_rate"] == 0.0]
    levels = [lv for lv in ("low", "medium", "high") if any(r["occlusion"] == lv for r in cells)]
    if len(levels) < 2:
        return None
    # only policies that were actually swept across occlusion levels
    cells = [r for r in cells
             if len({c["occlusion"] for c in cells if c["policy"] == r["policy"]}) >= 2]
    policies = _ordered_policies(cells)
    table = [["policy"] + levels]
    for pol in policies:
        row = [pol]
        for lv in levels:
            match = [r for r in cells if r["policy"] == pol and r["occlusion"] == lv]
            row.append(f"{match[0]['ap_mean']:.4f}±{match[0]['ap_std']:.4f}" if match else "-")
        table.append(row)
    return table


def drop_table(rows):
    cells = [r for r in rows if r["budget"] == 0.5]
    rates = sorted({r["drop_rate"] for r in cells})
    if len(rates) < 2:
        return None
    policies = [p for p in _ordered_policies(cells)
                if len({r["drop_rate"] for r in cells if r["policy"] == p}) > 1]
    table = [["drop_rate"] + policies]
    for rate in rates:
        row = [f"{rate * 100:g}%"]
        for pol in policies:
            match = [r for r in cells if r["policy"] == pol and r["drop_rate"] == rate]
            row.append(f"{match[0]['ap_mean']:.4f}±{match[0]['ap_std']:.4f}" if match else "-")
        table.append(row)
    return table


_POLICY_ORDER = ("nocomm", "random", "confidence", "uncertainty", "where2comm",
                 "ic3net", "mask", "r2t", "always", "oracle")


def _ordered_policies(cells):
    present = {r["policy"] for r in cells}
    return [p for p in _POLICY_ORDER if p in present] + sorted(present - set(_POLICY_ORDER))


def render_text(table, title):
    widths = [max(len(str(row[i])) for row in table) for i in range(len(table[0]))]
    lines = [title, "-" * len(title)]
    for j, row in enumerate(table):
        lines.append("  ".join(str(c).ljust(w) for c, w in zip(row, widths)).rstrip())
        if j == 0:
            lines.append("  ".join("=" * w for w in widths))
    return "\n".join(lines) + "\n"


def table_csv(path, table):
    buf = io.StringIO()
    csv.writer(buf).writerows(table)
    atomic_write_text(path, buf.getvalue())


def write_report(in_paths, out_dir):
    """Merge record CSVs, write tidy summary + per-table CSVs + tables.txt.

    Returns the text report (also written to disk) so the CLI can print it.
    """
    records = load_all(in_paths)
    rows = summarize(records)
    os.makedirs(out_dir, exist_ok=True)
    write_summary(os.path.join(out_dir, "summary.csv"), rows)

    native = _native_occlusion(records)
    sections = []
    bw = bandwidth_table(rows, native)
    if bw:
        table_csv(os.path.join(out_dir, "table_bandwidth.csv"), bw)
        sections.append(render_text(bw, f"Detection AP by bandwidth budget (occlusion={native})"))
    occ = occlusion_table(rows)
    if occ:
        table_csv(os.path.join(out_dir, "table_occlusion.csv"), occ)
        sections.append(render_text(occ, "Detection AP by occlusion level (budget 50%)"))
    dr = drop_table(rows)
    if dr:
        table_csv(os.path.join(out_dir, "table_drop.csv"), dr)
        sections.append(render_text(dr, "Detection AP by packet drop rate (budget 50%)"))

    text = "\n".join(sections) if sections else "no table-shaped axes present in the inputs\n"
    atomic_write_text(os.path.join(out_dir, "tables.txt"), text)
    return text
