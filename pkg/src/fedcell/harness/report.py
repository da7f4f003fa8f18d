"""Aggregate MetricsRows into a policy x criterion x room grid (median over seeds)."""
from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import numpy as np

POLICY_LABELS = {"random": "Random", "exhaustive": "Exhaustive", "rl": "Single RL", "frl": "FRL"}
CRITERIA = (("Q1", "cumulative_q1_mbps"), ("Avg.", "cumulative_avg_mbps"))


def read_metrics(metrics_dir) -> list[dict]:
    root = Path(metrics_dir)
    files = [root] if root.is_file() else sorted(root.rglob("metrics.csv"))
    rows = []
    for path in files:
        with open(path, newline="") as fh:
            rows.extend(csv.DictReader(fh))
    return rows


def summarize(rows: list[dict]):
    """Returns (rooms, policies, grid) with grid[(policy, criterion)][room] = median or None."""
    values = defaultdict(list)
    rooms, policies = [], []
    for r in rows:
        room, policy = r["room"], r["policy"]
        if room not in rooms:
            rooms.append(room)
        if policy not in policies:
            policies.append(policy)
        for label, col in CRITERIA:
            values[(policy, label, room)].append(float(r[col]))
    rooms.sort()
    order = list(POLICY_LABELS)
    policies.sort(key=lambda p: (order.index(p) if p in order else len(order), p))
    grid = {}
    for policy in policies:
        for label, _ in CRITERIA:
            grid[(policy, label)] = {
                room: float(np.median(values[(policy, label, room)])) if values.get((policy, label, room)) else None
                for room in rooms
            }
    return rooms, policies, grid


def _fmt(v) -> str:
    return "" if v is None else f"{v:.2f}"


def table_rows(rooms, policies, grid) -> list[list[str]]:
    out = [["Algorithm", "Criterion", *(f"Room {r}" for r in rooms)]]
    for policy in policies:
        for label, _ in CRITERIA:
            out.append([POLICY_LABELS.get(policy, policy), label, *(_fmt(grid[(policy, label)][r]) for r in rooms)])
    return out


def render_text(rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for k, r in enumerate(rows):
        cells = [c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))]
        lines.append("  ".join(cells).rstrip())
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def report(metrics_dir, out_dir=None) -> str:
    """Write ``summary.csv`` and ``summary.txt``; returns the text table."""
    rows = table_rows(*summarize(read_metrics(metrics_dir)))
    out = Path(out_dir or (metrics_dir if Path(metrics_dir).is_dir() else Path(metrics_dir).parent))
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "summary.csv", "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    text = render_text(rows)
    (out / "summary.txt").write_text(text)
    return text
