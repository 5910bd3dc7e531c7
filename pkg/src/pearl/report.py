"""Report emission: exact-value CSV plus a grouped bar chart as SVG.

The chart has one bar group per dataset label (Atari game names are
abbreviated using the standard two-letter codes), one bar per composition
config, and a trailing group labeled mu holding each config's mean across
labels. The CSV carries full-precision values; every SVG bar also records
its value in a ``data-value`` attribute so the two always agree.
"""

from __future__ import annotations

import csv
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .harness import ResultsRecord

GAME_ABBREVIATIONS = {
    "Asteroids": "As",
    "Berzerk": "Bz",
    "Bowling": "Bw",
    "Boxing": "Bx",
    "Breakout": "Br",
    "DemonAttack": "Da",
    "Freeway": "Fw",
    "Frostbite": "Fb",
    "Hero": "He",
    "MontezumaRevenge": "Mr",
    "MsPacman": "Mp",
    "Pitfall": "Pf",
    "Pong": "Pg",
    "PrivateEye": "Pe",
    "Qbert": "Qb",
    "Riverraid": "Rr",
    "Seaquest": "Sq",
    "SpaceInvaders": "Si",
    "Tennis": "Tn",
    "Venture": "Vt",
    "VideoPinball": "Vp",
    "YarsRevenge": "Yr",
}

_NORMALIZE = re.compile(r"[^a-z0-9]")
_LOOKUP = {_NORMALIZE.sub("", name.lower()): abbr for name, abbr in GAME_ABBREVIATIONS.items()}
_LOOKUP["montezumasrevenge"] = "Mr"  # possessive spelling

MU = "μ"

PALETTE = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c"]


def abbreviate_label(label: str) -> str:
    """Two-letter game code when the label names a known game, else unchanged."""
    return _LOOKUP.get(_NORMALIZE.sub("", label.lower()), label)


@dataclass
class ReportPaths:
    csv: Path
    svg: Path


def _fmt(x: float) -> str:
    return repr(float(x))


def load_reference_csv(path) -> list[tuple[str, str, float]]:
    """Reference series (e.g. published baselines) as (label, config, value)
    rows from a CSV with header label,config,value. Never baked into code."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip().lower() for h in header[:3]] != ["label", "config", "value"]:
            raise ValueError(f"{path}: reference CSV header must be label,config,value")
        for row in reader:
            if row:
                rows.append((row[0], row[1], float(row[2])))
    return rows


def render_report(
    records: list[ResultsRecord],
    out_dir,
    name: str = "report",
    reference: list[tuple[str, str, float]] | None = None,
) -> ReportPaths:
    """Write <name>.csv and <name>.svg for one or more results records.

    ``reference`` rows plot as extra bar series alongside the records.
    """
    if not records:
        raise ValueError("render_report needs at least one record")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{name}.csv"
    svg_path = out_dir / f"{name}.svg"

    categories = sorted({c for r in records for c in r.categories})
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "config"] + categories + ["mu"])
        for r in records:
            row = [abbreviate_label(r.label), r.config.get("composition", "")]
            row += [_fmt(r.categories[c]) if c in r.categories else "" for c in categories]
            row.append(_fmt(r.mean_f1))
            writer.writerow(row)
        for label, config, value in reference or []:
            row = [abbreviate_label(label), config] + [""] * len(categories) + [_fmt(value)]
            writer.writerow(row)

    _render_svg(records, svg_path, reference or [])
    return ReportPaths(csv=csv_path, svg=svg_path)


def _render_svg(records: list[ResultsRecord], path: Path, reference: list[tuple[str, str, float]]) -> None:
    series: list[tuple[str, str, float]] = [
        (abbreviate_label(r.label), r.config.get("composition", ""), r.mean_f1) for r in records
    ]
    series += [(abbreviate_label(lab), cfg, val) for lab, cfg, val in reference]
    labels: list[str] = []
    configs: list[str] = []
    for lab, cfg, _ in series:
        if lab not in labels:
            labels.append(lab)
        if cfg not in configs:
            configs.append(cfg)

    # value per (label, config); mu group = per-config mean over its labels
    values: dict[tuple[str, str], float] = {}
    for lab, cfg, val in series:
        values[(lab, cfg)] = val
    groups = labels + [MU]
    mu_values = {
        cfg: float(np.mean([v for (lab, c), v in values.items() if c == cfg])) for cfg in configs
    }

    bar_w = 18
    gap = 6
    group_w = len(configs) * bar_w + gap * 2
    plot_h = 160.0
    margin_left, margin_top, margin_bottom = 40, 20, 36
    width = margin_left + group_w * len(groups) + 20
    height = margin_top + plot_h + margin_bottom

    svg = ET.Element(
        "svg",
        xmlns="http://www.w3.org/2000/svg",
        width=str(width),
        height=str(height),
        viewBox=f"0 0 {width} {height}",
    )
    # y axis with 0..1 ticks
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = margin_top + plot_h * (1.0 - frac)
        ET.SubElement(
            svg, "line", x1=str(margin_left), y1=str(y), x2=str(width - 10), y2=str(y),
            stroke="#dddddd" if frac else "#333333",
        )
        tick = ET.SubElement(
            svg, "text", x=str(margin_left - 6), y=str(y + 4),
            **{"text-anchor": "end", "font-size": "10", "font-family": "sans-serif"},
        )
        tick.text = f"{frac:g}"

    for gi, group in enumerate(groups):
        gx = margin_left + gi * group_w + gap
        for ci, cfg in enumerate(configs):
            if group == MU:
                value = mu_values[cfg]
            elif (group, cfg) in values:
                value = values[(group, cfg)]
            else:
                continue
            bar_h = plot_h * value
            ET.SubElement(
                svg,
                "rect",
                x=str(gx + ci * bar_w),
                y=str(margin_top + plot_h - bar_h),
                width=str(bar_w - 2),
                height=str(bar_h),
                fill=PALETTE[ci % len(PALETTE)],
                **{"data-group": group, "data-config": cfg, "data-value": _fmt(value)},
            )
        label_el = ET.SubElement(
            svg, "text",
            x=str(gx + (len(configs) * bar_w) / 2),
            y=str(margin_top + plot_h + 14),
            **{"text-anchor": "middle", "font-size": "11", "font-family": "sans-serif"},
        )
        label_el.text = group

    # legend
    for ci, cfg in enumerate(configs):
        y = margin_top + plot_h + 28
        x = margin_left + ci * 90
        ET.SubElement(svg, "rect", x=str(x), y=str(y - 8), width="10", height="10", fill=PALETTE[ci % len(PALETTE)])
        t = ET.SubElement(svg, "text", x=str(x + 14), y=str(y), **{"font-size": "10", "font-family": "sans-serif"})
        t.text = cfg

    ET.ElementTree(svg).write(path, encoding="utf-8", xml_declaration=True)
