import csv
import xml.etree.ElementTree as ET

import numpy as np

from pearl.harness import ResultsRecord
from pearl.report import GAME_ABBREVIATIONS, abbreviate_label, render_report


def record(label, composition, categories):
    return ResultsRecord(
        label=label,
        config={"composition": composition},
        categories=categories,
        mean_f1=float(np.mean(list(categories.values()))),
        embedding_width=512,
    )


def three_records():
    cats = ["c0", "c1", "c2", "c3"]
    rng = np.random.default_rng(1)
    return [
        record("Breakout", comp, {c: round(float(rng.uniform(0.2, 0.95)), 6) for c in cats})
        for comp in ("FI", "FI+2x2", "1x1+2x2+4x4")
    ]


class TestAbbreviations:
    def test_known_games(self):
        assert abbreviate_label("Breakout") == "Br"
        assert abbreviate_label("MsPacman") == "Mp"
        assert abbreviate_label("Montezuma's Revenge") == "Mr"
        assert abbreviate_label("space invaders") == "Si"

    def test_unknown_label_unchanged(self):
        assert abbreviate_label("synthetic") == "synthetic"

    def test_table_is_complete(self):
        assert len(GAME_ABBREVIATIONS) == 22
        assert len(set(GAME_ABBREVIATIONS.values())) == 22


class TestRenderReport:
    def test_csv_structure_and_mu(self, tmp_path):
        records = three_records()
        paths = render_report(records, tmp_path)
        with open(paths.csv) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["label", "config", "c0", "c1", "c2", "c3", "mu"]
        assert len(rows) == 4
        for row, rec in zip(rows[1:], records):
            assert row[0] == "Br"
            values = [float(v) for v in row[2:6]]
            mu = float(row[6])
            assert abs(mu - np.mean(values)) < 1e-12
            assert mu == rec.mean_f1

    def test_svg_well_formed_and_heights_proportional(self, tmp_path):
        records = three_records()
        paths = render_report(records, tmp_path)
        tree = ET.parse(paths.svg)  # raises if malformed
        ns = {"svg": "http://www.w3.org/2000/svg"}
        bars = [el for el in tree.iter() if el.tag.endswith("rect") and "data-value" in el.attrib]
        assert len(bars) == 6  # 3 configs x (Br group + mu group)
        for bar in bars:
            value = float(bar.attrib["data-value"])
            height = float(bar.attrib["height"])
            assert abs(height - value * 160.0) < 1e-9

    def test_svg_and_csv_agree(self, tmp_path):
        records = three_records()
        paths = render_report(records, tmp_path)
        tree = ET.parse(paths.svg)
        by_config = {}
        for el in tree.iter():
            if el.tag.endswith("rect") and el.attrib.get("data-group") == "Br":
                by_config[el.attrib["data-config"]] = float(el.attrib["data-value"])
        with open(paths.csv) as fh:
            rows = list(csv.reader(fh))
        for row in rows[1:]:
            assert by_config[row[1]] == float(row[6])

    def test_reference_series_plot_alongside(self, tmp_path):
        from pearl.report import load_reference_csv

        ref_csv = tmp_path / "sota.csv"
        ref_csv.write_text("label,config,value\nBreakout,published-baseline,0.72\n")
        records = [record("Breakout", "FI", {"c": 0.5})]
        paths = render_report(records, tmp_path, reference=load_reference_csv(ref_csv))
        tree = ET.parse(paths.svg)
        ref_bars = [el for el in tree.iter()
                    if el.tag.endswith("rect") and el.attrib.get("data-config") == "published-baseline"]
        assert any(el.attrib.get("data-group") == "Br" for el in ref_bars)
        lines = paths.csv.read_text().splitlines()
        assert lines[-1].startswith("Br,published-baseline")
        assert lines[-1].endswith("0.72")

    def test_mu_group_is_cross_label_mean(self, tmp_path):
        records = [
            record("Pong", "FI", {"c": 0.4}),
            record("Breakout", "FI", {"c": 0.8}),
        ]
        paths = render_report(records, tmp_path)
        tree = ET.parse(paths.svg)
        mu_bars = [el for el in tree.iter()
                   if el.tag.endswith("rect") and el.attrib.get("data-group") == "μ"]
        assert len(mu_bars) == 1
        assert abs(float(mu_bars[0].attrib["data-value"]) - 0.6) < 1e-12
