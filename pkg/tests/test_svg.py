import xml.etree.ElementTree as ET

import numpy as np
import pytest

from shapclust import svg
from shapclust.errors import ConfigError
from shapclust.waterfall import build_path, project_pairwise, project_pca


def _parse(path):
    root = ET.parse(path).getroot()
    assert root.tag.endswith("svg")
    return root


def _artifacts():
    r = np.random.default_rng(0)
    paths = [build_path(r.normal(size=(5, 3)), np.zeros(3), 3, tag=c) for c in range(3)]
    return [
        svg.ScatterPlot(r.normal(size=(30, 2)), np.arange(30) % 4 - 1,
                        {0: "A", 1: "B", 2: "C"}, "scatter", "x", "y"),
        svg.BarChart(np.abs(r.normal(size=(4, 3))), [f"F{i}" for i in range(4)],
                     ["a", "b", "c"], "bars"),
        svg.Heatmap(r.normal(size=(3, 4)), ["r0", "r1", "r2"], ["c0", "c1", "c2", "c3"], "heat"),
        svg.ClassicWaterfall(3.0, [2.0, -1.0], ["F0", "F1"], "classic"),
        svg.PathPlot(project_pca(paths), "pca paths", ("a", "b", "c")),
        svg.PathPlot([project_pairwise(p, 0, 1) for p in paths], "pair paths"),
    ]


@pytest.mark.parametrize("index", range(6))
def test_valid_and_deterministic(tmp_path, index):
    art = _artifacts()[index]
    a = svg.render_svg(art, tmp_path / "a.svg")
    b = svg.render_svg(_artifacts()[index], tmp_path / "b.svg")
    _parse(a)
    assert open(a, "rb").read() == open(b, "rb").read()


def test_empty_scatter_has_axes_only(tmp_path):
    out = svg.render_svg(svg.ScatterPlot(np.zeros((0, 2))), tmp_path / "e.svg")
    root = _parse(out)
    circles = [el for el in root.iter() if el.tag.endswith("circle")]
    lines = [el for el in root.iter() if el.tag.endswith("line")]
    assert not circles and lines


def test_classic_waterfall_ends():
    wf = svg.ClassicWaterfall(3.0, [2.0, -1.0], ["F0", "F1"])
    assert wf.bar_ends() == [3.0, 5.0, 4.0]
    assert "f(x) = 4" in wf.to_svg()


def test_noise_colour_and_palette():
    assert svg.color_for(-1) != svg.color_for(0)
    assert svg.color_for(0) == svg.color_for(10)


def test_unwritable_path(tmp_path):
    with pytest.raises(ConfigError):
        svg.render_svg(svg.ScatterPlot(np.zeros((0, 2))), tmp_path / "missing" / "x.svg")


def test_nice_ticks_cover_range():
    ticks = svg.nice_ticks(-2.3, 7.9)
    assert ticks[0] >= -2.3 and ticks[-1] <= 7.9 and len(ticks) >= 3
