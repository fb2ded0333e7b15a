import xml.etree.ElementTree as ET

from codemae.svg import Chart, Series, render


def test_render_is_wellformed_and_deterministic():
    chart = Chart("loss <total>", "step", "value", [Series("a", [0, 1, 2], [3.0, 2.0, 1.0]),
                                                      Series("b", [0, 1], [0.5, 0.25], "scatter")], log_y=True)
    text = render(chart)
    root = ET.fromstring(text)
    assert root.tag.endswith("svg")
    assert text == render(chart)
    assert text.count("<circle") == 2 and "&lt;total&gt;" in text


def test_empty_and_nonpositive_log_values():
    ET.fromstring(render(Chart("t", "x", "y")))
    ET.fromstring(render(Chart("t", "x", "y", [Series("s", [0, 1], [0.0, -1.0])], log_y=True)))
