"""
Unit tests for list_laws.py.
"""

from PerpetuityLab.accessories.coefficient_laws import LAW_KINDS
from PerpetuityLab.list_laws import format_catalog, list_builtin_laws, main


def test_list_builtin_laws_order():
    catalog = list_builtin_laws()
    assert [entry["kind"] for entry in catalog] == list(LAW_KINDS)
    assert all({"params", "anchor", "description"} <= set(entry) for entry in catalog)


def test_format_catalog_lists_parameters():
    text = format_catalog(list_builtin_laws())
    assert "fleming-viot" in text
    assert "parameters: none" in text
    assert "lambda1" in text


def test_main_prints_catalog(capsys):
    assert main() == 0
    output = capsys.readouterr().out
    for kind in LAW_KINDS:
        assert kind in output
