"""Illustrative 5 Ah cell used when no parameter or OCV file is given.

The values are plausible for a small high-rate lithium-ion pouch cell; they
are not identified from any dataset.
"""

from importlib import resources

from socest.cell_model import CellParamsTable, OcvCurveSet
from socest.data_io import parse_ocv, parse_params


def default_params() -> CellParamsTable:
    return parse_params(resources.files("socest.data").joinpath("default_params.json").read_bytes())


def default_ocv() -> OcvCurveSet:
    return parse_ocv(resources.files("socest.data").joinpath("default_ocv.json").read_bytes())
