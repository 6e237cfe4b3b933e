"""Synthetic datasets and desk-scale experiment harnesses."""

from .datasets import (
    BagSpec,
    GlyphGridSample,
    gen_glyph_grids,
    gen_llp_dataset,
    glyph_tile,
    make_bags,
)
from .report import ExperimentReport
from .llp import run_llp_experiment
from .grid import run_baseline_regression, run_grid_experiment

__all__ = [
    "BagSpec",
    "ExperimentReport",
    "GlyphGridSample",
    "gen_glyph_grids",
    "gen_llp_dataset",
    "glyph_tile",
    "make_bags",
    "run_baseline_regression",
    "run_grid_experiment",
    "run_llp_experiment",
]
