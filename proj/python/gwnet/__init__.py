"""Generalized W-Net glyph synthesis."""

from ._core import (
    DataError,
    Generator,
    GlyphPack,
    NumericError,
    adain,
    grad_suite,
    load_generator,
    load_pack,
    make_toy_pack,
    synthesize,
    train,
    von_neumann_div,
    von_neumann_raw,
)

__all__ = [
    "DataError",
    "Generator",
    "GlyphPack",
    "NumericError",
    "adain",
    "grad_suite",
    "load_generator",
    "load_pack",
    "make_toy_pack",
    "synthesize",
    "train",
    "von_neumann_div",
    "von_neumann_raw",
]
