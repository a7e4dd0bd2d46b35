"""Mention and concept-name preprocessing."""
from .abbrev import best_long_form, detect_abbreviations, extract_pairs, is_valid_short_form
from .porter import porter_stem
from .resources import Resources
from .text import (
    NUMERIC_TABLE,
    correct_spelling,
    expand_abbreviation,
    load_abbreviation_list,
    load_spelling_lexicon,
    normalize,
    resolve_numerics,
    save_tsv,
    tokenize,
)

__all__ = [
    "NUMERIC_TABLE",
    "Resources",
    "best_long_form",
    "correct_spelling",
    "detect_abbreviations",
    "expand_abbreviation",
    "extract_pairs",
    "is_valid_short_form",
    "load_abbreviation_list",
    "load_spelling_lexicon",
    "normalize",
    "porter_stem",
    "resolve_numerics",
    "save_tsv",
    "tokenize",
]
