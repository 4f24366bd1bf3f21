"""Explanation-template mining and access-log auditing."""
from .relstore import Database, SchemaCatalog, load_schema
from .graph import ExplanationGraph, ExplanationTemplate, Path, make_template
from .evaluator import Evaluator

__all__ = [
    "Database",
    "SchemaCatalog",
    "load_schema",
    "ExplanationGraph",
    "ExplanationTemplate",
    "Path",
    "make_template",
    "Evaluator",
]
