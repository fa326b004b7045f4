"""plansim: a text household action simulator with typed execution errors,
exploration-derived training datasets, a self-correcting episode runner and
an evaluation toolkit."""

__version__ = "0.1.0"

from .grammar import (
    Action,
    ActionParseError,
    ArityMismatchError,
    MalformedSyntaxError,
    ObjectRef,
    UnknownVerbError,
    Verb,
    parse_action,
    parse_program,
    render_action,
)

__all__ = [
    "__version__",
    "Action",
    "ActionParseError",
    "ArityMismatchError",
    "MalformedSyntaxError",
    "ObjectRef",
    "UnknownVerbError",
    "Verb",
    "parse_action",
    "parse_program",
    "render_action",
]
