"""Action grammar for household programs.

Actions are single lines of the form::

    [VERB]
    [VERB] <class_name> (id)
    [VERB] <class_name> (id) <class_name> (id)

The verb vocabulary is closed (42 verbs) and each verb has a fixed arity.
``parse_action`` / ``render_action`` round-trip: parsing a rendered action
yields an equal Action, and rendering is canonical (one space between
tokens, lowercase class names, uppercase verb).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum


class ActionParseError(ValueError):
    """Base class for action parse failures. Carries an optional line number."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


class UnknownVerbError(ActionParseError):
    """The bracketed verb is not in the vocabulary."""


class ArityMismatchError(ActionParseError):
    """The verb exists but the number of object arguments is wrong."""


class MalformedSyntaxError(ActionParseError):
    """The line does not match the action shape at all."""


class Verb(str, Enum):
    """The 42 atomic verbs, in canonical (stable) order."""

    WALK = "WALK"
    RUN = "RUN"
    FIND = "FIND"
    GRAB = "GRAB"
    OPEN = "OPEN"
    CLOSE = "CLOSE"
    SWITCHON = "SWITCHON"
    SWITCHOFF = "SWITCHOFF"
    SIT = "SIT"
    STANDSUP = "STANDSUP"
    PUTBACK = "PUTBACK"
    PUTIN = "PUTIN"
    PUTOBJBACK = "PUTOBJBACK"
    POUR = "POUR"
    TYPE = "TYPE"
    TOUCH = "TOUCH"
    TURNTO = "TURNTO"
    LOOKAT = "LOOKAT"
    WATCH = "WATCH"
    POINTAT = "POINTAT"
    WIPE = "WIPE"
    PUTON = "PUTON"
    PUTOFF = "PUTOFF"
    GREET = "GREET"
    DROP = "DROP"
    READ = "READ"
    LIE = "LIE"
    PUSH = "PUSH"
    PULL = "PULL"
    MOVE = "MOVE"
    WASH = "WASH"
    RINSE = "RINSE"
    SCRUB = "SCRUB"
    SQUEEZE = "SQUEEZE"
    PLUGIN = "PLUGIN"
    PLUGOUT = "PLUGOUT"
    CUT = "CUT"
    EAT = "EAT"
    DRINK = "DRINK"
    SLEEP = "SLEEP"
    WAKEUP = "WAKEUP"
    RELEASE = "RELEASE"

    @property
    def arity(self) -> int:
        return VERB_ARITY[self]

    @property
    def index(self) -> int:
        """Position in canonical verb order (used for deterministic ranking)."""
        return _VERB_ORDER[self]


# Reserved completion token emitted by policies; deliberately not a verb,
# so it never parses as an action.
END_TOKEN = "[END]"

_ZERO_ARITY = {Verb.STANDSUP, Verb.SLEEP, Verb.WAKEUP}
_TWO_ARITY = {Verb.PUTBACK, Verb.PUTIN, Verb.POUR}

VERB_ARITY: dict[Verb, int] = {
    v: 0 if v in _ZERO_ARITY else 2 if v in _TWO_ARITY else 1 for v in Verb
}

_VERB_ORDER: dict[Verb, int] = {v: i for i, v in enumerate(Verb)}

_CLASS_TOKEN_RE = re.compile(r"[a-z0-9_]+")
_VERB_RE = re.compile(r"\s*\[\s*([A-Za-z_]+)\s*\]")
_ARG_RE = re.compile(r"\s*<\s*([^<>]+?)\s*>\s*\(\s*(\d+)\s*\)")


_CLASS_RE = re.compile(r"[a-z0-9_]+")


def normalize_class_name(raw: str) -> str:
    """Lowercase and join interior whitespace with underscores."""
    name = "_".join(raw.strip().lower().split())
    if not _CLASS_RE.fullmatch(name):
        raise MalformedSyntaxError(f"bad object class {raw!r}")
    return name


@dataclass(frozen=True)
class ObjectRef:
    """A reference to a scene object by class name and instance id."""

    class_name: str
    instance_id: int

    def render(self) -> str:
        return f"<{self.class_name}> ({self.instance_id})"


@dataclass(frozen=True)
class Action:
    """A verb applied to zero, one or two object references."""

    verb: Verb
    args: tuple[ObjectRef, ...] = ()

    def __post_init__(self):
        if len(self.args) != self.verb.arity:
            raise ArityMismatchError(
                f"{self.verb.value} takes {self.verb.arity} argument(s), got {len(self.args)}"
            )

    def render(self) -> str:
        return render_action(self)

    @property
    def target(self) -> ObjectRef:
        """First argument; only valid for arity >= 1 verbs."""
        return self.args[0]


def render_action(action: Action) -> str:
    parts = [f"[{action.verb.value}]"]
    parts.extend(ref.render() for ref in action.args)
    return " ".join(parts)


def parse_action(text: str) -> Action:
    """Parse one action line.

    Tolerates surrounding/interior whitespace and lowercase verbs. Raises
    UnknownVerbError, ArityMismatchError or MalformedSyntaxError.
    """
    if not isinstance(text, str):
        raise MalformedSyntaxError("action must be a string")
    m = _VERB_RE.match(text)
    if m is None:
        raise MalformedSyntaxError(f"not an action: {text.strip()!r}")
    verb_token = m.group(1).upper()
    try:
        verb = Verb(verb_token)
    except ValueError:
        raise UnknownVerbError(f"unknown verb {verb_token!r}") from None

    pos = m.end()
    args: list[ObjectRef] = []
    while True:
        am = _ARG_RE.match(text, pos)
        if am is None:
            break
        class_name = normalize_class_name(am.group(1))
        if not class_name or _CLASS_TOKEN_RE.fullmatch(class_name) is None:
            raise MalformedSyntaxError(f"bad class name {am.group(1)!r}")
        args.append(ObjectRef(class_name, int(am.group(2))))
        pos = am.end()
    if text[pos:].strip():
        raise MalformedSyntaxError(f"trailing text {text[pos:].strip()!r}")
    if len(args) != verb.arity:
        raise ArityMismatchError(
            f"{verb.value} takes {verb.arity} argument(s), got {len(args)}"
        )
    return Action(verb, tuple(args))


def parse_program(text: str) -> list[Action]:
    """Parse a newline-separated program, skipping blank lines.

    Parse errors are re-raised with the 1-based line number attached.
    """
    actions = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            actions.append(parse_action(line))
        except ActionParseError as exc:
            exc.line = lineno
            exc.args = (f"line {lineno}: {exc.args[0]}",)
            raise
    return actions
