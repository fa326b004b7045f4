"""Per-verb precondition/effect rules, loaded from a JSON data file.

Rules are data so the physics can be audited and adjusted without touching
engine code. The bundled default table covers the full verb vocabulary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

from ..grammar import Verb
from .state import Property, State, STATE_PAIRS


class Effect(str, Enum):
    NONE = "none"
    MOVE = "move"
    GRAB = "grab"
    FLIP = "flip"
    PLACE_ON = "place_on"
    PLACE_IN = "place_in"
    RELEASE = "release"
    SIT = "sit"
    LIE = "lie"
    STANDUP = "standup"
    SLEEP = "sleep"
    WAKEUP = "wakeup"


# required_posture vocabulary
POSTURE_STANDING = "STANDING"
POSTURE_SEATED = "SEATED"  # sitting or lying
POSTURE_SLEEPING = "SLEEPING"


class RuleTableError(ValueError):
    """The rules file is malformed or inconsistent with the verb vocabulary."""


@dataclass(frozen=True)
class VerbRule:
    verb: Verb
    required_properties: dict = field(default_factory=dict)  # arg index -> frozenset[Property]
    requires_proximity: bool = False
    proximity_arg: int = 0
    requires_free_hand: bool = False
    requires_held_arg: int | None = None
    state_flip: tuple[State, State] | None = None
    effect: Effect = Effect.NONE
    destination_must_be_open: bool = False
    required_posture: str | None = None
    allowed_while_sleeping: bool = False


_ALLOWED_KEYS = {
    "arity",
    "required_properties",
    "requires_proximity",
    "proximity_arg",
    "requires_free_hand",
    "requires_held_arg",
    "state_flip",
    "effect",
    "destination_must_be_open",
    "required_posture",
    "allowed_while_sleeping",
}


def _parse_rule(verb: Verb, raw: dict) -> VerbRule:
    unknown = set(raw) - _ALLOWED_KEYS
    if unknown:
        raise RuleTableError(f"{verb.value}: unknown rule keys {sorted(unknown)}")
    if raw.get("arity") != verb.arity:
        raise RuleTableError(
            f"{verb.value}: rule arity {raw.get('arity')!r} does not match grammar arity {verb.arity}"
        )
    req_props: dict[int, frozenset] = {}
    for key, names in raw.get("required_properties", {}).items():
        idx = int(key)
        if not 0 <= idx < verb.arity:
            raise RuleTableError(f"{verb.value}: required_properties index {idx} out of range")
        req_props[idx] = frozenset(Property(p) for p in names)
    prox_arg = int(raw.get("proximity_arg", 0))
    if raw.get("requires_proximity") and not 0 <= prox_arg < verb.arity:
        raise RuleTableError(f"{verb.value}: proximity_arg {prox_arg} out of range")
    held = raw.get("requires_held_arg")
    if held is not None and not 0 <= int(held) < verb.arity:
        raise RuleTableError(f"{verb.value}: requires_held_arg {held} out of range")
    flip = raw.get("state_flip")
    if flip is not None:
        flip = (State(flip[0]), State(flip[1]))
        if tuple(sorted((flip[0].value, flip[1].value))) not in {
            tuple(sorted((a.value, b.value))) for a, b in STATE_PAIRS
        }:
            raise RuleTableError(f"{verb.value}: state_flip {flip} is not an exclusive pair")
    effect = Effect(raw.get("effect", "none"))
    if (effect is Effect.FLIP) != (flip is not None):
        raise RuleTableError(f"{verb.value}: flip effect and state_flip must appear together")
    posture = raw.get("required_posture")
    if posture is not None and posture not in (POSTURE_STANDING, POSTURE_SEATED, POSTURE_SLEEPING):
        raise RuleTableError(f"{verb.value}: bad required_posture {posture!r}")
    return VerbRule(
        verb=verb,
        required_properties=req_props,
        requires_proximity=bool(raw.get("requires_proximity", False)),
        proximity_arg=prox_arg,
        requires_free_hand=bool(raw.get("requires_free_hand", False)),
        requires_held_arg=None if held is None else int(held),
        state_flip=flip,
        effect=effect,
        destination_must_be_open=bool(raw.get("destination_must_be_open", False)),
        required_posture=posture,
        allowed_while_sleeping=bool(raw.get("allowed_while_sleeping", False)),
    )


class RuleTable:
    """Mapping from Verb to its VerbRule; complete over the vocabulary."""

    def __init__(self, rules: dict):
        missing = [v.value for v in Verb if v not in rules]
        extra = [v.value for v in rules if v not in set(Verb)]
        if missing or extra:
            raise RuleTableError(f"incomplete rule table: missing={missing} extra={extra}")
        self._rules = dict(rules)

    def __getitem__(self, verb: Verb) -> VerbRule:
        return self._rules[verb]

    def __len__(self) -> int:
        return len(self._rules)

    @classmethod
    def from_obj(cls, obj: dict) -> "RuleTable":
        if not isinstance(obj, dict) or obj.get("format_version") != 1:
            raise RuleTableError("rules file must be an object with format_version 1")
        raw_verbs = obj.get("verbs")
        if not isinstance(raw_verbs, dict):
            raise RuleTableError("rules file needs a 'verbs' object")
        rules = {}
        for name, raw in raw_verbs.items():
            try:
                verb = Verb(name)
            except ValueError:
                raise RuleTableError(f"unknown verb {name!r} in rules file") from None
            rules[verb] = _parse_rule(verb, raw)
        return cls(rules)

    @classmethod
    def from_file(cls, path: str | Path) -> "RuleTable":
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise RuleTableError(f"{path}: invalid JSON: {exc}") from exc
        return cls.from_obj(obj)


_DEFAULT: RuleTable | None = None


def default_rules() -> RuleTable:
    """The bundled rule table (loaded once)."""
    global _DEFAULT
    if _DEFAULT is None:
        text = resources.files("plansim.data").joinpath("rules.json").read_text(encoding="utf-8")
        _DEFAULT = RuleTable.from_obj(json.loads(text))
    return _DEFAULT
