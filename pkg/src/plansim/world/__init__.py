"""Scene-graph world: typed state, data-driven rules, check/apply engine."""

from .engine import apply, apply_text, check, check_text, observation
from .rules import Effect, RuleTable, RuleTableError, VerbRule, default_rules
from .state import (
    ErrorType,
    Feedback,
    HOLD_KINDS,
    ObjectNode,
    Posture,
    Property,
    Relation,
    RelationKind,
    SceneFormatError,
    State,
    STATE_GATE,
    STATE_PAIRS,
    SUCCESS_MESSAGE,
    WorldState,
    load_scene,
    restore,
    scene_from_obj,
    scene_to_obj,
    snapshot,
    validate_state,
)

__all__ = [
    "ErrorType",
    "Feedback",
    "HOLD_KINDS",
    "ObjectNode",
    "Posture",
    "Property",
    "Relation",
    "RelationKind",
    "SceneFormatError",
    "State",
    "STATE_GATE",
    "STATE_PAIRS",
    "SUCCESS_MESSAGE",
    "WorldState",
    "Effect",
    "RuleTable",
    "RuleTableError",
    "VerbRule",
    "default_rules",
    "apply",
    "apply_text",
    "check",
    "check_text",
    "observation",
    "load_scene",
    "restore",
    "scene_from_obj",
    "scene_to_obj",
    "snapshot",
    "validate_state",
]
