"""Precondition checking and state transition for actions.

``check`` evaluates preconditions in a fixed order, so when an action
violates several rules at once the reported error type is deterministic:

    OBJECT_AVAILABILITY > INVALID_ACTION > AGENT_PROXIMITY > ENCLOSED_OBJECT
    > MISSING_OBJECT > OVER_OCCUPIED_AGENT > UNFLIPPED_BOOLEAN_STATE > OTHERS

``apply`` re-checks and, on failure, returns the *input state object
unchanged* together with the failure feedback; successful actions mutate a
clone, never the input.
"""

from __future__ import annotations

from ..grammar import Action, ActionParseError, ObjectRef, Verb, parse_action
from .rules import Effect, POSTURE_SEATED, POSTURE_SLEEPING, POSTURE_STANDING, RuleTable, VerbRule, default_rules
from .state import (
    ErrorType,
    Feedback,
    ObjectNode,
    Posture,
    Property,
    Relation,
    RelationKind,
    State,
    WorldState,
)


def _fail(error_type: ErrorType, message: str) -> Feedback:
    return Feedback.failure(error_type, message)


def _is_close(state: WorldState, node_id: int) -> bool:
    if state.is_held(node_id):
        return True
    return any(
        e.kind == RelationKind.CLOSE and e.from_id == state.agent_id and e.to_id == node_id
        for e in state.edges
    )


def _describe(ref: ObjectRef) -> str:
    return f"{ref.class_name} ({ref.instance_id})"


def _check_others(state: WorldState, action: Action, rule: VerbRule) -> Feedback | None:
    """Residual rule violations, reported as OTHERS. Order is fixed."""
    verb = action.verb.value.lower()
    if state.agent_posture is Posture.SLEEPING and not rule.allowed_while_sleeping:
        return _fail(ErrorType.OTHERS, f"the agent cannot {verb} while sleeping.")
    if rule.required_posture == POSTURE_STANDING and state.agent_posture is not Posture.STANDING:
        return _fail(
            ErrorType.OTHERS,
            f"the agent cannot {verb} while {state.agent_posture.value.lower()}.",
        )
    if rule.required_posture == POSTURE_SEATED and state.agent_posture not in (
        Posture.SITTING,
        Posture.LYING,
    ):
        return _fail(ErrorType.OTHERS, "the agent is not sitting or lying down.")
    if rule.required_posture == POSTURE_SLEEPING and state.agent_posture is not Posture.SLEEPING:
        return _fail(ErrorType.OTHERS, "the agent is not sleeping.")
    if rule.effect is Effect.GRAB and state.is_held(action.target.instance_id):
        return _fail(ErrorType.OTHERS, f"the agent is already holding {_describe(action.target)}.")
    if len(action.args) == 2:
        first, second = action.args
        if first.instance_id == second.instance_id:
            return _fail(
                ErrorType.OTHERS, f"cannot use {_describe(first)} as its own destination."
            )
    if rule.effect is Effect.PLACE_IN or (rule.destination_must_be_open and len(action.args) == 2):
        dest = state.node(action.args[1].instance_id)
        if rule.destination_must_be_open and dest is not None and State.CLOSED in dest.states:
            return _fail(ErrorType.OTHERS, f"{_describe(action.args[1])} is closed.")
    if rule.effect is Effect.PLACE_IN:
        # reject placements that would create an INSIDE cycle
        target_id = action.args[0].instance_id
        current = action.args[1].instance_id
        seen = set()
        while current not in seen:
            seen.add(current)
            if current == target_id:
                return _fail(
                    ErrorType.OTHERS,
                    f"{_describe(action.args[1])} is inside {_describe(action.args[0])}.",
                )
            parents = [
                e.to_id
                for e in state.edges
                if e.from_id == current and e.kind == RelationKind.INSIDE
            ]
            if not parents:
                break
            current = parents[0]
    return None


def check(state: WorldState, action: Action, rules: RuleTable | None = None) -> Feedback:
    """Evaluate preconditions without changing state. Never raises."""
    rules = rules or default_rules()
    rule = rules[action.verb]

    # 1. OBJECT_AVAILABILITY: every reference must ground to a node
    for ref in action.args:
        node = state.node(ref.instance_id)
        if node is None or node.class_name != ref.class_name:
            return _fail(
                ErrorType.OBJECT_AVAILABILITY,
                f"{_describe(ref)} is not available in the scene.",
            )

    # 2. INVALID_ACTION: required affordance properties
    for idx in sorted(rule.required_properties):
        node = state.node(action.args[idx].instance_id)
        for prop in sorted(rule.required_properties[idx], key=lambda p: p.value):
            if not node.has(prop):
                return _fail(
                    ErrorType.INVALID_ACTION,
                    f"{_describe(action.args[idx])} does not afford {action.verb.value.lower()}.",
                )

    # 3. AGENT_PROXIMITY
    prox_ref = None
    if rule.requires_proximity:
        prox_ref = action.args[rule.proximity_arg]
        if not _is_close(state, prox_ref.instance_id):
            return _fail(
                ErrorType.AGENT_PROXIMITY, f"the agent is not close to {_describe(prox_ref)}."
            )

    # 4. ENCLOSED_OBJECT: the proximity target must be reachable, not sealed
    if prox_ref is not None and not state.is_held(prox_ref.instance_id):
        container = state.enclosing_closed_container(prox_ref.instance_id)
        if container is not None:
            return _fail(
                ErrorType.ENCLOSED_OBJECT,
                f"{_describe(prox_ref)} is enclosed in the closed "
                f"{container.class_name} ({container.id}).",
            )

    # 5. MISSING_OBJECT: required held argument
    if rule.requires_held_arg is not None:
        ref = action.args[rule.requires_held_arg]
        if not state.is_held(ref.instance_id):
            return _fail(ErrorType.MISSING_OBJECT, f"the agent is not holding {_describe(ref)}.")

    # 6. OVER_OCCUPIED_AGENT: a free hand is required
    if rule.requires_free_hand and len(state.held_ids()) >= 2:
        return _fail(ErrorType.OVER_OCCUPIED_AGENT, "the agent's hands are both occupied.")

    # 7. UNFLIPPED_BOOLEAN_STATE: the flip must change something
    if rule.state_flip is not None:
        _, to_state = rule.state_flip
        node = state.node(action.target.instance_id)
        if to_state in node.states:
            return _fail(
                ErrorType.UNFLIPPED_BOOLEAN_STATE,
                f"{_describe(action.target)} is already {to_state.value.lower()}.",
            )

    # 8. OTHERS
    residual = _check_others(state, action, rule)
    if residual is not None:
        return residual
    return Feedback.success()


def _apply_move(state: WorldState, target_id: int) -> None:
    close = {target_id}
    close.update(state.container_ids(target_id))
    close.update(state.content_ids(target_id))
    close.discard(state.agent_id)
    state.edges = {
        e
        for e in state.edges
        if not (
            e.from_id == state.agent_id
            and e.kind in (RelationKind.CLOSE, RelationKind.SITTING_ON, RelationKind.LYING_ON)
        )
    }
    state.edges.update(Relation(state.agent_id, RelationKind.CLOSE, t) for t in close)
    state.agent_posture = Posture.STANDING


def _drop_hold_edges(state: WorldState, node_id: int) -> None:
    state.edges = {
        e
        for e in state.edges
        if not (e.kind in (RelationKind.HOLDS_RH, RelationKind.HOLDS_LH) and e.to_id == node_id)
    }


def apply(
    state: WorldState, action: Action, rules: RuleTable | None = None
) -> tuple[WorldState, Feedback]:
    """Check then execute. On failure the input state is returned untouched."""
    rules = rules or default_rules()
    feedback = check(state, action, rules)
    if not feedback.ok:
        return state, feedback

    rule = rules[action.verb]
    new = state.clone()
    effect = rule.effect
    if effect is Effect.MOVE:
        _apply_move(new, action.target.instance_id)
    elif effect is Effect.GRAB:
        target_id = action.target.instance_id
        new.edges = {
            e
            for e in new.edges
            if not (
                e.from_id == target_id and e.kind in (RelationKind.INSIDE, RelationKind.ON_TOP)
            )
        }
        held_rh = any(
            e.kind == RelationKind.HOLDS_RH and e.from_id == new.agent_id for e in new.edges
        )
        hand = RelationKind.HOLDS_LH if held_rh else RelationKind.HOLDS_RH
        new.edges.add(Relation(new.agent_id, hand, target_id))
    elif effect is Effect.FLIP:
        from_state, to_state = rule.state_flip
        node = new.node(action.target.instance_id)
        node.states.discard(from_state)
        node.states.add(to_state)
    elif effect in (Effect.PLACE_ON, Effect.PLACE_IN):
        moved, dest = action.args[0].instance_id, action.args[1].instance_id
        _drop_hold_edges(new, moved)
        kind = RelationKind.ON_TOP if effect is Effect.PLACE_ON else RelationKind.INSIDE
        new.edges.add(Relation(moved, kind, dest))
    elif effect is Effect.RELEASE:
        released = action.target.instance_id
        _drop_hold_edges(new, released)
        new.edges.add(Relation(new.agent_id, RelationKind.CLOSE, released))
    elif effect is Effect.SIT:
        new.agent_posture = Posture.SITTING
        new.edges.add(Relation(new.agent_id, RelationKind.SITTING_ON, action.target.instance_id))
    elif effect is Effect.LIE:
        new.agent_posture = Posture.LYING
        new.edges.add(Relation(new.agent_id, RelationKind.LYING_ON, action.target.instance_id))
    elif effect is Effect.STANDUP:
        new.agent_posture = Posture.STANDING
        new.edges = {
            e
            for e in new.edges
            if not (
                e.from_id == new.agent_id
                and e.kind in (RelationKind.SITTING_ON, RelationKind.LYING_ON)
            )
        }
    elif effect is Effect.SLEEP:
        new.agent_posture = Posture.SLEEPING
    elif effect is Effect.WAKEUP:
        if new.edges_from(new.agent_id, RelationKind.SITTING_ON):
            new.agent_posture = Posture.SITTING
        elif new.edges_from(new.agent_id, RelationKind.LYING_ON):
            new.agent_posture = Posture.LYING
        else:
            new.agent_posture = Posture.STANDING
    # Effect.NONE: state unchanged beyond the clone
    return new, feedback


def check_text(state: WorldState, text: str, rules: RuleTable | None = None) -> Feedback:
    """check() over raw text; parse failures surface as OTHERS."""
    try:
        action = parse_action(text)
    except ActionParseError as exc:
        return _fail(ErrorType.OTHERS, f"malformed action: {exc}")
    return check(state, action, rules)


def apply_text(
    state: WorldState, text: str, rules: RuleTable | None = None
) -> tuple[WorldState, Feedback]:
    """apply() over raw text; parse failures surface as OTHERS, state untouched."""
    try:
        action = parse_action(text)
    except ActionParseError as exc:
        return state, _fail(ErrorType.OTHERS, f"malformed action: {exc}")
    return apply(state, action, rules)


def observation(state: WorldState) -> str:
    """Agent-visible text rendering: held objects, posture, nearby objects."""
    held = state.held_ids()
    if held:
        items = ", ".join(
            f"{state.node(i).class_name} ({i})" for i in sorted(held)
        )
        hands = f"holding: {items}"
    else:
        hands = "hands: empty"
    posture = f"posture: {state.agent_posture.value.lower()}"
    nearby_ids = [i for i in sorted(state.close_ids()) if i not in held]
    if nearby_ids:
        rendered = []
        for i in nearby_ids:
            node = state.node(i)
            states = ",".join(sorted(s.value.lower() for s in node.states))
            rendered.append(f"{node.class_name} ({i})" + (f" [{states}]" if states else ""))
        nearby = "nearby: " + ", ".join(rendered)
    else:
        nearby = "nearby: none"
    return "; ".join((hands, posture, nearby))
