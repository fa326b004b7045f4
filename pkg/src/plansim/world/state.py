"""Scene-graph state: nodes, typed edges, agent posture, feedback values.

A WorldState is a plain value. ``snapshot``/``restore`` produce independent
deep copies; the engine never mutates a caller's state in place.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path


class Property(str, Enum):
    GRABBABLE = "GRABBABLE"
    SITTABLE = "SITTABLE"
    LIEABLE = "LIEABLE"
    OPENABLE = "OPENABLE"
    HAS_SWITCH = "HAS_SWITCH"
    CONTAINER = "CONTAINER"
    SURFACE = "SURFACE"
    DRINKABLE = "DRINKABLE"
    EATABLE = "EATABLE"
    READABLE = "READABLE"
    CUTTABLE = "CUTTABLE"
    POURABLE = "POURABLE"
    WASHABLE = "WASHABLE"
    PLUGGABLE = "PLUGGABLE"
    MOVABLE = "MOVABLE"
    ROOM = "ROOM"


class State(str, Enum):
    OPEN = "OPEN"
    CLOSED = "CLOSED"
    ON = "ON"
    OFF = "OFF"
    PLUGGED = "PLUGGED"
    UNPLUGGED = "UNPLUGGED"
    DIRTY = "DIRTY"
    CLEAN = "CLEAN"


# Mutually exclusive state pairs; a node may carry at most one of each pair.
STATE_PAIRS: tuple[tuple[State, State], ...] = (
    (State.OPEN, State.CLOSED),
    (State.ON, State.OFF),
    (State.PLUGGED, State.UNPLUGGED),
    (State.DIRTY, State.CLEAN),
)

# A state is only admissible on nodes carrying the gating property.
STATE_GATE: dict[State, Property] = {
    State.OPEN: Property.OPENABLE,
    State.CLOSED: Property.OPENABLE,
    State.ON: Property.HAS_SWITCH,
    State.OFF: Property.HAS_SWITCH,
    State.PLUGGED: Property.PLUGGABLE,
    State.UNPLUGGED: Property.PLUGGABLE,
    State.DIRTY: Property.WASHABLE,
    State.CLEAN: Property.WASHABLE,
}


class RelationKind(str, Enum):
    INSIDE = "INSIDE"
    ON_TOP = "ON_TOP"
    CLOSE = "CLOSE"
    HOLDS_RH = "HOLDS_RH"
    HOLDS_LH = "HOLDS_LH"
    SITTING_ON = "SITTING_ON"
    LYING_ON = "LYING_ON"


HOLD_KINDS = (RelationKind.HOLDS_RH, RelationKind.HOLDS_LH)


class Posture(str, Enum):
    STANDING = "STANDING"
    SITTING = "SITTING"
    LYING = "LYING"
    SLEEPING = "SLEEPING"


class ErrorType(str, Enum):
    """Typed execution-error taxonomy. Order is the reporting precedence."""

    OBJECT_AVAILABILITY = "OBJECT_AVAILABILITY"
    INVALID_ACTION = "INVALID_ACTION"
    AGENT_PROXIMITY = "AGENT_PROXIMITY"
    ENCLOSED_OBJECT = "ENCLOSED_OBJECT"
    MISSING_OBJECT = "MISSING_OBJECT"
    OVER_OCCUPIED_AGENT = "OVER_OCCUPIED_AGENT"
    UNFLIPPED_BOOLEAN_STATE = "UNFLIPPED_BOOLEAN_STATE"
    OTHERS = "OTHERS"


SUCCESS_MESSAGE = "True"


@dataclass(frozen=True)
class Feedback:
    """Execution verdict. ok is True iff error_type is None iff message == "True"."""

    ok: bool
    error_type: ErrorType | None
    message: str

    def __post_init__(self):
        if self.ok != (self.error_type is None) or self.ok != (self.message == SUCCESS_MESSAGE):
            raise ValueError(
                f"incoherent feedback: ok={self.ok} error_type={self.error_type} message={self.message!r}"
            )

    @classmethod
    def success(cls) -> "Feedback":
        return cls(True, None, SUCCESS_MESSAGE)

    @classmethod
    def failure(cls, error_type: ErrorType, message: str) -> "Feedback":
        return cls(False, error_type, message)


@dataclass(frozen=True)
class Relation:
    from_id: int
    kind: RelationKind
    to_id: int


@dataclass
class ObjectNode:
    id: int
    class_name: str
    properties: frozenset = frozenset()
    states: set = field(default_factory=set)

    def has(self, prop: Property) -> bool:
        return prop in self.properties


class SceneFormatError(ValueError):
    """A scene file or in-memory state violates the scene invariants."""


@dataclass
class WorldState:
    nodes: dict[int, ObjectNode]
    edges: set[Relation]
    agent_id: int
    agent_posture: Posture = Posture.STANDING

    # -- queries -------------------------------------------------------

    def node(self, node_id: int) -> ObjectNode | None:
        return self.nodes.get(node_id)

    def edges_from(self, node_id: int, kind: RelationKind) -> list[Relation]:
        return sorted(
            (e for e in self.edges if e.from_id == node_id and e.kind == kind),
            key=lambda e: e.to_id,
        )

    def held_ids(self) -> list[int]:
        """Ids held by the agent, right hand first."""
        out = []
        for kind in HOLD_KINDS:
            out.extend(e.to_id for e in self.edges_from(self.agent_id, kind))
        return out

    def is_held(self, node_id: int) -> bool:
        return node_id in self.held_ids()

    def close_ids(self) -> list[int]:
        return [e.to_id for e in self.edges_from(self.agent_id, RelationKind.CLOSE)]

    def container_ids(self, node_id: int) -> list[int]:
        """Direct parents via INSIDE or ON_TOP."""
        return sorted(
            e.to_id
            for e in self.edges
            if e.from_id == node_id and e.kind in (RelationKind.INSIDE, RelationKind.ON_TOP)
        )

    def content_ids(self, node_id: int) -> list[int]:
        """Direct children via INSIDE or ON_TOP."""
        return sorted(
            e.from_id
            for e in self.edges
            if e.to_id == node_id and e.kind in (RelationKind.INSIDE, RelationKind.ON_TOP)
        )

    def enclosing_closed_container(self, node_id: int) -> ObjectNode | None:
        """Nearest INSIDE-ancestor currently in the CLOSED state, if any."""
        seen = set()
        current = node_id
        while current not in seen:
            seen.add(current)
            parents = [
                e.to_id
                for e in self.edges
                if e.from_id == current and e.kind == RelationKind.INSIDE
            ]
            if not parents:
                return None
            current = parents[0]
            node = self.nodes.get(current)
            if node is not None and State.CLOSED in node.states:
                return node
        return None

    # -- copying -------------------------------------------------------

    def clone(self) -> "WorldState":
        return WorldState(
            nodes={
                nid: ObjectNode(n.id, n.class_name, n.properties, set(n.states))
                for nid, n in self.nodes.items()
            },
            edges=set(self.edges),
            agent_id=self.agent_id,
            agent_posture=self.agent_posture,
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, WorldState):
            return NotImplemented
        return (
            self.agent_id == other.agent_id
            and self.agent_posture == other.agent_posture
            and self.edges == other.edges
            and {nid: (n.class_name, n.properties, frozenset(n.states)) for nid, n in self.nodes.items()}
            == {nid: (n.class_name, n.properties, frozenset(n.states)) for nid, n in other.nodes.items()}
        )


def snapshot(state: WorldState) -> WorldState:
    """Deep copy of a state; mutating one never affects the other."""
    return state.clone()


def restore(snap: WorldState) -> WorldState:
    """Independent copy of a snapshot (symmetric with snapshot)."""
    return snap.clone()


def validate_state(state: WorldState) -> None:
    """Raise SceneFormatError on any scene-invariant violation."""
    if state.agent_id not in state.nodes:
        raise SceneFormatError(f"agent id {state.agent_id} has no node")
    for nid, node in state.nodes.items():
        if nid != node.id:
            raise SceneFormatError(f"node key {nid} != node id {node.id}")
        for a, b in STATE_PAIRS:
            if a in node.states and b in node.states:
                raise SceneFormatError(f"node {nid} carries both {a.value} and {b.value}")
        for st in node.states:
            gate = STATE_GATE[st]
            if not node.has(gate):
                raise SceneFormatError(
                    f"node {nid} has state {st.value} without property {gate.value}"
                )
    holds = 0
    for edge in state.edges:
        if edge.from_id not in state.nodes or edge.to_id not in state.nodes:
            raise SceneFormatError(f"edge {edge} references a missing node")
        if edge.kind in HOLD_KINDS:
            holds += 1
            if edge.from_id != state.agent_id:
                raise SceneFormatError(f"{edge.kind.value} edge not from the agent")
    if holds > 2:
        raise SceneFormatError("agent holds more than two objects")
    # INSIDE must be acyclic
    parents: dict[int, list[int]] = {}
    for edge in state.edges:
        if edge.kind == RelationKind.INSIDE:
            parents.setdefault(edge.from_id, []).append(edge.to_id)
    for start in parents:
        seen = {start}
        frontier = list(parents.get(start, ()))
        while frontier:
            current = frontier.pop()
            if current == start:
                raise SceneFormatError(f"INSIDE cycle through node {start}")
            if current in seen:
                continue
            seen.add(current)
            frontier.extend(parents.get(current, ()))


# -- scene file I/O (format_version 1) --------------------------------


def scene_from_obj(obj: dict) -> WorldState:
    if not isinstance(obj, dict):
        raise SceneFormatError("scene must be a JSON object")
    if obj.get("format_version") != 1:
        raise SceneFormatError(f"unsupported format_version {obj.get('format_version')!r}")
    nodes: dict[int, ObjectNode] = {}
    for raw in obj.get("nodes", ()):
        try:
            nid = int(raw["id"])
            node = ObjectNode(
                id=nid,
                class_name=str(raw["class_name"]),
                properties=frozenset(Property(p) for p in raw.get("properties", ())),
                states={State(s) for s in raw.get("states", ())},
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise SceneFormatError(f"bad node {raw!r}: {exc}") from exc
        if nid in nodes:
            raise SceneFormatError(f"duplicate node id {nid}")
        nodes[nid] = node
    edges = set()
    for raw in obj.get("edges", ()):
        try:
            edges.add(Relation(int(raw["from"]), RelationKind(raw["relation"]), int(raw["to"])))
        except (KeyError, ValueError, TypeError) as exc:
            raise SceneFormatError(f"bad edge {raw!r}: {exc}") from exc
    try:
        agent_id = int(obj["agent_id"])
    except (KeyError, ValueError, TypeError) as exc:
        raise SceneFormatError("missing or bad agent_id") from exc
    posture = Posture(obj.get("agent_posture", "STANDING"))
    state = WorldState(nodes=nodes, edges=edges, agent_id=agent_id, agent_posture=posture)
    validate_state(state)
    return state


def scene_to_obj(state: WorldState) -> dict:
    return {
        "format_version": 1,
        "agent_id": state.agent_id,
        "agent_posture": state.agent_posture.value,
        "nodes": [
            {
                "id": n.id,
                "class_name": n.class_name,
                "properties": sorted(p.value for p in n.properties),
                "states": sorted(s.value for s in n.states),
            }
            for _, n in sorted(state.nodes.items())
        ],
        "edges": [
            {"from": e.from_id, "relation": e.kind.value, "to": e.to_id}
            for e in sorted(state.edges, key=lambda e: (e.from_id, e.kind.value, e.to_id))
        ],
    }


def load_scene(path: str | Path) -> WorldState:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"{path}: invalid JSON: {exc}") from exc
    try:
        return scene_from_obj(obj)
    except SceneFormatError as exc:
        raise SceneFormatError(f"{path}: {exc}") from exc
