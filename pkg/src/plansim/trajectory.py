"""Trajectory steps and small helpers shared by policies, datasets and the
episode runner."""

from __future__ import annotations

from dataclasses import dataclass

from .grammar import ActionParseError, END_TOKEN, parse_action, render_action
from .world import ErrorType, Feedback, WorldState, check_text


@dataclass(frozen=True)
class TrajectoryStep:
    """One executed action and the observation seen immediately after it."""

    action: str
    observation: str

    def to_obj(self) -> dict:
        return {"action": self.action, "observation": self.observation}

    @classmethod
    def from_obj(cls, obj: dict) -> "TrajectoryStep":
        return cls(action=str(obj["action"]), observation=str(obj["observation"]))


Trajectory = tuple[TrajectoryStep, ...]


def history_actions(history: Trajectory) -> list[str]:
    return [step.action for step in history]


def render_history(history: Trajectory) -> str:
    """One-line rendering used inside prompt templates."""
    if not history:
        return "none"
    return ", ".join(step.action for step in history)


def is_done(text: str) -> bool:
    return isinstance(text, str) and text.strip() == END_TOKEN


def canonical_action_text(text: str) -> str:
    """Canonical rendering when the text parses; the stripped raw text otherwise."""
    try:
        return render_action(parse_action(text))
    except ActionParseError:
        return text.strip()


def proposal_feedback(state: WorldState, text: str) -> Feedback:
    """Environment verdict on a policy proposal.

    A premature completion token and unparseable text are both rule
    violations outside the named categories, so they report as OTHERS.
    """
    if is_done(text):
        return Feedback.failure(
            ErrorType.OTHERS, "the agent stopped before the task was complete."
        )
    return check_text(state, text)
