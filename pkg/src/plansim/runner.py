"""Episode execution.

With speculative inference enabled, each planned action is first judged by
the policy's own feedback head; a predicted failure triggers one
correction round before anything touches the environment. The environment
verdict is recorded for every executed action, and the trajectory only
advances on success.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

from . import world
from .corpus import Corpus, Task
from .grammar import END_TOKEN
from .policy import Policy, PolicyFailure
from .trajectory import TrajectoryStep, canonical_action_text, is_done
from .world import Feedback, SUCCESS_MESSAGE


class DoubleRejectMode(str, Enum):
    """What to do when the corrected action is rejected as well."""

    EXECUTE_CORRECTED = "execute_corrected"
    EXECUTE_INITIAL = "execute_initial"
    SKIP_STEP = "skip_step"


class StepResolution(str, Enum):
    EXECUTED_INITIAL = "executed_initial"
    EXECUTED_CORRECTED = "executed_corrected"
    SKIPPED = "skipped"
    DONE = "done"


class Termination(str, Enum):
    DONE = "done"
    STEP_LIMIT = "step_limit"


@dataclass(frozen=True)
class EpisodeConfig:
    max_steps: int = 30
    use_speculative: bool = False
    on_double_reject: DoubleRejectMode = DoubleRejectMode.EXECUTE_CORRECTED

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")


@dataclass(frozen=True)
class StepRecord:
    initial_action: str
    self_feedback: str | None
    corrected_action: str | None
    corrected_self_feedback: str | None
    executed_action: str | None
    env_feedback: Feedback | None
    resolution: StepResolution

    def to_obj(self) -> dict:
        fb = self.env_feedback
        return {
            "initial_action": self.initial_action,
            "self_feedback": self.self_feedback,
            "corrected_action": self.corrected_action,
            "corrected_self_feedback": self.corrected_self_feedback,
            "executed_action": self.executed_action,
            "env_feedback": None
            if fb is None
            else {
                "ok": fb.ok,
                "error_type": None if fb.error_type is None else fb.error_type.value,
                "message": fb.message,
            },
            "resolution": self.resolution.value,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "StepRecord":
        fb = obj.get("env_feedback")
        feedback = None
        if fb is not None:
            feedback = Feedback(
                ok=bool(fb["ok"]),
                error_type=None
                if fb.get("error_type") is None
                else world.ErrorType(fb["error_type"]),
                message=str(fb["message"]),
            )
        return cls(
            initial_action=obj["initial_action"],
            self_feedback=obj.get("self_feedback"),
            corrected_action=obj.get("corrected_action"),
            corrected_self_feedback=obj.get("corrected_self_feedback"),
            executed_action=obj.get("executed_action"),
            env_feedback=feedback,
            resolution=StepResolution(obj["resolution"]),
        )


@dataclass(frozen=True)
class EpisodeResult:
    task_id: str
    steps: tuple
    executed_program: tuple
    termination: Termination
    failure: str | None = None

    def to_obj(self) -> dict:
        return {
            "task_id": self.task_id,
            "steps": [s.to_obj() for s in self.steps],
            "executed_program": list(self.executed_program),
            "termination": self.termination.value,
            "failure": self.failure,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "EpisodeResult":
        return cls(
            task_id=str(obj["task_id"]),
            steps=tuple(StepRecord.from_obj(s) for s in obj["steps"]),
            executed_program=tuple(obj["executed_program"]),
            termination=Termination(obj["termination"]),
            failure=obj.get("failure"),
        )


def run_episode(
    corpus: Corpus, task: Task | str, policy: Policy, config: EpisodeConfig = EpisodeConfig()
) -> EpisodeResult:
    if isinstance(task, str):
        task = corpus.task(task)
    state = corpus.initial_state(task)
    history: list[TrajectoryStep] = []
    steps: list[StepRecord] = []
    executed: list[str] = []
    termination = Termination.STEP_LIMIT
    failure = None
    try:
        while len(steps) < config.max_steps:
            proposal = policy.plan(task.instruction, tuple(history))
            if is_done(proposal):
                steps.append(
                    StepRecord(END_TOKEN, None, None, None, None, None, StepResolution.DONE)
                )
                termination = Termination.DONE
                break
            proposal = canonical_action_text(proposal)
            self_fb = corrected = corrected_fb = None
            chosen = proposal
            resolution = StepResolution.EXECUTED_INITIAL
            if config.use_speculative:
                self_fb = policy.feedback(task.instruction, tuple(history), proposal)
                if self_fb != SUCCESS_MESSAGE:
                    corrected = policy.correct(task.instruction, tuple(history), proposal, self_fb)
                    if corrected is not None and not is_done(corrected):
                        corrected = canonical_action_text(corrected)
                    usable = (
                        corrected is not None
                        and not is_done(corrected)
                        and corrected != proposal
                    )
                    if usable:
                        corrected_fb = policy.feedback(task.instruction, tuple(history), corrected)
                        if corrected_fb == SUCCESS_MESSAGE:
                            chosen, resolution = corrected, StepResolution.EXECUTED_CORRECTED
                        elif config.on_double_reject is DoubleRejectMode.EXECUTE_CORRECTED:
                            chosen, resolution = corrected, StepResolution.EXECUTED_CORRECTED
                        elif config.on_double_reject is DoubleRejectMode.EXECUTE_INITIAL:
                            pass
                        else:
                            chosen, resolution = None, StepResolution.SKIPPED
                    elif config.on_double_reject is DoubleRejectMode.SKIP_STEP:
                        # no usable correction counts as a double reject
                        chosen, resolution = None, StepResolution.SKIPPED
            if chosen is None:
                steps.append(
                    StepRecord(proposal, self_fb, corrected, corrected_fb, None, None, resolution)
                )
                continue
            executed.append(chosen)
            new_state, env_fb = world.apply_text(state, chosen)
            if env_fb.ok:
                state = new_state
                history.append(TrajectoryStep(chosen, world.observation(state)))
            steps.append(
                StepRecord(proposal, self_fb, corrected, corrected_fb, chosen, env_fb, resolution)
            )
    except PolicyFailure as exc:
        failure = str(exc)
    return EpisodeResult(
        task_id=task.id,
        steps=tuple(steps),
        executed_program=tuple(executed),
        termination=termination,
        failure=failure,
    )


def run_suite(
    corpus: Corpus,
    jobs,
    config: EpisodeConfig = EpisodeConfig(),
    parallelism: int = 1,
) -> list:
    """Run (task, policy) jobs; results come back in job order regardless of
    the worker count, so output is reproducible under any parallelism."""
    jobs = list(jobs)
    if parallelism < 1:
        raise ValueError("parallelism must be positive")

    def _one(job):
        task, policy = job
        return run_episode(corpus, task, policy, config)

    if parallelism == 1 or len(jobs) <= 1:
        return [_one(job) for job in jobs]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(_one, jobs))
