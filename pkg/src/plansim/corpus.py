"""Task corpus: loading, validation, train/test splitting.

A corpus directory holds ``tasks.jsonl`` (one task per line) and a
``scenes/`` directory with one JSON scene file per ``scene_ref``.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from . import world
from .grammar import Action, ActionParseError, parse_action, render_action
from .world import Feedback, WorldState


class CorpusFormatError(ValueError):
    """tasks.jsonl or a referenced scene is malformed."""


class InvalidSplitError(ValueError):
    """Requested split sizes do not fit the corpus."""


class ReplayError(ValueError):
    """A history action failed to execute during state reconstruction."""


@dataclass(frozen=True)
class Task:
    id: str
    name: str
    description: str
    instruction: str
    scene_ref: str
    program: tuple[Action, ...]

    @property
    def program_text(self) -> tuple[str, ...]:
        return tuple(render_action(a) for a in self.program)

    @property
    def n_steps(self) -> int:
        return len(self.program)


@dataclass
class Corpus:
    tasks: dict[str, Task]
    scenes: dict[str, WorldState]
    root: Path | None = None

    def task(self, task_id: str) -> Task:
        try:
            return self.tasks[task_id]
        except KeyError:
            raise KeyError(f"unknown task id {task_id!r}") from None

    def task_ids(self) -> list[str]:
        return sorted(self.tasks)

    def initial_state(self, task: Task | str) -> WorldState:
        """Fresh copy of the task's scene; callers may mutate freely."""
        if isinstance(task, str):
            task = self.task(task)
        return self.scenes[task.scene_ref].clone()

    def task_for_instruction(self, instruction: str) -> Task:
        matches = [t for t in self.tasks.values() if t.instruction == instruction]
        if not matches:
            raise LookupError(f"no task with instruction {instruction!r}")
        if len(matches) > 1:
            raise LookupError(
                f"instruction {instruction!r} is ambiguous: {[t.id for t in matches]}"
            )
        return matches[0]

    def replay(self, task: Task | str, history_actions) -> WorldState:
        """Reconstruct the state after executing the given action texts in order."""
        if isinstance(task, str):
            task = self.task(task)
        state = self.initial_state(task)
        for i, text in enumerate(history_actions):
            state, feedback = world.apply_text(state, text)
            if not feedback.ok:
                raise ReplayError(
                    f"task {task.id!r} history step {i + 1} ({text!r}) failed: {feedback.message}"
                )
        return state


def bundled_corpus_path() -> Path:
    """Path of the packaged mini corpus (two scenes, twelve tasks)."""
    return Path(str(resources.files("plansim.data").joinpath("mini_corpus")))


_REQUIRED_TASK_KEYS = {"id", "name", "description", "instruction", "scene_ref", "program"}


def load_corpus(path: str | Path) -> Corpus:
    root = Path(path)
    tasks_file = root / "tasks.jsonl"
    if not tasks_file.is_file():
        raise CorpusFormatError(f"{tasks_file} not found")
    tasks: dict[str, Task] = {}
    scene_refs: set[str] = set()
    for lineno, line in enumerate(tasks_file.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"tasks.jsonl line {lineno}: invalid JSON: {exc}") from exc
        missing = _REQUIRED_TASK_KEYS - set(raw)
        if missing:
            raise CorpusFormatError(f"tasks.jsonl line {lineno}: missing keys {sorted(missing)}")
        task_id = str(raw["id"])
        if task_id in tasks:
            raise CorpusFormatError(f"duplicate task id {task_id!r}")
        program_lines = raw["program"]
        if not isinstance(program_lines, list) or not program_lines:
            raise CorpusFormatError(f"task {task_id!r}: program must be a non-empty list")
        actions = []
        for i, text in enumerate(program_lines, start=1):
            try:
                actions.append(parse_action(text))
            except ActionParseError as exc:
                raise CorpusFormatError(f"task {task_id!r} step {i}: {exc}") from exc
        if not str(raw["instruction"]).strip():
            raise CorpusFormatError(f"task {task_id!r}: empty instruction")
        tasks[task_id] = Task(
            id=task_id,
            name=str(raw["name"]),
            description=str(raw["description"]),
            instruction=str(raw["instruction"]),
            scene_ref=str(raw["scene_ref"]),
            program=tuple(actions),
        )
        scene_refs.add(str(raw["scene_ref"]))
    if not tasks:
        raise CorpusFormatError("tasks.jsonl holds no tasks")
    scenes: dict[str, WorldState] = {}
    for ref in sorted(scene_refs):
        scene_path = root / "scenes" / f"{ref}.json"
        if not scene_path.is_file():
            raise CorpusFormatError(f"scene {ref!r} not found at {scene_path}")
        try:
            scenes[ref] = world.load_scene(scene_path)
        except world.SceneFormatError as exc:
            raise CorpusFormatError(str(exc)) from exc
    return Corpus(tasks=tasks, scenes=scenes, root=root)


@dataclass(frozen=True)
class TaskValidation:
    task_id: str
    ok: bool
    failing_step: int | None = None  # 1-based
    feedback: Feedback | None = None


@dataclass
class ValidationReport:
    results: dict[str, TaskValidation] = field(default_factory=dict)

    @property
    def all_ok(self) -> bool:
        return all(r.ok for r in self.results.values())

    def failures(self) -> list[TaskValidation]:
        return [r for r in self.results.values() if not r.ok]

    def summary(self) -> str:
        lines = []
        for task_id in sorted(self.results):
            r = self.results[task_id]
            if r.ok:
                lines.append(f"{task_id}: ok")
            else:
                lines.append(f"{task_id}: step {r.failing_step} failed: {r.feedback.message}")
        return "\n".join(lines)


def validate_corpus(corpus: Corpus) -> ValidationReport:
    """Replay every expert program from its scene's initial state."""
    report = ValidationReport()
    for task_id in corpus.task_ids():
        task = corpus.task(task_id)
        state = corpus.initial_state(task)
        verdict = TaskValidation(task_id, True)
        for i, action in enumerate(task.program, start=1):
            state, feedback = world.apply(state, action)
            if not feedback.ok:
                verdict = TaskValidation(task_id, False, i, feedback)
                break
        report.results[task_id] = verdict
    return report


@dataclass(frozen=True)
class Split:
    train: tuple[str, ...]
    test: tuple[str, ...]
    seed: int


def split(corpus: Corpus, seed: int, n_test: int) -> Split:
    """Seeded uniform shuffle, then partition into train/test id lists."""
    ids = corpus.task_ids()
    if not 0 <= n_test < len(ids):
        raise InvalidSplitError(f"n_test={n_test} must be in [0, {len(ids)})")
    rng = random.Random(seed)
    shuffled = list(ids)
    rng.shuffle(shuffled)
    test = tuple(sorted(shuffled[:n_test]))
    train = tuple(sorted(shuffled[n_test:]))
    return Split(train=train, test=test, seed=seed)


def seen_tasks(split_: Split, n: int | None = None, seed: int | None = None) -> tuple[str, ...]:
    """Seeded evaluation subset drawn from the train split ("seen" tasks)."""
    if n is None:
        n = min(len(split_.test), len(split_.train)) or len(split_.train)
    if n > len(split_.train):
        raise InvalidSplitError(f"n={n} exceeds train size {len(split_.train)}")
    rng = random.Random(f"{split_.seed if seed is None else seed}:seen")
    return tuple(sorted(rng.sample(sorted(split_.train), n)))
