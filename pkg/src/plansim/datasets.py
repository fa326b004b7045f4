"""Training-data construction from the corpus and from exploration.

Three sample kinds are produced:

* planning samples — every prefix of every expert program, one sample per
  step (so a task with n steps yields exactly n samples);
* feedback samples — (history, proposed action) -> environment verdict;
* correction samples — non-executable proposal plus an executable fix.

Feedback/correction data come from two collectors: guided exploration
(``run_tge``) probes the policy at each step of the expert path while the
true state advances along that path, and free exploration (``run_tfe``)
lets the policy roll out on its own with a corrector patching
non-executable steps.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from . import world
from .corpus import Corpus, ReplayError
from .grammar import render_action
from .trajectory import (
    Trajectory,
    TrajectoryStep,
    canonical_action_text,
    history_actions,
    is_done,
    proposal_feedback,
    render_history,
)
from .world import ErrorType, Feedback

log = logging.getLogger(__name__)

SOURCE_SLICE = "slice"
SOURCE_TGE = "TGE"
SOURCE_TFE = "TFE"


class DatasetFormatError(ValueError):
    """An exported dataset file does not match its line schema."""


def _history_to_obj(history: Trajectory) -> list:
    return [step.to_obj() for step in history]


def _history_from_obj(raw) -> Trajectory:
    if not isinstance(raw, list):
        raise DatasetFormatError("history must be a list")
    return tuple(TrajectoryStep.from_obj(o) for o in raw)


@dataclass(frozen=True)
class PlanningSample:
    """Next-action target given the task instruction and the trajectory so far."""

    task_id: str
    task: str
    history: Trajectory
    target: str
    source: str = SOURCE_SLICE
    step: int = 0  # 1-based step index of the target within its task

    def to_obj(self) -> dict:
        return {
            "kind": "plan",
            "task": self.task,
            "task_id": self.task_id,
            "source": self.source,
            "step": self.step,
            "history": _history_to_obj(self.history),
            "target": self.target,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "PlanningSample":
        if obj.get("kind") != "plan":
            raise DatasetFormatError(f"expected kind 'plan', got {obj.get('kind')!r}")
        return cls(
            task_id=str(obj["task_id"]),
            task=str(obj["task"]),
            history=_history_from_obj(obj["history"]),
            target=str(obj["target"]),
            source=str(obj.get("source", SOURCE_SLICE)),
            step=int(obj.get("step", 0)),
        )


@dataclass(frozen=True)
class FeedbackSample:
    """Environment verdict for a proposed action in a reconstructed state."""

    task_id: str
    task: str
    history: Trajectory
    action: str
    ok: bool
    error_type: str | None
    message: str
    source: str = SOURCE_TGE
    step: int = 0

    def __post_init__(self):
        # reuse the Feedback coherence rule: ok <=> no error type <=> "True"
        Feedback(self.ok, None if self.error_type is None else ErrorType(self.error_type), self.message)

    @property
    def feedback(self) -> Feedback:
        return Feedback(
            self.ok, None if self.error_type is None else ErrorType(self.error_type), self.message
        )

    def to_obj(self) -> dict:
        return {
            "kind": "fb",
            "task": self.task,
            "task_id": self.task_id,
            "source": self.source,
            "step": self.step,
            "history": _history_to_obj(self.history),
            "action": self.action,
            "ok": self.ok,
            "error_type": self.error_type,
            "message": self.message,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "FeedbackSample":
        if obj.get("kind") != "fb":
            raise DatasetFormatError(f"expected kind 'fb', got {obj.get('kind')!r}")
        return cls(
            task_id=str(obj["task_id"]),
            task=str(obj["task"]),
            history=_history_from_obj(obj["history"]),
            action=str(obj["action"]),
            ok=bool(obj["ok"]),
            error_type=obj["error_type"],
            message=str(obj["message"]),
            source=str(obj.get("source", SOURCE_TGE)),
            step=int(obj.get("step", 0)),
        )


@dataclass(frozen=True)
class CorrectionSample:
    """A rejected action, its feedback, and an executable replacement."""

    task_id: str
    task: str
    history: Trajectory
    action: str
    error_type: str
    message: str
    corrected: str
    source: str = SOURCE_TGE
    step: int = 0

    def __post_init__(self):
        if self.corrected == self.action:
            raise ValueError("corrected action must differ from the rejected action")
        Feedback(False, ErrorType(self.error_type), self.message)

    @property
    def feedback(self) -> Feedback:
        return Feedback(False, ErrorType(self.error_type), self.message)

    def to_obj(self) -> dict:
        return {
            "kind": "corr",
            "task": self.task,
            "task_id": self.task_id,
            "source": self.source,
            "step": self.step,
            "history": _history_to_obj(self.history),
            "action": self.action,
            "ok": False,
            "error_type": self.error_type,
            "message": self.message,
            "corrected": self.corrected,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "CorrectionSample":
        if obj.get("kind") != "corr":
            raise DatasetFormatError(f"expected kind 'corr', got {obj.get('kind')!r}")
        if obj.get("ok") not in (False, None):
            raise DatasetFormatError("correction samples must have ok=false")
        return cls(
            task_id=str(obj["task_id"]),
            task=str(obj["task"]),
            history=_history_from_obj(obj["history"]),
            action=str(obj["action"]),
            error_type=str(obj["error_type"]),
            message=str(obj["message"]),
            corrected=str(obj["corrected"]),
            source=str(obj.get("source", SOURCE_TGE)),
            step=int(obj.get("step", 0)),
        )


# -- corpus slicing ----------------------------------------------------


def slice_planning(corpus: Corpus, task_ids) -> list:
    """One planning sample per expert step: history prefix -> next action."""
    samples = []
    for task_id in sorted(task_ids):
        task = corpus.task(task_id)
        state = corpus.initial_state(task)
        history: list[TrajectoryStep] = []
        for idx, action in enumerate(task.program, start=1):
            text = render_action(action)
            samples.append(
                PlanningSample(
                    task_id=task.id,
                    task=task.instruction,
                    history=tuple(history),
                    target=text,
                    source=SOURCE_SLICE,
                    step=idx,
                )
            )
            state, feedback = world.apply(state, action)
            if not feedback.ok:
                raise ReplayError(
                    f"task {task.id!r} step {idx} is not executable: {feedback.message}"
                )
            history.append(TrajectoryStep(text, world.observation(state)))
    return samples


def subsample_pretune(samples: list, k: int, seed: int) -> list:
    """Seeded uniform subsample of k samples, preserving the input order."""
    if k < 0:
        raise ValueError("k must be non-negative")
    if k >= len(samples):
        return list(samples)
    rng = random.Random(f"{seed}:pretune")
    picked = sorted(rng.sample(range(len(samples)), k))
    return [samples[i] for i in picked]


# -- guided exploration (expert-path probing) ---------------------------


@dataclass
class TGEStats:
    steps: int = 0
    matches: int = 0
    mismatched_executable: int = 0
    mismatched_nonexecutable: int = 0
    error_counts: dict = field(default_factory=dict)

    def _count(self, error_type: ErrorType) -> None:
        self.error_counts[error_type.value] = self.error_counts.get(error_type.value, 0) + 1


def run_tge(policy, corpus: Corpus, task_ids) -> tuple[list, list, TGEStats]:
    """Probe the policy one step at a time along each expert path.

    The proposal is judged against the current expert-path state without
    being executed; the true state always advances by the expert action, so
    every later step is probed on-distribution.
    """
    fb_samples: list[FeedbackSample] = []
    corr_samples: list[CorrectionSample] = []
    stats = TGEStats()
    for task_id in sorted(task_ids):
        task = corpus.task(task_id)
        state = corpus.initial_state(task)
        history: list[TrajectoryStep] = []
        for idx, expert_action in enumerate(task.program, start=1):
            expert_text = render_action(expert_action)
            proposed = canonical_action_text(policy.plan(task.instruction, tuple(history)))
            stats.steps += 1
            verdict = proposal_feedback(state, proposed)
            if proposed == expert_text:
                stats.matches += 1
                fb_samples.append(
                    FeedbackSample(
                        task_id=task.id,
                        task=task.instruction,
                        history=tuple(history),
                        action=proposed,
                        ok=verdict.ok,
                        error_type=None if verdict.error_type is None else verdict.error_type.value,
                        message=verdict.message,
                        source=SOURCE_TGE,
                        step=idx,
                    )
                )
            elif not verdict.ok:
                stats.mismatched_nonexecutable += 1
                stats._count(verdict.error_type)
                fb_samples.append(
                    FeedbackSample(
                        task_id=task.id,
                        task=task.instruction,
                        history=tuple(history),
                        action=proposed,
                        ok=False,
                        error_type=verdict.error_type.value,
                        message=verdict.message,
                        source=SOURCE_TGE,
                        step=idx,
                    )
                )
                corr_samples.append(
                    CorrectionSample(
                        task_id=task.id,
                        task=task.instruction,
                        history=tuple(history),
                        action=proposed,
                        error_type=verdict.error_type.value,
                        message=verdict.message,
                        corrected=expert_text,
                        source=SOURCE_TGE,
                        step=idx,
                    )
                )
            else:
                # executable deviation from the expert: no supervision signal
                stats.mismatched_executable += 1
            state, exec_feedback = world.apply(state, expert_action)
            if not exec_feedback.ok:
                raise ReplayError(
                    f"task {task.id!r} step {idx} is not executable: {exec_feedback.message}"
                )
            history.append(TrajectoryStep(expert_text, world.observation(state)))
    return fb_samples, corr_samples, stats


# -- free exploration (policy rollouts with a corrector) ----------------


@dataclass
class TFEStats:
    tasks: int = 0
    steps: int = 0
    executed: int = 0
    failed: int = 0
    corrected: int = 0
    filtered: int = 0
    stopped: int = 0
    error_counts: dict = field(default_factory=dict)

    def _count(self, error_type: ErrorType) -> None:
        self.error_counts[error_type.value] = self.error_counts.get(error_type.value, 0) + 1


def run_tfe(policy, corrector, corpus: Corpus, task_ids, max_steps: int = 10):
    """Free rollouts: the policy acts, every step is a feedback sample, and
    non-executable steps are patched by the corrector when its proposal
    re-checks as executable (otherwise the step is discarded)."""
    fb_samples: list[FeedbackSample] = []
    corr_samples: list[CorrectionSample] = []
    stats = TFEStats()
    for task_id in sorted(task_ids):
        task = corpus.task(task_id)
        state = corpus.initial_state(task)
        history: list[TrajectoryStep] = []
        stats.tasks += 1
        for idx in range(1, max_steps + 1):
            proposed = policy.plan(task.instruction, tuple(history))
            if is_done(proposed):
                stats.stopped += 1
                break
            proposed = canonical_action_text(proposed)
            stats.steps += 1
            verdict = proposal_feedback(state, proposed)
            fb_samples.append(
                FeedbackSample(
                    task_id=task.id,
                    task=task.instruction,
                    history=tuple(history),
                    action=proposed,
                    ok=verdict.ok,
                    error_type=None if verdict.error_type is None else verdict.error_type.value,
                    message=verdict.message,
                    source=SOURCE_TFE,
                    step=idx,
                )
            )
            if verdict.ok:
                state, _ = world.apply_text(state, proposed)
                history.append(TrajectoryStep(proposed, world.observation(state)))
                stats.executed += 1
                continue
            stats.failed += 1
            stats._count(verdict.error_type)
            fix = corrector.correct(task.instruction, tuple(history), proposed, verdict.message)
            fix = None if fix is None else canonical_action_text(fix)
            if fix is None or fix == proposed:
                stats.filtered += 1
                continue
            fix_verdict = proposal_feedback(state, fix)
            if not fix_verdict.ok:
                stats.filtered += 1
                continue
            corr_samples.append(
                CorrectionSample(
                    task_id=task.id,
                    task=task.instruction,
                    history=tuple(history),
                    action=proposed,
                    error_type=verdict.error_type.value,
                    message=verdict.message,
                    corrected=fix,
                    source=SOURCE_TFE,
                    step=idx,
                )
            )
            stats.corrected += 1
            state, _ = world.apply_text(state, fix)
            history.append(TrajectoryStep(fix, world.observation(state)))
    return fb_samples, corr_samples, stats


# -- sample verification (re-replayability) ------------------------------


def reconstruct_state(corpus: Corpus, sample):
    """State implied by (task, history); raises ReplayError if the history
    does not execute."""
    return corpus.replay(sample.task_id, history_actions(sample.history))


def verify_feedback_sample(corpus: Corpus, sample: FeedbackSample) -> bool:
    """Recompute the environment verdict; True when it matches the sample."""
    state = reconstruct_state(corpus, sample)
    verdict = proposal_feedback(state, sample.action)
    return verdict == sample.feedback


def verify_correction_sample(corpus: Corpus, sample: CorrectionSample) -> bool:
    """The rejected action must fail and the corrected one must execute."""
    state = reconstruct_state(corpus, sample)
    verdict = proposal_feedback(state, sample.action)
    if verdict != sample.feedback:
        return False
    return proposal_feedback(state, sample.corrected).ok


# -- prompt templates ----------------------------------------------------


class TemplateError(ValueError):
    """A template file is malformed or missing a required placeholder."""


@dataclass(frozen=True)
class PromptTemplateSet:
    planning: str
    feedback: str
    correction: str


_TEMPLATE_REQUIRED = {
    "planning": ("{task}", "{history}"),
    "feedback": ("{task}", "{history}", "{action}"),
    "correction": ("{task}", "{history}", "{action}", "{feedback}"),
}


def _templates_from_obj(obj: dict) -> PromptTemplateSet:
    if not isinstance(obj, dict) or obj.get("format_version") != 1:
        raise TemplateError("template file must be an object with format_version 1")
    fields = {}
    for name, placeholders in _TEMPLATE_REQUIRED.items():
        text = obj.get(name)
        if not isinstance(text, str):
            raise TemplateError(f"missing template {name!r}")
        for ph in placeholders:
            if ph not in text:
                raise TemplateError(f"template {name!r} lacks placeholder {ph}")
        fields[name] = text
    return PromptTemplateSet(**fields)


def load_templates(path: str | Path) -> PromptTemplateSet:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise TemplateError(f"{path}: invalid JSON: {exc}") from exc
    return _templates_from_obj(obj)


_DEFAULT_TEMPLATES: PromptTemplateSet | None = None


def default_templates() -> PromptTemplateSet:
    global _DEFAULT_TEMPLATES
    if _DEFAULT_TEMPLATES is None:
        text = resources.files("plansim.data").joinpath("templates.json").read_text(encoding="utf-8")
        _DEFAULT_TEMPLATES = _templates_from_obj(json.loads(text))
    return _DEFAULT_TEMPLATES


def render_prompt(templates: PromptTemplateSet, sample) -> tuple[str, str]:
    """(prompt, target) pair for any sample kind."""
    history = render_history(sample.history)
    try:
        if isinstance(sample, PlanningSample):
            return templates.planning.format(task=sample.task, history=history), sample.target
        if isinstance(sample, FeedbackSample):
            prompt = templates.feedback.format(
                task=sample.task, history=history, action=sample.action
            )
            return prompt, sample.message
        if isinstance(sample, CorrectionSample):
            prompt = templates.correction.format(
                task=sample.task, history=history, action=sample.action, feedback=sample.message
            )
            return prompt, sample.corrected
    except (KeyError, IndexError, ValueError) as exc:
        raise TemplateError(f"template rendering failed: {exc}") from exc
    raise TypeError(f"not a sample: {sample!r}")


# -- export / load -------------------------------------------------------

PLANNING_FILE = "planning.jsonl"
FEEDBACK_FILE = "feedback.jsonl"
CORRECTION_FILE = "correction.jsonl"
MANIFEST_FILE = "manifest.json"


@dataclass(frozen=True)
class ExportManifest:
    counts: dict
    files: dict  # filename -> {"count": int, "sha256": str}
    extra: dict

    def to_obj(self) -> dict:
        return {
            "format_version": 1,
            "counts": dict(self.counts),
            "files": {k: dict(v) for k, v in self.files.items()},
            **({"extra": self.extra} if self.extra else {}),
        }


def _dump_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def _sample_sort_key(sample):
    return (sample.task_id, sample.step, sample.source, getattr(sample, "action", ""),
            getattr(sample, "target", ""))


def _write_jsonl(path: Path, objs) -> dict:
    data = "".join(_dump_line(o) for o in objs)
    raw = data.encode("utf-8")
    path.write_bytes(raw)
    return {"count": data.count("\n"), "sha256": hashlib.sha256(raw).hexdigest()}


def merge_and_export(
    planning,
    feedback,
    correction,
    out_dir: str | Path,
    templates: PromptTemplateSet | None = None,
    extra_manifest: dict | None = None,
    extra_files: dict | None = None,
) -> ExportManifest:
    """Write the three corpora (and optional rendered-prompt files) plus a
    manifest with per-file counts and content hashes. Output ordering is
    canonical, so identical inputs give byte-identical files.

    ``extra_files`` maps additional jsonl names to sample lists written
    as-is (already ordered by the caller)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    planning = sorted(planning, key=_sample_sort_key)
    feedback = sorted(feedback, key=_sample_sort_key)
    correction = sorted(correction, key=_sample_sort_key)
    files = {
        PLANNING_FILE: _write_jsonl(out / PLANNING_FILE, (s.to_obj() for s in planning)),
        FEEDBACK_FILE: _write_jsonl(out / FEEDBACK_FILE, (s.to_obj() for s in feedback)),
        CORRECTION_FILE: _write_jsonl(out / CORRECTION_FILE, (s.to_obj() for s in correction)),
    }
    for name, samples in (extra_files or {}).items():
        files[name] = _write_jsonl(out / name, (s.to_obj() for s in samples))
    if templates is not None:
        for name, samples in (
            ("prompts_planning.jsonl", planning),
            ("prompts_feedback.jsonl", feedback),
            ("prompts_correction.jsonl", correction),
        ):
            rendered = (
                {"prompt": p, "target": t} for p, t in (render_prompt(templates, s) for s in samples)
            )
            files[name] = _write_jsonl(out / name, rendered)
    counts = {
        "planning": files[PLANNING_FILE]["count"],
        "feedback": files[FEEDBACK_FILE]["count"],
        "correction": files[CORRECTION_FILE]["count"],
    }
    manifest = ExportManifest(counts=counts, files=files, extra=dict(extra_manifest or {}))
    (out / MANIFEST_FILE).write_bytes(
        json.dumps(manifest.to_obj(), sort_keys=True, indent=2).encode("utf-8") + b"\n"
    )
    return manifest


def _load_jsonl(path: Path, parser) -> list:
    if not path.is_file():
        raise DatasetFormatError(f"{path} not found")
    out = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            out.append(parser(obj))
        except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
            raise DatasetFormatError(f"{path} line {lineno}: {exc}") from exc
    return out


def load_planning(path: str | Path) -> list:
    return _load_jsonl(Path(path), PlanningSample.from_obj)


def load_feedback(path: str | Path) -> list:
    return _load_jsonl(Path(path), FeedbackSample.from_obj)


def load_correction(path: str | Path) -> list:
    return _load_jsonl(Path(path), CorrectionSample.from_obj)
