"""Program-level metrics and evaluation reports.

* executability — 1.0 when the whole program runs start to finish in
  sequence from the scene's initial state, else 0.0;
* affordance rate — fraction of steps that execute when failed steps are
  skipped (the state only advances on success);
* plan similarity — longest common subsequence against the reference
  program, comparing (verb, argument class) shapes and ignoring ids,
  normalized by the longer program's length.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass

from . import world
from .corpus import Corpus
from .grammar import ActionParseError, parse_action
from .runner import EpisodeResult
from .world import WorldState

log = logging.getLogger(__name__)


class InvalidEdges(ValueError):
    """Length-bucket edges must be strictly ascending and non-negative."""


def executability(program, state: WorldState) -> float:
    """All-or-nothing sequential execution check."""
    if not program:
        return 1.0
    current = state.clone()
    for text in program:
        current, feedback = world.apply_text(current, text)
        if not feedback.ok:
            return 0.0
    return 1.0


def affordance_rate(program, state: WorldState) -> float:
    """Fraction of executable steps under skip-on-failure replay."""
    program = list(program)
    if not program:
        log.warning("affordance rate of an empty program is vacuously 1.0")
        return 1.0
    current = state.clone()
    ok = 0
    for text in program:
        nxt, feedback = world.apply_text(current, text)
        if feedback.ok:
            current = nxt
            ok += 1
    return ok / len(program)


def _step_key(text: str, tag: int):
    # ids are deliberately dropped: two steps match when verb and argument
    # classes agree. Unparseable steps get a per-position key so they never
    # match anything.
    try:
        action = parse_action(text)
    except ActionParseError:
        return ("!unparseable", tag)
    return (action.verb.value, tuple(ref.class_name for ref in action.args))


def lcs(program_a, program_b) -> float:
    """Normalized longest-common-subsequence plan similarity in [0, 1]."""
    a = [_step_key(t, i) for i, t in enumerate(program_a)]
    b = [_step_key(t, -i - 1) for i, t in enumerate(program_b)]
    if not a and not b:
        return 1.0
    if not a or not b:
        return 0.0
    # classic O(len(a)*len(b)) table, rolling rows
    prev = [0] * (len(b) + 1)
    for x in a:
        row = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                row.append(prev[j - 1] + 1)
            else:
                row.append(max(prev[j], row[j - 1]))
        prev = row
    return prev[-1] / max(len(a), len(b))


# -- episode-record views --------------------------------------------------


def executed_feedbacks(result: EpisodeResult) -> list:
    return [s.env_feedback for s in result.steps if s.env_feedback is not None]


def record_executability(result: EpisodeResult) -> float:
    feedbacks = executed_feedbacks(result)
    return 1.0 if all(fb.ok for fb in feedbacks) else 0.0


def record_affordance_rate(result: EpisodeResult) -> float:
    feedbacks = executed_feedbacks(result)
    if not feedbacks:
        return 1.0
    return sum(1 for fb in feedbacks if fb.ok) / len(feedbacks)


def error_stats(results) -> dict:
    """Failed-step counts per error category, over executed steps."""
    counts: Counter = Counter()
    for result in results:
        for fb in executed_feedbacks(result):
            if not fb.ok:
                counts[fb.error_type.value] += 1
    return dict(sorted(counts.items()))


def length_buckets(pairs, edges) -> list:
    """Mean value per program-length bucket.

    ``pairs`` are (length, value). ``edges`` like (6, 9) produce buckets
    [0,6), [6,9), [9,inf). Returns dicts with lo/hi/n/mean (mean is None
    for empty buckets).
    """
    edges = list(edges)
    if any(e < 0 for e in edges) or any(b <= a for a, b in zip(edges, edges[1:])):
        raise InvalidEdges(f"edges must be non-negative and strictly ascending: {edges}")
    bounds = []
    lo = 0
    for e in edges:
        if e > lo:
            bounds.append((lo, e))
        lo = e
    bounds.append((lo, None))
    buckets = [{"lo": b[0], "hi": b[1], "n": 0, "total": 0.0} for b in bounds]
    for length, value in pairs:
        for bucket in buckets:
            if length >= bucket["lo"] and (bucket["hi"] is None or length < bucket["hi"]):
                bucket["n"] += 1
                bucket["total"] += value
                break
    out = []
    for bucket in buckets:
        out.append(
            {
                "lo": bucket["lo"],
                "hi": bucket["hi"],
                "n": bucket["n"],
                "mean": (bucket["total"] / bucket["n"]) if bucket["n"] else None,
            }
        )
    return out


# -- aggregated reports ------------------------------------------------------


@dataclass(frozen=True)
class PlanScore:
    task_id: str
    executability: float
    affordance_rate: float
    lcs: float

    def to_obj(self) -> dict:
        return {
            "task_id": self.task_id,
            "executability": self.executability,
            "affordance_rate": self.affordance_rate,
            "lcs": self.lcs,
        }


def score_result(corpus: Corpus, result: EpisodeResult) -> PlanScore:
    task = corpus.task(result.task_id)
    state = corpus.initial_state(task)
    return PlanScore(
        task_id=result.task_id,
        executability=executability(result.executed_program, state),
        affordance_rate=affordance_rate(result.executed_program, state),
        lcs=lcs(result.executed_program, task.program_text),
    )


NO_DATA = "-"

DEFAULT_EDGES = (6, 9)


@dataclass(frozen=True)
class ReportRow:
    split: str
    n_tasks: int
    n_episodes: int
    exec_mean: float | None
    ar_mean: float | None
    lcs_mean: float | None
    error_counts: dict
    length_buckets: list

    def to_obj(self) -> dict:
        return {
            "split": self.split,
            "n_tasks": self.n_tasks,
            "n_episodes": self.n_episodes,
            "exec_mean": self.exec_mean,
            "ar_mean": self.ar_mean,
            "lcs_mean": self.lcs_mean,
            "error_counts": dict(self.error_counts),
            "length_buckets": list(self.length_buckets),
        }


@dataclass(frozen=True)
class Report:
    rows: tuple

    def to_obj(self) -> dict:
        return {"rows": [r.to_obj() for r in self.rows]}

    def to_text(self) -> str:
        def fmt(v):
            return NO_DATA if v is None else f"{v:.3f}"

        header = f"{'split':<10} {'tasks':>5} {'episodes':>8} {'exec':>6} {'ar':>6} {'lcs':>6}  errors"
        lines = [header, "-" * len(header)]
        for row in self.rows:
            errors = (
                ",".join(f"{k}={v}" for k, v in sorted(row.error_counts.items())) or NO_DATA
            )
            lines.append(
                f"{row.split:<10} {row.n_tasks:>5} {row.n_episodes:>8} "
                f"{fmt(row.exec_mean):>6} {fmt(row.ar_mean):>6} {fmt(row.lcs_mean):>6}  {errors}"
            )
        return "\n".join(lines)


def _mean(values):
    values = list(values)
    return sum(values) / len(values) if values else None


def report(results, corpus: Corpus, selectors, edges=DEFAULT_EDGES) -> Report:
    """Aggregate episode results into one row per named task selection.

    ``selectors`` maps a split name to the task ids it covers; episodes
    whose task is outside every selector simply do not contribute.
    """
    rows = []
    for name, task_ids in selectors.items():
        ids = set(task_ids)
        selected = [r for r in results if r.task_id in ids]
        scores = [score_result(corpus, r) for r in selected]
        pairs = [
            (corpus.task(r.task_id).n_steps, s.executability)
            for r, s in zip(selected, scores)
        ]
        rows.append(
            ReportRow(
                split=name,
                n_tasks=len({r.task_id for r in selected}),
                n_episodes=len(selected),
                exec_mean=_mean(s.executability for s in scores),
                ar_mean=_mean(s.affordance_rate for s in scores),
                lcs_mean=_mean(s.lcs for s in scores),
                error_counts=error_stats(selected),
                length_buckets=length_buckets(pairs, edges),
            )
        )
    return Report(rows=tuple(rows))
