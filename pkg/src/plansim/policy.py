"""Policies and correctors.

A policy answers three queries, all expressed over plain text:

* ``plan(task, history) -> action`` — next action, or the end marker;
* ``feedback(task, history, action) -> message`` — the policy's own guess
  at the environment verdict ("True" means executable);
* ``correct(task, history, action, feedback) -> action | None`` — a
  replacement for a rejected action.

Reference implementations cover the expert (replays the corpus program), a
noisy expert that injects verifiable errors at a fixed rate, a uniform
random baseline, and a retrieval policy fitted on exported datasets. The
wire-protocol client lives in :class:`ExternalPolicy`.
"""

from __future__ import annotations

import itertools
import random
import threading
from collections import Counter

from . import wire, world
from .corpus import Corpus, ReplayError, Task
from .grammar import (
    Action,
    ActionParseError,
    END_TOKEN,
    ObjectRef,
    VERB_ARITY,
    Verb,
    parse_action,
    render_action,
)
from .trajectory import Trajectory, history_actions, is_done
from .world import ErrorType, Property, State, SUCCESS_MESSAGE


class PolicyFailure(RuntimeError):
    """The policy cannot answer (bad reply, closed connection, etc.)."""


class Policy:
    """Base class; feedback defaults to optimistic, correct to a no-op."""

    def plan(self, task: str, history: Trajectory) -> str:
        raise NotImplementedError

    def feedback(self, task: str, history: Trajectory, action: str) -> str:
        return SUCCESS_MESSAGE

    def correct(self, task: str, history: Trajectory, action: str, feedback: str):
        return action


def _aligned_next_index(program_text, history: Trajectory) -> int:
    # advance a pointer through the expert program for every history action
    # that matches it in order; robust to extra (corrected) steps in between
    i = 0
    for step in history:
        if i < len(program_text) and step.action == program_text[i]:
            i += 1
    return i


class ExpertPolicy(Policy):
    """Replays the corpus program verbatim, then stops."""

    def __init__(self, corpus: Corpus):
        self.corpus = corpus

    def plan(self, task: str, history: Trajectory) -> str:
        texts = self.corpus.task_for_instruction(task).program_text
        pos = len(history)
        return texts[pos] if pos < len(texts) else END_TOKEN

    def correct(self, task: str, history: Trajectory, action: str, feedback: str):
        texts = self.corpus.task_for_instruction(task).program_text
        i = _aligned_next_index(texts, history)
        return texts[min(i, len(texts) - 1)]


# verbs whose rule flips a boolean state; used by the noisy generator
_FLIP_VERBS = (Verb.OPEN, Verb.CLOSE, Verb.SWITCHON, Verb.SWITCHOFF, Verb.PLUGIN, Verb.PLUGOUT)


class NoisyExpertPolicy(Policy):
    """Expert that deviates with probability ``p`` per step, proposing an
    action engineered (and verified) to trip a specific error category.

    Deterministic: the deviation draw is keyed by (seed, task id, history
    length), so replanning the same step gives the same answer.
    """

    def __init__(self, corpus: Corpus, p: float = 0.3, seed: int = 0, error_types=None):
        if not 0.0 <= p <= 1.0:
            raise ValueError("p must be in [0, 1]")
        self.corpus = corpus
        self.p = p
        self.seed = seed
        self.error_types = None if error_types is None else tuple(ErrorType(e) for e in error_types)

    def plan(self, task: str, history: Trajectory) -> str:
        task_obj = self.corpus.task_for_instruction(task)
        texts = task_obj.program_text
        pos = len(history)
        if pos >= len(texts):
            return END_TOKEN
        expert = texts[pos]
        rng = random.Random(f"{self.seed}:{task_obj.id}:{pos}")
        if rng.random() >= self.p:
            return expert
        try:
            state = self.corpus.replay(task_obj, history_actions(history))
        except ReplayError:
            return expert
        candidates = self._candidates(state)
        if self.error_types is not None:
            allowed = set(self.error_types)
            candidates = [c for c in candidates if c[0] in allowed]
        if not candidates:
            return expert
        return rng.choice(candidates)[1]

    def _candidates(self, state) -> list:
        """One verified proposal per provokable error category, in taxonomy
        order. Each candidate is re-checked so the label is always right."""
        rules = world.default_rules()
        nodes = sorted(
            (n for n in state.nodes.values() if n.id != state.agent_id), key=lambda n: n.id
        )
        close = state.close_ids()
        held = state.held_ids()
        raw: list[tuple[ErrorType, str]] = []
        absent = max(state.nodes) + 13
        raw.append((ErrorType.OBJECT_AVAILABILITY, f"[GRAB] <phantom_box> ({absent})"))
        for n in nodes:
            if not n.has(Property.MOVABLE):
                raw.append((ErrorType.INVALID_ACTION, f"[PULL] <{n.class_name}> ({n.id})"))
                break
        for n in nodes:
            if n.id not in close and n.id not in held:
                raw.append((ErrorType.AGENT_PROXIMITY, f"[TOUCH] <{n.class_name}> ({n.id})"))
                break
        for n in nodes:
            if n.id in close and n.has(Property.GRABBABLE):
                box = state.enclosing_closed_container(n.id)
                if box is not None:
                    raw.append((ErrorType.ENCLOSED_OBJECT, f"[GRAB] <{n.class_name}> ({n.id})"))
                    break
        for n in nodes:
            if n.has(Property.GRABBABLE) and n.id not in held:
                raw.append((ErrorType.MISSING_OBJECT, f"[DROP] <{n.class_name}> ({n.id})"))
                break
        if len(held) >= 2:
            for n in nodes:
                if n.id in close and n.id not in held and n.has(Property.GRABBABLE):
                    raw.append(
                        (ErrorType.OVER_OCCUPIED_AGENT, f"[GRAB] <{n.class_name}> ({n.id})")
                    )
                    break
        flip_done = False
        for verb in _FLIP_VERBS:
            if flip_done:
                break
            flip = rules[verb].state_flip
            for n in nodes:
                if n.id in close and State(flip[1]) in n.states:
                    raw.append(
                        (ErrorType.UNFLIPPED_BOOLEAN_STATE, f"[{verb.value}] <{n.class_name}> ({n.id})")
                    )
                    flip_done = True
                    break
        out = []
        for wanted, text in raw:
            verdict = world.check_text(state, text)
            if not verdict.ok and verdict.error_type == wanted:
                out.append((wanted, text))
        return out


class RandomPolicy(Policy):
    """Uniform verb and argument choice over the task's scene objects."""

    def __init__(self, corpus: Corpus, seed: int = 0, done_prob: float = 0.05):
        self.corpus = corpus
        self.seed = seed
        self.done_prob = done_prob
        self._scene_nodes: dict[str, list] = {}

    def _nodes(self, task: Task) -> list:
        if task.scene_ref not in self._scene_nodes:
            state = self.corpus.initial_state(task)
            self._scene_nodes[task.scene_ref] = sorted(
                ((n.class_name, n.id) for n in state.nodes.values() if n.id != state.agent_id),
                key=lambda pair: pair[1],
            )
        return self._scene_nodes[task.scene_ref]

    def plan(self, task: str, history: Trajectory) -> str:
        task_obj = self.corpus.task_for_instruction(task)
        rng = random.Random(f"{self.seed}:{task_obj.id}:{len(history)}")
        if rng.random() < self.done_prob:
            return END_TOKEN
        verb = rng.choice(list(Verb))
        nodes = self._nodes(task_obj)
        refs = []
        for _ in range(VERB_ARITY[verb]):
            if rng.random() < 0.05:
                refs.append(ObjectRef("phantom_box", 900000 + rng.randrange(100)))
            else:
                cls, oid = rng.choice(nodes)
                refs.append(ObjectRef(cls, oid))
        return render_action(Action(verb, tuple(refs)))


def _vote(counter: Counter) -> str:
    best = max(counter.values())
    return min(k for k, v in counter.items() if v == best)


class RetrievalPolicy(Policy):
    """Nearest-context lookup over fitted datasets.

    Keys are suffixes of the action history (length ``k`` down to 0),
    first scoped to the task instruction and then task-free; answers are
    majority votes with lexicographic tie-breaking. Unknown contexts fall
    back to "True" for feedback and to a state-space search (when a corpus
    is supplied) for corrections.
    """

    def __init__(self, corpus: Corpus | None = None, k: int = 3):
        if k < 1:
            raise ValueError("k must be at least 1")
        self.corpus = corpus
        self.k = k
        self._search = None if corpus is None else SearchCorrector(corpus)
        self._plan_task: dict = {}
        self._plan_free: dict = {}
        self._plan_first: Counter = Counter()
        self._plan_limit: dict = {}
        self._fb_task: dict = {}
        self._fb_free: dict = {}
        self._corr_task: dict = {}
        self._corr_free: dict = {}
        self.fitted = False

    @staticmethod
    def _suffix(history, length: int) -> tuple:
        actions = tuple(step.action for step in history)
        return actions[len(actions) - length :] if length else ()

    def fit(self, planning, feedback, correction) -> "RetrievalPolicy":
        # An empty suffix is only registered for samples whose full context
        # really was empty (task openings). Letting mid-task samples claim
        # the empty key would turn position-dependent answers into priors.
        for s in planning:
            n = len(s.history)
            for length in range(1, min(self.k, n) + 1):
                suf = self._suffix(s.history, length)
                self._plan_task.setdefault((s.task, suf), Counter())[s.target] += 1
                self._plan_free.setdefault(suf, Counter())[s.target] += 1
            if n == 0:
                self._plan_task.setdefault((s.task, ()), Counter())[s.target] += 1
                self._plan_first[s.target] += 1
            limit = self._plan_limit.get(s.task, 0)
            self._plan_limit[s.task] = max(limit, n + 1)
        for s in feedback:
            n = len(s.history)
            for length in range(1, min(self.k, n) + 1):
                suf = self._suffix(s.history, length)
                self._fb_task.setdefault((s.task, suf, s.action), Counter())[s.message] += 1
                self._fb_free.setdefault((suf, s.action), Counter())[s.message] += 1
            if n == 0:
                self._fb_task.setdefault((s.task, (), s.action), Counter())[s.message] += 1
        for s in correction:
            n = len(s.history)
            for length in range(1, min(self.k, n) + 1):
                suf = self._suffix(s.history, length)
                key = (s.task, suf, s.action, s.message)
                self._corr_task.setdefault(key, Counter())[s.corrected] += 1
                self._corr_free.setdefault(
                    (suf, s.action, s.message), Counter()
                )[s.corrected] += 1
            if n == 0:
                key = (s.task, (), s.action, s.message)
                self._corr_task.setdefault(key, Counter())[s.corrected] += 1
        self.fitted = True
        return self

    def plan(self, task: str, history: Trajectory) -> str:
        if task in self._plan_limit and len(history) >= self._plan_limit[task]:
            return END_TOKEN
        for length in range(min(self.k, len(history)), -1, -1):
            hit = self._plan_task.get((task, self._suffix(history, length)))
            if hit:
                return _vote(hit)
        for length in range(min(self.k, len(history)), 0, -1):
            hit = self._plan_free.get(self._suffix(history, length))
            if hit:
                return _vote(hit)
        if not history and self._plan_first:
            return _vote(self._plan_first)
        return END_TOKEN

    def feedback(self, task: str, history: Trajectory, action: str) -> str:
        for length in range(min(self.k, len(history)), -1, -1):
            hit = self._fb_task.get((task, self._suffix(history, length), action))
            if hit:
                return _vote(hit)
        # task-free claims need at least one action of context; an empty
        # suffix would assert a state-dependent verdict from pure prior
        for length in range(min(self.k, len(history)), 0, -1):
            hit = self._fb_free.get((self._suffix(history, length), action))
            if hit:
                return _vote(hit)
        return SUCCESS_MESSAGE

    def correct(self, task: str, history: Trajectory, action: str, feedback: str):
        for length in range(min(self.k, len(history)), -1, -1):
            hit = self._corr_task.get((task, self._suffix(history, length), action, feedback))
            if hit:
                return _vote(hit)
        for length in range(min(self.k, len(history)), 0, -1):
            hit = self._corr_free.get((self._suffix(history, length), action, feedback))
            if hit:
                return _vote(hit)
        if self._search is not None:
            found = self._search.correct(task, history, action, feedback)
            if found is not None:
                return found
        return action


def fit_retrieval(planning, feedback, correction, corpus: Corpus | None = None, k: int = 3):
    return RetrievalPolicy(corpus=corpus, k=k).fit(planning, feedback, correction)


class GroundTruthFeedback(Policy):
    """Oracle feedback provider: replays the history and checks the action."""

    def __init__(self, corpus: Corpus):
        self.corpus = corpus

    def plan(self, task: str, history: Trajectory) -> str:
        raise PolicyFailure("feedback oracle has no planner")

    def feedback(self, task: str, history: Trajectory, action: str) -> str:
        from .trajectory import proposal_feedback

        task_obj = self.corpus.task_for_instruction(task)
        try:
            state = self.corpus.replay(task_obj, history_actions(history))
        except ReplayError as exc:
            raise PolicyFailure(f"history does not replay: {exc}") from exc
        return proposal_feedback(state, action).message


class ExpertAlignCorrector:
    """Correct by resuming the expert program past the matched history."""

    def __init__(self, corpus: Corpus):
        self.corpus = corpus

    def correct(self, task: str, history: Trajectory, action: str, feedback: str):
        texts = self.corpus.task_for_instruction(task).program_text
        i = _aligned_next_index(texts, history)
        return texts[min(i, len(texts) - 1)]


class SearchCorrector:
    """Correct by searching the current state for any executable action.

    Prefers the aligned expert continuation, then scans verbs in canonical
    order over close and held objects, returning the first action that
    re-checks as executable and differs from the rejected one.
    """

    def __init__(self, corpus: Corpus):
        self.corpus = corpus

    def correct(self, task: str, history: Trajectory, action: str, feedback: str):
        task_obj = self.corpus.task_for_instruction(task)
        try:
            state = self.corpus.replay(task_obj, history_actions(history))
        except ReplayError:
            return None
        texts = task_obj.program_text
        i = _aligned_next_index(texts, history)
        if i < len(texts) and texts[i] != action and world.check_text(state, texts[i]).ok:
            return texts[i]
        held = sorted(state.held_ids())
        reachable = sorted(set(state.close_ids()) | set(held))
        refs = [
            ObjectRef(state.node(oid).class_name, oid)
            for oid in reachable
            if oid in state.nodes
        ]
        held_refs = [ObjectRef(state.node(oid).class_name, oid) for oid in held]
        for verb in Verb:
            arity = VERB_ARITY[verb]
            if arity == 0:
                options = [()]
            elif arity == 1:
                options = [(r,) for r in refs]
            else:
                options = [(a, b) for a in held_refs for b in refs]
            for args in options:
                candidate = Action(verb, tuple(args))
                text = render_action(candidate)
                if text == action:
                    continue
                if world.check(state, candidate).ok:
                    return text
        return None


class AbsentTargetCorrector:
    """Deliberately broken corrector: every proposal targets a missing id."""

    def correct(self, task: str, history: Trajectory, action: str, feedback: str):
        return "[GRAB] <phantom_box> (999999)"


class CompositePolicy(Policy):
    """Mix and match a planner, a feedback provider, and a corrector."""

    def __init__(self, planner: Policy, feedback_provider=None, corrector=None):
        self.planner = planner
        self.feedback_provider = feedback_provider
        self.corrector = corrector

    def plan(self, task: str, history: Trajectory) -> str:
        return self.planner.plan(task, history)

    def feedback(self, task: str, history: Trajectory, action: str) -> str:
        provider = self.feedback_provider or self.planner
        return provider.feedback(task, history, action)

    def correct(self, task: str, history: Trajectory, action: str, feedback: str):
        provider = self.corrector or self.planner
        return provider.correct(task, history, action, feedback)


class ExternalPolicy(Policy):
    """Client side of the wire protocol; one query in flight at a time."""

    def __init__(self, channel):
        self.channel = channel
        self._lock = threading.Lock()
        self._ids = itertools.count(1)

    def _ask(self, kind: str, task: str, history: Trajectory, action=None, feedback=None) -> str:
        with self._lock:
            qid = next(self._ids)
            query = wire.make_query(qid, kind, task, history, action=action, feedback=feedback)
            try:
                self.channel.send(query)
                reply = self.channel.recv()
            except wire.TransportError as exc:
                raise PolicyFailure(str(exc)) from exc
        if reply is None:
            raise PolicyFailure("connection closed mid-query")
        if not isinstance(reply, dict) or reply.get("id") != qid:
            raise PolicyFailure(f"reply id mismatch (expected {qid}): {reply!r}")
        if "error" in reply:
            raise PolicyFailure(f"remote error: {reply['error']}")
        result = reply.get("result")
        if not isinstance(result, str):
            raise PolicyFailure(f"reply result must be a string: {reply!r}")
        return result

    @staticmethod
    def _require_action(text: str, kind: str) -> str:
        if is_done(text):
            return END_TOKEN
        try:
            parse_action(text)
        except ActionParseError as exc:
            raise PolicyFailure(f"{kind} reply is not an action: {exc}") from exc
        return text

    def plan(self, task: str, history: Trajectory) -> str:
        return self._require_action(self._ask("plan", task, history), "plan")

    def feedback(self, task: str, history: Trajectory, action: str) -> str:
        return self._ask("feedback", task, history, action=action)

    def correct(self, task: str, history: Trajectory, action: str, feedback: str):
        return self._require_action(
            self._ask("correct", task, history, action=action, feedback=feedback), "correct"
        )
