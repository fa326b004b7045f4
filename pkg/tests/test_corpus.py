import json

import pytest
from hypothesis import given, strategies as st

from plansim.corpus import (
    CorpusFormatError,
    InvalidSplitError,
    ReplayError,
    bundled_corpus_path,
    load_corpus,
    seen_tasks,
    split,
    validate_corpus,
)

TASK_IDS = [
    "charge_phone",
    "drink_milk",
    "eat_apple",
    "laundry",
    "make_tea",
    "nap",
    "read_book",
    "set_table",
    "tidy_studio",
    "wash_plate",
    "watch_tv",
    "work",
]


def test_bundled_corpus_shape(corpus):
    assert corpus.task_ids() == TASK_IDS
    assert set(corpus.scenes) == {"apartment", "studio_flat"}
    for tid in TASK_IDS:
        task = corpus.task(tid)
        assert task.n_steps >= 1
        assert task.instruction.strip()
    # instructions are unique, so instruction->task lookup is total
    instructions = [corpus.task(t).instruction for t in TASK_IDS]
    assert len(set(instructions)) == len(instructions)
    for tid in TASK_IDS:
        task = corpus.task(tid)
        assert corpus.task_for_instruction(task.instruction) is task


def test_every_expert_program_replays(corpus):
    report = validate_corpus(corpus)
    assert report.all_ok, report.summary()
    assert len(report.results) == 12


def test_initial_state_is_a_fresh_copy(corpus):
    a = corpus.initial_state("work")
    b = corpus.initial_state("work")
    assert a == b and a is not b
    a.node(417).states.clear()
    assert a != corpus.initial_state("work")


def test_replay_reconstructs_and_rejects(corpus):
    state = corpus.replay("work", ["[WALK] <home_office> (319)", "[FIND] <chair> (356)"])
    assert 356 in state.close_ids()
    with pytest.raises(ReplayError):
        corpus.replay("work", ["[GRAB] <paper> (405)"])  # not close yet
    with pytest.raises(ReplayError):
        corpus.replay("work", ["gibberish"])


# [DERIVED] snapshots computed once from the seeded shuffle and frozen
def test_split_snapshot(corpus):
    sp = split(corpus, seed=7, n_test=4)
    assert sp.test == ("laundry", "set_table", "watch_tv", "work")
    assert seen_tasks(sp) == ("drink_milk", "make_tea", "nap", "read_book")
    assert split(corpus, seed=0, n_test=4).test == (
        "drink_milk",
        "nap",
        "tidy_studio",
        "wash_plate",
    )


@given(st.integers(min_value=0, max_value=10_000), st.integers(min_value=0, max_value=11))
def test_split_partitions(corpus, seed, n_test):
    sp = split(corpus, seed=seed, n_test=n_test)
    assert sorted(sp.train + sp.test) == TASK_IDS
    assert set(sp.train).isdisjoint(sp.test)
    assert len(sp.test) == n_test
    # same seed, same answer
    again = split(corpus, seed=seed, n_test=n_test)
    assert again == sp
    seen = seen_tasks(sp) if sp.train else ()
    assert set(seen) <= set(sp.train)


def test_split_rejects_bad_sizes(corpus):
    with pytest.raises(InvalidSplitError):
        split(corpus, seed=0, n_test=12)
    with pytest.raises(InvalidSplitError):
        split(corpus, seed=0, n_test=-1)
    with pytest.raises(InvalidSplitError):
        seen_tasks(split(corpus, seed=0, n_test=4), n=9)


def _write_corpus(root, tasks_lines, scene=None):
    (root / "scenes").mkdir(parents=True)
    scene = scene or {
        "format_version": 1,
        "agent_id": 1,
        "nodes": [
            {"id": 1, "class_name": "character", "properties": [], "states": []},
            {"id": 2, "class_name": "room", "properties": ["ROOM"], "states": []},
        ],
        "edges": [{"from": 1, "relation": "INSIDE", "to": 2}],
    }
    (root / "scenes" / "tiny.json").write_text(json.dumps(scene))
    (root / "tasks.jsonl").write_text("\n".join(tasks_lines) + "\n")


def _task_line(**overrides):
    base = {
        "id": "t1",
        "name": "t1",
        "description": "",
        "instruction": "do the thing",
        "scene_ref": "tiny",
        "program": ["[WALK] <room> (2)"],
    }
    base.update(overrides)
    return json.dumps(base)


def test_load_corpus_errors(tmp_path):
    with pytest.raises(CorpusFormatError):
        load_corpus(tmp_path)  # no tasks.jsonl

    root = tmp_path / "dup"
    root.mkdir()
    _write_corpus(root, [_task_line(), _task_line()])
    with pytest.raises(CorpusFormatError, match="duplicate"):
        load_corpus(root)

    root = tmp_path / "badprog"
    root.mkdir()
    _write_corpus(root, [_task_line(program=["[FLY] <x> (1)"])])
    with pytest.raises(CorpusFormatError, match="step 1"):
        load_corpus(root)

    root = tmp_path / "noscene"
    root.mkdir()
    _write_corpus(root, [_task_line(scene_ref="elsewhere")])
    with pytest.raises(CorpusFormatError, match="elsewhere"):
        load_corpus(root)

    root = tmp_path / "missingkey"
    root.mkdir()
    line = json.loads(_task_line())
    del line["instruction"]
    _write_corpus(root, [json.dumps(line)])
    with pytest.raises(CorpusFormatError, match="instruction"):
        load_corpus(root)


def test_minimal_corpus_loads_and_validates(tmp_path):
    _write_corpus(tmp_path, [_task_line()])
    corpus = load_corpus(tmp_path)
    assert corpus.task_ids() == ["t1"]
    assert validate_corpus(corpus).all_ok


def test_validate_reports_failing_step(tmp_path):
    _write_corpus(tmp_path, [_task_line(program=["[WALK] <room> (2)", "[GRAB] <room> (2)"])])
    corpus = load_corpus(tmp_path)
    report = validate_corpus(corpus)
    assert not report.all_ok
    failure = report.results["t1"]
    assert failure.failing_step == 2
    assert "t1" in report.summary()
