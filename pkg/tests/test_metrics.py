import logging

import pytest

from oracles import brute_lcs, greedy_affordance_rate, random_programs, replay_executability
from plansim import metrics
from plansim.metrics import (
    DEFAULT_EDGES,
    NO_DATA,
    InvalidEdges,
    affordance_rate,
    error_stats,
    executability,
    lcs,
    length_buckets,
    record_affordance_rate,
    record_executability,
    report,
    score_result,
)
from plansim.policy import ExpertPolicy, NoisyExpertPolicy
from plansim.runner import EpisodeConfig, run_episode, run_suite

W1 = "[WALK] <home_office> (3000)"
W2 = "[FIND] <desk> (3005)"
W3 = "[SIT] <chair> (3006)"
W4 = "[SWITCHON] <computer> (3008)"
BAD = "[GRAB] <phantom_box> (999)"


def test_lcs_drops_one_of_four():
    # [DERIVED] common subsequence of length 3 against a 4-step plan
    assert lcs([W1, W2, W3, W4], [W1, W3, W4]) == 0.75
    assert lcs([W1, W3, W4], [W1, W2, W3, W4]) == 0.75


def test_lcs_ignores_ids_but_not_classes():
    assert lcs(["[GRAB] <milk> (1002)"], ["[GRAB] <milk> (42)"]) == 1.0
    assert lcs(["[GRAB] <milk> (1002)"], ["[GRAB] <juice> (1002)"]) == 0.0
    assert lcs(["[PUTBACK] <milk> (1) <fridge> (2)"], ["[PUTBACK] <milk> (9) <fridge> (8)"]) == 1.0
    assert lcs(["[PUTBACK] <milk> (1) <fridge> (2)"], ["[PUTBACK] <milk> (1) <table> (2)"]) == 0.0


def test_lcs_unparseable_never_matches():
    assert lcs(["garbage"], ["garbage"]) == 0.0
    assert lcs([W1, "garbage"], [W1, "garbage"]) == 0.5


def test_lcs_empty_edges():
    assert lcs([], []) == 1.0
    assert lcs([W1], []) == 0.0
    assert lcs([], [W1]) == 0.0


def test_lcs_matches_brute_force_enumeration(corpus):
    programs = [p for _, p in random_programs(corpus, 60, seed=1, max_len=7)]
    pairs = list(zip(programs[::2], programs[1::2]))
    assert len(pairs) == 30
    for a, b in pairs:
        assert lcs(a, b) == pytest.approx(brute_lcs(a, b))


def test_executability_is_all_or_nothing(corpus):
    task = corpus.task("work")
    state = corpus.initial_state(task)
    assert executability(task.program_text, state) == 1.0
    broken = list(task.program_text)
    broken[3] = BAD
    assert executability(broken, state) == 0.0
    assert executability([], state) == 1.0


def test_affordance_rate_skips_failures(corpus):
    task = corpus.task("work")
    state = corpus.initial_state(task)
    steps = list(task.program_text[:6])
    # [DERIVED] two phantom grabs inside six good steps: 6 of 8 execute
    program = steps[:1] + [BAD] + steps[1:4] + ["[GRAB] <phantom_box> (998)"] + steps[4:]
    assert len(program) == 8
    assert affordance_rate(program, state) == 0.75
    assert affordance_rate(task.program_text, state) == 1.0


def test_affordance_rate_empty_warns(corpus, caplog):
    state = corpus.initial_state(corpus.task("work"))
    with caplog.at_level(logging.WARNING, logger="plansim.metrics"):
        assert affordance_rate([], state) == 1.0
    assert any("vacuous" in r.message for r in caplog.records)


def test_metrics_match_independent_replay_oracles(corpus):
    for task, program in random_programs(corpus, 60, seed=2):
        state = corpus.initial_state(task)
        assert executability(program, state) == replay_executability(corpus, task, program)
        assert affordance_rate(program, state) == pytest.approx(
            greedy_affordance_rate(corpus, task, program)
        )


def test_record_views_agree_with_replay(corpus):
    noisy = NoisyExpertPolicy(corpus, p=0.5, seed=6)
    for tid in corpus.task_ids():
        result = run_episode(corpus, tid, noisy, EpisodeConfig(max_steps=15))
        state = corpus.initial_state(corpus.task(tid))
        assert record_executability(result) == executability(result.executed_program, state)
        assert record_affordance_rate(result) == pytest.approx(
            affordance_rate(result.executed_program, state)
        )


def test_error_stats_counts_failed_executions(corpus):
    noisy = NoisyExpertPolicy(corpus, p=1.0, seed=0)
    results = run_suite(corpus, [(t, noisy) for t in corpus.task_ids()], EpisodeConfig(max_steps=8))
    stats = error_stats(results)
    failed = sum(
        1 for r in results for s in r.steps
        if s.env_feedback is not None and not s.env_feedback.ok
    )
    assert sum(stats.values()) == failed > 0
    assert list(stats) == sorted(stats)
    assert error_stats([]) == {}


def test_length_buckets_hand_case():
    pairs = [(3, 1.0), (7, 0.5), (10, 0.0), (12, 1.0)]
    out = length_buckets(pairs, (6, 9))
    assert out == [
        {"lo": 0, "hi": 6, "n": 1, "mean": 1.0},
        {"lo": 6, "hi": 9, "n": 1, "mean": 0.5},
        {"lo": 9, "hi": None, "n": 2, "mean": 0.5},
    ]


def test_length_buckets_edge_cases():
    out = length_buckets([], (6, 9))
    assert all(b["n"] == 0 and b["mean"] is None for b in out)
    # a leading zero edge collapses the empty [0,0) bucket
    out = length_buckets([(0, 1.0)], (0, 6))
    assert [b["lo"] for b in out] == [0, 6]
    assert out[0]["n"] == 1
    with pytest.raises(InvalidEdges):
        length_buckets([], (9, 6))
    with pytest.raises(InvalidEdges):
        length_buckets([], (6, 6))
    with pytest.raises(InvalidEdges):
        length_buckets([], (-1, 6))


def test_score_result_composes_the_three_metrics(corpus):
    result = run_episode(corpus, "work", ExpertPolicy(corpus))
    score = score_result(corpus, result)
    assert score.task_id == "work"
    assert (score.executability, score.affordance_rate, score.lcs) == (1.0, 1.0, 1.0)
    assert score.to_obj()["lcs"] == 1.0


def test_report_rows_and_rendering(corpus):
    expert = ExpertPolicy(corpus)
    results = run_suite(corpus, [("work", expert), ("nap", expert), ("work", expert)], EpisodeConfig())
    rep = report(results, corpus, {"picked": ["work", "nap"], "none": []})
    picked, none = rep.rows
    assert picked.split == "picked"
    assert picked.n_tasks == 2
    assert picked.n_episodes == 3  # repeat episodes both count
    assert picked.exec_mean == 1.0 and picked.ar_mean == 1.0 and picked.lcs_mean == 1.0
    assert picked.error_counts == {}
    assert sum(b["n"] for b in picked.length_buckets) == 3
    assert none.n_episodes == 0
    assert none.exec_mean is None
    text = rep.to_text()
    assert "picked" in text and NO_DATA in text
    obj = rep.to_obj()
    assert [r["split"] for r in obj["rows"]] == ["picked", "none"]


def test_default_edges_are_sane():
    assert DEFAULT_EDGES == (6, 9)
    assert metrics.NO_DATA == "-"
