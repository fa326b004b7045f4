"""Command line front end.

Subcommands:

* ``corpus validate`` — replay every expert program;
* ``datasets build`` — slice the corpus and run the exploration collectors;
* ``run`` — execute a policy over a task split, writing episode results;
* ``eval`` — run over one or more splits and print a metrics report;
* ``serve`` — accept external policies over TCP and drive them;
* ``protocol check`` — audit a recorded wire transcript.

Exit codes: 0 success, 1 validation or execution failure, 2 bad usage or
configuration. All artifacts are written deterministically: rerunning a
command with the same config and seed gives byte-identical files.
"""

from __future__ import annotations

import copy
import json
import socket
import sys
from pathlib import Path

import click

from . import datasets as ds
from . import metrics, wire, world
from .corpus import (
    Corpus,
    CorpusFormatError,
    InvalidSplitError,
    ReplayError,
    bundled_corpus_path,
    load_corpus,
    seen_tasks,
    split,
    validate_corpus,
)
from .policy import (
    AbsentTargetCorrector,
    CompositePolicy,
    ExpertAlignCorrector,
    ExpertPolicy,
    ExternalPolicy,
    GroundTruthFeedback,
    NoisyExpertPolicy,
    PolicyFailure,
    RandomPolicy,
    SearchCorrector,
    fit_retrieval,
)
from .runner import DoubleRejectMode, EpisodeConfig, run_suite


class ConfigError(ValueError):
    """The JSON config has unknown keys or unusable values."""


_DEFAULTS = {
    "format_version": 1,
    "corpus": "bundled",
    "seed": 0,
    "split": {"seed": None, "n_test": 4, "n_seen": None},
    "policy": {"kind": "expert", "seed": None, "params": {}},
    "feedback": {"kind": "policy"},
    "corrector": {"kind": "policy"},
    "episode": {
        "max_steps": 30,
        "use_speculative": False,
        "on_double_reject": "execute_corrected",
    },
    "datasets": {"tge": True, "tfe": True, "tfe_max_steps": 10, "pretune_k": 0},
    "templates": None,
    "out": None,
    "parallelism": 1,
    "serve": {"host": "127.0.0.1", "port": 0, "max_connections": 1, "transcript_dir": None},
}

# sections whose contents are free-form and skip unknown-key checking
_OPAQUE = {("policy", "params")}


def _merge(defaults: dict, overrides: dict, trail=()) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in overrides.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {'.'.join(trail + (key,))!r}")
        if isinstance(defaults[key], dict) and trail + (key,) not in _OPAQUE:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {'.'.join(trail + (key,))!r} must be an object")
            out[key] = _merge(defaults[key], value, trail + (key,))
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path) -> dict:
    if path is None:
        return copy.deepcopy(_DEFAULTS)
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    cfg = _merge(_DEFAULTS, raw)
    if cfg["format_version"] != 1:
        raise ConfigError(f"unsupported config format_version {cfg['format_version']!r}")
    return cfg


def _config_echo(cfg: dict) -> dict:
    # manifests must not depend on where the output landed
    echo = copy.deepcopy(cfg)
    echo["out"] = None
    return echo


def _resolve_corpus(cfg) -> Corpus:
    ref = cfg["corpus"]
    path = bundled_corpus_path() if ref in (None, "bundled") else Path(ref)
    return load_corpus(path)


def _resolve_split(cfg, corpus):
    seed = cfg["split"]["seed"]
    if seed is None:
        seed = cfg["seed"]
    return split(corpus, seed=seed, n_test=cfg["split"]["n_test"])


def _resolve_task_ids(cfg, corpus, name: str):
    sp = _resolve_split(cfg, corpus)
    if name == "all":
        return corpus.task_ids()
    if name == "train":
        return list(sp.train)
    if name == "unseen":
        return list(sp.test)
    if name == "seen":
        return list(seen_tasks(sp, n=cfg["split"]["n_seen"]))
    raise ConfigError(f"unknown split {name!r}")


def _policy_seed(cfg) -> int:
    return cfg["seed"] if cfg["policy"]["seed"] is None else cfg["policy"]["seed"]


def _build_planner(cfg, corpus):
    """Returns (policy, cleanup_callables)."""
    kind = cfg["policy"]["kind"]
    params = cfg["policy"]["params"]
    seed = _policy_seed(cfg)
    cleanup = []
    if kind == "expert":
        return ExpertPolicy(corpus), cleanup
    if kind == "noisy":
        return (
            NoisyExpertPolicy(
                corpus,
                p=params.get("p", 0.3),
                seed=seed,
                error_types=params.get("error_types"),
            ),
            cleanup,
        )
    if kind == "random":
        return RandomPolicy(corpus, seed=seed, done_prob=params.get("done_prob", 0.05)), cleanup
    if kind == "retrieval":
        k = params.get("k", 3)
        data_dir = params.get("datasets_dir")
        if data_dir:
            root = Path(data_dir)
            planning = ds.load_planning(root / ds.PLANNING_FILE)
            feedback = ds.load_feedback(root / ds.FEEDBACK_FILE)
            correction = ds.load_correction(root / ds.CORRECTION_FILE)
        else:
            # no exported datasets: fit on expert slices of the train split
            sp = _resolve_split(cfg, corpus)
            planning = ds.slice_planning(corpus, sp.train)
            feedback, correction = [], []
        return fit_retrieval(planning, feedback, correction, corpus=corpus, k=k), cleanup
    if kind == "external":
        command = params.get("command")
        host, port = params.get("host"), params.get("port")
        if command:
            channel, proc = wire.spawn_stdio(command)
            cleanup.append(channel.close)
            cleanup.append(proc.terminate)
        elif host and port:
            channel = wire.connect_tcp(host, int(port))
            cleanup.append(channel.close)
        else:
            raise ConfigError("external policy needs params.command or params.host/port")
        wire.env_handshake(channel)
        return ExternalPolicy(channel), cleanup
    raise ConfigError(f"unknown policy kind {kind!r}")


class _NoCorrector:
    def correct(self, task, history, action, feedback):
        return None


def _build_corrector(cfg, corpus):
    kind = cfg["corrector"]["kind"]
    if kind == "policy":
        return None
    if kind == "expert_align":
        return ExpertAlignCorrector(corpus)
    if kind == "search":
        return SearchCorrector(corpus)
    if kind == "absent":
        return AbsentTargetCorrector()
    if kind == "none":
        return _NoCorrector()
    raise ConfigError(f"unknown corrector kind {kind!r}")


def _build_feedback(cfg, corpus):
    kind = cfg["feedback"]["kind"]
    if kind == "policy":
        return None
    if kind == "ground_truth":
        return GroundTruthFeedback(corpus)
    raise ConfigError(f"unknown feedback kind {kind!r}")


def _assemble_policy(cfg, corpus):
    planner, cleanup = _build_planner(cfg, corpus)
    feedback = _build_feedback(cfg, corpus)
    corrector = _build_corrector(cfg, corpus)
    if feedback is None and corrector is None:
        return planner, cleanup
    return CompositePolicy(planner, feedback_provider=feedback, corrector=corrector), cleanup


def _episode_config(cfg, speculative) -> EpisodeConfig:
    ep = cfg["episode"]
    use_spec = ep["use_speculative"] if speculative is None else speculative
    try:
        mode = DoubleRejectMode(ep["on_double_reject"])
    except ValueError as exc:
        raise ConfigError(f"bad on_double_reject: {ep['on_double_reject']!r}") from exc
    return EpisodeConfig(max_steps=ep["max_steps"], use_speculative=use_spec, on_double_reject=mode)


def _dump_line(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _write_results(path: Path, results) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(_dump_line(r.to_obj()) for r in results), encoding="utf-8")


_USAGE_ERRORS = (ConfigError, InvalidSplitError)
_RUNTIME_ERRORS = (
    CorpusFormatError,
    ReplayError,
    ds.DatasetFormatError,
    ds.TemplateError,
    world.SceneFormatError,
    wire.TransportError,
    wire.ProtocolError,
    PolicyFailure,
)


def _guarded(fn):
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _USAGE_ERRORS as exc:
            click.echo(f"error: {exc}", err=True)
            raise SystemExit(2)
        except _RUNTIME_ERRORS as exc:
            click.echo(f"error: {exc}", err=True)
            raise SystemExit(1)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@click.group()
@click.version_option(package_name="plansim")
def main():
    """Household-task planning simulator and dataset toolkit."""


@main.group("corpus")
def corpus_group():
    """Corpus inspection."""


@corpus_group.command("validate")
@click.option("--corpus", "corpus_path", default=None, help="Corpus directory (default: bundled).")
@_guarded
def corpus_validate(corpus_path):
    """Replay every task's expert program and report failures."""
    path = Path(corpus_path) if corpus_path else bundled_corpus_path()
    corpus = load_corpus(path)
    report = validate_corpus(corpus)
    click.echo(report.summary())
    if not report.all_ok:
        click.echo(f"{len(report.failures())} task(s) failed", err=True)
        raise SystemExit(1)
    click.echo(f"all {len(report.results)} tasks ok")


@main.group("datasets")
def datasets_group():
    """Dataset construction."""


@datasets_group.command("build")
@click.option("--config", "config_path", default=None, help="JSON config file.")
@click.option("--seed", type=int, default=None, help="Override the root seed.")
@click.option("--out", "out_dir", default=None, help="Output directory.")
@_guarded
def datasets_build(config_path, seed, out_dir):
    """Slice expert programs and run the exploration collectors."""
    cfg = load_config(config_path)
    if seed is not None:
        cfg["seed"] = seed
    if out_dir is not None:
        cfg["out"] = out_dir
    if not cfg["out"]:
        raise ConfigError("an output directory is required (--out or config.out)")
    corpus = _resolve_corpus(cfg)
    sp = _resolve_split(cfg, corpus)
    planning = ds.slice_planning(corpus, sp.train)
    feedback, correction = [], []
    stats = {}
    policy, cleanup = _assemble_policy(cfg, corpus)
    try:
        if cfg["datasets"]["tge"]:
            fb, corr, tge_stats = ds.run_tge(policy, corpus, sp.train)
            feedback.extend(fb)
            correction.extend(corr)
            stats["tge"] = {
                "steps": tge_stats.steps,
                "matches": tge_stats.matches,
                "mismatched_executable": tge_stats.mismatched_executable,
                "mismatched_nonexecutable": tge_stats.mismatched_nonexecutable,
                "error_counts": tge_stats.error_counts,
            }
        if cfg["datasets"]["tfe"]:
            corrector = _build_corrector(cfg, corpus) or policy
            fb, corr, tfe_stats = ds.run_tfe(
                policy, corrector, corpus, sp.train, max_steps=cfg["datasets"]["tfe_max_steps"]
            )
            feedback.extend(fb)
            correction.extend(corr)
            stats["tfe"] = {
                "tasks": tfe_stats.tasks,
                "steps": tfe_stats.steps,
                "executed": tfe_stats.executed,
                "failed": tfe_stats.failed,
                "corrected": tfe_stats.corrected,
                "filtered": tfe_stats.filtered,
                "stopped": tfe_stats.stopped,
                "error_counts": tfe_stats.error_counts,
            }
    finally:
        for fn in cleanup:
            fn()
    templates = (
        ds.load_templates(cfg["templates"]) if cfg["templates"] else ds.default_templates()
    )
    extra_files = {}
    if cfg["datasets"]["pretune_k"]:
        extra_files["planning_pretune.jsonl"] = ds.subsample_pretune(
            planning, cfg["datasets"]["pretune_k"], cfg["seed"]
        )
    manifest = ds.merge_and_export(
        planning,
        feedback,
        correction,
        cfg["out"],
        templates=templates,
        extra_manifest={
            "seed": cfg["seed"],
            "split": {"seed": sp.seed, "train": list(sp.train), "test": list(sp.test)},
            "stats": stats,
            "config": _config_echo(cfg),
        },
        extra_files=extra_files,
    )
    click.echo(
        "wrote {out}: planning={p} feedback={f} correction={c}".format(
            out=cfg["out"],
            p=manifest.counts["planning"],
            f=manifest.counts["feedback"],
            c=manifest.counts["correction"],
        )
    )


def _run_one_split(cfg, corpus, split_name, speculative, parallelism):
    task_ids = _resolve_task_ids(cfg, corpus, split_name)
    policy, cleanup = _assemble_policy(cfg, corpus)
    try:
        results = run_suite(
            corpus,
            [(tid, policy) for tid in task_ids],
            _episode_config(cfg, speculative),
            parallelism=parallelism,
        )
    finally:
        for fn in cleanup:
            fn()
    return task_ids, results


@main.command("run")
@click.option("--config", "config_path", default=None, help="JSON config file.")
@click.option("--seed", type=int, default=None, help="Override the root seed.")
@click.option("--out", "out_dir", default=None, help="Output directory.")
@click.option("--policy", "policy_kind", default=None, help="Override policy kind.")
@click.option("--speculative/--no-speculative", "speculative", default=None)
@click.option(
    "--split",
    "split_name",
    type=click.Choice(["seen", "unseen", "train", "all"]),
    default="unseen",
    show_default=True,
)
@click.option("--parallelism", type=int, default=None, help="Worker threads.")
@_guarded
def run_cmd(config_path, seed, out_dir, policy_kind, speculative, split_name, parallelism):
    """Run episodes over one task split and write the results."""
    cfg = load_config(config_path)
    if seed is not None:
        cfg["seed"] = seed
    if out_dir is not None:
        cfg["out"] = out_dir
    if policy_kind is not None:
        cfg["policy"]["kind"] = policy_kind
    workers = parallelism if parallelism is not None else cfg["parallelism"]
    corpus = _resolve_corpus(cfg)
    task_ids, results = _run_one_split(cfg, corpus, split_name, speculative, workers)
    rep = metrics.report(results, corpus, {split_name: task_ids})
    click.echo(rep.to_text())
    if cfg["out"]:
        out = Path(cfg["out"])
        _write_results(out / "results.jsonl", results)
        _write_json(
            out / "manifest.json",
            {
                "format_version": 1,
                "seed": cfg["seed"],
                "split": split_name,
                "task_ids": list(task_ids),
                "n_episodes": len(results),
                "report": rep.to_obj(),
                "config": _config_echo(cfg),
            },
        )
        click.echo(f"wrote {out / 'results.jsonl'}")
    failures = [r for r in results if r.failure]
    if failures:
        click.echo(f"{len(failures)} episode(s) aborted on policy failure", err=True)
        raise SystemExit(1)


@main.command("eval")
@click.option("--config", "config_path", default=None, help="JSON config file.")
@click.option("--seed", type=int, default=None, help="Override the root seed.")
@click.option("--out", "out_dir", default=None, help="Output directory.")
@click.option("--policy", "policy_kind", default=None, help="Override policy kind.")
@click.option("--speculative/--no-speculative", "speculative", default=None)
@click.option(
    "--split",
    "split_names",
    type=click.Choice(["seen", "unseen", "train", "all"]),
    multiple=True,
    help="Splits to evaluate (default: seen and unseen).",
)
@click.option("--parallelism", type=int, default=None, help="Worker threads.")
@_guarded
def eval_cmd(config_path, seed, out_dir, policy_kind, speculative, split_names, parallelism):
    """Evaluate a policy on one or more splits and print a report."""
    cfg = load_config(config_path)
    if seed is not None:
        cfg["seed"] = seed
    if out_dir is not None:
        cfg["out"] = out_dir
    if policy_kind is not None:
        cfg["policy"]["kind"] = policy_kind
    workers = parallelism if parallelism is not None else cfg["parallelism"]
    names = list(split_names) or ["seen", "unseen"]
    corpus = _resolve_corpus(cfg)
    selectors = {}
    all_results = []
    per_split = {}
    for name in names:
        task_ids, results = _run_one_split(cfg, corpus, name, speculative, workers)
        selectors[name] = task_ids
        all_results.extend(results)
        per_split[name] = results
    rep = metrics.report(all_results, corpus, selectors)
    click.echo(rep.to_text())
    if cfg["out"]:
        out = Path(cfg["out"])
        _write_json(out / "report.json", {"format_version": 1, "seed": cfg["seed"], **rep.to_obj()})
        for name, results in per_split.items():
            _write_results(out / f"results_{name}.jsonl", results)
        click.echo(f"wrote {out / 'report.json'}")


@main.command("serve")
@click.option("--config", "config_path", default=None, help="JSON config file.")
@click.option("--seed", type=int, default=None, help="Override the root seed.")
@click.option("--host", default=None, help="Bind host.")
@click.option("--port", type=int, default=None, help="Bind port (0 picks a free one).")
@click.option("--max-connections", type=int, default=None, help="Serve this many policies, then exit.")
@click.option("--transcript-dir", default=None, help="Write one wire transcript per connection.")
@click.option(
    "--split",
    "split_name",
    type=click.Choice(["seen", "unseen", "train", "all"]),
    default="unseen",
    show_default=True,
)
@click.option("--speculative/--no-speculative", "speculative", default=None)
@_guarded
def serve_cmd(
    config_path, seed, host, port, max_connections, transcript_dir, split_name, speculative
):
    """Listen for external policies and run the suite against each one."""
    cfg = load_config(config_path)
    if seed is not None:
        cfg["seed"] = seed
    serve_cfg = cfg["serve"]
    host = host if host is not None else serve_cfg["host"]
    port = port if port is not None else serve_cfg["port"]
    max_conn = max_connections if max_connections is not None else serve_cfg["max_connections"]
    tdir = transcript_dir if transcript_dir is not None else serve_cfg["transcript_dir"]
    corpus = _resolve_corpus(cfg)
    task_ids = _resolve_task_ids(cfg, corpus, split_name)
    ep_cfg = _episode_config(cfg, speculative)
    server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    server.bind((host, port))
    server.listen(max_conn)
    actual = server.getsockname()[1]
    click.echo(f"listening on {host}:{actual}")
    sys.stdout.flush()
    exit_code = 0
    try:
        for index in range(max_conn):
            conn, addr = server.accept()
            records = []
            channel = wire.channel_from_socket(conn, on_record=records.append)
            try:
                wire.env_handshake(channel)
                policy = ExternalPolicy(channel)
                results = run_suite(
                    corpus, [(tid, policy) for tid in task_ids], ep_cfg, parallelism=1
                )
                done = sum(1 for r in results if r.termination.value == "done")
                click.echo(
                    f"connection {index}: {len(results)} episode(s), {done} reached the end marker"
                )
                if any(r.failure for r in results):
                    exit_code = 1
                if cfg["out"]:
                    _write_results(
                        Path(cfg["out"]) / f"results_{index:03d}.jsonl", results
                    )
            except (wire.ProtocolError, wire.TransportError) as exc:
                click.echo(f"connection {index}: protocol failure: {exc}", err=True)
                exit_code = 1
            finally:
                channel.close()
                if tdir:
                    tpath = Path(tdir)
                    tpath.mkdir(parents=True, exist_ok=True)
                    (tpath / f"transcript_{index:03d}.jsonl").write_text(
                        "".join(_dump_line(r) for r in records), encoding="utf-8"
                    )
    finally:
        server.close()
    if exit_code:
        raise SystemExit(exit_code)


@main.group("protocol")
def protocol_group():
    """Wire-protocol utilities."""


@protocol_group.command("check")
@click.argument("transcript", type=click.Path(exists=True, dir_okay=False))
@click.option(
    "--role",
    type=click.Choice(["env", "policy"]),
    default="env",
    show_default=True,
    help="Which side recorded the transcript.",
)
@_guarded
def protocol_check(transcript, role):
    """Validate a recorded transcript; exit 1 on any violation."""
    records = wire.load_transcript(transcript)
    violations = wire.validate_transcript(records, role=role)
    for violation in violations:
        click.echo(violation)
    if violations:
        click.echo(f"{len(violations)} violation(s)", err=True)
        raise SystemExit(1)
    click.echo(f"ok ({len(records)} records)")


if __name__ == "__main__":
    main()
