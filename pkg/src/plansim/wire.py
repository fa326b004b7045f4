"""Newline-delimited JSON protocol for external policies.

Roles: the *policy* process answers queries; the *environment* process
(this package) sends them. Connection setup, in order:

1. policy sends ``{"type": "hello", "protocol": 1}``;
2. environment replies with the same hello shape;
3. environment sends queries ``{"id", "type", "task", "history", ...}``
   where ``type`` is ``plan``, ``feedback`` or ``correct``; ``feedback``
   and ``correct`` carry an ``action`` field and ``correct`` additionally
   the ``feedback`` message being corrected;
4. policy answers each query with ``{"id", "result"}`` or
   ``{"id", "error"}`` before the next query is sent.

Transports: a spawned subprocess speaking on stdio, or a TCP socket.
Every line is UTF-8 JSON terminated by ``\\n``. At most one query is in
flight per connection.
"""

from __future__ import annotations

import json
import socket
import subprocess
from typing import Callable

PROTOCOL_VERSION = 1
QUERY_KINDS = ("plan", "feedback", "correct")


class TransportError(RuntimeError):
    """The underlying pipe or socket failed."""


class ProtocolError(RuntimeError):
    """The peer sent something outside the protocol."""


def dumps_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


class LineChannel:
    """One line-delimited JSON stream pair, with optional traffic recording.

    ``on_record`` receives ``{"dir": "sent"|"recv", "line": <raw line>}``
    for every line that crosses the channel, in order.
    """

    def __init__(self, reader, writer, on_record: Callable | None = None, closer=None):
        self._reader = reader
        self._writer = writer
        self._on_record = on_record
        self._closer = closer
        self._closed = False

    def send(self, obj: dict) -> None:
        line = dumps_line(obj)
        try:
            self._writer.write((line + "\n").encode("utf-8"))
            self._writer.flush()
        except (BrokenPipeError, OSError, ValueError) as exc:
            raise TransportError(f"send failed: {exc}") from exc
        if self._on_record:
            self._on_record({"dir": "sent", "line": line})

    def recv(self):
        """Next decoded object, or None on clean EOF."""
        try:
            raw = self._reader.readline()
        except (OSError, ValueError) as exc:
            raise TransportError(f"recv failed: {exc}") from exc
        if not raw:
            return None
        line = raw.decode("utf-8", errors="replace").rstrip("\r\n")
        if self._on_record:
            self._on_record({"dir": "recv", "line": line})
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"peer sent invalid JSON: {line!r}") from exc
        if not isinstance(obj, dict):
            raise ProtocolError(f"peer sent a non-object line: {line!r}")
        return obj

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        for stream in (self._writer, self._reader):
            try:
                stream.close()
            except OSError:
                pass
        if self._closer:
            try:
                self._closer()
            except OSError:
                pass


def connect_tcp(host: str, port: int, on_record=None, timeout: float | None = None) -> LineChannel:
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except OSError as exc:
        raise TransportError(f"cannot connect to {host}:{port}: {exc}") from exc
    sock.settimeout(None)
    return channel_from_socket(sock, on_record=on_record)


def channel_from_socket(sock: socket.socket, on_record=None) -> LineChannel:
    reader = sock.makefile("rb")
    writer = sock.makefile("wb")
    return LineChannel(reader, writer, on_record=on_record, closer=sock.close)


def spawn_stdio(argv, on_record=None) -> tuple[LineChannel, subprocess.Popen]:
    """Start a policy subprocess; its stdout/stdin become the channel."""
    try:
        proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
    except OSError as exc:
        raise TransportError(f"cannot spawn {argv!r}: {exc}") from exc
    channel = LineChannel(proc.stdout, proc.stdin, on_record=on_record)
    return channel, proc


# -- handshake -----------------------------------------------------------


def hello_obj() -> dict:
    return {"type": "hello", "protocol": PROTOCOL_VERSION}


def _expect_hello(obj) -> None:
    if obj is None:
        raise ProtocolError("connection closed before hello")
    if obj.get("type") != "hello":
        raise ProtocolError(f"expected hello, got {obj!r}")
    if obj.get("protocol") != PROTOCOL_VERSION:
        raise ProtocolError(f"unsupported protocol version {obj.get('protocol')!r}")


def env_handshake(channel: LineChannel) -> None:
    """Environment side: wait for the policy's hello, then answer it."""
    _expect_hello(channel.recv())
    channel.send(hello_obj())


def policy_handshake(channel: LineChannel) -> None:
    """Policy side: greet first, then wait for the environment's hello."""
    channel.send(hello_obj())
    _expect_hello(channel.recv())


# -- query / reply construction and validation ---------------------------


def history_to_wire(history) -> list:
    return [{"action": step.action, "observation": step.observation} for step in history]


def history_from_wire(raw):
    from .trajectory import TrajectoryStep

    if not isinstance(raw, list):
        raise ProtocolError("history must be a list")
    steps = []
    for item in raw:
        if not isinstance(item, dict):
            raise ProtocolError("history entries must be objects")
        try:
            steps.append(TrajectoryStep(str(item["action"]), str(item["observation"])))
        except KeyError as exc:
            raise ProtocolError(f"history entry missing {exc}") from exc
    return tuple(steps)


def make_query(qid: int, kind: str, task: str, history, action=None, feedback=None) -> dict:
    if kind not in QUERY_KINDS:
        raise ValueError(f"unknown query kind {kind!r}")
    obj = {"id": qid, "type": kind, "task": task, "history": history_to_wire(history)}
    if kind in ("feedback", "correct"):
        if action is None:
            raise ValueError(f"{kind} query needs an action")
        obj["action"] = action
    if kind == "correct":
        if feedback is None:
            raise ValueError("correct query needs the feedback message")
        obj["feedback"] = feedback
    return obj


def make_result(qid: int, result: str) -> dict:
    return {"id": qid, "result": result}


def make_error(qid: int, message: str) -> dict:
    return {"id": qid, "error": message}


def validate_query(obj: dict):
    """Violation string, or None when the query is well formed."""
    if not isinstance(obj.get("id"), int):
        return f"query id must be an integer: {obj.get('id')!r}"
    kind = obj.get("type")
    if kind not in QUERY_KINDS:
        return f"unknown query type {kind!r}"
    if not isinstance(obj.get("task"), str):
        return "query task must be a string"
    history = obj.get("history")
    if not isinstance(history, list):
        return "query history must be a list"
    for i, item in enumerate(history):
        if (
            not isinstance(item, dict)
            or not isinstance(item.get("action"), str)
            or not isinstance(item.get("observation"), str)
        ):
            return f"history entry {i} must have string action and observation"
    if kind in ("feedback", "correct") and not isinstance(obj.get("action"), str):
        return f"{kind} query must carry a string action"
    if kind == "correct" and not isinstance(obj.get("feedback"), str):
        return "correct query must carry a string feedback message"
    return None


def validate_reply(obj: dict):
    if not isinstance(obj.get("id"), int):
        return f"reply id must be an integer: {obj.get('id')!r}"
    has_result = "result" in obj
    has_error = "error" in obj
    if has_result == has_error:
        return "reply must carry exactly one of result or error"
    if has_result and not isinstance(obj["result"], str):
        return "reply result must be a string"
    if has_error and not isinstance(obj["error"], str):
        return "reply error must be a string"
    return None


# -- transcript checking ---------------------------------------------------


def validate_transcript(records, role: str = "env") -> list:
    """Check a recorded traffic log against the protocol rules.

    ``records`` are the ``on_record`` dicts in order; ``role`` names the
    side that recorded them ("env" or "policy"), fixing which direction
    each line travelled. Returns a list of violation strings (empty when
    the transcript is clean).
    """
    if role not in ("env", "policy"):
        raise ValueError(f"role must be 'env' or 'policy', not {role!r}")
    violations: list[str] = []
    env_hello = False
    policy_hello = False
    outstanding = None
    for i, rec in enumerate(records, start=1):
        direction = rec.get("dir") if isinstance(rec, dict) else None
        line = rec.get("line") if isinstance(rec, dict) else None
        if direction not in ("sent", "recv") or not isinstance(line, str):
            violations.append(f"record {i}: malformed transcript record")
            continue
        from_env = (direction == "sent") == (role == "env")
        side = "environment" if from_env else "policy"
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            violations.append(f"record {i}: {side} sent invalid JSON")
            continue
        if not isinstance(obj, dict):
            violations.append(f"record {i}: {side} sent a non-object line")
            continue
        if obj.get("type") == "hello":
            if obj.get("protocol") != PROTOCOL_VERSION:
                violations.append(f"record {i}: bad protocol version {obj.get('protocol')!r}")
            if from_env:
                if not policy_hello:
                    violations.append(f"record {i}: environment greeted before the policy")
                if env_hello:
                    violations.append(f"record {i}: duplicate environment hello")
                env_hello = True
            else:
                if policy_hello:
                    violations.append(f"record {i}: duplicate policy hello")
                policy_hello = True
            continue
        if from_env:
            if not (env_hello and policy_hello):
                violations.append(f"record {i}: query before handshake finished")
            problem = validate_query(obj)
            if problem:
                violations.append(f"record {i}: {problem}")
            if outstanding is not None:
                violations.append(
                    f"record {i}: new query while query {outstanding} is unanswered"
                )
            outstanding = obj.get("id")
        else:
            problem = validate_reply(obj)
            if problem:
                violations.append(f"record {i}: {problem}")
                outstanding = None
                continue
            if outstanding is None:
                violations.append(f"record {i}: reply with no query outstanding")
            elif obj.get("id") != outstanding:
                violations.append(
                    f"record {i}: reply id {obj.get('id')!r} does not match query {outstanding!r}"
                )
            outstanding = None
    if not policy_hello:
        violations.append("transcript has no policy hello")
    if not env_hello:
        violations.append("transcript has no environment hello")
    if outstanding is not None:
        violations.append(f"query {outstanding} was never answered")
    return violations


def load_transcript(path) -> list:
    """Read an ``on_record`` JSONL file back into record dicts."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ProtocolError(f"{path} line {lineno}: invalid JSON: {exc}") from exc
    return records
