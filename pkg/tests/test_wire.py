import json
import socket
import sys
import threading

import pytest

from plansim import wire
from plansim.trajectory import TrajectoryStep


def _pair():
    a, b = socket.socketpair()
    return wire.channel_from_socket(a), wire.channel_from_socket(b)


def test_line_channel_round_trip_and_recording():
    log_a, log_b = [], []
    a, b = _pair()
    a._on_record = log_a.append
    b._on_record = log_b.append
    a.send({"type": "hello", "protocol": 1})
    assert b.recv() == {"type": "hello", "protocol": 1}
    b.send({"id": 1, "result": "ok"})
    assert a.recv() == {"id": 1, "result": "ok"}
    assert [r["dir"] for r in log_a] == ["sent", "recv"]
    assert [r["dir"] for r in log_b] == ["recv", "sent"]
    # the recorded lines are the exact wire bytes
    assert json.loads(log_a[0]["line"]) == {"type": "hello", "protocol": 1}
    b.close()
    assert a.recv() is None  # clean EOF
    a.close()
    with pytest.raises(wire.TransportError):
        a.send({"x": 1})


@pytest.mark.parametrize("payload", [b"{broken\n", b"[1,2,3]\n", b'"just a string"\n'])
def test_line_channel_rejects_non_object_lines(payload):
    a, b = socket.socketpair()
    chan = wire.channel_from_socket(b)
    a.sendall(payload)
    with pytest.raises(wire.ProtocolError):
        chan.recv()
    chan.close()
    a.close()


def test_handshake_pair():
    env_ch, pol_ch = _pair()
    worker = threading.Thread(target=wire.policy_handshake, args=(pol_ch,))
    worker.start()
    wire.env_handshake(env_ch)
    worker.join(timeout=5)
    assert not worker.is_alive()
    env_ch.close()
    pol_ch.close()


def test_env_handshake_rejects_bad_hello():
    env_ch, pol_ch = _pair()
    pol_ch.send({"type": "hello", "protocol": 99})
    with pytest.raises(wire.ProtocolError, match="version"):
        wire.env_handshake(env_ch)
    env_ch2, pol_ch2 = _pair()
    pol_ch2.send({"id": 1, "result": "x"})
    with pytest.raises(wire.ProtocolError, match="expected hello"):
        wire.env_handshake(env_ch2)
    env_ch3, pol_ch3 = _pair()
    pol_ch3.close()
    with pytest.raises(wire.ProtocolError, match="closed before hello"):
        wire.env_handshake(env_ch3)
    for ch in (env_ch, pol_ch, env_ch2, pol_ch2, env_ch3):
        ch.close()


def test_connect_tcp_round_trip():
    server = socket.create_server(("127.0.0.1", 0))
    host, port = server.getsockname()

    def serve_one():
        conn, _ = server.accept()
        chan = wire.channel_from_socket(conn)
        wire.env_handshake(chan)
        chan.close()

    worker = threading.Thread(target=serve_one)
    worker.start()
    chan = wire.connect_tcp(host, port, timeout=5)
    wire.policy_handshake(chan)
    worker.join(timeout=5)
    chan.close()
    server.close()
    with pytest.raises(wire.TransportError):
        wire.connect_tcp("127.0.0.1", port, timeout=0.2)


def test_spawn_stdio_echo_child():
    # child greets, then answers every query with its id echoed back
    code = (
        "import json,sys\n"
        "print(json.dumps({'type':'hello','protocol':1}),flush=True)\n"
        "sys.stdin.readline()\n"
        "for line in sys.stdin:\n"
        "    q=json.loads(line)\n"
        "    print(json.dumps({'id':q['id'],'result':'[END]'}),flush=True)\n"
    )
    channel, proc = wire.spawn_stdio([sys.executable, "-c", code])
    try:
        wire.env_handshake(channel)
        channel.send(wire.make_query(1, "plan", "t", ()))
        assert channel.recv() == {"id": 1, "result": "[END]"}
    finally:
        channel.close()
        proc.wait(timeout=5)
    with pytest.raises(wire.TransportError):
        wire.spawn_stdio(["/nonexistent/binary"])


def test_history_wire_round_trip():
    history = (TrajectoryStep("[SLEEP]", "obs one"), TrajectoryStep("[WAKEUP]", "obs two"))
    raw = wire.history_to_wire(history)
    assert raw == [
        {"action": "[SLEEP]", "observation": "obs one"},
        {"action": "[WAKEUP]", "observation": "obs two"},
    ]
    assert wire.history_from_wire(raw) == history
    with pytest.raises(wire.ProtocolError):
        wire.history_from_wire("nope")
    with pytest.raises(wire.ProtocolError):
        wire.history_from_wire([{"action": "x"}])
    with pytest.raises(wire.ProtocolError):
        wire.history_from_wire([3])


def test_make_query_shapes():
    h = (TrajectoryStep("[SLEEP]", "o"),)
    q = wire.make_query(7, "plan", "task text", h)
    assert q == {"id": 7, "type": "plan", "task": "task text",
                 "history": [{"action": "[SLEEP]", "observation": "o"}]}
    q = wire.make_query(8, "feedback", "t", (), action="[SLEEP]")
    assert q["action"] == "[SLEEP]" and "feedback" not in q
    q = wire.make_query(9, "correct", "t", (), action="[SLEEP]", feedback="msg")
    assert q["feedback"] == "msg"
    with pytest.raises(ValueError):
        wire.make_query(1, "guess", "t", ())
    with pytest.raises(ValueError):
        wire.make_query(1, "feedback", "t", ())
    with pytest.raises(ValueError):
        wire.make_query(1, "correct", "t", (), action="[SLEEP]")


def test_validate_query_and_reply():
    good = wire.make_query(1, "correct", "t", (), action="[SLEEP]", feedback="m")
    assert wire.validate_query(good) is None
    assert "id" in wire.validate_query({"type": "plan", "task": "t", "history": []})
    assert "type" in wire.validate_query({"id": 1, "type": "nope", "task": "t", "history": []})
    assert "task" in wire.validate_query({"id": 1, "type": "plan", "history": []})
    assert "history" in wire.validate_query({"id": 1, "type": "plan", "task": "t", "history": 0})
    assert "entry 0" in wire.validate_query(
        {"id": 1, "type": "plan", "task": "t", "history": [{"action": 1, "observation": "o"}]}
    )
    assert "action" in wire.validate_query({"id": 1, "type": "feedback", "task": "t", "history": []})
    assert "feedback" in wire.validate_query(
        {"id": 1, "type": "correct", "task": "t", "history": [], "action": "[SLEEP]"}
    )
    assert wire.validate_reply(wire.make_result(1, "x")) is None
    assert wire.validate_reply(wire.make_error(1, "boom")) is None
    assert "exactly one" in wire.validate_reply({"id": 1})
    assert "exactly one" in wire.validate_reply({"id": 1, "result": "x", "error": "y"})
    assert "id" in wire.validate_reply({"result": "x"})
    assert "string" in wire.validate_reply({"id": 1, "result": 5})


def _env_records(*objs):
    """Build an env-side transcript: queries are sent, replies received."""
    records = []
    for direction, obj in objs:
        records.append({"dir": direction, "line": wire.dumps_line(obj)})
    return records


HELLO = {"type": "hello", "protocol": 1}


def test_validate_transcript_accepts_clean_session():
    records = _env_records(
        ("recv", HELLO),
        ("sent", HELLO),
        ("sent", wire.make_query(1, "plan", "t", ())),
        ("recv", wire.make_result(1, "[END]")),
    )
    assert wire.validate_transcript(records, role="env") == []
    # the same session seen from the policy side has directions flipped
    flipped = [{"dir": "sent" if r["dir"] == "recv" else "recv", "line": r["line"]}
               for r in records]
    assert wire.validate_transcript(flipped, role="policy") == []
    with pytest.raises(ValueError):
        wire.validate_transcript(records, role="referee")


def test_validate_transcript_catches_ordering_violations():
    # environment greets first
    v = wire.validate_transcript(_env_records(("sent", HELLO), ("recv", HELLO)))
    assert any("greeted before the policy" in s for s in v)
    # duplicate policy hello
    v = wire.validate_transcript(
        _env_records(("recv", HELLO), ("recv", HELLO), ("sent", HELLO))
    )
    assert any("duplicate policy hello" in s for s in v)
    # bad version
    v = wire.validate_transcript(
        _env_records(("recv", {"type": "hello", "protocol": 3}), ("sent", HELLO))
    )
    assert any("bad protocol version" in s for s in v)
    # query before handshake
    v = wire.validate_transcript(
        _env_records(("sent", wire.make_query(1, "plan", "t", ())))
    )
    assert any("before handshake" in s for s in v)


def test_validate_transcript_catches_flow_violations():
    base = [("recv", HELLO), ("sent", HELLO)]
    # two queries in flight
    v = wire.validate_transcript(_env_records(
        *base,
        ("sent", wire.make_query(1, "plan", "t", ())),
        ("sent", wire.make_query(2, "plan", "t", ())),
        ("recv", wire.make_result(2, "x")),
    ))
    assert any("while query 1 is unanswered" in s for s in v)
    # reply id mismatch
    v = wire.validate_transcript(_env_records(
        *base,
        ("sent", wire.make_query(1, "plan", "t", ())),
        ("recv", wire.make_result(9, "x")),
    ))
    assert any("does not match query" in s for s in v)
    # reply out of nowhere
    v = wire.validate_transcript(_env_records(*base, ("recv", wire.make_result(1, "x"))))
    assert any("no query outstanding" in s for s in v)
    # hanging query
    v = wire.validate_transcript(_env_records(*base, ("sent", wire.make_query(4, "plan", "t", ()))))
    assert any("never answered" in s for s in v)
    # malformed records and lines
    v = wire.validate_transcript([{"dir": "up", "line": "{}"}, {"dir": "sent"}, "nope"])
    assert sum("malformed transcript record" in s for s in v) == 3
    v = wire.validate_transcript(_env_records(*base) + [{"dir": "recv", "line": "{broken"}])
    assert any("invalid JSON" in s for s in v)


def test_load_transcript(tmp_path):
    path = tmp_path / "t.jsonl"
    records = _env_records(("recv", HELLO), ("sent", HELLO))
    path.write_text("".join(json.dumps(r) + "\n" for r in records) + "\n")
    assert wire.load_transcript(path) == records
    path.write_text('{"dir": "recv"\n')
    with pytest.raises(wire.ProtocolError, match="line 1"):
        wire.load_transcript(path)
