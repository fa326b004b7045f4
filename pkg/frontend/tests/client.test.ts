import { PassThrough } from "node:stream";
import { describe, expect, it } from "vitest";

import { serveSession, type PolicyHandler } from "../src/client.js";
import { hello, type HistoryStep } from "../src/protocol.js";
import { ProtocolError, transportFromStreams, type LineTransport } from "../src/transport.js";

/** Two transports wired back to back through in-memory streams. */
function pair() {
  const toPolicy = new PassThrough();
  const toEnv = new PassThrough();
  const env = transportFromStreams(toEnv, toPolicy);
  const policy = transportFromStreams(toPolicy, toEnv);
  return { env, policy, toPolicy, hangup: () => toPolicy.end() };
}

const echoEnd: PolicyHandler = {
  onPlan: () => "[END]",
  onFeedback: () => "True",
  onCorrect: () => "[END]",
};

async function expectHello(env: LineTransport) {
  expect(await env.recv()).toEqual(hello());
  env.send(hello());
}

describe("serveSession", () => {
  it("greets first, then answers ids in lockstep over 100 queries", async () => {
    const { env, policy, hangup } = pair();
    const handler: PolicyHandler = {
      ...echoEnd,
      onPlan: (task: string, history: HistoryStep[]) =>
        `[WALK] <kitchen> (${1000 + history.length})`,
    };
    const session = serveSession(policy, handler);
    const envSide = (async () => {
      await expectHello(env);
      for (let id = 1; id <= 100; id++) {
        env.send({ id, type: "plan", task: "roam", history: [] });
        expect(await env.recv()).toEqual({ id, result: "[WALK] <kitchen> (1000)" });
      }
      hangup();
    })();
    const [summary] = await Promise.all([session, envSide]);
    expect(summary.queries).toEqual({ plan: 100, feedback: 0, correct: 0 });
    expect(summary.errors).toBe(0);
  });

  it("routes the three query kinds to the matching callbacks", async () => {
    const { env, policy, hangup } = pair();
    const seen: string[] = [];
    const handler: PolicyHandler = {
      onPlan(task, history) {
        seen.push(`plan:${task}:${history.length}`);
        return "[SLEEP]";
      },
      onFeedback(task, history, action) {
        seen.push(`fb:${action}`);
        return "not convinced";
      },
      onCorrect(task, history, action, feedback) {
        seen.push(`corr:${action}:${feedback}`);
        return "[WAKEUP]";
      },
    };
    const session = serveSession(policy, handler);
    const envSide = (async () => {
      await expectHello(env);
      const history = [{ action: "[SLEEP]", observation: "zzz" }];
      env.send({ id: 1, type: "plan", task: "nap", history });
      expect(await env.recv()).toEqual({ id: 1, result: "[SLEEP]" });
      env.send({ id: 2, type: "feedback", task: "nap", history, action: "[SLEEP]" });
      expect(await env.recv()).toEqual({ id: 2, result: "not convinced" });
      env.send({
        id: 3,
        type: "correct",
        task: "nap",
        history,
        action: "[SLEEP]",
        feedback: "not convinced",
      });
      expect(await env.recv()).toEqual({ id: 3, result: "[WAKEUP]" });
      hangup();
    })();
    const [summary] = await Promise.all([session, envSide]);
    expect(seen).toEqual(["plan:nap:1", "fb:[SLEEP]", "corr:[SLEEP]:not convinced"]);
    expect(summary.queries).toEqual({ plan: 1, feedback: 1, correct: 1 });
  });

  it("turns handler exceptions into error replies and keeps serving", async () => {
    const { env, policy, hangup } = pair();
    let calls = 0;
    const handler: PolicyHandler = {
      ...echoEnd,
      onPlan: () => {
        calls += 1;
        if (calls === 1) throw new Error("model fell over");
        return "[END]";
      },
    };
    const session = serveSession(policy, handler);
    const envSide = (async () => {
      await expectHello(env);
      env.send({ id: 1, type: "plan", task: "t", history: [] });
      expect(await env.recv()).toEqual({ id: 1, error: "model fell over" });
      env.send({ id: 2, type: "plan", task: "t", history: [] });
      expect(await env.recv()).toEqual({ id: 2, result: "[END]" });
      hangup();
    })();
    const [summary] = await Promise.all([session, envSide]);
    expect(summary.errors).toBe(1);
    expect(summary.queries.plan).toBe(2);
  });

  it("rejects ungrammatical plan replies before they reach the wire", async () => {
    const { env, policy, hangup } = pair();
    const handler: PolicyHandler = { ...echoEnd, onPlan: () => "go north" };
    const session = serveSession(policy, handler);
    const envSide = (async () => {
      await expectHello(env);
      env.send({ id: 5, type: "plan", task: "t", history: [] });
      const reply = (await env.recv()) as { id: number; error: string };
      expect(reply.id).toBe(5);
      expect(reply.error).toContain("malformed action");
      hangup();
    })();
    const [summary] = await Promise.all([session, envSide]);
    expect(summary.errors).toBe(1);
  });

  it("supports async handlers", async () => {
    const { env, policy, hangup } = pair();
    const handler: PolicyHandler = {
      ...echoEnd,
      onPlan: async () => {
        await new Promise((r) => setTimeout(r, 1));
        return "[DRINK] <glass> (1010)";
      },
    };
    const session = serveSession(policy, handler);
    const envSide = (async () => {
      await expectHello(env);
      env.send({ id: 1, type: "plan", task: "t", history: [] });
      expect(await env.recv()).toEqual({ id: 1, result: "[DRINK] <glass> (1010)" });
      hangup();
    })();
    await Promise.all([session, envSide]);
  });

  it("fails the session when the peer never says hello", async () => {
    const { env, policy, hangup } = pair();
    const session = serveSession(policy, echoEnd);
    env.send({ id: 1, type: "plan", task: "t", history: [] });
    await expect(session).rejects.toThrow(/expected hello/);
    hangup();
  });

  it("fails the session on a version mismatch", async () => {
    const { env, policy, hangup } = pair();
    const session = serveSession(policy, echoEnd);
    env.send({ type: "hello", protocol: 2 });
    await expect(session).rejects.toThrow(ProtocolError);
    hangup();
  });

  it("fails the session when the peer hangs up before greeting", async () => {
    const { policy, hangup } = pair();
    const session = serveSession(policy, echoEnd);
    hangup();
    await expect(session).rejects.toThrow(/closed before the environment's hello/);
  });

  it("fails the session on a malformed query", async () => {
    const { env, policy, hangup } = pair();
    const session = serveSession(policy, echoEnd);
    const envSide = (async () => {
      await expectHello(env);
      env.send({ id: 1, type: "plan" }); // missing task and history
    })();
    await envSide;
    await expect(session).rejects.toThrow(/malformed query/);
    hangup();
  });

  it("fails the session on a non-object line", async () => {
    const { policy, toPolicy, hangup } = pair();
    const session = serveSession(policy, echoEnd);
    // raw writes bypass the env transport on purpose
    toPolicy.write(`${JSON.stringify(hello())}\n`);
    toPolicy.write("[1, 2, 3]\n");
    await expect(session).rejects.toThrow(/non-object/);
    hangup();
  });

  it("records a transcript suitable for the server-side checker", async () => {
    const { env, policy, hangup } = pair();
    const session = serveSession(policy, echoEnd);
    const envSide = (async () => {
      await expectHello(env);
      env.send({ id: 1, type: "plan", task: "t", history: [] });
      await env.recv();
      hangup();
    })();
    const [summary] = await Promise.all([session, envSide]);
    expect(summary.transcript[0]).toEqual({
      dir: "sent",
      line: '{"protocol":1,"type":"hello"}',
    });
    expect(summary.transcript[1]).toEqual({
      dir: "recv",
      line: '{"protocol":1,"type":"hello"}',
    });
    const dirs = summary.transcript.map((r) => r.dir);
    expect(dirs).toEqual(["sent", "recv", "recv", "sent"]);
  });
});
