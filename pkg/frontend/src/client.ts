/**
 * Policy-side session loop: answer plan/feedback/correct queries with
 * user-supplied callbacks until the environment hangs up.
 */

import { ZodError } from "zod";

import { validateActionText } from "./grammar.js";
import {
  helloSchema,
  hello,
  makeError,
  makeResult,
  querySchema,
  type HistoryStep,
  type Query,
  type TranscriptRecord,
} from "./protocol.js";
import { connectTcp, ProtocolError, type LineTransport, type TransportOptions } from "./transport.js";

export interface PolicyHandler {
  /** Next action for the task, or "[END]" when the plan is complete. */
  onPlan(task: string, history: HistoryStep[]): string | Promise<string>;
  /** Predicted verdict for a proposed action ("True" approves it). */
  onFeedback(
    task: string,
    history: HistoryStep[],
    action: string
  ): string | Promise<string>;
  /** Replacement for a self-rejected action. */
  onCorrect(
    task: string,
    history: HistoryStep[],
    action: string,
    feedback: string
  ): string | Promise<string>;
}

export interface SessionSummary {
  /** Queries answered, by kind. */
  queries: { plan: number; feedback: number; correct: number };
  /** How many replies were error objects (handler threw or bad action). */
  errors: number;
  /** Every line sent or received, for the protocol checker. */
  transcript: TranscriptRecord[];
}

async function dispatch(handler: PolicyHandler, query: Query): Promise<string> {
  switch (query.type) {
    case "plan": {
      const action = await handler.onPlan(query.task, query.history);
      validateActionText(action);
      return action;
    }
    case "feedback": {
      const verdict = await handler.onFeedback(
        query.task,
        query.history,
        query.action
      );
      if (typeof verdict !== "string") {
        throw new Error("feedback handler must return a string");
      }
      return verdict;
    }
    case "correct": {
      const action = await handler.onCorrect(
        query.task,
        query.history,
        query.action,
        query.feedback
      );
      validateActionText(action);
      return action;
    }
  }
}

/**
 * Run the full session on an open transport: greet, answer queries until
 * end of stream. Handler failures (exceptions, malformed actions) turn
 * into error replies and the session continues; protocol breaches from
 * the peer raise ProtocolError and end it.
 */
export async function serveSession(
  transport: LineTransport,
  handler: PolicyHandler
): Promise<SessionSummary> {
  transport.send(hello());
  const greeting = await transport.recv();
  if (greeting === null) {
    throw new ProtocolError("connection closed before the environment's hello");
  }
  if (!helloSchema.safeParse(greeting).success) {
    throw new ProtocolError(`expected hello, got ${JSON.stringify(greeting)}`);
  }
  const summary: SessionSummary = {
    queries: { plan: 0, feedback: 0, correct: 0 },
    errors: 0,
    transcript: transport.transcript,
  };
  for (;;) {
    const raw = await transport.recv();
    if (raw === null) break;
    const parsed = querySchema.safeParse(raw);
    if (!parsed.success) {
      throw new ProtocolError(
        `malformed query: ${formatZodError(parsed.error)}: ${JSON.stringify(raw)}`
      );
    }
    const query = parsed.data;
    summary.queries[query.type] += 1;
    try {
      transport.send(makeResult(query.id, await dispatch(handler, query)));
    } catch (err) {
      summary.errors += 1;
      transport.send(makeError(query.id, (err as Error).message));
    }
  }
  return summary;
}

function formatZodError(error: ZodError): string {
  const issue = error.issues[0];
  if (!issue) return "invalid";
  const path = issue.path.join(".");
  return path ? `${path}: ${issue.message}` : issue.message;
}

/** Connect over TCP, serve one session, close the socket. */
export async function connectAndServe(
  host: string,
  port: number,
  handler: PolicyHandler,
  options: TransportOptions = {}
): Promise<SessionSummary> {
  const transport = await connectTcp(host, port, options);
  try {
    return await serveSession(transport, handler);
  } finally {
    transport.close();
  }
}
