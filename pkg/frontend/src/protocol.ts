/**
 * Wire shapes for the external-policy protocol, version 1.
 *
 * Lines are UTF-8 JSON objects terminated by `\n`. The policy greets
 * first; the environment answers with the same hello, then sends one
 * query at a time and waits for the matching reply.
 */

import { z } from "zod";

export const PROTOCOL_VERSION = 1;

export const helloSchema = z.object({
  type: z.literal("hello"),
  protocol: z.literal(PROTOCOL_VERSION),
});

export const historyStepSchema = z.object({
  action: z.string(),
  observation: z.string(),
});

export type HistoryStep = z.infer<typeof historyStepSchema>;

const queryBase = {
  id: z.number().int(),
  task: z.string(),
  history: z.array(historyStepSchema),
};

export const querySchema = z.discriminatedUnion("type", [
  z.object({ ...queryBase, type: z.literal("plan") }).strict(),
  z
    .object({ ...queryBase, type: z.literal("feedback"), action: z.string() })
    .strict(),
  z
    .object({
      ...queryBase,
      type: z.literal("correct"),
      action: z.string(),
      feedback: z.string(),
    })
    .strict(),
]);

export type Query = z.infer<typeof querySchema>;

export type Reply =
  | { id: number; result: string }
  | { id: number; error: string };

export function hello(): { type: "hello"; protocol: number } {
  return { type: "hello", protocol: PROTOCOL_VERSION };
}

export function makeResult(id: number, result: string): Reply {
  return { id, result };
}

export function makeError(id: number, message: string): Reply {
  return { id, error: message };
}

/**
 * Canonical single-line encoding: keys sorted, no whitespace. Matches the
 * server's serializer so recorded transcripts are byte-comparable.
 */
export function dumpsLine(obj: unknown): string {
  return JSON.stringify(sortKeysDeep(obj));
}

function sortKeysDeep(value: unknown): unknown {
  if (Array.isArray(value)) return value.map(sortKeysDeep);
  if (value !== null && typeof value === "object") {
    const out: Record<string, unknown> = {};
    for (const key of Object.keys(value as object).sort()) {
      out[key] = sortKeysDeep((value as Record<string, unknown>)[key]);
    }
    return out;
  }
  return value;
}

/** One recorded line of traffic, as the transcript checker expects it. */
export interface TranscriptRecord {
  dir: "sent" | "recv";
  line: string;
}
