/**
 * Typed loaders for the exported dataset files.
 *
 * One JSON object per line; the `kind` tag picks the sample shape:
 * "plan" (planning), "fb" (feedback), "corr" (correction). Rendered
 * prompt files carry bare {prompt, target} pairs ready for supervised
 * fine-tuning.
 */

import { createHash } from "node:crypto";
import { readFileSync } from "node:fs";

import { z } from "zod";

import { dumpsLine } from "./protocol.js";

export class DatasetFormatError extends Error {}

const historySchema = z.array(
  z.object({ action: z.string(), observation: z.string() }).strict()
);

const sampleBase = {
  task_id: z.string(),
  task: z.string(),
  source: z.string(),
  step: z.number().int().min(1),
  history: historySchema,
};

export const planningSampleSchema = z
  .object({ ...sampleBase, kind: z.literal("plan"), target: z.string() })
  .strict();

export const feedbackSampleSchema = z
  .object({
    ...sampleBase,
    kind: z.literal("fb"),
    action: z.string(),
    ok: z.boolean(),
    error_type: z.string().nullable(),
    message: z.string(),
  })
  .strict();

export const correctionSampleSchema = z
  .object({
    ...sampleBase,
    kind: z.literal("corr"),
    action: z.string(),
    ok: z.literal(false),
    error_type: z.string(),
    message: z.string(),
    corrected: z.string(),
  })
  .strict();

export const promptPairSchema = z
  .object({ prompt: z.string(), target: z.string() })
  .strict();

export const manifestSchema = z.object({
  format_version: z.literal(1),
  counts: z.object({
    planning: z.number().int(),
    feedback: z.number().int(),
    correction: z.number().int(),
  }),
  files: z.record(
    z.object({ count: z.number().int(), sha256: z.string().length(64) })
  ),
  extra: z.unknown().optional(),
});

export type PlanningSample = z.infer<typeof planningSampleSchema>;
export type FeedbackSample = z.infer<typeof feedbackSampleSchema>;
export type CorrectionSample = z.infer<typeof correctionSampleSchema>;
export type PromptPair = z.infer<typeof promptPairSchema>;
export type Manifest = z.infer<typeof manifestSchema>;

function loadLines<T>(path: string, schema: z.ZodType<T>): T[] {
  let text: string;
  try {
    text = readFileSync(path, "utf-8");
  } catch (err) {
    throw new DatasetFormatError(`${path}: ${(err as Error).message}`);
  }
  const out: T[] = [];
  const lines = text.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i];
    if (line === undefined || line.trim() === "") continue;
    let obj: unknown;
    try {
      obj = JSON.parse(line);
    } catch {
      throw new DatasetFormatError(`${path} line ${i + 1}: invalid JSON`);
    }
    const parsed = schema.safeParse(obj);
    if (!parsed.success) {
      const issue = parsed.error.issues[0];
      const where = issue && issue.path.length ? ` at ${issue.path.join(".")}` : "";
      const why = issue ? issue.message : "schema violation";
      throw new DatasetFormatError(`${path} line ${i + 1}: ${why}${where}`);
    }
    out.push(parsed.data);
  }
  return out;
}

export function loadPlanning(path: string): PlanningSample[] {
  return loadLines(path, planningSampleSchema);
}

export function loadFeedback(path: string): FeedbackSample[] {
  return loadLines(path, feedbackSampleSchema);
}

export function loadCorrection(path: string): CorrectionSample[] {
  return loadLines(path, correctionSampleSchema);
}

export function loadPrompts(path: string): PromptPair[] {
  return loadLines(path, promptPairSchema);
}

export function loadManifest(path: string): Manifest {
  let obj: unknown;
  try {
    obj = JSON.parse(readFileSync(path, "utf-8"));
  } catch (err) {
    throw new DatasetFormatError(`${path}: ${(err as Error).message}`);
  }
  const parsed = manifestSchema.safeParse(obj);
  if (!parsed.success) {
    throw new DatasetFormatError(`${path}: ${parsed.error.issues[0]?.message}`);
  }
  return parsed.data;
}

/**
 * Serialize a sample the way the exporter does (keys sorted at every
 * level, compact separators), so loading and re-dumping a file
 * reproduces it exactly.
 */
export function dumpSampleLine(sample: object): string {
  return dumpsLine(sample);
}

/** Hex SHA-256 of a file, for checking against the manifest. */
export function fileSha256(path: string): string {
  return createHash("sha256").update(readFileSync(path)).digest("hex");
}
