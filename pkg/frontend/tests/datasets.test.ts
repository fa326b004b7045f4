import { execFileSync } from "node:child_process";
import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { beforeAll, describe, expect, it } from "vitest";

import {
  DatasetFormatError,
  dumpSampleLine,
  fileSha256,
  loadCorrection,
  loadFeedback,
  loadManifest,
  loadPlanning,
  loadPrompts,
  type Manifest,
} from "../src/datasets.js";

let dataDir: string;
let scratch: string;
let manifest: Manifest;

// A noisy planner makes the exploration collectors produce non-trivial
// feedback and correction corpora; the search corrector keeps them sound.
const CONFIG = {
  policy: { kind: "noisy", params: { p: 0.35 } },
  corrector: { kind: "search" },
};

beforeAll(() => {
  scratch = mkdtempSync(join(tmpdir(), "sdk-datasets-"));
  dataDir = join(scratch, "data");
  const configPath = join(scratch, "config.json");
  writeFileSync(configPath, JSON.stringify(CONFIG));
  execFileSync("python3", [
    "-m",
    "plansim",
    "datasets",
    "build",
    "--config",
    configPath,
    "--out",
    dataDir,
  ]);
  manifest = loadManifest(join(dataDir, "manifest.json"));
}, 120_000);

function fileLines(path: string): string[] {
  return readFileSync(path, "utf-8")
    .split("\n")
    .filter((line) => line.trim() !== "");
}

describe("manifest", () => {
  it("counts agree with the per-file table", () => {
    expect(manifest.format_version).toBe(1);
    expect(manifest.files["planning.jsonl"]?.count).toBe(manifest.counts.planning);
    expect(manifest.files["feedback.jsonl"]?.count).toBe(manifest.counts.feedback);
    expect(manifest.files["correction.jsonl"]?.count).toBe(manifest.counts.correction);
    expect(manifest.counts.planning).toBeGreaterThan(0);
    expect(manifest.counts.feedback).toBeGreaterThan(0);
    expect(manifest.counts.correction).toBeGreaterThan(0);
  });

  it("hashes match the files on disk", () => {
    for (const [name, entry] of Object.entries(manifest.files)) {
      expect(fileSha256(join(dataDir, name))).toBe(entry.sha256);
    }
  });

  it("rejects a manifest with a wrong shape", () => {
    const path = join(scratch, "bad-manifest.json");
    writeFileSync(path, JSON.stringify({ format_version: 2 }));
    expect(() => loadManifest(path)).toThrow(DatasetFormatError);
  });
});

describe("sample loaders", () => {
  it("load every line of each corpus", () => {
    expect(loadPlanning(join(dataDir, "planning.jsonl"))).toHaveLength(
      manifest.counts.planning
    );
    expect(loadFeedback(join(dataDir, "feedback.jsonl"))).toHaveLength(
      manifest.counts.feedback
    );
    expect(loadCorrection(join(dataDir, "correction.jsonl"))).toHaveLength(
      manifest.counts.correction
    );
  });

  it("round-trip every corpus byte for byte", () => {
    const roundTrips: Array<[string, (path: string) => object[]]> = [
      ["planning.jsonl", loadPlanning],
      ["feedback.jsonl", loadFeedback],
      ["correction.jsonl", loadCorrection],
    ];
    for (const [name, loader] of roundTrips) {
      const path = join(dataDir, name);
      const original = fileLines(path);
      const redumped = loader(path).map(dumpSampleLine);
      expect(redumped).toEqual(original);
    }
  });

  it("planning histories replay the prefix structure", () => {
    const samples = loadPlanning(join(dataDir, "planning.jsonl"));
    for (const sample of samples) {
      expect(sample.history).toHaveLength(sample.step - 1);
      expect(sample.kind).toBe("plan");
    }
  });

  it("correction samples always carry a failed check and a fix", () => {
    for (const sample of loadCorrection(join(dataDir, "correction.jsonl"))) {
      expect(sample.ok).toBe(false);
      expect(sample.error_type.length).toBeGreaterThan(0);
      expect(sample.corrected).not.toBe(sample.action);
    }
  });

  it("prompt files hold bare prompt/target pairs", () => {
    const pairs = loadPrompts(join(dataDir, "prompts_planning.jsonl"));
    expect(pairs).toHaveLength(manifest.counts.planning);
    for (const pair of pairs.slice(0, 5)) {
      expect(pair.prompt.length).toBeGreaterThan(0);
      expect(pair.target.length).toBeGreaterThan(0);
    }
  });
});

describe("error reporting", () => {
  it("names the corrupted line", () => {
    const lines = fileLines(join(dataDir, "planning.jsonl"));
    lines[4] = "{this is not json";
    const path = join(scratch, "corrupted.jsonl");
    writeFileSync(path, lines.join("\n") + "\n");
    expect(() => loadPlanning(path)).toThrow(/line 5: invalid JSON/);
  });

  it("names the line that breaks the schema", () => {
    const lines = fileLines(join(dataDir, "planning.jsonl"));
    const broken = JSON.parse(lines[2]!) as Record<string, unknown>;
    delete broken.target;
    lines[2] = JSON.stringify(broken);
    const path = join(scratch, "schema-break.jsonl");
    writeFileSync(path, lines.join("\n") + "\n");
    expect(() => loadPlanning(path)).toThrow(/line 3/);
  });

  it("rejects samples of the wrong kind", () => {
    const path = join(scratch, "wrong-kind.jsonl");
    writeFileSync(path, fileLines(join(dataDir, "feedback.jsonl"))[0]! + "\n");
    expect(() => loadPlanning(path)).toThrow(DatasetFormatError);
  });

  it("reports unreadable files by path", () => {
    expect(() => loadPlanning(join(scratch, "absent.jsonl"))).toThrow(/absent\.jsonl/);
  });
});
