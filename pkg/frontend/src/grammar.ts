/**
 * Vendored copy of the action grammar so malformed model output fails fast
 * on the client, before a reply ever reaches the server.
 *
 * Templates by arity:
 *   0: `[VERB]`
 *   1: `[VERB] <class> (id)`
 *   2: `[VERB] <class> (id) <class> (id)`
 */

export const END_TOKEN = "[END]";

/** Verb name -> argument count. */
export const VERB_ARITY: Readonly<Record<string, number>> = Object.freeze({
  WALK: 1,
  RUN: 1,
  FIND: 1,
  GRAB: 1,
  OPEN: 1,
  CLOSE: 1,
  SWITCHON: 1,
  SWITCHOFF: 1,
  SIT: 1,
  STANDSUP: 0,
  PUTBACK: 2,
  PUTIN: 2,
  PUTOBJBACK: 1,
  POUR: 2,
  TYPE: 1,
  TOUCH: 1,
  TURNTO: 1,
  LOOKAT: 1,
  WATCH: 1,
  POINTAT: 1,
  WIPE: 1,
  PUTON: 1,
  PUTOFF: 1,
  GREET: 1,
  DROP: 1,
  READ: 1,
  LIE: 1,
  PUSH: 1,
  PULL: 1,
  MOVE: 1,
  WASH: 1,
  RINSE: 1,
  SCRUB: 1,
  SQUEEZE: 1,
  PLUGIN: 1,
  PLUGOUT: 1,
  CUT: 1,
  EAT: 1,
  DRINK: 1,
  SLEEP: 0,
  WAKEUP: 0,
  RELEASE: 1,
});

export interface ObjectRef {
  className: string;
  id: number;
}

export interface ParsedAction {
  verb: string;
  args: ObjectRef[];
}

export class ActionParseError extends Error {}

const ACTION_RE =
  /^\s*\[\s*([A-Za-z_]+)\s*\]\s*(?:<\s*([^<>]+?)\s*>\s*\(\s*(\d+)\s*\)\s*)?(?:<\s*([^<>]+?)\s*>\s*\(\s*(\d+)\s*\)\s*)?$/;

const CLASS_RE = /^[a-z0-9_]+$/;

function normalizeClassName(raw: string): string {
  const name = raw.trim().toLowerCase().split(/\s+/).join("_");
  if (!CLASS_RE.test(name)) {
    throw new ActionParseError(`bad object class ${JSON.stringify(raw)}`);
  }
  return name;
}

/** Parse one action line; throws ActionParseError on any violation. */
export function parseAction(text: string): ParsedAction {
  const match = ACTION_RE.exec(text);
  if (!match) {
    throw new ActionParseError(`malformed action: ${JSON.stringify(text)}`);
  }
  const verb = (match[1] ?? "").toUpperCase();
  const arity = VERB_ARITY[verb];
  if (arity === undefined) {
    throw new ActionParseError(`unknown verb '${match[1]}'`);
  }
  const args: ObjectRef[] = [];
  for (const [cls, id] of [
    [match[2], match[3]],
    [match[4], match[5]],
  ] as const) {
    if (cls === undefined || id === undefined) break;
    args.push({ className: normalizeClassName(cls), id: Number(id) });
  }
  if (args.length !== arity) {
    throw new ActionParseError(
      `${verb} takes ${arity} argument(s), got ${args.length}`
    );
  }
  return { verb, args };
}

export function isEnd(text: string): boolean {
  return text.trim() === END_TOKEN;
}

/**
 * Check text that is about to be sent as a plan/correct reply. The end
 * marker is allowed; anything else must parse under the grammar.
 */
export function validateActionText(text: string): void {
  if (typeof text !== "string") {
    throw new ActionParseError("action text must be a string");
  }
  if (isEnd(text)) return;
  parseAction(text);
}

/** Render a parsed action back into its canonical single-line form. */
export function renderAction(action: ParsedAction): string {
  const parts = [`[${action.verb}]`];
  for (const arg of action.args) {
    parts.push(`<${arg.className}> (${arg.id})`);
  }
  return parts.join(" ");
}
