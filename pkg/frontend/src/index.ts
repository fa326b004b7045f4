export {
  END_TOKEN,
  VERB_ARITY,
  ActionParseError,
  parseAction,
  renderAction,
  validateActionText,
  isEnd,
  type ObjectRef,
  type ParsedAction,
} from "./grammar.js";
export {
  PROTOCOL_VERSION,
  hello,
  makeResult,
  makeError,
  dumpsLine,
  helloSchema,
  querySchema,
  historyStepSchema,
  type HistoryStep,
  type Query,
  type Reply,
  type TranscriptRecord,
} from "./protocol.js";
export {
  TransportError,
  ProtocolError,
  connectTcp,
  stdioTransport,
  transportFromStreams,
  type LineTransport,
  type TransportOptions,
} from "./transport.js";
export {
  connectAndServe,
  serveSession,
  type PolicyHandler,
  type SessionSummary,
} from "./client.js";
export {
  DatasetFormatError,
  loadPlanning,
  loadFeedback,
  loadCorrection,
  loadPrompts,
  loadManifest,
  dumpSampleLine,
  fileSha256,
  planningSampleSchema,
  feedbackSampleSchema,
  correctionSampleSchema,
  promptPairSchema,
  manifestSchema,
  type PlanningSample,
  type FeedbackSample,
  type CorrectionSample,
  type PromptPair,
  type Manifest,
} from "./datasets.js";
