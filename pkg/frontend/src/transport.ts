/**
 * Line-delimited JSON over a socket or a stream pair.
 */

import net from "node:net";
import type { Readable, Writable } from "node:stream";

import type { TranscriptRecord } from "./protocol.js";
import { dumpsLine } from "./protocol.js";

export class TransportError extends Error {}
export class ProtocolError extends Error {}

export interface LineTransport {
  send(obj: unknown): void;
  /** Next decoded object, or null on clean end of stream. */
  recv(): Promise<Record<string, unknown> | null>;
  close(): void;
  readonly transcript: TranscriptRecord[];
}

class StreamTransport implements LineTransport {
  readonly transcript: TranscriptRecord[] = [];
  private buffer = "";
  private lines: string[] = [];
  private ended = false;
  private failure: Error | null = null;
  private wake: (() => void) | null = null;

  constructor(
    private readonly input: Readable,
    private readonly output: Writable,
    private readonly record: boolean,
    private readonly onClose?: () => void
  ) {
    input.setEncoding("utf-8");
    input.on("data", (chunk: string) => {
      this.buffer += chunk;
      let idx = this.buffer.indexOf("\n");
      while (idx >= 0) {
        this.lines.push(this.buffer.slice(0, idx));
        this.buffer = this.buffer.slice(idx + 1);
        idx = this.buffer.indexOf("\n");
      }
      this.notify();
    });
    input.on("end", () => {
      this.ended = true;
      this.notify();
    });
    input.on("error", (err: Error) => {
      this.failure = err;
      this.notify();
    });
    output.on("error", (err: Error) => {
      this.failure = err;
    });
  }

  private notify(): void {
    const wake = this.wake;
    this.wake = null;
    if (wake) wake();
  }

  send(obj: unknown): void {
    if (this.failure) {
      throw new TransportError(`send failed: ${this.failure.message}`);
    }
    const line = dumpsLine(obj);
    try {
      this.output.write(line + "\n");
    } catch (err) {
      throw new TransportError(`send failed: ${(err as Error).message}`);
    }
    if (this.record) this.transcript.push({ dir: "sent", line });
  }

  async recv(): Promise<Record<string, unknown> | null> {
    for (;;) {
      const line = this.lines.shift();
      if (line !== undefined) {
        const trimmed = line.replace(/\r$/, "");
        if (this.record) this.transcript.push({ dir: "recv", line: trimmed });
        let obj: unknown;
        try {
          obj = JSON.parse(trimmed);
        } catch {
          throw new ProtocolError(`peer sent invalid JSON: ${trimmed}`);
        }
        if (obj === null || typeof obj !== "object" || Array.isArray(obj)) {
          throw new ProtocolError(`peer sent a non-object line: ${trimmed}`);
        }
        return obj as Record<string, unknown>;
      }
      if (this.failure) {
        throw new TransportError(`recv failed: ${this.failure.message}`);
      }
      if (this.ended) return null;
      await new Promise<void>((resolve) => {
        this.wake = resolve;
      });
    }
  }

  close(): void {
    this.onClose?.();
  }
}

export interface TransportOptions {
  /** Keep a transcript of every line (default true). */
  record?: boolean;
}

export function transportFromStreams(
  input: Readable,
  output: Writable,
  options: TransportOptions = {},
  onClose?: () => void
): LineTransport {
  return new StreamTransport(input, output, options.record ?? true, onClose);
}

export function connectTcp(
  host: string,
  port: number,
  options: TransportOptions = {}
): Promise<LineTransport> {
  return new Promise((resolve, reject) => {
    const socket = net.createConnection({ host, port });
    socket.once("error", (err) =>
      reject(new TransportError(`cannot connect to ${host}:${port}: ${err.message}`))
    );
    socket.once("connect", () => {
      socket.removeAllListeners("error");
      resolve(
        transportFromStreams(socket, socket, options, () => socket.destroy())
      );
    });
  });
}

/** Speak the protocol on this process's own stdin/stdout. */
export function stdioTransport(options: TransportOptions = {}): LineTransport {
  return transportFromStreams(process.stdin, process.stdout, options);
}
