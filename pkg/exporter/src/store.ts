/**
 * Writer (and test-side reader) for the engine's embedding-store files:
 * a JSON header line {"dim": D, "kind": "f32"} followed by JSON-lines
 * records {"key": [...], "vec": [...]}. Token keys are
 * ["tok", episode, role, sentence, pair, token]; label keys are
 * ["lab", domain, bioLabel]. Vectors are rounded to float32.
 */

import { readFileSync, writeFileSync } from "node:fs";

export type TokenRole = "query" | "support";

export const SOLO_PAIR = -1;

export class StoreWriter {
  readonly dim: number;
  private readonly path: string;
  private readonly lines: string[] = [];
  private count = 0;

  constructor(path: string, dim: number) {
    this.dim = dim;
    this.path = path;
    this.lines.push(JSON.stringify({ dim, kind: "f32" }));
  }

  private writeRecord(key: unknown[], vec: number[]): void {
    if (vec.length !== this.dim) {
      throw new Error(`vector of length ${vec.length} in a dim-${this.dim} store`);
    }
    const rounded = vec.map((x) => Math.fround(x));
    this.lines.push(JSON.stringify({ key, vec: rounded }));
    this.count += 1;
  }

  putToken(
    episodeId: number,
    role: TokenRole,
    sentenceIndex: number,
    pairIndex: number,
    tokenIndex: number,
    vec: number[],
  ): void {
    this.writeRecord(["tok", episodeId, role, sentenceIndex, pairIndex, tokenIndex], vec);
  }

  putLabel(domain: string, bioLabel: string, vec: number[]): void {
    this.writeRecord(["lab", domain, bioLabel], vec);
  }

  get records(): number {
    return this.count;
  }

  async close(): Promise<void> {
    writeFileSync(this.path, this.lines.join("\n") + "\n", "utf-8");
  }
}

export interface LoadedStore {
  dim: number;
  tokens: Map<string, number[]>;
  labels: Map<string, number[]>;
}

export function tokenKey(
  episodeId: number,
  role: TokenRole,
  sentenceIndex: number,
  pairIndex: number,
  tokenIndex: number,
): string {
  return `${episodeId}|${role}|${sentenceIndex}|${pairIndex}|${tokenIndex}`;
}

export function readStore(path: string): LoadedStore {
  const lines = readFileSync(path, "utf-8").split("\n").filter((l) => l.trim());
  const header = JSON.parse(lines[0]) as { dim: number };
  const tokens = new Map<string, number[]>();
  const labels = new Map<string, number[]>();
  for (const line of lines.slice(1)) {
    const rec = JSON.parse(line) as { key: unknown[]; vec: number[] };
    if (rec.vec.length !== header.dim) {
      throw new Error(`record with dim ${rec.vec.length} in dim-${header.dim} store`);
    }
    if (rec.key[0] === "tok") {
      const [, ep, role, sent, pair, tok] = rec.key;
      tokens.set(
        tokenKey(Number(ep), role as TokenRole, Number(sent), Number(pair), Number(tok)),
        rec.vec,
      );
    } else if (rec.key[0] === "lab") {
      labels.set(`${rec.key[1]}|${rec.key[2]}`, rec.vec);
    } else {
      throw new Error(`unknown key kind ${String(rec.key[0])}`);
    }
  }
  return { dim: header.dim, tokens, labels };
}
