/**
 * A small deterministic contextual encoder.
 *
 * Words are lowercased and split into subword pieces; pieces get hash-derived
 * embeddings plus sinusoidal positions and a segment vector, then one
 * self-attention layer mixes the whole input. Word vectors are the mean of
 * their piece outputs; a leading summary token plays the role of the
 * sentence-level slot usually taken by a pretrained encoder's first position.
 *
 * The weights are pseudo-random functions of the seed, so two runs with the
 * same seed produce identical vectors. A pretrained transformer backend can
 * implement the same interface when local weights are available.
 */

import { hashVector, randomMatrix } from "./rng.js";

export const SUMMARY_TOKEN = "[CLS]";
export const SEPARATOR_TOKEN = "[SEP]";

export interface PairEncoding {
  queryVectors: number[][];
  supportVectors: number[][];
}

export interface EncoderOptions {
  dim?: number;
  seed?: number;
  maxPieces?: number;
  pieceLength?: number;
}

interface Piece {
  text: string;
  wordIndex: number; // -1 for specials
  segment: 0 | 1;
}

export class SequenceTooLongError extends Error {}

function matVec(m: number[][], v: number[]): number[] {
  const out = new Array<number>(m.length).fill(0);
  for (let i = 0; i < m.length; i++) {
    const row = m[i];
    let acc = 0;
    for (let j = 0; j < row.length; j++) acc += row[j] * v[j];
    out[i] = acc;
  }
  return out;
}

export class DeterministicEncoder {
  readonly dim: number;
  readonly seed: number;
  readonly maxPieces: number;
  readonly pieceLength: number;
  private readonly wq: number[][];
  private readonly wk: number[][];
  private readonly wv: number[][];
  private readonly wo: number[][];
  private readonly segments: [number[], number[]];
  private readonly pieceCache = new Map<string, number[]>();

  constructor(options: EncoderOptions = {}) {
    this.dim = options.dim ?? 32;
    this.seed = options.seed ?? 0;
    this.maxPieces = options.maxPieces ?? 128;
    this.pieceLength = options.pieceLength ?? 4;
    this.wq = randomMatrix("wq", this.dim, this.seed);
    this.wk = randomMatrix("wk", this.dim, this.seed);
    this.wv = randomMatrix("wv", this.dim, this.seed);
    this.wo = randomMatrix("wo", this.dim, this.seed);
    this.segments = [
      hashVector("[SEG0]", this.dim, this.seed),
      hashVector("[SEG1]", this.dim, this.seed),
    ];
  }

  /** Greedy fixed-width subword split; continuations carry a "##" mark. */
  pieces(word: string): string[] {
    const lower = word.toLowerCase();
    if (lower.length <= this.pieceLength) return [lower];
    const out: string[] = [];
    for (let start = 0; start < lower.length; start += this.pieceLength) {
      const chunk = lower.slice(start, start + this.pieceLength);
      out.push(start === 0 ? chunk : `##${chunk}`);
    }
    return out;
  }

  private embedPiece(text: string): number[] {
    let vec = this.pieceCache.get(text);
    if (!vec) {
      vec = hashVector(text, this.dim, this.seed);
      this.pieceCache.set(text, vec);
    }
    return vec;
  }

  private position(index: number): number[] {
    const out = new Array<number>(this.dim);
    for (let j = 0; j < this.dim; j += 2) {
      const angle = index / Math.pow(10000, j / this.dim);
      out[j] = 0.1 * Math.sin(angle);
      if (j + 1 < this.dim) out[j + 1] = 0.1 * Math.cos(angle);
    }
    return out;
  }

  /** One self-attention layer with residuals over the piece sequence. */
  private contextualize(pieces: Piece[]): number[][] {
    const n = pieces.length;
    const x: number[][] = pieces.map((piece, index) => {
      const base = this.embedPiece(piece.text);
      const pos = this.position(index);
      const seg = this.segments[piece.segment];
      const row = new Array<number>(this.dim);
      for (let j = 0; j < this.dim; j++) row[j] = base[j] + pos[j] + 0.1 * seg[j];
      return row;
    });
    const q = x.map((row) => matVec(this.wq, row));
    const k = x.map((row) => matVec(this.wk, row));
    const v = x.map((row) => matVec(this.wv, row));
    const scale = 1 / Math.sqrt(this.dim);
    const out: number[][] = [];
    for (let i = 0; i < n; i++) {
      const logits = new Array<number>(n);
      let maxLogit = -Infinity;
      for (let t = 0; t < n; t++) {
        let acc = 0;
        for (let j = 0; j < this.dim; j++) acc += q[i][j] * k[t][j];
        logits[t] = acc * scale;
        if (logits[t] > maxLogit) maxLogit = logits[t];
      }
      let denom = 0;
      for (let t = 0; t < n; t++) {
        logits[t] = Math.exp(logits[t] - maxLogit);
        denom += logits[t];
      }
      const mix = new Array<number>(this.dim).fill(0);
      for (let t = 0; t < n; t++) {
        const w = logits[t] / denom;
        for (let j = 0; j < this.dim; j++) mix[j] += w * v[t][j];
      }
      const projected = matVec(this.wo, mix);
      const row = new Array<number>(this.dim);
      for (let j = 0; j < this.dim; j++) row[j] = x[i][j] + projected[j];
      out.push(row);
    }
    return out;
  }

  private wordsToPieces(
    words: string[],
    segment: 0 | 1,
    wordOffset: number,
  ): Piece[] {
    const out: Piece[] = [];
    words.forEach((word, index) => {
      for (const text of this.pieces(word)) {
        out.push({ text, wordIndex: wordOffset + index, segment });
      }
    });
    return out;
  }

  private poolWords(
    pieces: Piece[],
    vectors: number[][],
    nWords: number,
    wordOffset: number,
  ): number[][] {
    const sums: number[][] = Array.from({ length: nWords }, () =>
      new Array<number>(this.dim).fill(0),
    );
    const counts = new Array<number>(nWords).fill(0);
    pieces.forEach((piece, index) => {
      const local = piece.wordIndex - wordOffset;
      if (piece.wordIndex < 0 || local < 0 || local >= nWords) return;
      counts[local] += 1;
      for (let j = 0; j < this.dim; j++) sums[local][j] += vectors[index][j];
    });
    return sums.map((row, w) => row.map((value) => value / (counts[w] || 1)));
  }

  private checkLength(pieces: Piece[], what: string): void {
    if (pieces.length > this.maxPieces) {
      throw new SequenceTooLongError(
        `${what}: ${pieces.length} pieces exceed the encoder limit of ${this.maxPieces}`,
      );
    }
  }

  /** Encode a (query, support) sentence pair as two segments. */
  encodePair(
    queryTokens: string[],
    supportTokens: string[],
    what = "pair",
  ): PairEncoding {
    const pieces: Piece[] = [
      { text: SUMMARY_TOKEN, wordIndex: -1, segment: 0 },
      ...this.wordsToPieces(queryTokens, 0, 0),
      { text: SEPARATOR_TOKEN, wordIndex: -1, segment: 0 },
      ...this.wordsToPieces(supportTokens, 1, queryTokens.length),
      { text: SEPARATOR_TOKEN, wordIndex: -1, segment: 1 },
    ];
    this.checkLength(pieces, what);
    const vectors = this.contextualize(pieces);
    return {
      queryVectors: this.poolWords(pieces, vectors, queryTokens.length, 0),
      supportVectors: this.poolWords(
        pieces,
        vectors,
        supportTokens.length,
        queryTokens.length,
      ),
    };
  }

  /** Encode one sentence alone (used for pair-ablated runs). */
  encodeSingle(tokens: string[], what = "sentence"): number[][] {
    const pieces: Piece[] = [
      { text: SUMMARY_TOKEN, wordIndex: -1, segment: 0 },
      ...this.wordsToPieces(tokens, 0, 0),
      { text: SEPARATOR_TOKEN, wordIndex: -1, segment: 0 },
    ];
    this.checkLength(pieces, what);
    const vectors = this.contextualize(pieces);
    return this.poolWords(pieces, vectors, tokens.length, 0);
  }

  /** Encode label text and return the leading summary position's vector. */
  encodeLabelText(text: string): number[] {
    const pieces: Piece[] = [
      { text: SUMMARY_TOKEN, wordIndex: -1, segment: 0 },
      ...this.wordsToPieces(text.split(/\s+/).filter(Boolean), 0, 0),
    ];
    this.checkLength(pieces, `label ${text}`);
    return this.contextualize(pieces)[0];
  }
}
