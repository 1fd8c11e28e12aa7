/**
 * Deterministic pseudo-random primitives. Everything the exporter emits is a
 * pure function of (input text, seed), so repeated runs write identical
 * stores on any platform.
 */

/** FNV-1a 32-bit hash of a string. */
export function fnv1a(text: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i);
    h = Math.imul(h, 0x01000193) >>> 0;
  }
  return h >>> 0;
}

/** mulberry32: small fast PRNG over a 32-bit state. */
export function mulberry32(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

/** Standard normal deviates via Box-Muller on a mulberry32 stream. */
export function gaussianStream(seed: number): () => number {
  const uniform = mulberry32(seed);
  let spare: number | null = null;
  return () => {
    if (spare !== null) {
      const value = spare;
      spare = null;
      return value;
    }
    let u = 0;
    let v = 0;
    while (u === 0) u = uniform();
    v = uniform();
    const radius = Math.sqrt(-2.0 * Math.log(u));
    spare = radius * Math.sin(2.0 * Math.PI * v);
    return radius * Math.cos(2.0 * Math.PI * v);
  };
}

/** A unit-norm vector derived from (text, seed). */
export function hashVector(text: string, dim: number, seed: number): number[] {
  const next = gaussianStream((fnv1a(`${seed}|${dim}|${text}`) ^ seed) >>> 0);
  const vec = new Array<number>(dim);
  let sq = 0;
  for (let i = 0; i < dim; i++) {
    vec[i] = next();
    sq += vec[i] * vec[i];
  }
  const norm = Math.sqrt(sq) || 1;
  for (let i = 0; i < dim; i++) vec[i] /= norm;
  return vec;
}

/** A dim x dim matrix with N(0, 1/dim) entries derived from (name, seed). */
export function randomMatrix(name: string, dim: number, seed: number): number[][] {
  const next = gaussianStream(fnv1a(`${seed}|mat|${name}|${dim}`));
  const scale = 1 / Math.sqrt(dim);
  const rows: number[][] = [];
  for (let i = 0; i < dim; i++) {
    const row = new Array<number>(dim);
    for (let j = 0; j < dim; j++) row[j] = next() * scale;
    rows.push(row);
  }
  return rows;
}
