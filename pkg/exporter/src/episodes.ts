/**
 * Reader for the engine's episode files: JSON lines, one episode per line,
 * with an optional leading meta object (any line without "episode_id").
 */

import { readFileSync } from "node:fs";

export interface SentenceDoc {
  tokens: string[];
  labels: string[];
}

export interface Episode {
  episodeId: number;
  domain: string;
  slots: string[];
  support: SentenceDoc[];
  queries: SentenceDoc[];
}

export class EpisodeFileError extends Error {}

function checkSentence(doc: unknown, where: string): SentenceDoc {
  const rec = doc as Partial<SentenceDoc>;
  if (!Array.isArray(rec.tokens) || !Array.isArray(rec.labels)) {
    throw new EpisodeFileError(`${where}: sentence needs tokens and labels`);
  }
  if (rec.tokens.length !== rec.labels.length || rec.tokens.length === 0) {
    throw new EpisodeFileError(`${where}: tokens/labels length mismatch`);
  }
  return { tokens: rec.tokens.map(String), labels: rec.labels.map(String) };
}

export function readEpisodes(path: string): Episode[] {
  const episodes: Episode[] = [];
  const lines = readFileSync(path, "utf-8").split("\n");
  lines.forEach((line, index) => {
    if (!line.trim()) return;
    let doc: Record<string, unknown>;
    try {
      doc = JSON.parse(line);
    } catch (err) {
      throw new EpisodeFileError(`${path}:${index + 1}: invalid JSON`);
    }
    if (!("episode_id" in doc)) return; // meta line
    const where = `${path}:${index + 1}`;
    if (!Array.isArray(doc.label_set)) {
      throw new EpisodeFileError(`${where}: missing label_set`);
    }
    episodes.push({
      episodeId: Number(doc.episode_id),
      domain: String(doc.domain),
      slots: (doc.label_set as unknown[]).map(String),
      support: (doc.support as unknown[]).map((s, i) =>
        checkSentence(s, `${where} support[${i}]`),
      ),
      queries: (doc.queries as unknown[]).map((s, i) =>
        checkSentence(s, `${where} queries[${i}]`),
      ),
    });
  });
  if (episodes.length === 0) {
    throw new EpisodeFileError(`${path}: no episodes`);
  }
  return episodes;
}

/** The BIO alphabet of a domain in the engine's canonical order. */
export function bioLabels(slots: string[]): string[] {
  const ordered = [...new Set(slots)].sort();
  const labels = ["O"];
  for (const slot of ordered) {
    labels.push(`B-${slot}`, `I-${slot}`);
  }
  return labels;
}

/**
 * Text rendered for a label's semantic embedding: abstract position word
 * plus the slot name. Underscores read as spaces unless disabled.
 */
export function labelText(bioLabel: string, underscoreSpaces = true): string {
  if (bioLabel === "O") return "O";
  const kind = bioLabel.startsWith("B-") ? "begin" : "inner";
  let slot = bioLabel.slice(2);
  if (underscoreSpaces) slot = slot.replace(/_/g, " ");
  return `${kind} ${slot}`;
}
