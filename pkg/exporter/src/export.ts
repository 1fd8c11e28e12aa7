/**
 * Export job: read an episode file, encode every (query, support) sentence
 * pair plus per-sentence solo encodings and per-domain label texts, and write
 * the engine's store format. The engine performs the pair averaging itself,
 * so one record is written per pair and token.
 */

import { DeterministicEncoder, SequenceTooLongError } from "./encoder.js";
import { Episode, bioLabels, labelText, readEpisodes } from "./episodes.js";
import { SOLO_PAIR, StoreWriter } from "./store.js";

export interface ExportJob {
  episodesPath: string;
  outPath: string;
  dim?: number;
  seed?: number;
  labelsOnly?: boolean;
  underscoreSpaces?: boolean;
  device?: string;
}

export interface ExportSummary {
  episodes: number;
  domains: number;
  records: number;
}

export class ExportError extends Error {}

function exportEpisodeTokens(
  episode: Episode,
  encoder: DeterministicEncoder,
  writer: StoreWriter,
): void {
  const where = `episode ${episode.episodeId}`;
  try {
    episode.queries.forEach((query, qIdx) => {
      episode.support.forEach((support, sIdx) => {
        const pair = encoder.encodePair(
          query.tokens,
          support.tokens,
          `${where} query ${qIdx} x support ${sIdx}`,
        );
        pair.queryVectors.forEach((vec, t) =>
          writer.putToken(episode.episodeId, "query", qIdx, sIdx, t, vec),
        );
        pair.supportVectors.forEach((vec, t) =>
          writer.putToken(episode.episodeId, "support", sIdx, qIdx, t, vec),
        );
      });
      encoder
        .encodeSingle(query.tokens, `${where} query ${qIdx}`)
        .forEach((vec, t) =>
          writer.putToken(episode.episodeId, "query", qIdx, SOLO_PAIR, t, vec),
        );
    });
    episode.support.forEach((support, sIdx) => {
      encoder
        .encodeSingle(support.tokens, `${where} support ${sIdx}`)
        .forEach((vec, t) =>
          writer.putToken(episode.episodeId, "support", sIdx, SOLO_PAIR, t, vec),
        );
    });
  } catch (err) {
    if (err instanceof SequenceTooLongError) {
      throw new ExportError(`${where}: ${err.message}`);
    }
    throw err;
  }
}

export async function runExport(job: ExportJob): Promise<ExportSummary> {
  if (job.device && job.device !== "cpu") {
    throw new ExportError(`unsupported device ${job.device}; only cpu is available`);
  }
  const episodes = readEpisodes(job.episodesPath);
  const encoder = new DeterministicEncoder({ dim: job.dim, seed: job.seed });
  const writer = new StoreWriter(job.outPath, encoder.dim);

  if (!job.labelsOnly) {
    for (const episode of episodes) {
      exportEpisodeTokens(episode, encoder, writer);
    }
  }

  const domains = new Map<string, string[]>();
  for (const episode of episodes) {
    const seen = domains.get(episode.domain);
    if (seen) {
      if (JSON.stringify(seen) !== JSON.stringify([...episode.slots].sort())) {
        throw new ExportError(
          `domain ${episode.domain} appears with two different label sets`,
        );
      }
      continue;
    }
    domains.set(episode.domain, [...episode.slots].sort());
  }
  for (const [domain, slots] of domains) {
    for (const label of bioLabels(slots)) {
      const text = labelText(label, job.underscoreSpaces ?? true);
      writer.putLabel(domain, label, encoder.encodeLabelText(text));
    }
  }

  await writer.close();
  return { episodes: episodes.length, domains: domains.size, records: writer.records };
}
