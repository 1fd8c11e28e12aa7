/**
 * Build the committed cross-component fixtures: a small 3-episode file plus
 * the store the exporter writes for it. The engine's test suite loads both
 * and re-derives the pair averaging independently.
 */

import { mkdirSync, writeFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { runExport } from "./export.js";

const here = dirname(fileURLToPath(import.meta.url));
const outDir = join(here, "..", "..", "tests", "data", "exporter");

interface Sentence {
  tokens: string[];
  labels: string[];
}

function sentence(text: string, labels: string): Sentence {
  return { tokens: text.split(" "), labels: labels.split(" ") };
}

const weatherEpisodes = [
  {
    episode_id: 0,
    domain: "weather",
    label_set: ["condition", "time_range"],
    support: [
      sentence("will it rain tonight", "O O B-condition B-time_range"),
      sentence("show sunny days this week", "O B-condition O B-time_range I-time_range"),
    ],
    queries: [
      sentence("is it snowing right now", "O O B-condition B-time_range I-time_range"),
      sentence("any thunderstorms expected", "O B-condition O"),
    ],
  },
  {
    episode_id: 1,
    domain: "weather",
    label_set: ["condition", "time_range"],
    support: [
      sentence("forecast fog tomorrow morning", "O B-condition B-time_range I-time_range"),
    ],
    queries: [
      sentence("will the fog stay until noon", "O O B-condition O O B-time_range"),
    ],
  },
];

const musicEpisode = {
  episode_id: 2,
  domain: "music",
  label_set: ["artist"],
  support: [sentence("play some miles davis", "O O B-artist I-artist")],
  queries: [
    sentence("queue up nina simone please", "O O B-artist I-artist O"),
    sentence("skip this track", "O O O"),
  ],
};

async function main(): Promise<void> {
  mkdirSync(outDir, { recursive: true });
  const episodesPath = join(outDir, "episodes.jsonl");
  const lines = [
    JSON.stringify({ k: 1, queries_per_episode: 2, seed: 0 }),
    ...[...weatherEpisodes, musicEpisode].map((ep) => JSON.stringify(ep)),
  ];
  writeFileSync(episodesPath, lines.join("\n") + "\n");
  const summary = await runExport({
    episodesPath,
    outPath: join(outDir, "store.jsonl"),
    dim: 32,
    seed: 0,
  });
  console.log(`fixtures: ${summary.records} records -> ${outDir}`);
}

main();
