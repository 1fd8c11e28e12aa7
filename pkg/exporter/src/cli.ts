#!/usr/bin/env node
/**
 * CLI: fewtag-export export --episodes <path> --out <path>
 *        [--labels-only] [--device cpu] [--dim N] [--seed N]
 *        [--keep-underscores]
 */

import { ExportError, runExport } from "./export.js";
import { EpisodeFileError } from "./episodes.js";

function usage(): string {
  return [
    "usage: fewtag-export export --episodes <path> --out <path>",
    "         [--labels-only] [--device cpu] [--dim N] [--seed N]",
    "         [--keep-underscores]",
  ].join("\n");
}

interface Args {
  episodes?: string;
  out?: string;
  dim: number;
  seed: number;
  labelsOnly: boolean;
  underscoreSpaces: boolean;
  device: string;
}

function parseArgs(argv: string[]): Args {
  const args: Args = {
    dim: 32,
    seed: 0,
    labelsOnly: false,
    underscoreSpaces: true,
    device: "cpu",
  };
  if (argv[0] !== "export") {
    throw new ExportError(`unknown command ${argv[0] ?? "(none)"}\n${usage()}`);
  }
  for (let i = 1; i < argv.length; i++) {
    const flag = argv[i];
    const need = (): string => {
      const value = argv[++i];
      if (value === undefined) throw new ExportError(`${flag} needs a value`);
      return value;
    };
    switch (flag) {
      case "--episodes":
        args.episodes = need();
        break;
      case "--out":
        args.out = need();
        break;
      case "--dim":
        args.dim = Number(need());
        break;
      case "--seed":
        args.seed = Number(need());
        break;
      case "--device":
        args.device = need();
        break;
      case "--labels-only":
        args.labelsOnly = true;
        break;
      case "--keep-underscores":
        args.underscoreSpaces = false;
        break;
      default:
        throw new ExportError(`unknown flag ${flag}\n${usage()}`);
    }
  }
  if (!args.episodes || !args.out) {
    throw new ExportError(`--episodes and --out are required\n${usage()}`);
  }
  if (!Number.isInteger(args.dim) || args.dim < 1) {
    throw new ExportError(`--dim must be a positive integer`);
  }
  return args;
}

async function main(): Promise<number> {
  try {
    const args = parseArgs(process.argv.slice(2));
    const summary = await runExport({
      episodesPath: args.episodes!,
      outPath: args.out!,
      dim: args.dim,
      seed: args.seed,
      labelsOnly: args.labelsOnly,
      underscoreSpaces: args.underscoreSpaces,
      device: args.device,
    });
    console.log(
      `wrote ${summary.records} records for ${summary.episodes} episodes ` +
        `(${summary.domains} domains) to ${args.out}`,
    );
    return 0;
  } catch (err) {
    if (err instanceof ExportError || err instanceof EpisodeFileError) {
      console.error(`fewtag-export: error: ${err.message}`);
      return 2;
    }
    throw err;
  }
}

main().then((code) => process.exit(code));
