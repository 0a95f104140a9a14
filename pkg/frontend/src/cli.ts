#!/usr/bin/env node
/*
 * bomtrace-probe-sim: run a capture scenario and write its outputs.
 *
 *   bomtrace-probe-sim simulate scenario.json [--records out.bin]
 *                      [--log out.jsonl] [--quiet]
 */

import { readFileSync, writeFileSync } from "node:fs";
import { exit, stderr, stdout } from "node:process";

import { Scenario, runScenario } from "./scenario.js";

function usage(): never {
  stderr.write(
    "usage: bomtrace-probe-sim simulate <scenario.json> " +
      "[--records FILE] [--log FILE] [--quiet]\n",
  );
  exit(2);
}

export function main(argv: string[]): number {
  if (argv.length < 2 || argv[0] !== "simulate") {
    usage();
  }
  const scenarioPath = argv[1]!;
  let recordsPath: string | undefined;
  let logPath: string | undefined;
  let quiet = false;
  for (let i = 2; i < argv.length; i++) {
    switch (argv[i]) {
      case "--records":
        recordsPath = argv[++i];
        break;
      case "--log":
        logPath = argv[++i];
        break;
      case "--quiet":
        quiet = true;
        break;
      default:
        usage();
    }
  }

  let scenario: Scenario;
  try {
    scenario = JSON.parse(readFileSync(scenarioPath, "utf8")) as Scenario;
  } catch (err) {
    stderr.write(`cannot read scenario: ${(err as Error).message}\n`);
    return 1;
  }
  const result = runScenario(scenario);
  if (recordsPath) {
    writeFileSync(recordsPath, result.binary);
  }
  if (logPath) {
    writeFileSync(logPath, result.eventLog);
  } else if (!recordsPath) {
    stdout.write(result.eventLog);
  }
  for (const warning of result.warnings) {
    stderr.write(`warning: ${warning}\n`);
  }
  if (!quiet) {
    stderr.write(
      `${result.records.length} records, ${result.dropped} dropped\n`,
    );
  }
  return 0;
}

exit(main(process.argv.slice(2)));
