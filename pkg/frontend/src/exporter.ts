/**
 * Export job: one knowledge record per (dialogue, utterance, relation).
 *
 * Iteration order is fixed (corpus order, utterance index ascending, the
 * five relations in declaration order) and the backend is deterministic
 * under a fixed seed, so re-running a job produces a byte-identical file.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { CometBackend } from "./backend.js";
import { Dialogue, loadCorpus } from "./corpus.js";
import { PoolingMode, pool } from "./pooling.js";
import { RELATIONS, Relation } from "./relations.js";

export interface ExportJob {
  corpusPath: string;
  outPath: string;
  backend: CometBackend;
  pooling: PoolingMode;
  batchSize: number;
}

export interface KnowledgeRecord {
  dialogue_id: string;
  utt_index: number;
  relation: Relation;
  vector: number[];
  text: string;
}

export interface ExportStats {
  dialogues: number;
  utterances: number;
  records: number;
  dim: number;
  warnings: string[];
}

interface Task {
  dialogueId: string;
  uttIndex: number;
  relation: Relation;
  tokens: string[];
}

export function exportRecords(
  dialogues: Dialogue[],
  backend: CometBackend,
  pooling: PoolingMode,
  warnings: string[] = [],
  batchSize = 16,
): KnowledgeRecord[] {
  const tasks: Task[] = [];
  for (const dialogue of dialogues) {
    dialogue.utterances.forEach((utterance, index) => {
      for (const relation of RELATIONS) {
        tasks.push({
          dialogueId: dialogue.id,
          uttIndex: index,
          relation,
          tokens: utterance.tokens,
        });
      }
    });
  }
  // batches may run the backend in parallel; records stay in task order
  const records: KnowledgeRecord[] = [];
  for (let start = 0; start < tasks.length; start += batchSize) {
    const batch = tasks.slice(start, start + batchSize);
    for (const task of batch) {
      if (task.tokens.length === 0) {
        warnings.push(
          `${task.dialogueId}[${task.uttIndex}] ${task.relation}: ` +
            "empty utterance, wrote zero vector",
        );
        records.push({
          dialogue_id: task.dialogueId,
          utt_index: task.uttIndex,
          relation: task.relation,
          vector: new Array<number>(backend.dim).fill(0),
          text: "",
        });
        continue;
      }
      const generation = backend.generate(task.tokens, task.relation);
      records.push({
        dialogue_id: task.dialogueId,
        utt_index: task.uttIndex,
        relation: task.relation,
        vector: pool(generation.states, pooling),
        text: generation.tokens.join(" "),
      });
    }
  }
  return records;
}

export function runExport(job: ExportJob): ExportStats {
  const dialogues = loadCorpus(job.corpusPath);
  const warnings: string[] = [];
  const records = exportRecords(dialogues, job.backend, job.pooling, warnings,
                                job.batchSize);
  const lines = records.map((r) => JSON.stringify(r));
  fs.mkdirSync(path.dirname(path.resolve(job.outPath)), { recursive: true });
  fs.writeFileSync(job.outPath, lines.join("\n") + "\n", "utf-8");
  const utterances = dialogues.reduce((n, d) => n + d.utterances.length, 0);
  return {
    dialogues: dialogues.length,
    utterances,
    records: records.length,
    dim: job.backend.dim,
    warnings,
  };
}
