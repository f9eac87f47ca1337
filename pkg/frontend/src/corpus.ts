/**
 * Dialogue corpus reader. The file format is the same line-delimited JSON
 * the primary trainer consumes; only the fields the exporter needs are
 * validated here.
 */

import * as fs from "node:fs";
import { z } from "zod";

const UtteranceSchema = z.object({
  role: z.enum(["self", "other"]),
  tokens: z.array(z.string()),
});

const DialogueSchema = z.object({
  id: z.string().min(1),
  utterances: z.array(UtteranceSchema).min(1),
  emotion: z.string().optional(),
  response: z.array(z.string()).optional(),
});

export type Dialogue = z.infer<typeof DialogueSchema>;

export function loadCorpus(path: string): Dialogue[] {
  const raw = fs.readFileSync(path, "utf-8");
  const dialogues: Dialogue[] = [];
  const seen = new Set<string>();
  raw.split("\n").forEach((line, index) => {
    if (!line.trim()) return;
    let parsed: unknown;
    try {
      parsed = JSON.parse(line);
    } catch (err) {
      throw new Error(`${path}:${index + 1}: malformed JSON: ${err}`);
    }
    const result = DialogueSchema.safeParse(parsed);
    if (!result.success) {
      throw new Error(`${path}:${index + 1}: ${result.error.issues[0].message}`);
    }
    if (seen.has(result.data.id)) {
      throw new Error(`${path}:${index + 1}: duplicate dialogue id ${result.data.id}`);
    }
    seen.add(result.data.id);
    dialogues.push(result.data);
  });
  if (dialogues.length === 0) {
    throw new Error(`${path}: no dialogues found`);
  }
  return dialogues;
}
