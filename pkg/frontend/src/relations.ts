/**
 * The five inferential relations the exporter queries for every utterance.
 * xReact captures the speaker's emotional reaction; the other four cover
 * the cognitive side (motivation, prerequisites, desires, consequences).
 */

export const RELATIONS = ["xReact", "xIntent", "xNeed", "xWant", "xEffect"] as const;

export type Relation = (typeof RELATIONS)[number];

export const EMOTIONAL_RELATION: Relation = "xReact";

export const COGNITIVE_RELATIONS: readonly Relation[] = [
  "xIntent",
  "xNeed",
  "xWant",
  "xEffect",
];
