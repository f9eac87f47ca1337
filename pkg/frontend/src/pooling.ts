/** Pool per-token hidden states into one knowledge vector. */

export type PoolingMode = "mean" | "first" | "last";

export function pool(states: number[][], mode: PoolingMode): number[] {
  if (states.length === 0) {
    throw new Error("cannot pool zero states");
  }
  const dim = states[0].length;
  if (mode === "first") return [...states[0]];
  if (mode === "last") return [...states[states.length - 1]];
  if (mode !== "mean") throw new Error(`unknown pooling mode ${mode}`);
  const out = new Array<number>(dim).fill(0);
  for (const state of states) {
    for (let j = 0; j < dim; j++) out[j] += state[j];
  }
  return out.map((v) => v / states.length);
}
