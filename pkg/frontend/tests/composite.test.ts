import { describe, expect, it } from "vitest";

import { composeFloat, composeU8, quantize } from "../src/composite.js";
import type { Channel, HeatmapGrid } from "../src/types.js";
import fixture from "./fixtures/compositing.json";

const heatmaps = fixture.heatmaps as HeatmapGrid[];
const rows = fixture.rows as number;
const cols = fixture.cols as number;

describe("quantize", () => {
  it("matches the server's round-half-up rule", () => {
    expect(quantize(1.0)).toBe(255);
    expect(quantize(0.5)).toBe(128); // floor(127.5 + 0.5)
    expect(quantize(0.0)).toBe(0);
    expect(quantize(1.2)).toBe(255);
    expect(quantize(-0.1)).toBe(0);
  });
});

describe("composeU8 against server fixtures", () => {
  for (const testCase of fixture.cases) {
    it(`assignment ${JSON.stringify(testCase.assignment)} is pixel-identical`, () => {
      const assignment = testCase.assignment as (Channel | null)[];
      const got = composeU8(heatmaps, assignment, rows, cols);
      expect(Array.from(got)).toEqual(testCase.pixels_u8);
    });
  }

  it("channel swap swaps pixel channels exactly", () => {
    const base = composeU8(heatmaps, [0, 1, 2], rows, cols);
    const swapped = composeU8(heatmaps, [1, 0, 2], rows, cols);
    for (let p = 0; p < rows * cols; p++) {
      expect(swapped[p * 3]).toBe(base[p * 3 + 1]);
      expect(swapped[p * 3 + 1]).toBe(base[p * 3]);
      expect(swapped[p * 3 + 2]).toBe(base[p * 3 + 2]);
    }
  });

  it("unassigning a query zeroes its channel", () => {
    const out = composeU8(heatmaps, [0, null, 2], rows, cols);
    for (let p = 0; p < rows * cols; p++) {
      expect(out[p * 3 + 1]).toBe(0);
    }
  });
});

describe("composeFloat", () => {
  it("does not mutate the input heatmaps", () => {
    const snapshot = JSON.stringify(heatmaps);
    composeFloat(heatmaps, [2, 0, 1], rows, cols);
    expect(JSON.stringify(heatmaps)).toBe(snapshot);
  });

  it("rejects duplicate channels", () => {
    expect(() => composeFloat(heatmaps, [0, 0, null], rows, cols)).toThrow(/at most one/);
  });

  it("rejects shape mismatches", () => {
    expect(() => composeFloat(heatmaps, [0, 1, 2], rows + 1, cols)).toThrow();
  });
});
