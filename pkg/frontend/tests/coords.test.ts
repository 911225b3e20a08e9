import { describe, expect, it } from "vitest";

import {
  canvasSize,
  clampIndex,
  screenToVoxel,
  Shape3,
  voxelToScreen,
  ZOOM_LEVELS,
} from "../src/coords.js";

function randomInt(limit: number): number {
  return Math.floor(Math.random() * limit);
}

describe("coordinate mapping", () => {
  it("round-trips 100 random in-bounds voxels at every zoom level", () => {
    const shape: Shape3 = [64, 48, 32];
    for (const zoom of ZOOM_LEVELS) {
      for (let i = 0; i < 100; i++) {
        const voxel: [number, number, number] = [
          randomInt(shape[0]),
          randomInt(shape[1]),
          randomInt(shape[2]),
        ];
        const screen = voxelToScreen(voxel, zoom);
        const back = screenToVoxel(screen, voxel[2], shape, zoom);
        expect(back).toEqual(voxel);
      }
    }
  });

  it("maps the canvas corner cells to corner voxels", () => {
    const shape: Shape3 = [10, 20, 5];
    expect(screenToVoxel({ u: 0, v: 0 }, 2, shape, 3)).toEqual([0, 0, 2]);
    const { width, height } = canvasSize(shape, 3);
    expect(screenToVoxel({ u: width - 1, v: height - 1 }, 2, shape, 3)).toEqual([9, 19, 2]);
  });

  it("rejects out-of-volume points", () => {
    const shape: Shape3 = [8, 8, 8];
    expect(screenToVoxel({ u: 8 * 2 + 1, v: 0 }, 0, shape, 2)).toBeNull();
    expect(screenToVoxel({ u: 0, v: 8 * 2 }, 0, shape, 2)).toBeNull();
    expect(screenToVoxel({ u: 0, v: 0 }, 8, shape, 2)).toBeNull();
    expect(screenToVoxel({ u: 0, v: 0 }, -1, shape, 2)).toBeNull();
  });

  it("canvas size follows the axial plane dimensions", () => {
    expect(canvasSize([64, 48, 32], 2)).toEqual({ width: 96, height: 128 });
  });

  it("clamps slice indices to bounds", () => {
    expect(clampIndex(-3, 10)).toBe(0);
    expect(clampIndex(12, 10)).toBe(9);
    expect(clampIndex(4, 10)).toBe(4);
  });
});
