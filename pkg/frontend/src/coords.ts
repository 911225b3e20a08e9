/**
 * Screen <-> voxel coordinate mapping for the axial viewer.
 *
 * The displayed axial plane at slice index k is the volume plane
 * volume[:, :, k]: image rows run along the volume's x axis, columns
 * along y. At integer zoom Z each voxel paints a ZxZ pixel cell; the
 * canvas is (ny*Z) wide and (nx*Z) tall. Clicks are placed on the
 * displayed plane, so the z coordinate comes from the slice index.
 * voxel -> screen -> voxel is the identity for any in-bounds voxel at
 * every offered zoom level (all integers >= 1).
 */

export type Shape3 = [number, number, number];

export const ZOOM_LEVELS = [1, 2, 3, 4] as const;

export interface ScreenPoint {
  u: number; // canvas x (column), pixels
  v: number; // canvas y (row), pixels
}

export function canvasSize(shape: Shape3, zoom: number): { width: number; height: number } {
  return { width: shape[1] * zoom, height: shape[0] * zoom };
}

/** Center of the voxel's screen cell on the axial plane. */
export function voxelToScreen(voxel: [number, number, number], zoom: number): ScreenPoint {
  return {
    u: (voxel[1] + 0.5) * zoom,
    v: (voxel[0] + 0.5) * zoom,
  };
}

/**
 * Map a canvas point back to a voxel on the displayed axial slice.
 * Returns null when the point falls outside the volume, so callers can
 * drop the click before any request is made.
 */
export function screenToVoxel(
  point: ScreenPoint,
  sliceIndex: number,
  shape: Shape3,
  zoom: number,
): [number, number, number] | null {
  const ix = Math.floor(point.v / zoom);
  const iy = Math.floor(point.u / zoom);
  if (ix < 0 || ix >= shape[0] || iy < 0 || iy >= shape[1]) {
    return null;
  }
  if (sliceIndex < 0 || sliceIndex >= shape[2]) {
    return null;
  }
  return [ix, iy, sliceIndex];
}

export function clampIndex(index: number, size: number): number {
  return Math.max(0, Math.min(size - 1, index));
}
