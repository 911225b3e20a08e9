/**
 * Viewer session: one open case per tab, accumulated clicks, scheme and
 * overlay toggles, and serialized segment requests (a click placed while
 * a request is pending queues exactly one refresh).
 *
 * Click protocol: a new click sends just that click with reset=false
 * (the server appends); undo, clear and scheme changes send the full
 * remaining click set with reset=true (the server replaces).
 */

import {
  ApiError,
  Click,
  ClassifyResponse,
  Polarity,
  Scheme,
  SegmentResponse,
  TriageApi,
} from "./api.js";
import { clampIndex, screenToVoxel, Shape3 } from "./coords.js";

export interface ViewerState {
  caseId: string | null;
  shape: Shape3 | null;
  sliceIndex: number;
  zoom: number;
  scheme: Scheme;
  clicks: Click[];
  overlayMaskId: string | null;
  overlayVisible: boolean;
  banner: ClassifyResponse | null;
  lastSegment: SegmentResponse | null;
  busy: boolean;
  error: string | null;
}

function initialState(): ViewerState {
  return {
    caseId: null,
    shape: null,
    sliceIndex: 0,
    zoom: 4,
    scheme: "seg4",
    clicks: [],
    overlayMaskId: null,
    overlayVisible: true,
    banner: null,
    lastSegment: null,
    busy: false,
    error: null,
  };
}

export class ViewerSession {
  state: ViewerState = initialState();
  onChange: (state: ViewerState) => void = () => {};

  private pendingRefresh = false;

  constructor(private readonly api: TriageApi) {}

  private emit(): void {
    this.onChange(this.state);
  }

  private setError(err: unknown): void {
    // server errors are surfaced verbatim with their status code
    this.state.error = err instanceof ApiError ? err.message : String(err);
    this.emit();
  }

  /** Upload a volume, show slice 0 and the classification banner. */
  async openCase(volumeBytes: ArrayBuffer | Uint8Array): Promise<void> {
    this.state = initialState();
    this.emit();
    try {
      const uploaded = await this.api.uploadCase(volumeBytes);
      this.state.caseId = uploaded.case_id;
      this.state.shape = uploaded.shape;
      this.state.sliceIndex = 0;
      this.state.error = null;
    } catch (err) {
      this.setError(err);
      return;
    }
    try {
      this.state.banner = await this.api.classify(this.state.caseId);
    } catch (err) {
      // no classifier loaded is tolerable; the banner just stays empty
      this.state.banner = null;
      if (!(err instanceof ApiError && err.status === 503)) {
        this.setError(err);
      }
    }
    this.emit();
  }

  /**
   * Place a click from canvas coordinates. Out-of-volume clicks are
   * rejected locally and no request is sent. Returns the voxel or null.
   */
  async placeClick(u: number, v: number, polarity: Polarity): Promise<[number, number, number] | null> {
    if (!this.state.caseId || !this.state.shape) {
      return null;
    }
    const voxel = screenToVoxel({ u, v }, this.state.sliceIndex, this.state.shape, this.state.zoom);
    if (voxel === null) {
      return null;
    }
    const click: Click = { x: voxel[0], y: voxel[1], z: voxel[2], polarity };
    this.state.clicks = [...this.state.clicks, click];
    this.emit();
    await this.requestSegment([click], false);
    return voxel;
  }

  /** Remove the last click and re-segment from the remaining set. */
  async undoClick(): Promise<void> {
    if (this.state.clicks.length === 0) {
      return;
    }
    this.state.clicks = this.state.clicks.slice(0, -1);
    this.emit();
    await this.requestSegment(this.state.clicks, true);
  }

  async clearClicks(): Promise<void> {
    this.state.clicks = [];
    this.emit();
    await this.requestSegment([], true);
  }

  /** Re-run segmentation with the current click set (used on open). */
  async segmentNow(): Promise<void> {
    await this.requestSegment(this.state.clicks, true);
  }

  scrub(delta: number): void {
    if (!this.state.shape) {
      return;
    }
    this.state.sliceIndex = clampIndex(this.state.sliceIndex + delta, this.state.shape[2]);
    this.emit();
  }

  setZoom(zoom: number): void {
    this.state.zoom = zoom;
    this.emit();
  }

  async toggleScheme(): Promise<void> {
    this.state.scheme = this.state.scheme === "seg4" ? "seg2" : "seg4";
    this.emit();
    await this.requestSegment(this.state.clicks, true);
  }

  toggleOverlay(): void {
    this.state.overlayVisible = !this.state.overlayVisible;
    this.emit();
  }

  /** The slice image URL for the current view (overlay per toggle). */
  sliceUrl(): string | null {
    if (!this.state.caseId) {
      return null;
    }
    const overlay = this.state.overlayVisible ? this.state.overlayMaskId : null;
    return this.api.sliceUrl(this.state.caseId, "z", this.state.sliceIndex, overlay);
  }

  private async requestSegment(clicks: Click[], reset: boolean): Promise<void> {
    if (!this.state.caseId) {
      return;
    }
    if (this.state.busy) {
      // serialize: remember that one more refresh is needed
      this.pendingRefresh = true;
      return;
    }
    this.state.busy = true;
    this.emit();
    try {
      const result = await this.api.segment(this.state.caseId, clicks, this.state.scheme, reset);
      this.state.lastSegment = result;
      this.state.overlayMaskId = result.mask_id;
      this.state.error = null;
    } catch (err) {
      this.setError(err);
    } finally {
      this.state.busy = false;
      this.emit();
    }
    if (this.pendingRefresh) {
      this.pendingRefresh = false;
      // the queued refresh replays the full accumulated set
      await this.requestSegment(this.state.clicks, true);
    }
  }
}
