/**
 * DOM wiring for the annotation tool.
 *
 * Left click places a positive (lesion) mark, right click a negative
 * one; the mouse wheel scrubs slices. The overlay image and every
 * number on screen come straight from server responses.
 */

import { TriageApi } from "./api.js";
import { canvasSize, voxelToScreen, ZOOM_LEVELS } from "./coords.js";
import { ViewerSession, ViewerState } from "./state.js";

const api = new TriageApi(window.location.origin.replace(/:\d+$/, ":8000"));
const session = new ViewerSession(api);

const fileInput = document.getElementById("volume-file") as HTMLInputElement;
const canvas = document.getElementById("viewer") as HTMLCanvasElement;
const banner = document.getElementById("banner") as HTMLDivElement;
const status = document.getElementById("status") as HTMLDivElement;
const sliceLabel = document.getElementById("slice-label") as HTMLSpanElement;
const undoButton = document.getElementById("undo") as HTMLButtonElement;
const clearButton = document.getElementById("clear") as HTMLButtonElement;
const schemeButton = document.getElementById("scheme") as HTMLButtonElement;
const overlayButton = document.getElementById("overlay") as HTMLButtonElement;
const zoomSelect = document.getElementById("zoom") as HTMLSelectElement;

for (const level of ZOOM_LEVELS) {
  const option = document.createElement("option");
  option.value = String(level);
  option.textContent = `${level}x`;
  if (level === session.state.zoom) {
    option.selected = true;
  }
  zoomSelect.appendChild(option);
}

async function redraw(state: ViewerState): Promise<void> {
  banner.textContent = state.banner
    ? `${state.banner.label}  ` +
      Object.entries(state.banner.probabilities)
        .map(([cls, p]) => `${cls}: ${(p * 100).toFixed(1)}%`)
        .join("  ")
    : "no classification";
  const segment = state.lastSegment;
  status.textContent = [
    state.busy ? "segmenting..." : "",
    state.error ? `error: ${state.error}` : "",
    segment ? `mask ${segment.mask_id.slice(0, 8)} (${segment.click_count} clicks)` : "",
    segment?.dice ? `dice: ${Object.entries(segment.dice).map(([k, v]) => `${k}=${v.toFixed(3)}`).join(" ")}` : "",
  ]
    .filter(Boolean)
    .join(" | ");
  sliceLabel.textContent = state.shape
    ? `slice ${state.sliceIndex + 1}/${state.shape[2]}`
    : "no case";
  schemeButton.textContent = `scheme: ${state.scheme}`;
  overlayButton.textContent = state.overlayVisible ? "overlay: on" : "overlay: off";

  const url = session.sliceUrl();
  if (!url || !state.shape) {
    return;
  }
  const { width, height } = canvasSize(state.shape, state.zoom);
  canvas.width = width;
  canvas.height = height;
  const image = new Image();
  await new Promise<void>((resolve, reject) => {
    image.onload = () => resolve();
    image.onerror = () => reject(new Error("slice fetch failed"));
    image.src = url + (url.includes("?") ? "&" : "?") + `t=${Date.now()}`;
  });
  const ctx = canvas.getContext("2d")!;
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(image, 0, 0, width, height);

  // click markers on the current slice, color-coded by polarity
  for (const click of state.clicks) {
    if (click.z !== state.sliceIndex) {
      continue;
    }
    const point = voxelToScreen([click.x, click.y, click.z], state.zoom);
    ctx.beginPath();
    ctx.arc(point.u, point.v, Math.max(3, state.zoom), 0, 2 * Math.PI);
    ctx.strokeStyle = click.polarity === "positive" ? "#00ff66" : "#ff3333";
    ctx.lineWidth = 2;
    ctx.stroke();
  }
}

session.onChange = (state) => {
  void redraw(state);
};

fileInput.addEventListener("change", async () => {
  const file = fileInput.files?.[0];
  if (!file) {
    return;
  }
  await session.openCase(await file.arrayBuffer());
  await session.segmentNow();
});

canvas.addEventListener("click", (event) => {
  const rect = canvas.getBoundingClientRect();
  void session.placeClick(event.clientX - rect.left, event.clientY - rect.top, "positive");
});

canvas.addEventListener("contextmenu", (event) => {
  event.preventDefault();
  const rect = canvas.getBoundingClientRect();
  void session.placeClick(event.clientX - rect.left, event.clientY - rect.top, "negative");
});

canvas.addEventListener("wheel", (event) => {
  event.preventDefault();
  session.scrub(event.deltaY > 0 ? 1 : -1);
});

undoButton.addEventListener("click", () => void session.undoClick());
clearButton.addEventListener("click", () => void session.clearClicks());
schemeButton.addEventListener("click", () => void session.toggleScheme());
overlayButton.addEventListener("click", () => session.toggleOverlay());
zoomSelect.addEventListener("change", () => session.setZoom(Number(zoomSelect.value)));
