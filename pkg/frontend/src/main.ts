import { ServiceClient } from "./api.js";
import { ExplorerController } from "./controller.js";
import {
  MAX_SLOTS,
  assignChannel,
  addSlot,
  deserializeSession,
  newSession,
  removeSlot,
  serializeSession,
  setBBox,
  setOpacity,
  updateSlot,
} from "./session.js";
import { placeOverlay } from "./worldfile.js";
import type { BBox, Channel } from "./types.js";

// Static deployment: the service origin comes from ?service=... or defaults
// to same-origin.
const params = new URLSearchParams(window.location.search);
const serviceUrl = params.get("service") ?? "";
const client = new ServiceClient(serviceUrl);

let controller = new ExplorerController(client, newSession());
const sessionParam = params.get("session");
if (sessionParam) {
  try {
    controller = new ExplorerController(
      client,
      deserializeSession(atob(sessionParam.replace(/-/g, "+").replace(/_/g, "/"))),
    );
  } catch {
    console.warn("ignoring malformed session link");
  }
}

// world view: fixed equirectangular pane the user draws a bbox on
const VIEW: BBox = { minLat: -85, minLon: -180, maxLat: 85, maxLon: 180 };

const mapPane = document.getElementById("map") as HTMLDivElement;
const bboxEl = document.getElementById("bbox-rect") as HTMLDivElement;
const overlayCanvas = document.getElementById("overlay") as HTMLCanvasElement;
const overlayImg = document.getElementById("overlay-img") as HTMLImageElement;
const slotsEl = document.getElementById("slots") as HTMLDivElement;
const historyEl = document.getElementById("history") as HTMLUListElement;
const messageEl = document.getElementById("message") as HTMLDivElement;
const strideInput = document.getElementById("stride") as HTMLInputElement;
const opacityInput = document.getElementById("opacity") as HTMLInputElement;
const shareOutput = document.getElementById("share-link") as HTMLInputElement;

function viewSize(): { w: number; h: number } {
  return { w: mapPane.clientWidth, h: mapPane.clientHeight };
}

function lonLatOfPointer(ev: MouseEvent): { lat: number; lon: number } {
  const rect = mapPane.getBoundingClientRect();
  const fx = (ev.clientX - rect.left) / rect.width;
  const fy = (ev.clientY - rect.top) / rect.height;
  return {
    lon: VIEW.minLon + fx * (VIEW.maxLon - VIEW.minLon),
    lat: VIEW.maxLat - fy * (VIEW.maxLat - VIEW.minLat),
  };
}

let dragStart: { lat: number; lon: number } | null = null;

mapPane.addEventListener("mousedown", (ev) => {
  dragStart = lonLatOfPointer(ev);
});

mapPane.addEventListener("mousemove", (ev) => {
  if (!dragStart) return;
  const here = lonLatOfPointer(ev);
  drawBBoxRect(normalizeBBox(dragStart, here));
});

mapPane.addEventListener("mouseup", (ev) => {
  if (!dragStart) return;
  const here = lonLatOfPointer(ev);
  const bbox = normalizeBBox(dragStart, here);
  dragStart = null;
  if (bbox.maxLat - bbox.minLat < 1e-6 || bbox.maxLon - bbox.minLon < 1e-6) return;
  controller.session = setBBox(controller.session, bbox);
  drawBBoxRect(bbox);
  render();
});

function normalizeBBox(a: { lat: number; lon: number }, b: { lat: number; lon: number }): BBox {
  return {
    minLat: Math.min(a.lat, b.lat),
    maxLat: Math.max(a.lat, b.lat),
    minLon: Math.min(a.lon, b.lon),
    maxLon: Math.max(a.lon, b.lon),
  };
}

function drawBBoxRect(bbox: BBox): void {
  const { w, h } = viewSize();
  const rect = placeOverlay(bbox, VIEW, w, h);
  bboxEl.style.display = "block";
  bboxEl.style.left = `${rect.left}px`;
  bboxEl.style.top = `${rect.top}px`;
  bboxEl.style.width = `${rect.width}px`;
  bboxEl.style.height = `${rect.height}px`;
}

function renderSlots(): void {
  slotsEl.innerHTML = "";
  controller.session.slots.forEach((slot, i) => {
    const row = document.createElement("div");
    row.className = "slot";
    const input = document.createElement("input");
    input.type = "text";
    input.value = slot.kind === "text" ? slot.value : `[audio] ${slot.label}`;
    input.disabled = slot.kind === "audio";
    input.placeholder = "This is a sound of ...";
    input.addEventListener("change", () => {
      controller.session = updateSlot(controller.session, i, {
        value: input.value,
        label: input.value,
      });
    });
    const channelSel = document.createElement("select");
    for (const [label, value] of [["red", "0"], ["green", "1"], ["blue", "2"], ["off", ""]]) {
      const opt = document.createElement("option");
      opt.textContent = label;
      opt.value = value;
      channelSel.appendChild(opt);
    }
    channelSel.value = slot.channel === null ? "" : String(slot.channel);
    channelSel.addEventListener("change", () => {
      const channel = channelSel.value === "" ? null : (Number(channelSel.value) as Channel);
      controller.session = assignChannel(controller.session, i, channel);
      controller.applyChannelAssignment();
      render();
    });
    const remove = document.createElement("button");
    remove.textContent = "x";
    remove.addEventListener("click", () => {
      controller.session = removeSlot(controller.session, i);
      render();
    });
    row.append(input, channelSel, remove);
    slotsEl.appendChild(row);
  });
}

document.getElementById("add-text")!.addEventListener("click", () => {
  if (controller.session.slots.length >= MAX_SLOTS) return;
  const channel = controller.session.slots.length as Channel;
  controller.session = addSlot(controller.session, {
    kind: "text",
    value: "",
    label: "",
    channel,
  });
  render();
});

const audioInput = document.getElementById("add-audio") as HTMLInputElement;
audioInput.addEventListener("change", async () => {
  const file = audioInput.files?.[0];
  if (!file || controller.session.slots.length >= MAX_SLOTS) return;
  const bytes = new Uint8Array(await file.arrayBuffer());
  let binary = "";
  bytes.forEach((b) => (binary += String.fromCharCode(b)));
  controller.session = addSlot(controller.session, {
    kind: "audio",
    value: btoa(binary),
    label: file.name,
    channel: controller.session.slots.length as Channel,
  });
  audioInput.value = "";
  render();
});

document.getElementById("submit")!.addEventListener("click", () => {
  void controller.submit(Number(strideInput.value)).then(render);
  render(); // show in-flight state immediately
});

opacityInput.addEventListener("input", () => {
  controller.session = setOpacity(controller.session, Number(opacityInput.value));
  controller.setOverlayOpacity(controller.session.opacity);
  render();
});

messageEl.addEventListener("click", () => {
  controller.dismissMessage();
  render();
});

function renderOverlay(): void {
  const overlay = controller.overlay;
  overlayCanvas.style.display = "none";
  overlayImg.style.display = "none";
  if (!overlay) return;
  const { w, h } = viewSize();
  const rect = placeOverlay(overlay.geoRect, VIEW, w, h);
  if (overlay.recomposedU8) {
    overlayCanvas.width = overlay.cols;
    overlayCanvas.height = overlay.rows;
    const ctx = overlayCanvas.getContext("2d")!;
    const rgba = new ImageData(
      composeRgbaFromU8(overlay.recomposedU8, overlay.rows, overlay.cols),
      overlay.cols,
      overlay.rows,
    );
    ctx.putImageData(rgba, 0, 0);
    styleOverlay(overlayCanvas, rect, overlay.opacity);
  } else {
    overlayImg.src = `data:image/png;base64,${overlay.pngBase64}`;
    styleOverlay(overlayImg, rect, overlay.opacity);
  }
}

function composeRgbaFromU8(
  rgb: Uint8ClampedArray,
  rows: number,
  cols: number,
): Uint8ClampedArray<ArrayBuffer> {
  const out = new Uint8ClampedArray(new ArrayBuffer(rows * cols * 4));
  for (let p = 0; p < rows * cols; p++) {
    out[p * 4] = rgb[p * 3];
    out[p * 4 + 1] = rgb[p * 3 + 1];
    out[p * 4 + 2] = rgb[p * 3 + 2];
    out[p * 4 + 3] = 255;
  }
  return out;
}

function styleOverlay(el: HTMLElement, rect: { left: number; top: number; width: number; height: number }, opacity: number): void {
  el.style.display = "block";
  el.style.left = `${rect.left}px`;
  el.style.top = `${rect.top}px`;
  el.style.width = `${rect.width}px`;
  el.style.height = `${rect.height}px`;
  el.style.opacity = String(opacity);
}

function renderHistory(): void {
  historyEl.innerHTML = "";
  controller.session.history.forEach((entry, i) => {
    const item = document.createElement("li");
    const labels = entry.queries.map((q) => q.label || q.value).join(", ");
    item.textContent = `#${i + 1} ${labels} @ ${entry.strideM} m `;
    const replay = document.createElement("button");
    replay.textContent = "replay";
    replay.addEventListener("click", () => {
      controller.replay(i);
      render();
    });
    item.appendChild(replay);
    historyEl.appendChild(item);
  });
}

function render(): void {
  renderSlots();
  renderOverlay();
  renderHistory();
  messageEl.style.display = controller.message ? "block" : "none";
  messageEl.textContent = controller.message ? `${controller.message} (click to dismiss)` : "";
  const encoded = btoa(serializeSession(controller.session))
    .replace(/\+/g, "-")
    .replace(/\//g, "_");
  shareOutput.value = `${window.location.pathname}?session=${encoded}`;
  if (controller.session.bbox) drawBBoxRect(controller.session.bbox);
}

render();
