import { ServiceClient, buildRequestBody, messageForError } from "./api.js";
import { composeU8 } from "./composite.js";
import { appendHistory } from "./session.js";
import { parseWorldFile, rasterGeoRect } from "./worldfile.js";
import type {
  BBox,
  Channel,
  ExploreSession,
  HeatmapGrid,
  QuerySlot,
  SoundscapeResponse,
} from "./types.js";

/** Everything the view needs to draw the current overlay. */
export interface OverlayModel {
  /** Base64 PNG straight from the service (used when rendering the server
   * composite verbatim, e.g. after a history replay). */
  pngBase64: string;
  /** Client-side recomposition of the cached heatmaps under the session's
   * current channel assignment; null when heatmaps were not returned. */
  recomposedU8: Uint8ClampedArray | null;
  rows: number;
  cols: number;
  geoRect: BBox;
  opacity: number;
}

interface PendingSubmit {
  strideM: number;
}

/** Drives one exploration session against the soundscape service.
 *
 * One soundscape request is in flight at a time; a submission made while
 * one is active queues behind it (only the latest queued submission runs).
 * Service errors become dismissible messages and never reset the session.
 */
export class ExplorerController {
  overlay: OverlayModel | null = null;
  message: string | null = null;
  private heatmaps: HeatmapGrid[] | null = null;
  private heatmapSlots: QuerySlot[] = [];
  private inFlight = false;
  private queued: PendingSubmit | null = null;

  constructor(
    private readonly client: ServiceClient,
    public session: ExploreSession,
  ) {}

  dismissMessage(): void {
    this.message = null;
  }

  /** Submit the session's bbox and filled slots to the service. */
  async submit(strideM: number): Promise<void> {
    if (this.inFlight) {
      this.queued = { strideM }; // latest submission wins the queue slot
      return;
    }
    this.inFlight = true;
    try {
      await this.runSubmit(strideM);
    } finally {
      this.inFlight = false;
    }
    const next = this.queued;
    this.queued = null;
    if (next) await this.submit(next.strideM);
  }

  private async runSubmit(strideM: number): Promise<void> {
    const bbox = this.session.bbox;
    const slots = this.session.slots.filter((s) => s.value.length > 0);
    if (!bbox) {
      this.message = "Draw a region on the map first.";
      return;
    }
    if (slots.length === 0) {
      this.message = "Add at least one text prompt or audio clip.";
      return;
    }
    let response: SoundscapeResponse;
    try {
      response = await this.client.soundscape(buildRequestBody(bbox, strideM, slots));
    } catch (err) {
      this.message = messageForError(err);
      return;
    }
    this.applyResponse(response, slots, bbox, strideM);
  }

  private applyResponse(
    response: SoundscapeResponse,
    slots: QuerySlot[],
    bbox: BBox,
    strideM: number,
  ): void {
    const world = parseWorldFile(response.world_file);
    const { rows, cols } = response.metadata;
    this.heatmaps = response.heatmaps ?? null;
    this.heatmapSlots = slots;
    this.overlay = {
      pngBase64: response.png_base64,
      recomposedU8: this.recompose(),
      rows,
      cols,
      geoRect: rasterGeoRect(world, rows, cols),
      opacity: this.session.opacity,
    };
    this.session = appendHistory(this.session, {
      bbox,
      strideM,
      queries: slots,
      pngBase64: response.png_base64,
      worldFile: response.world_file,
      rows,
      cols,
    });
  }

  /** Current channel of the slot that produced heatmap index q. Queries are
   * submitted in slot order, so the default assignment is R, G, B. */
  private channelOfHeatmap(q: number): Channel | null {
    const submitted = this.heatmapSlots[q];
    if (!submitted) return null;
    const live = this.session.slots.find(
      (s) => s.kind === submitted.kind && s.value === submitted.value,
    );
    return live ? live.channel : submitted.channel;
  }

  private recompose(): Uint8ClampedArray | null {
    if (!this.heatmaps || this.heatmaps.length === 0) return null;
    const rows = this.heatmaps[0].length;
    const cols = this.heatmaps[0][0].length;
    const assignment = this.heatmaps.map((_, q) => this.channelOfHeatmap(q));
    return composeU8(this.heatmaps, assignment, rows, cols);
  }

  /** Re-render after a channel change, without refetching, when the last
   * response carried per-query heatmaps. */
  applyChannelAssignment(): void {
    if (!this.overlay) return;
    const recomposed = this.recompose();
    if (recomposed) {
      this.overlay = { ...this.overlay, recomposedU8: recomposed };
    }
  }

  setOverlayOpacity(opacity: number): void {
    if (this.overlay) this.overlay = { ...this.overlay, opacity };
  }

  /** Restore a previous result verbatim; the stored PNG bytes make the
   * replayed overlay pixel-identical to the original. */
  replay(historyIndex: number): void {
    const entry = this.session.history[historyIndex];
    if (!entry) {
      this.message = "No such history entry.";
      return;
    }
    const world = parseWorldFile(entry.worldFile);
    this.heatmaps = null; // recomposition needs a fresh fetch
    this.heatmapSlots = entry.queries;
    this.overlay = {
      pngBase64: entry.pngBase64,
      recomposedU8: null,
      rows: entry.rows,
      cols: entry.cols,
      geoRect: rasterGeoRect(world, entry.rows, entry.cols),
      opacity: this.session.opacity,
    };
  }
}
