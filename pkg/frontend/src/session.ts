import type { BBox, Channel, ExploreSession, HistoryEntry, QuerySlot } from "./types.js";

export const MAX_SLOTS = 3;

export function newSession(): ExploreSession {
  return { bbox: null, slots: [], opacity: 0.7, history: [] };
}

// All session operations are pure: they return a new session object and
// never touch numeric heatmap data (which lives outside the session).

export function setBBox(session: ExploreSession, bbox: BBox): ExploreSession {
  if (bbox.minLat >= bbox.maxLat || bbox.minLon >= bbox.maxLon) {
    throw new Error("bbox must have positive extent");
  }
  return { ...session, bbox };
}

export function setOpacity(session: ExploreSession, opacity: number): ExploreSession {
  return { ...session, opacity: Math.min(1, Math.max(0, opacity)) };
}

export function addSlot(session: ExploreSession, slot: QuerySlot): ExploreSession {
  if (session.slots.length >= MAX_SLOTS) {
    throw new Error(`at most ${MAX_SLOTS} query slots`);
  }
  return { ...session, slots: [...session.slots, slot] };
}

export function removeSlot(session: ExploreSession, index: number): ExploreSession {
  return { ...session, slots: session.slots.filter((_, i) => i !== index) };
}

export function updateSlot(
  session: ExploreSession,
  index: number,
  patch: Partial<QuerySlot>,
): ExploreSession {
  const slots = session.slots.map((s, i) => (i === index ? { ...s, ...patch } : s));
  return { ...session, slots };
}

/** Route a slot's heatmap to a composite channel (null = hide it). Any other
 * slot holding that channel is unassigned, so a channel never has two feeds. */
export function assignChannel(
  session: ExploreSession,
  index: number,
  channel: Channel | null,
): ExploreSession {
  const slots = session.slots.map((s, i) => {
    if (i === index) return { ...s, channel };
    if (channel !== null && s.channel === channel) return { ...s, channel: null };
    return s;
  });
  return { ...session, slots };
}

export function appendHistory(session: ExploreSession, entry: HistoryEntry): ExploreSession {
  return { ...session, history: [...session.history, entry] };
}

/** Compact shareable form; round-trips exactly through deserializeSession. */
export function serializeSession(session: ExploreSession): string {
  return JSON.stringify(session);
}

export function deserializeSession(text: string): ExploreSession {
  const parsed = JSON.parse(text) as ExploreSession;
  if (!Array.isArray(parsed.slots) || parsed.slots.length > MAX_SLOTS) {
    throw new Error("malformed session: bad slots");
  }
  if (!Array.isArray(parsed.history)) {
    throw new Error("malformed session: bad history");
  }
  return parsed;
}
