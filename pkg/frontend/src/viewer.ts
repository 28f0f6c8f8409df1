// Viewer state machine: frame history, cursor, and the single-flight rule.
//
// The live generation window lives server-side, so history here is
// append-only: scrubbing shows stored frames without talking to the server,
// and stepping is only allowed from the live edge. At most one step request
// is ever in flight; keypresses while a request is pending are ignored, so
// deltas are never coalesced or reordered.

import { ApiError } from "./api.js";
import type { Delta, Pose, SessionApi, CreateRequest } from "./api.js";

export type HistoryEntry = {
  imageB64: string;
  pose: Pose;
  beamScore: number | null;
};

export type StepOutcome = "stepped" | "pending" | "scrubbed" | "expired" | "error";

export type ViewerEvents = {
  onFrame?: (entry: HistoryEntry, index: number) => void;
  onToast?: (message: string) => void;
  onExpired?: () => void;
  onTrail?: (poses: Pose[]) => void;
};

export class Viewer {
  history: HistoryEntry[] = [];
  cursor = 0;
  pending = false;
  expired = false;
  sessionId: string | null = null;

  constructor(private api: SessionApi, private events: ViewerEvents = {}) {}

  get atLiveEdge(): boolean {
    return this.cursor === this.history.length - 1;
  }

  get current(): HistoryEntry | null {
    return this.history[this.cursor] ?? null;
  }

  trail(): Pose[] {
    return this.history.map((h) => h.pose);
  }

  async start(body: CreateRequest): Promise<void> {
    const made = await this.api.create(body);
    this.sessionId = made.id;
    this.history = [{ imageB64: made.frame_png_b64, pose: made.pose, beamScore: null }];
    this.cursor = 0;
    this.expired = false;
    this.events.onFrame?.(this.history[0], 0);
    this.events.onTrail?.(this.trail());
  }

  async step(delta: Delta): Promise<StepOutcome> {
    if (this.pending) return "pending";
    if (this.expired) return "expired";
    if (!this.sessionId || !this.atLiveEdge) return "scrubbed";
    this.pending = true;
    try {
      const res = await this.api.step(this.sessionId, delta);
      const entry: HistoryEntry = {
        imageB64: res.frame_png_b64,
        pose: res.pose,
        beamScore: res.beam_score,
      };
      this.history.push(entry);
      this.cursor = this.history.length - 1;
      this.events.onFrame?.(entry, this.cursor);
      this.events.onTrail?.(this.trail());
      return "stepped";
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) {
        // session evicted server-side: history stays readable
        this.expired = true;
        this.events.onExpired?.();
        return "expired";
      }
      this.events.onToast?.(`step failed: ${(err as Error).message} — retry`);
      return "error";
    } finally {
      this.pending = false;
    }
  }

  scrub(index: number): HistoryEntry | null {
    if (this.history.length === 0) return null;
    this.cursor = Math.min(Math.max(index, 0), this.history.length - 1);
    const entry = this.history[this.cursor];
    this.events.onFrame?.(entry, this.cursor);
    return entry;
  }

  scrubToEnd(): HistoryEntry | null {
    return this.scrub(this.history.length - 1);
  }
}
