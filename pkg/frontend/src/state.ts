/** Event list store with optimistic mutations.
 *
 * Each mutation applies locally first, fires exactly one API request, and
 * rolls back to the pre-mutation list if the server rejects it. A reload (or
 * the 10 s poll) always replaces local state with server truth, so the UI
 * never holds state the API cannot reconstruct.
 */

import { ApiClient, ApiError } from "./api.js";
import type { EventDoc } from "./types.js";

export interface TagState {
  [eventId: string]: string; // latest tag per event, derived from annotations
}

export type Listener = () => void;

export class EventStore {
  events: EventDoc[] = [];
  tags: TagState = {};
  lastError: ApiError | null = null;

  private api: ApiClient;
  private signalId: string;
  private listeners: Listener[] = [];

  constructor(api: ApiClient, signalId: string) {
    this.api = api;
    this.signalId = signalId;
  }

  subscribe(fn: Listener): void {
    this.listeners.push(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn();
  }

  private fail(err: unknown): void {
    this.lastError = err instanceof ApiError
      ? err
      : new ApiError(0, { error: "network", message: String(err) });
    this.emit();
  }

  dismissError(): void {
    this.lastError = null;
    this.emit();
  }

  /** Replace local state with server truth (used on load and by polling). */
  async refresh(): Promise<void> {
    try {
      const events = await this.api.listEvents(this.signalId);
      const tags: TagState = {};
      for (const ev of events) {
        const anns = await this.api.annotations(ev.id);
        if (anns.length > 0) tags[ev.id] = anns[anns.length - 1].tag;
      }
      this.events = events;
      this.tags = tags;
      this.emit();
    } catch (err) {
      this.fail(err);
    }
  }

  async create(tS: number, tE: number): Promise<EventDoc | null> {
    const before = this.events;
    const placeholder: EventDoc = {
      id: "(pending)", t_s: tS, t_e: tE, severity: 0, source: "manual",
      signal_id: this.signalId,
    };
    this.events = [...before, placeholder];
    this.emit();
    try {
      const created = await this.api.createEvent(this.signalId, tS, tE);
      this.events = [...before, created];
      this.emit();
      return created;
    } catch (err) {
      this.events = before;
      this.fail(err);
      return null;
    }
  }

  async move(eventId: string, bounds: { t_s?: number; t_e?: number }): Promise<boolean> {
    const before = this.events;
    this.events = before.map((ev) =>
      ev.id === eventId ? { ...ev, ...bounds } : ev);
    this.emit();
    try {
      const updated = await this.api.patchEvent(eventId, bounds);
      this.events = before.map((ev) => (ev.id === eventId ? updated : ev));
      this.emit();
      return true;
    } catch (err) {
      this.events = before;
      this.fail(err);
      return false;
    }
  }

  async remove(eventId: string): Promise<boolean> {
    const before = this.events;
    this.events = before.filter((ev) => ev.id !== eventId);
    this.emit();
    try {
      await this.api.deleteEvent(eventId);
      return true;
    } catch (err) {
      this.events = before;
      this.fail(err);
      return false;
    }
  }

  async tag(eventId: string, tag: string, user: string, comment = ""): Promise<boolean> {
    const beforeTags = this.tags;
    this.tags = { ...beforeTags, [eventId]: tag };
    this.emit();
    try {
      await this.api.annotate(eventId, tag, user, comment);
      return true;
    } catch (err) {
      this.tags = beforeTags;
      this.fail(err);
      return false;
    }
  }
}

/** Fixed-interval polling; returns a stop function. */
export function startPolling(store: EventStore, intervalMs = 10_000,
                             timer: typeof setInterval = setInterval,
                             clear: typeof clearInterval = clearInterval): () => void {
  const handle = timer(() => { void store.refresh(); }, intervalMs);
  return () => clear(handle);
}
