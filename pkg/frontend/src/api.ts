/** Thin typed client over the REST API. One method per endpoint; errors carry
 * the server's {error, message, field} body so forms can highlight fields. */

import type {
  AnnotationDoc,
  ApiErrorBody,
  EventDoc,
  InteractionDoc,
  RetrainResult,
  SignalData,
  SignalDoc,
} from "./types.js";

export class ApiError extends Error {
  status: number;
  code: string;
  field?: string;

  constructor(status: number, body: ApiErrorBody) {
    super(body.message);
    this.status = status;
    this.code = body.error;
    this.field = body.field;
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  private base: string;
  private fetchImpl: FetchLike;

  constructor(base = "", fetchImpl: FetchLike = (...a) => fetch(...a)) {
    this.base = base.replace(/\/$/, "");
    this.fetchImpl = fetchImpl;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method, headers: {} };
    if (body !== undefined) {
      init.headers = { "Content-Type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const resp = await this.fetchImpl(this.base + path, init);
    const text = await resp.text();
    const data = text ? JSON.parse(text) : null;
    if (!resp.ok) {
      const fallback: ApiErrorBody = { error: "http_error", message: `HTTP ${resp.status}` };
      throw new ApiError(resp.status, (data as ApiErrorBody) ?? fallback);
    }
    return data as T;
  }

  listSignals(datasetId?: string): Promise<SignalDoc[]> {
    const q = datasetId ? `?dataset=${encodeURIComponent(datasetId)}` : "";
    return this.request("GET", `/signals${q}`);
  }

  signalData(signalId: string, t0?: number, t1?: number, agg = 0): Promise<SignalData> {
    const params = new URLSearchParams();
    if (t0 !== undefined) params.set("t0", String(t0));
    if (t1 !== undefined) params.set("t1", String(t1));
    params.set("agg", String(agg));
    return this.request("GET", `/signals/${signalId}/data?${params}`);
  }

  listEvents(signalId: string, t0?: number, t1?: number): Promise<EventDoc[]> {
    const params = new URLSearchParams({ signal: signalId });
    if (t0 !== undefined) params.set("t0", String(t0));
    if (t1 !== undefined) params.set("t1", String(t1));
    return this.request("GET", `/events?${params}`);
  }

  createEvent(signalId: string, tS: number, tE: number): Promise<EventDoc> {
    return this.request("POST", "/events", { signal_id: signalId, t_s: tS, t_e: tE });
  }

  patchEvent(eventId: string, bounds: { t_s?: number; t_e?: number }): Promise<EventDoc> {
    return this.request("PATCH", `/events/${eventId}`, bounds);
  }

  deleteEvent(eventId: string): Promise<{ id: string; deleted: boolean }> {
    return this.request("DELETE", `/events/${eventId}`);
  }

  annotate(eventId: string, tag: string, user: string, comment = ""): Promise<AnnotationDoc> {
    return this.request("POST", `/events/${eventId}/annotations`, { tag, user, comment });
  }

  annotations(eventId: string): Promise<AnnotationDoc[]> {
    return this.request("GET", `/events/${eventId}/annotations`);
  }

  interactions(eventId: string): Promise<InteractionDoc[]> {
    return this.request("GET", `/events/${eventId}/interactions`);
  }

  retrain(): Promise<RetrainResult> {
    return this.request("POST", "/feedback/retrain", {});
  }
}
