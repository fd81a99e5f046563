/** Page wiring: signal picker, aggregated chart, event overlay interactions,
 * annotation panel, retrain button, 10 s polling, error banners. All view
 * state is reconstructable from the API (signal + range live in the URL). */

import { aggLabel, resolveAgg, type AggPreset } from "./agg.js";
import { ApiClient, ApiError } from "./api.js";
import { dragToRange, hitTest, makeScale, renderChart, type ViewRange } from "./chart.js";
import { EventStore, startPolling } from "./state.js";
import type { EventDoc, SignalData, SignalDoc } from "./types.js";

const api = new ApiClient("");

interface PageState {
  signal: SignalDoc | null;
  data: SignalData | null;
  range: ViewRange | null;
  preset: AggPreset;
  agg: number;
  sampleInterval: number;
  store: EventStore | null;
  selected: string | null;
  tagFilter: string;
  stopPoll: (() => void) | null;
}

const state: PageState = {
  signal: null, data: null, range: null, preset: "raw", agg: 0,
  sampleInterval: 1, store: null, selected: null, tagFilter: "", stopPoll: null,
};

const $ = <T extends HTMLElement>(id: string) => document.getElementById(id) as T;

function banner(message: string, kind: "error" | "info" = "error"): void {
  const el = $("banner");
  el.textContent = message;
  el.className = `banner ${kind}`;
  el.style.display = "block";
  $("banner-dismiss").style.display = "inline";
}

function clearBanner(): void {
  $("banner").style.display = "none";
}

function describeError(err: unknown): string {
  if (err instanceof ApiError) {
    return err.field ? `${err.message} (field: ${err.field})` : err.message;
  }
  return String(err);
}

async function loadSignals(): Promise<void> {
  const signals = await api.listSignals();
  const select = $<HTMLSelectElement>("signal-select");
  select.innerHTML = "";
  for (const sig of signals) {
    const opt = document.createElement("option");
    opt.value = sig.id;
    opt.textContent = sig.name;
    select.appendChild(opt);
  }
  const fromUrl = new URLSearchParams(location.search).get("signal");
  const chosen = signals.find((s) => s.id === fromUrl) ?? signals[0];
  if (chosen) {
    select.value = chosen.id;
    await selectSignal(chosen);
  }
}

async function selectSignal(signal: SignalDoc): Promise<void> {
  state.signal = signal;
  state.selected = null;
  if (state.stopPoll) state.stopPoll();
  state.store = new EventStore(api, signal.id);
  state.store.subscribe(() => {
    if (state.store?.lastError) {
      banner(describeError(state.store.lastError));
      state.store.dismissError();
    }
    draw();
    renderEventPanel();
  });
  // full-range probe to learn the span and sample interval
  const probe = await api.signalData(signal.id, undefined, undefined, 3600);
  const ts = probe.timestamps;
  state.range = { t0: ts[0], t1: ts[ts.length - 1] + 1 };
  state.sampleInterval = 1;
  await reloadData();
  await state.store.refresh();
  state.stopPoll = startPolling(state.store);
  const url = new URL(location.href);
  url.searchParams.set("signal", signal.id);
  history.replaceState(null, "", url);
}

async function reloadData(): Promise<void> {
  if (!state.signal || !state.range) return;
  const span = state.range.t1 - state.range.t0;
  state.agg = resolveAgg(state.preset, span, state.sampleInterval);
  $("agg-actual").textContent = `requesting agg=${state.agg} (${aggLabel(state.agg)})`;
  try {
    state.data = await api.signalData(state.signal.id, state.range.t0,
                                      state.range.t1, state.agg);
    draw();
  } catch (err) {
    banner(describeError(err));
  }
}

function visibleEvents(): EventDoc[] {
  if (!state.store || !state.range) return [];
  let events = state.store.events.filter(
    (ev) => ev.t_e >= state.range!.t0 && ev.t_s <= state.range!.t1);
  if (state.tagFilter) {
    events = events.filter((ev) => state.store!.tags[ev.id] === state.tagFilter);
  }
  return events;
}

function draw(): void {
  const canvas = $<HTMLCanvasElement>("chart");
  const ctx = canvas.getContext("2d");
  if (!ctx || !state.data || !state.range) return;
  renderChart(ctx, canvas.width, canvas.height, state.data, visibleEvents(),
              state.range, state.selected);
}

function renderEventPanel(): void {
  const list = $("event-list");
  list.innerHTML = "";
  for (const ev of visibleEvents()) {
    const li = document.createElement("li");
    const tag = state.store?.tags[ev.id];
    li.textContent = `[${ev.t_s}, ${ev.t_e}] sev=${ev.severity.toFixed(2)} `
      + `${ev.source}${tag ? ` · ${tag}` : ""}`;
    li.className = ev.id === state.selected ? "selected" : "";
    li.onclick = () => { void showDetail(ev); };
    list.appendChild(li);
  }
}

async function showDetail(ev: EventDoc): Promise<void> {
  state.selected = ev.id;
  draw();
  renderEventPanel();
  $("detail").style.display = "block";
  $("detail-title").textContent = `Event [${ev.t_s}, ${ev.t_e}]`;
  try {
    const [anns, inters] = await Promise.all([
      api.annotations(ev.id), api.interactions(ev.id)]);
    $("comments").innerHTML = anns.map((a) =>
      `<li><b>${a.user}</b> · ${a.tag}${a.comment ? ` — ${a.comment}` : ""}</li>`).join("");
    $("interactions").innerHTML = inters.map((i) =>
      `<li>${new Date(i.created_at).toISOString()} · ${i.action}</li>`).join("");
  } catch (err) {
    banner(describeError(err));
  }
}

function wireControls(): void {
  $<HTMLSelectElement>("signal-select").onchange = async (e) => {
    const id = (e.target as HTMLSelectElement).value;
    const signals = await api.listSignals();
    const sig = signals.find((s) => s.id === id);
    if (sig) await selectSignal(sig);
  };

  for (const preset of ["raw", "1m", "1h"] as AggPreset[]) {
    $(`preset-${preset}`).onclick = () => {
      state.preset = preset;
      void reloadData();
    };
  }

  $("zoom-out").onclick = () => {
    void (async () => {
      if (!state.signal) return;
      const probe = await api.signalData(state.signal.id, undefined, undefined, 3600);
      const ts = probe.timestamps;
      state.range = { t0: ts[0], t1: ts[ts.length - 1] + 1 };
      await reloadData();
    })();
  };

  $<HTMLSelectElement>("tag-filter").onchange = (e) => {
    state.tagFilter = (e.target as HTMLSelectElement).value;
    draw();
    renderEventPanel();
  };

  for (const tag of ["confirmed", "normal", "investigate"]) {
    $(`tag-${tag}`).onclick = () => {
      if (!state.selected || !state.store) return;
      const comment = $<HTMLInputElement>("comment").value;
      void state.store.tag(state.selected, tag,
                           $<HTMLInputElement>("user").value || "anonymous",
                           comment).then((ok) => {
        if (ok) {
          $<HTMLInputElement>("comment").value = "";
          const ev = state.store!.events.find((e) => e.id === state.selected);
          if (ev) void showDetail(ev);
        }
      });
    };
  }

  $("delete-event").onclick = () => {
    if (!state.selected || !state.store) return;
    void state.store.remove(state.selected);
    state.selected = null;
    $("detail").style.display = "none";
  };

  $("retrain").onclick = () => {
    void (async () => {
      try {
        const result = await api.retrain();
        banner(`retrained ${result.model_id}: ${result.n_labeled} labeled windows, `
          + `train accuracy ${(result.metrics.train_accuracy * 100).toFixed(1)}%`, "info");
      } catch (err) {
        banner(describeError(err));
      }
    })();
  };

  $("banner-dismiss").onclick = clearBanner;
  wireChartDrag();
}

function wireChartDrag(): void {
  const canvas = $<HTMLCanvasElement>("chart");
  let dragStartX: number | null = null;
  let dragging: { id: string; edge: "start" | "end" } | null = null;

  canvas.onmousedown = (e) => {
    if (!state.range) return;
    const scale = makeScale(state.range, canvas.width);
    const hit = hitTest(visibleEvents(), e.offsetX, scale);
    if (hit && hit.kind !== "body" && hit.event.id !== "(pending)") {
      dragging = { id: hit.event.id, edge: hit.kind };
    } else if (hit && hit.kind === "body") {
      void showDetail(hit.event);
    } else {
      dragStartX = e.offsetX;
    }
  };

  canvas.onmouseup = (e) => {
    if (!state.range || !state.store) return;
    const scale = makeScale(state.range, canvas.width);
    if (dragging) {
      const t = Math.round(scale.toT(e.offsetX));
      const bounds = dragging.edge === "start" ? { t_s: t } : { t_e: t };
      void state.store.move(dragging.id, bounds);
      dragging = null;
      return;
    }
    if (dragStartX !== null && Math.abs(e.offsetX - dragStartX) > 3) {
      const sel = dragToRange(dragStartX, e.offsetX, scale);
      if (sel) void state.store.create(sel.t0, sel.t1);
    }
    dragStartX = null;
  };
}

window.addEventListener("DOMContentLoaded", () => {
  wireControls();
  loadSignals().catch((err) => banner(describeError(err)));
});
