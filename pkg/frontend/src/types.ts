/** Shapes returned by the HTTP API. Field names mirror the store documents. */

export interface SignalDoc {
  id: string;
  name: string;
  dataset_id: string;
  data_uri: string;
}

export interface EventDoc {
  id: string;
  t_s: number;
  t_e: number;
  severity: number;
  source: "detected" | "manual";
  signal_id?: string | null;
  signalrun_id?: string | null;
}

export interface AnnotationDoc {
  id: string;
  event_id: string;
  user: string;
  tag: string;
  comment: string;
  created_at: number;
}

export interface InteractionDoc {
  id: string;
  event_id: string;
  action: string;
  payload: Record<string, unknown>;
  created_at: number;
}

export interface SignalData {
  timestamps: number[];
  values: (number | null)[][];
}

export interface RetrainResult {
  model_id: string;
  n_labeled: number;
  metrics: { train_accuracy: number };
}

export interface ApiErrorBody {
  error: string;
  message: string;
  field?: string;
}
