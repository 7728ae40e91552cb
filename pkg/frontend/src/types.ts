export interface QueueTask {
  task_id: string;
  index: number;
  current_sigma: number;
  ladder: number[];
  previews: (string | null)[];
  kind: 'image' | 'numeric';
}

export interface QueueResponse {
  tasks: QueueTask[];
}

export interface StatusResponse {
  round: number;
  pending: number;
  answered: number;
  queries_total: number;
}

export type SubmitOutcome =
  | { kind: 'ok' }
  | { kind: 'conflict'; message: string }
  | { kind: 'rejected'; message: string }
  | { kind: 'network'; message: string };
