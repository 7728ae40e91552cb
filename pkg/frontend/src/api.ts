import { parseQueue } from './tasks.js';
import { QueueTask, StatusResponse, SubmitOutcome } from './types.js';

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class AnnotationApi {
  constructor(
    private readonly baseUrl: string = '',
    private readonly fetchImpl: FetchLike = (...args) => globalThis.fetch(...args),
  ) {}

  async fetchQueue(): Promise<QueueTask[]> {
    const res = await this.fetchImpl(`${this.baseUrl}/api/queue`);
    if (!res.ok) throw new Error(`queue fetch failed: ${res.status}`);
    return parseQueue(await res.json());
  }

  async fetchStatus(): Promise<StatusResponse> {
    const res = await this.fetchImpl(`${this.baseUrl}/api/status`);
    if (!res.ok) throw new Error(`status fetch failed: ${res.status}`);
    return (await res.json()) as StatusResponse;
  }

  /** POST a prepared annotation body; classifies the outcome for the UI. */
  async submitBody(body: string): Promise<SubmitOutcome> {
    let res: Response;
    try {
      res = await this.fetchImpl(`${this.baseUrl}/api/annotations`, {
        method: 'POST',
        headers: { 'Content-Type': 'application/json' },
        body,
      });
    } catch (err) {
      return { kind: 'network', message: String(err) };
    }
    if (res.ok) return { kind: 'ok' };
    let message = `HTTP ${res.status}`;
    try {
      const payload = (await res.json()) as { error?: string };
      if (payload.error) message = payload.error;
    } catch {
      // non-JSON error body; keep the status text
    }
    if (res.status === 409) return { kind: 'conflict', message };
    return { kind: 'rejected', message };
  }
}
