import { QueueTask } from './types.js';

/**
 * Validate one raw queue entry. Returns null (and warns) for anything that
 * does not match the protocol, so one malformed task never breaks the list.
 */
export function parseTask(raw: unknown): QueueTask | null {
  const t = raw as Partial<QueueTask>;
  const ok =
    t != null &&
    typeof t.task_id === 'string' &&
    typeof t.index === 'number' &&
    typeof t.current_sigma === 'number' &&
    Array.isArray(t.ladder) &&
    t.ladder.length > 0 &&
    t.ladder.every((v) => typeof v === 'number') &&
    Array.isArray(t.previews) &&
    t.previews.length === t.ladder.length &&
    (t.kind === 'image' || t.kind === 'numeric');
  if (!ok) {
    console.warn('skipping malformed task', raw);
    return null;
  }
  return t as QueueTask;
}

export function parseQueue(body: unknown): QueueTask[] {
  const tasks = (body as { tasks?: unknown[] })?.tasks;
  if (!Array.isArray(tasks)) {
    console.warn('malformed queue payload', body);
    return [];
  }
  return tasks.map(parseTask).filter((t): t is QueueTask => t !== null);
}

/** Number of slider stops equals the number of ladder rungs. */
export function sliderStops(task: QueueTask): number {
  return task.ladder.length;
}

/**
 * The level submitted for a slider position is always the served ladder
 * element itself; it is never recomputed from min/step on the client.
 */
export function sigmaAt(task: QueueTask, sliderIndex: number): number {
  if (!Number.isInteger(sliderIndex) || sliderIndex < 0 || sliderIndex >= task.ladder.length) {
    throw new RangeError(`slider index ${sliderIndex} outside ladder of ${task.ladder.length}`);
  }
  return task.ladder[sliderIndex];
}

/** Ladder index nearest to the task's current level (the queued marker). */
export function currentMarkerIndex(task: QueueTask): number {
  let best = 0;
  let bestDist = Infinity;
  task.ladder.forEach((v, i) => {
    const d = Math.abs(v - task.current_sigma);
    if (d < bestDist) {
      bestDist = d;
      best = i;
    }
  });
  return best;
}

/**
 * Indices of the rungs shown as strip thumbnails: every k-th rung plus the
 * last one (91 thumbnails would be unreadable; the slider still reaches
 * every rung).
 */
export function thumbnailIndices(count: number, every = 10): number[] {
  const out: number[] = [];
  for (let i = 0; i < count; i += every) out.push(i);
  if (count > 0 && out[out.length - 1] !== count - 1) out.push(count - 1);
  return out;
}

/** Body for POST /api/annotations. */
export function annotationPayload(task: QueueTask, sliderIndex: number): string {
  return JSON.stringify({ task_id: task.task_id, sigma_star: sigmaAt(task, sliderIndex) });
}

interface PendingSubmit {
  taskId: string;
  body: string;
}

/**
 * Holds submissions that failed with a network error until the next flush;
 * server rejections (4xx) are not retried, the queue refresh reconciles them.
 */
export class RetryQueue {
  private items: PendingSubmit[] = [];

  get size(): number {
    return this.items.length;
  }

  push(taskId: string, body: string): void {
    if (!this.items.some((p) => p.taskId === taskId)) {
      this.items.push({ taskId, body });
    }
  }

  drain(): PendingSubmit[] {
    const out = this.items;
    this.items = [];
    return out;
  }
}
