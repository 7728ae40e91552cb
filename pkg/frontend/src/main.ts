import { AnnotationApi } from './api.js';
import {
  RetryQueue,
  annotationPayload,
  currentMarkerIndex,
  sigmaAt,
  sliderStops,
  thumbnailIndices,
} from './tasks.js';
import { QueueTask } from './types.js';

const POLL_MS = Number(new URLSearchParams(location.search).get('poll') ?? '2000');
const THUMB_EVERY = Number(new URLSearchParams(location.search).get('thumbs') ?? '10');

const api = new AnnotationApi('');
const retries = new RetryQueue();
let showMarker = true;
let polling = false;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  cls?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (cls) node.className = cls;
  if (text !== undefined) node.textContent = text;
  return node;
}

function previewUrl(task: QueueTask, idx: number): string | null {
  const b64 = task.previews[idx];
  return b64 ? `data:image/png;base64,${b64}` : null;
}

function renderTask(task: QueueTask): HTMLElement {
  const card = el('div', 'task');
  card.appendChild(
    el('h3', undefined, `example ${task.index} (task ${task.task_id}, ${task.kind})`),
  );

  const strip = el('div', 'strip');
  for (const idx of thumbnailIndices(sliderStops(task), THUMB_EVERY)) {
    const url = previewUrl(task, idx);
    if (url) {
      const img = el('img', 'thumb') as HTMLImageElement;
      img.src = url;
      img.title = `level ${task.ladder[idx]}`;
      strip.appendChild(img);
    } else {
      strip.appendChild(el('span', 'thumb numeric', String(task.ladder[idx])));
    }
  }
  card.appendChild(strip);

  const slider = el('input') as HTMLInputElement;
  slider.type = 'range';
  slider.min = '0';
  slider.max = String(sliderStops(task) - 1);
  slider.step = '1';
  slider.value = String(currentMarkerIndex(task));

  const readout = el('div', 'readout');
  const big = el('img', 'full') as HTMLImageElement;
  const update = () => {
    const idx = Number(slider.value);
    const sigma = sigmaAt(task, idx);
    const markerIdx = currentMarkerIndex(task);
    readout.textContent =
      `level ${sigma} (rung ${idx + 1}/${sliderStops(task)})` +
      (showMarker ? ` | queued at ${task.ladder[markerIdx]}` : '');
    const url = previewUrl(task, idx);
    if (url) {
      big.src = url;
      big.style.display = '';
    } else {
      big.style.display = 'none';
    }
  };
  slider.addEventListener('input', update);
  update();

  const submit = el('button', undefined, 'annotate at this level');
  const status = el('span', 'status');
  submit.addEventListener('click', async () => {
    const body = annotationPayload(task, Number(slider.value));
    submit.disabled = true;
    const outcome = await api.submitBody(body);
    if (outcome.kind === 'ok') {
      card.remove();
    } else if (outcome.kind === 'network') {
      retries.push(task.task_id, body);
      status.textContent = 'offline; queued for retry';
      submit.disabled = false;
    } else {
      // conflict or rejection: the next poll reconciles with the server
      status.textContent = outcome.message;
      submit.disabled = false;
    }
  });

  card.appendChild(slider);
  card.appendChild(readout);
  card.appendChild(big);
  card.appendChild(submit);
  card.appendChild(status);
  return card;
}

async function refresh(): Promise<void> {
  if (polling) return;
  polling = true;
  const list = document.getElementById('tasks')!;
  const banner = document.getElementById('banner')!;
  try {
    for (const pending of retries.drain()) {
      const outcome = await api.submitBody(pending.body);
      if (outcome.kind === 'network') retries.push(pending.taskId, pending.body);
    }
    const tasks = await api.fetchQueue();
    const state = await api.fetchStatus();
    banner.textContent =
      `round ${state.round} | pending ${state.pending} | answered ${state.answered}` +
      (retries.size ? ` | ${retries.size} queued retries` : '');
    list.replaceChildren();
    if (tasks.length === 0) {
      list.appendChild(el('p', 'empty', 'no pending tasks'));
    } else {
      for (const task of tasks) list.appendChild(renderTask(task));
    }
  } catch (err) {
    banner.textContent = `service unreachable, retrying (${String(err)})`;
  } finally {
    polling = false;
  }
}

export function start(): void {
  const toggle = document.getElementById('marker-toggle') as HTMLInputElement | null;
  if (toggle) {
    toggle.checked = showMarker;
    toggle.addEventListener('change', () => {
      showMarker = toggle.checked;
      void refresh();
    });
  }
  void refresh();
  setInterval(() => void refresh(), POLL_MS);
}

start();
