"""HTTP bridge between the query loop and a human annotator.

The trainer enqueues one task per selected example: the candidate-level
ladder plus, for image data, one rendered preview per rung (a single fixed
noise draw per rung, so the strip a person judges is stable across
refreshes). The service exposes the pending queue, accepts a chosen level,
and hands it back to the waiting trainer bit-exactly.
"""

from __future__ import annotations

import base64
import struct
import threading
import time
import zlib
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel

from .numerics import Rng
from .perturb import Ladder


class TaskValidationError(ValueError):
    """Task or annotation payload violates the protocol."""


class DuplicateTaskError(TaskValidationError):
    """A task with this id is already queued."""


class UnknownTaskError(KeyError):
    """No task with this id exists."""


class AlreadyAnsweredError(TaskValidationError):
    """The task has an answer recorded."""


def encode_png_gray(img: np.ndarray) -> bytes:
    """Minimal 8-bit grayscale PNG encoder; byte-stable for equal inputs."""
    a = np.asarray(img)
    if a.ndim != 2 or a.dtype != np.uint8:
        raise TaskValidationError(f"expected a 2-D uint8 image, got {a.dtype} {a.shape}")
    h, w = a.shape

    def chunk(tag: bytes, data: bytes) -> bytes:
        return (
            struct.pack(">I", len(data))
            + tag
            + data
            + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF)
        )

    ihdr = struct.pack(">IIBBBBB", w, h, 8, 0, 0, 0, 0)
    raw = b"".join(b"\x00" + a[r].tobytes() for r in range(h))
    return (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", ihdr)
        + chunk(b"IDAT", zlib.compress(raw, 9))
        + chunk(b"IEND", b"")
    )


def render_ladder_previews(
    x: np.ndarray,
    ladder: Ladder,
    seed: int,
    image_shape: tuple[int, int] | None = None,
) -> list[bytes] | list[None]:
    """One preview per rung: clean instance plus that rung's fixed noise draw.

    Image data yields grayscale PNG bytes clipped to [0, 1]; non-visual data
    yields no previews (the numeric ladder itself is the payload). The rung
    at level 0 is pixel-identical to the clean instance.
    """
    v = np.asarray(x, dtype=np.float64)
    if image_shape is None:
        return [None] * len(ladder.levels)
    rows, cols = image_shape
    if v.size != rows * cols:
        raise TaskValidationError(
            f"cannot reshape {v.size} features to image shape {image_shape}"
        )
    root = Rng(seed).substream("preview")
    previews = []
    for rung, level in enumerate(ladder.levels):
        z = root.substream(rung).normal(v.shape[0])
        noisy = np.clip(v + level * z, 0.0, 1.0)
        img = np.round(noisy * 255.0).astype(np.uint8).reshape(rows, cols)
        previews.append(encode_png_gray(img))
    return previews


@dataclass
class AnnotationTask:
    """A pending request for one example's corrected perturbation level."""

    task_id: str
    index: int
    ladder: tuple[float, ...]
    current_sigma: float
    previews: list[bytes] | list[None]
    kind: str  # "image" | "numeric"
    seed: int
    status: str = "pending"
    sigma_star: float | None = None
    note: str | None = None
    answered_at: float | None = None  # server clock, audit only


def make_task(
    task_id: str,
    index: int,
    x: np.ndarray,
    ladder: Ladder,
    current_sigma: float,
    seed: int,
    image_shape: tuple[int, int] | None = None,
) -> AnnotationTask:
    previews = render_ladder_previews(x, ladder, seed, image_shape)
    return AnnotationTask(
        task_id=task_id,
        index=index,
        ladder=tuple(ladder.levels),
        current_sigma=current_sigma,
        previews=previews,
        kind="image" if image_shape is not None else "numeric",
        seed=seed,
    )


class TaskStore:
    """Thread-safe task map shared by the HTTP service and the trainer.

    The store never touches trainer state: the trainer blocks on
    :meth:`wait_for_answer` and applies the level itself.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._cond = threading.Condition(self._lock)
        self._tasks: dict[str, AnnotationTask] = {}
        self.round_index = 0
        self.queries_total = 0

    def enqueue(self, task: AnnotationTask) -> str:
        if not task.ladder:
            raise TaskValidationError("task ladder must be non-empty")
        if len(task.previews) != len(task.ladder):
            raise TaskValidationError("need exactly one preview per ladder rung")
        with self._lock:
            if task.task_id in self._tasks:
                raise DuplicateTaskError(f"task {task.task_id!r} already queued")
            self._tasks[task.task_id] = task
            self.queries_total += 1
        return task.task_id

    def get(self, task_id: str) -> AnnotationTask:
        with self._lock:
            if task_id not in self._tasks:
                raise UnknownTaskError(task_id)
            return self._tasks[task_id]

    def pending(self) -> list[AnnotationTask]:
        with self._lock:
            return [t for t in self._tasks.values() if t.status == "pending"]

    def counts(self) -> tuple[int, int]:
        with self._lock:
            pending = sum(1 for t in self._tasks.values() if t.status == "pending")
            answered = sum(1 for t in self._tasks.values() if t.status == "answered")
            return pending, answered

    def submit(self, task_id: str, sigma_star: float, note: str | None = None) -> None:
        """Record an answer; the stored level is the task's own grid value."""
        with self._lock:
            if task_id not in self._tasks:
                raise UnknownTaskError(task_id)
            task = self._tasks[task_id]
            if task.status == "answered":
                raise AlreadyAnsweredError(f"task {task_id!r} already answered")
            matches = [lvl for lvl in task.ladder if abs(lvl - sigma_star) <= 1e-12]
            if not matches:
                raise TaskValidationError(
                    f"sigma_star={sigma_star!r} is not a ladder level of task {task_id!r}"
                )
            task.sigma_star = matches[0]
            task.note = note
            task.answered_at = time.time()
            task.status = "answered"
            self._cond.notify_all()

    def wait_for_answer(self, task_id: str, timeout: float | None = None) -> float | None:
        """Block until the task is answered; None on timeout."""
        with self._lock:
            if task_id not in self._tasks:
                raise UnknownTaskError(task_id)
            ok = self._cond.wait_for(
                lambda: self._tasks[task_id].status == "answered", timeout=timeout
            )
            return self._tasks[task_id].sigma_star if ok else None


class AnnotationIn(BaseModel):
    task_id: str
    sigma_star: float
    note: str | None = None


def create_app(store: TaskStore):
    """FastAPI app over a task store: queue listing, answers, status."""
    from fastapi import FastAPI
    from fastapi.middleware.cors import CORSMiddleware
    from fastapi.responses import JSONResponse

    app = FastAPI(title="perturbation-level annotation service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.get("/api/queue")
    def get_queue():
        tasks = []
        for t in store.pending():
            tasks.append(
                {
                    "task_id": t.task_id,
                    "index": t.index,
                    "current_sigma": t.current_sigma,
                    "ladder": list(t.ladder),
                    "previews": [
                        base64.b64encode(p).decode("ascii") if p is not None else None
                        for p in t.previews
                    ],
                    "kind": t.kind,
                }
            )
        return {"tasks": tasks}

    @app.post("/api/annotations")
    def post_annotation(body: AnnotationIn):
        try:
            store.submit(body.task_id, body.sigma_star, body.note)
        except UnknownTaskError:
            return JSONResponse({"error": f"unknown task {body.task_id!r}"}, status_code=404)
        except AlreadyAnsweredError as e:
            return JSONResponse({"error": str(e)}, status_code=409)
        except TaskValidationError as e:
            return JSONResponse({"error": str(e)}, status_code=422)
        return {"ok": True}

    @app.get("/api/status")
    def get_status():
        pending, answered = store.counts()
        return {
            "round": store.round_index,
            "pending": pending,
            "answered": answered,
            "queries_total": store.queries_total,
        }

    return app


class HumanOracle:
    """Trainer-side oracle that waits for a person to answer each task.

    On timeout the query falls back to ``fallback`` (when given) and the
    query-log note marks the answer as substituted.
    """

    def __init__(
        self,
        store: TaskStore,
        ladder: Ladder,
        seed: int,
        timeout_secs: float | None = None,
        fallback=None,
        image_shape: tuple[int, int] | None = None,
    ):
        self.store = store
        self.ladder = ladder
        self.seed = seed
        self.timeout_secs = timeout_secs
        self.fallback = fallback
        self.image_shape = image_shape
        self.last_note = ""

    def query(self, index: int, x: np.ndarray, y: int, current_sigma: float, round_index: int) -> float:
        self.last_note = ""
        self.store.round_index = round_index
        task = make_task(
            task_id=f"r{round_index}-i{index}",
            index=index,
            x=x,
            ladder=self.ladder,
            current_sigma=current_sigma,
            seed=self.seed + index,
            image_shape=self.image_shape,
        )
        self.store.enqueue(task)
        answer = self.store.wait_for_answer(task.task_id, self.timeout_secs)
        if answer is not None:
            self.last_note = "human"
            return answer
        if self.fallback is not None:
            self.last_note = "timeout-fallback"
            return self.fallback.query(index, x, y, current_sigma, round_index)
        raise TimeoutError(f"no annotation for task {task.task_id!r} within the timeout")
