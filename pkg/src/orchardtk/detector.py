"""Pluggable detector boundary.

Three interchangeable sources of detections for an image region: a seeded
synthetic oracle that derives detections from ground truth, a file-backed
reader that replays stored detections, and an adapter that drives an
external detector process over line-delimited JSON pipes.

Oracle randomness is keyed per fruit, not per request: whether a fruit is
dropped, how it is jittered and what score it gets depend only on
(seed, image id, ground-truth box). Overlapping tiles therefore see
byte-identical copies of the same fruit, which is what lets fused tiled
output match whole-image output exactly.
"""

from __future__ import annotations

import json
import math
import select
import shlex
import subprocess
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import canonical
from .dataset import Manifest
from .geometry import Box, clip_box, intersect_box, translate_box
from .proposals import Detection, sort_detections
from .seeding import derive_seed

DETECTIONS_VERSION = 1

#: Fallback side length for spurious boxes when a scene has no ground
#: truth to draw sizes from (typical orchard fruit width).
NOMINAL_FRUIT_SIDE = 32.0


class DetectorError(RuntimeError):
    """Base class for detector failures."""


class DetectionsNotFoundError(DetectorError):
    """File-backed lookup had no entry for the requested image/rect."""

    def __init__(self, image_id: str, rect: Box):
        super().__init__(
            f"no stored detections for image {image_id!r} rect "
            f"({rect.x_min}, {rect.y_min}, {rect.x_max}, {rect.y_max})"
        )
        self.image_id = image_id
        self.rect = rect


class ProtocolError(DetectorError):
    """An external detector violated the line-delimited JSON protocol."""

    def __init__(self, message: str, line: str | None = None):
        self.line = line
        if line is not None:
            message = f"{message}; offending line: {line!r}"
        super().__init__(message)


@dataclass(frozen=True)
class DetectRequest:
    """A region of one raw image to run detection on."""

    image_id: str
    rect: Box
    pixels: np.ndarray | None = field(default=None, compare=False)


@dataclass(frozen=True)
class OracleNoise:
    """Noise model for the synthetic oracle.

    drop_rate is the per-fruit false-negative probability, spurious_rate
    the expected false positives per requested region (Poisson), and
    jitter_sigma perturbs fruit centers and sizes by roughly that many
    pixels. Score ranges may overlap so threshold selection stays
    non-trivial.
    """

    drop_rate: float = 0.0
    spurious_rate: float = 0.0
    jitter_sigma: float = 0.0
    tp_score_range: tuple[float, float] = (0.5, 1.0)
    fp_score_range: tuple[float, float] = (0.05, 0.6)
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.drop_rate <= 1.0:
            raise ValueError(f"drop_rate must lie in [0, 1], got {self.drop_rate}")
        if self.spurious_rate < 0:
            raise ValueError("spurious_rate must be non-negative")
        if self.jitter_sigma < 0:
            raise ValueError("jitter_sigma must be non-negative")
        for name in ("tp_score_range", "fp_score_range"):
            lo, hi = getattr(self, name)
            if not (0.0 <= lo <= hi <= 1.0):
                raise ValueError(f"{name} must be a sub-interval of [0, 1]")


@dataclass(frozen=True)
class ExternalConfig:
    """How to run an external detector child process."""

    command: tuple[str, ...]
    handshake_timeout: float = 10.0
    pool_size: int = 1

    def __post_init__(self) -> None:
        if not self.command:
            raise ValueError("external detector command must be non-empty")
        if self.handshake_timeout <= 0:
            raise ValueError("handshake_timeout must be positive")
        if self.pool_size < 1:
            raise ValueError("pool_size must be >= 1")


@dataclass(frozen=True)
class DetectorSpec:
    """Which detector to run: exactly one kind's payload is populated."""

    kind: str  # "oracle" | "file" | "external"
    oracle: OracleNoise | None = None
    file: str | None = None
    external: ExternalConfig | None = None

    def __post_init__(self) -> None:
        payloads = {
            "oracle": self.oracle,
            "file": self.file,
            "external": self.external,
        }
        if self.kind not in payloads:
            raise ValueError(f"unknown detector kind {self.kind!r}")
        populated = [k for k, v in payloads.items() if v is not None]
        if populated != [self.kind]:
            raise ValueError(
                f"detector kind {self.kind!r} requires exactly its own payload, "
                f"got {populated or 'none'}"
            )


# ---------------------------------------------------------------------------
# Synthetic oracle


def _uniform_in(rng: np.random.Generator, lo: float, hi: float) -> float:
    return float(lo + rng.random() * (hi - lo))


def _fruit_detection(
    gt: Box, noise: OracleNoise, image_id: str
) -> Detection | None:
    """Per-fruit draw: None when dropped, else the jittered scored box.

    Depends only on (seed, image id, box); the number of draws consumed is
    constant so changing one noise knob never reshuffles the others.
    """
    rng = np.random.default_rng(
        derive_seed(noise.seed, image_id, "fruit",
                    gt.x_min, gt.y_min, gt.x_max, gt.y_max)
    )
    u_drop = rng.random()
    center_jitter = rng.normal(0.0, 1.0, size=2)
    size_jitter = rng.normal(0.0, 1.0, size=2)
    score = _uniform_in(rng, *noise.tp_score_range)
    if u_drop < noise.drop_rate:
        return None
    cx, cy = gt.center
    w, h = gt.width, gt.height
    if noise.jitter_sigma > 0 and w > 0 and h > 0:
        cx += center_jitter[0] * noise.jitter_sigma
        cy += center_jitter[1] * noise.jitter_sigma
        # Log-size jitter scaled so the size perturbation is ~sigma pixels.
        w *= math.exp(size_jitter[0] * noise.jitter_sigma / w)
        h *= math.exp(size_jitter[1] * noise.jitter_sigma / h)
    box = Box(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    return Detection(box=box, score=score)


def oracle_detect(
    gt: Sequence[Box], noise: OracleNoise, region: Box, image_id: str = ""
) -> list[Detection]:
    """Synthesize detections for the ground truth visible in a region.

    Emits one (possibly jittered) detection per non-dropped fruit that
    lies fully inside the region, plus Poisson-many spurious boxes placed
    uniformly in the region with sizes resampled from the ground truth.
    Returned boxes are clipped to the region, in the same coordinate frame
    as ``gt``. Deterministic for a fixed (noise, region, image_id).
    """
    out: list[Detection] = []
    for fruit in gt:
        if not region.contains_box(fruit):
            continue
        det = _fruit_detection(fruit, noise, image_id)
        if det is None:
            continue
        clipped = intersect_box(det.box, region)
        if clipped is not None:
            out.append(Detection(box=clipped, score=det.score, label=det.label))

    if noise.spurious_rate > 0:
        rng = np.random.default_rng(
            derive_seed(noise.seed, image_id, "spurious",
                        region.x_min, region.y_min, region.x_max, region.y_max)
        )
        sizes = [(b.width, b.height) for b in gt if b.area > 0]
        for _ in range(int(rng.poisson(noise.spurious_rate))):
            if sizes:
                w, h = sizes[int(rng.integers(len(sizes)))]
            else:
                w, h = NOMINAL_FRUIT_SIDE, NOMINAL_FRUIT_SIDE
            cx = _uniform_in(rng, region.x_min, region.x_max)
            cy = _uniform_in(rng, region.y_min, region.y_max)
            score = _uniform_in(rng, *noise.fp_score_range)
            box = intersect_box(
                Box(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0), region
            )
            if box is not None:
                out.append(Detection(box=box, score=score))
    return sort_detections(out)


def gt_boxes_by_image(manifest: Manifest) -> dict[str, list[Box]]:
    """Ground-truth boxes per image id, clipped to their image bounds."""
    table: dict[str, list[Box]] = {}
    for record in manifest.images:
        boxes = []
        for ann in record.annotations:
            clipped = clip_box(ann.box, record.size)
            if clipped is not None:
                boxes.append(clipped)
        table[record.id] = boxes
    return table


class OracleDetector:
    """Detector backed by ground truth plus an OracleNoise model."""

    def __init__(self, ground_truth: Mapping[str, Sequence[Box]], noise: OracleNoise):
        self._gt = ground_truth
        self.noise = noise

    def detect(self, request: DetectRequest) -> list[Detection]:
        gt = self._gt.get(request.image_id, ())
        dets = oracle_detect(gt, self.noise, request.rect, image_id=request.image_id)
        return [
            Detection(
                box=translate_box(d.box, -request.rect.x_min, -request.rect.y_min),
                score=d.score,
                label=d.label,
            )
            for d in dets
        ]


# ---------------------------------------------------------------------------
# File-backed detections


def rect_key(image_id: str, rect: Box) -> str:
    """Manifest key for detections stored per (image, rect)."""
    coords = ",".join(f"{v:g}" for v in rect.as_tuple())
    return f"{image_id}@{coords}"


def load_detections(data: bytes | str) -> dict[str, list[Detection]]:
    """Parse a detections manifest into canonical-ordered lists."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed detections JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("version") != DETECTIONS_VERSION:
        raise ValueError(f"detections manifest must have version {DETECTIONS_VERSION}")
    body = doc.get("detections")
    if not isinstance(body, dict):
        raise ValueError("detections manifest must map image ids to detection lists")
    table: dict[str, list[Detection]] = {}
    for key, entries in body.items():
        dets = []
        for i, entry in enumerate(entries):
            try:
                x0, y0, x1, y1 = (float(v) for v in entry["box"])
                dets.append(
                    Detection(
                        box=Box(x0, y0, x1, y1),
                        score=float(entry["score"]),
                        label=str(entry.get("label", "fruit")),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"bad detection entry {key!r}[{i}]: {exc}") from exc
        table[key] = sort_detections(dets)
    return table


def save_detections(table: Mapping[str, Sequence[Detection]]) -> bytes:
    """Serialize detections keyed by image id to canonical bytes."""
    body = {
        key: [
            {"box": list(d.box.as_tuple()), "score": d.score, "label": d.label}
            for d in sort_detections(table[key])
        ]
        for key in sorted(table)
    }
    return canonical.dumps({"version": DETECTIONS_VERSION, "detections": body}, places=6)


class FileDetector:
    """Replays detections stored in a detections manifest.

    Entries may be keyed per raw image (boxes in image coordinates, cropped
    to the request rect on read) or per tile via :func:`rect_key` (boxes
    already rect-local, returned verbatim).
    """

    def __init__(self, table: Mapping[str, Sequence[Detection]]):
        self._table = table

    @classmethod
    def from_path(cls, path: str) -> "FileDetector":
        with open(path, "rb") as fh:
            return cls(load_detections(fh.read()))

    def detect(self, request: DetectRequest) -> list[Detection]:
        keyed = self._table.get(rect_key(request.image_id, request.rect))
        if keyed is not None:
            return sort_detections(keyed)
        stored = self._table.get(request.image_id)
        if stored is None:
            raise DetectionsNotFoundError(request.image_id, request.rect)
        out = []
        for det in stored:
            clipped = intersect_box(det.box, request.rect)
            if clipped is None:
                continue
            out.append(
                Detection(
                    box=translate_box(clipped, -request.rect.x_min, -request.rect.y_min),
                    score=det.score,
                    label=det.label,
                )
            )
        return sort_detections(out)


# ---------------------------------------------------------------------------
# External process adapter


class _Worker:
    """One child process speaking line-delimited JSON on stdin/stdout."""

    def __init__(self, config: ExternalConfig):
        self._config = config
        self._proc = subprocess.Popen(
            list(config.command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._handshake()

    def _send(self, obj: dict[str, Any]) -> None:
        assert self._proc.stdin is not None
        try:
            self._proc.stdin.write(json.dumps(obj) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ProtocolError(f"external detector pipe closed: {exc}") from exc

    def _read_line(self, timeout: float | None = None) -> str:
        assert self._proc.stdout is not None
        if timeout is not None:
            ready, _, _ = select.select([self._proc.stdout], [], [], timeout)
            if not ready:
                raise ProtocolError(
                    f"external detector handshake timed out after {timeout}s"
                )
        line = self._proc.stdout.readline()
        if line == "":
            raise ProtocolError("external detector closed its output stream")
        return line.rstrip("\n")

    def _read_json(self, timeout: float | None = None) -> dict[str, Any]:
        line = self._read_line(timeout)
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            raise ProtocolError("response is not valid JSON", line=line) from None
        if not isinstance(obj, dict):
            raise ProtocolError("response is not a JSON object", line=line)
        return obj

    def _handshake(self) -> None:
        self._send({"op": "hello"})
        reply = self._read_json(timeout=self._config.handshake_timeout)
        if reply.get("ok") is not True:
            raise ProtocolError(
                f"handshake rejected: {reply.get('error', reply)}",
                line=json.dumps(reply),
            )
        self.name = str(reply.get("name", "unknown"))
        self.version = str(reply.get("version", "unknown"))

    def detect(self, request_id: int, image: str, rect: Box) -> list[Detection]:
        self._send(
            {
                "op": "detect",
                "id": request_id,
                "image": image,
                "rect": [rect.x_min, rect.y_min, rect.width, rect.height],
            }
        )
        reply = self._read_json()
        line = json.dumps(reply)
        if reply.get("id") != request_id:
            raise ProtocolError(
                f"response id {reply.get('id')!r} does not match request {request_id}",
                line=line,
            )
        if reply.get("ok") is not True:
            raise DetectorError(
                f"external detector failed request {request_id}: "
                f"{reply.get('error', 'no error message')}"
            )
        entries = reply.get("detections")
        if not isinstance(entries, list):
            raise ProtocolError("response is missing a detections list", line=line)
        dets = []
        for entry in entries:
            try:
                x0, y0, x1, y1 = (float(v) for v in entry["box"])
                dets.append(
                    Detection(
                        box=Box(x0, y0, x1, y1),
                        score=float(entry["score"]),
                        label=str(entry.get("label", "fruit")),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ProtocolError(f"bad detection entry: {exc}", line=line) from None
        return sort_detections(dets)

    def shutdown(self) -> None:
        if self._proc.poll() is None:
            try:
                self._send({"op": "shutdown"})
            except ProtocolError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
        for stream in (self._proc.stdin, self._proc.stdout):
            if stream is not None:
                stream.close()


class ExternalDetector:
    """Adapter that serializes requests over one or more child processes.

    Requests are matched to responses by an explicit id; with pool_size
    greater than 1, concurrent callers are fanned out over idle children.
    """

    def __init__(
        self,
        config: ExternalConfig,
        resolve_path: Callable[[str], str] | None = None,
    ):
        self._config = config
        self._resolve_path = resolve_path or (lambda image_id: image_id)
        self._lock = threading.Lock()
        self._idle: list[_Worker] = []
        self._spawned = 0
        self._next_id = 0
        self._available = threading.Condition(self._lock)
        self._closed = False

    def _acquire(self) -> _Worker:
        with self._available:
            if self._closed:
                raise DetectorError("external detector is closed")
            while not self._idle and self._spawned >= self._config.pool_size:
                self._available.wait()
            if self._idle:
                return self._idle.pop()
            self._spawned += 1
        try:
            return _Worker(self._config)
        except Exception:
            with self._available:
                self._spawned -= 1
                self._available.notify()
            raise

    def _release(self, worker: _Worker) -> None:
        with self._available:
            self._idle.append(worker)
            self._available.notify()

    def detect(self, request: DetectRequest) -> list[Detection]:
        with self._lock:
            request_id = self._next_id
            self._next_id += 1
        worker = self._acquire()
        try:
            dets = worker.detect(
                request_id, self._resolve_path(request.image_id), request.rect
            )
        except Exception:
            # A worker in an unknown protocol state is not reusable.
            with self._available:
                self._spawned -= 1
                self._available.notify()
            worker.shutdown()
            raise
        self._release(worker)
        return dets

    def close(self) -> None:
        with self._available:
            self._closed = True
            workers = list(self._idle)
            self._idle.clear()
        for worker in workers:
            worker.shutdown()

    def __enter__(self) -> "ExternalDetector":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()


# ---------------------------------------------------------------------------
# Factory


def make_detector(
    spec: DetectorSpec,
    *,
    ground_truth: Manifest | Mapping[str, Sequence[Box]] | None = None,
    resolve_path: Callable[[str], str] | None = None,
):
    """Build the detector object described by a DetectorSpec.

    The oracle kind needs ground truth (a Manifest or an id-to-boxes
    mapping); external detectors accept an image-id-to-path resolver.
    """
    if spec.kind == "oracle":
        assert spec.oracle is not None
        if ground_truth is None:
            raise ValueError("oracle detector requires ground truth")
        if isinstance(ground_truth, Manifest):
            ground_truth = gt_boxes_by_image(ground_truth)
        return OracleDetector(ground_truth, spec.oracle)
    if spec.kind == "file":
        assert spec.file is not None
        return FileDetector.from_path(spec.file)
    assert spec.external is not None
    return ExternalDetector(spec.external, resolve_path=resolve_path)


def detect(
    request: DetectRequest,
    spec: DetectorSpec,
    *,
    ground_truth: Manifest | Mapping[str, Sequence[Box]] | None = None,
    resolve_path: Callable[[str], str] | None = None,
) -> list[Detection]:
    """One-shot detection on a region; boxes come back rect-local."""
    detector = make_detector(spec, ground_truth=ground_truth, resolve_path=resolve_path)
    try:
        return detector.detect(request)
    finally:
        if isinstance(detector, ExternalDetector):
            detector.close()


def parse_command(command: str) -> tuple[str, ...]:
    """Split a shell-style command string for ExternalConfig."""
    parts = tuple(shlex.split(command))
    if not parts:
        raise ValueError("empty external detector command")
    return parts
