"""Corpus data model, file formats, preprocessing, and splitting.

File formats:
  * Frame container (".artf"): 16-byte header -- magic ``ARTF``, u8 dtype
    code (0=u8, 1=f32 little-endian), u16 height, u16 width, u32 n_frames,
    3 reserved bytes -- followed by row-major frames.
  * Phone labels (".lab"): little-endian u16 phone indices, one per frame.
  * Manifest: JSON with top-level ``phones`` and ``records`` (see
    ``save_manifest``). Paths are stored relative to the manifest file.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataError, ManifestError, NumericalError

MODES = ("modal", "silent", "whispered")
MODALITIES = ("ultrasound", "video")
SPLITS = ("train", "validation", "test")

#: Channel offsets of one windowed sample relative to its anchor frame:
#: the anchor plus 3 neighbours on each side, 4 frames apart (12-frame span).
WINDOW_OFFSETS = (-12, -8, -4, 0, 4, 8, 12)

_ARTF_MAGIC = b"ARTF"
_ARTF_HEADER = struct.Struct("<4sBHHI3x")  # 16 bytes
_DTYPE_CODES = {0: np.dtype(np.uint8), 1: np.dtype("<f4")}
_CODE_FOR_KIND = {"u": 0, "i": 0, "f": 1}


# ---------------------------------------------------------------------------
# Binary containers


def write_frames(path: str | Path, frames: np.ndarray) -> None:
    """Write an (n, h, w) frame stack to the binary container.

    Integer input is stored as u8, floating input as little-endian f32.
    """
    frames = np.asarray(frames)
    if frames.ndim != 3 or frames.size == 0:
        raise DataError(f"frame stack must be non-empty (n, h, w), got shape {frames.shape}")
    code = _CODE_FOR_KIND.get(frames.dtype.kind)
    if code is None:
        raise DataError(f"unsupported frame dtype {frames.dtype}")
    out = frames.astype(_DTYPE_CODES[code], copy=False)
    n, h, w = out.shape
    if h > 0xFFFF or w > 0xFFFF:
        raise DataError(f"frame size {h}x{w} exceeds u16 header range")
    with open(path, "wb") as fh:
        fh.write(_ARTF_HEADER.pack(_ARTF_MAGIC, code, h, w, n))
        fh.write(np.ascontiguousarray(out).tobytes())


def read_frame_header(path: str | Path) -> tuple[int, int, int, np.dtype]:
    """Read (n_frames, height, width, dtype) without loading the payload."""
    with open(path, "rb") as fh:
        raw = fh.read(_ARTF_HEADER.size)
    if len(raw) < _ARTF_HEADER.size:
        raise DataError(f"{path}: truncated frame header")
    magic, code, h, w, n = _ARTF_HEADER.unpack(raw)
    if magic != _ARTF_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if code not in _DTYPE_CODES:
        raise DataError(f"{path}: unknown dtype code {code}")
    return n, h, w, _DTYPE_CODES[code]


def read_frames(path: str | Path) -> np.ndarray:
    """Read a frame stack written by :func:`write_frames`."""
    n, h, w, dtype = read_frame_header(path)
    with open(path, "rb") as fh:
        fh.seek(_ARTF_HEADER.size)
        data = np.frombuffer(fh.read(), dtype=dtype)
    if data.size != n * h * w:
        raise DataError(f"{path}: payload has {data.size} values, header promises {n * h * w}")
    return data.reshape(n, h, w).copy()


def write_features(path: str | Path, features: np.ndarray) -> None:
    """Write an (n, d) feature matrix as f32 frames of shape 1 x d."""
    features = np.asarray(features, dtype=np.float32)
    if features.ndim != 2:
        raise DataError(f"features must be (n, d), got shape {features.shape}")
    write_frames(path, features[:, None, :])


def read_features(path: str | Path) -> np.ndarray:
    """Read a feature matrix written by :func:`write_features`."""
    frames = read_frames(path)
    if frames.shape[1] != 1:
        raise DataError(f"{path}: expected height-1 feature frames, got {frames.shape}")
    return frames[:, 0, :].astype(np.float64)


def write_labels(path: str | Path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise DataError(f"labels must be 1-D, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() > 0xFFFF):
        raise DataError("label indices out of u16 range")
    with open(path, "wb") as fh:
        fh.write(labels.astype("<u2").tobytes())


def read_labels(path: str | Path) -> np.ndarray:
    data = np.frombuffer(Path(path).read_bytes(), dtype="<u2")
    return data.astype(np.int64)


# ---------------------------------------------------------------------------
# Domain types


@dataclass
class FrameSequence:
    """Time-ordered stack of equally sized grayscale frames."""

    modality: str
    fps: float
    frames: np.ndarray  # (n, h, w)

    def __post_init__(self) -> None:
        if self.modality not in MODALITIES:
            raise DataError(f"unknown modality {self.modality!r}")
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 3 or self.frames.shape[0] < 1:
            raise DataError(f"frames must be non-empty (n, h, w), got {self.frames.shape}")
        if not self.fps > 0:
            raise DataError(f"fps must be positive, got {self.fps}")

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]


@dataclass
class UtteranceRecord:
    """Metadata for one utterance; frame payloads load lazily."""

    utt_id: str
    speaker_id: str
    session_id: str
    mode: str
    prompt: str
    syllable_count: int
    duration_s: float
    ult_path: str | None
    vid_path: str | None
    labels_path: str | None
    split: str
    root: Path = field(default_factory=Path, compare=False, repr=False)
    _cache: dict = field(default_factory=dict, init=False, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ManifestError(f"{self.utt_id}: unknown mode {self.mode!r}")
        if self.split not in SPLITS:
            raise ManifestError(f"{self.utt_id}: unknown split {self.split!r}")
        if not self.duration_s > 0:
            raise ManifestError(f"{self.utt_id}: duration must be positive")
        if self.syllable_count < 1:
            raise ManifestError(f"{self.utt_id}: syllable_count must be >= 1")

    @property
    def words(self) -> list[str]:
        return self.prompt.split()

    def _resolve(self, rel: str) -> Path:
        return (self.root / rel) if self.root else Path(rel)

    def ultrasound(self) -> FrameSequence | None:
        if self.ult_path is None:
            return None
        if "ult" not in self._cache:
            frames = read_frames(self._resolve(self.ult_path))
            fps = frames.shape[0] / self.duration_s
            self._cache["ult"] = FrameSequence("ultrasound", fps, frames)
        return self._cache["ult"]

    def video(self) -> FrameSequence | None:
        if self.vid_path is None:
            return None
        if "vid" not in self._cache:
            frames = read_frames(self._resolve(self.vid_path))
            fps = frames.shape[0] / self.duration_s
            self._cache["vid"] = FrameSequence("video", fps, frames)
        return self._cache["vid"]

    def phone_labels(self) -> np.ndarray | None:
        if self.labels_path is None:
            return None
        if "lab" not in self._cache:
            self._cache["lab"] = read_labels(self._resolve(self.labels_path))
        return self._cache["lab"]


@dataclass
class Manifest:
    """All utterance records of a corpus plus its phone inventory."""

    phones: list[str]
    records: list[UtteranceRecord]
    root: Path = field(default_factory=Path, compare=False, repr=False)

    def by_split(self, split: str) -> list[UtteranceRecord]:
        return [r for r in self.records if r.split == split]

    def prompts(self, split: str | None = None) -> set[str]:
        recs = self.records if split is None else self.by_split(split)
        return {r.prompt for r in recs}

    def validate_prompt_disjoint(self) -> None:
        shared = self.prompts("train") & self.prompts("test")
        if shared:
            raise ManifestError(f"prompts shared between train and test: {sorted(shared)[:5]}")


@dataclass
class WindowSample:
    """One classifier input: 7 channel frames around an anchor frame."""

    channels: np.ndarray  # (7, h, w)
    anchor_index: int
    label: int | None = None

    def __post_init__(self) -> None:
        if self.channels.shape[0] != len(WINDOW_OFFSETS):
            raise DataError(f"expected {len(WINDOW_OFFSETS)} channels, got {self.channels.shape[0]}")


# ---------------------------------------------------------------------------
# Manifest I/O

_RECORD_KEYS = (
    "id", "speaker", "session", "mode", "prompt", "syllables",
    "duration_s", "ult_path", "vid_path", "labels_path", "split",
)


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    path = Path(path)
    records = []
    for r in manifest.records:
        records.append({
            "id": r.utt_id,
            "speaker": r.speaker_id,
            "session": r.session_id,
            "mode": r.mode,
            "prompt": r.prompt,
            "syllables": r.syllable_count,
            "duration_s": r.duration_s,
            "ult_path": r.ult_path,
            "vid_path": r.vid_path,
            "labels_path": r.labels_path,
            "split": r.split,
        })
    payload = {"phones": list(manifest.phones), "records": records}
    path.write_text(json.dumps(payload, indent=2) + "\n")


def load_manifest(path: str | Path, check_files: bool = True) -> Manifest:
    """Load and validate a manifest.

    Frame payloads stay on disk; only container headers and label sizes are
    checked here (when ``check_files`` is set).
    """
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: JSON parse error at line {exc.lineno}: {exc.msg}") from exc

    for key in ("phones", "records"):
        if key not in payload:
            raise ManifestError(f"{path}: missing top-level field {key!r}")
    phones = list(payload["phones"])
    root = path.parent

    records = []
    for i, raw in enumerate(payload["records"]):
        missing = [k for k in _RECORD_KEYS if k not in raw]
        if missing:
            raise ManifestError(f"{path}: record {i} missing fields {missing}")
        try:
            rec = UtteranceRecord(
                utt_id=raw["id"],
                speaker_id=raw["speaker"],
                session_id=raw["session"],
                mode=raw["mode"],
                prompt=raw["prompt"],
                syllable_count=int(raw["syllables"]),
                duration_s=float(raw["duration_s"]),
                ult_path=raw["ult_path"],
                vid_path=raw["vid_path"],
                labels_path=raw["labels_path"],
                split=raw["split"],
                root=root,
            )
        except (TypeError, ValueError) as exc:
            raise ManifestError(f"{path}: record {i} ({raw.get('id', '?')}): {exc}") from exc
        records.append(rec)

    manifest = Manifest(phones=phones, records=records, root=root)
    manifest.validate_prompt_disjoint()
    if check_files:
        _check_record_files(manifest)
    return manifest


def _check_record_files(manifest: Manifest) -> None:
    for r in manifest.records:
        n_ult = None
        for attr in ("ult_path", "vid_path"):
            rel = getattr(r, attr)
            if rel is None:
                continue
            p = r._resolve(rel)
            if not p.exists():
                raise ManifestError(f"{r.utt_id}: referenced frame file missing: {p}")
            n, _, _, _ = read_frame_header(p)
            if attr == "ult_path":
                n_ult = n
        if r.labels_path is not None:
            p = r._resolve(r.labels_path)
            if not p.exists():
                raise ManifestError(f"{r.utt_id}: referenced label file missing: {p}")
            n_lab = p.stat().st_size // 2
            if n_ult is not None and n_lab != n_ult:
                raise ManifestError(
                    f"{r.utt_id}: {n_lab} phone labels for {n_ult} ultrasound frames"
                )


# ---------------------------------------------------------------------------
# Preprocessing


def resize_bilinear(frame: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize one frame with corner-aligned bilinear interpolation.

    Output corner pixels coincide with input corners; a size-1 output axis
    samples coordinate 0.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2 or frame.size == 0:
        raise DataError(f"expected non-empty 2-D frame, got shape {frame.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be at least 1x1")
    in_h, in_w = frame.shape

    def grid(n_in: int, n_out: int) -> np.ndarray:
        if n_out == 1:
            return np.zeros(1)
        return np.arange(n_out) * ((n_in - 1) / (n_out - 1))

    ys = grid(in_h, out_h)
    xs = grid(in_w, out_w)
    y0 = np.minimum(ys.astype(np.int64), in_h - 1)
    x0 = np.minimum(xs.astype(np.int64), in_w - 1)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]

    top = frame[np.ix_(y0, x0)] * (1 - wx) + frame[np.ix_(y0, x1)] * wx
    bot = frame[np.ix_(y1, x0)] * (1 - wx) + frame[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def crop_center(frame: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Centered crop; odd margins drop the extra row/column at bottom/right."""
    frame = np.asarray(frame)
    if frame.ndim != 2:
        raise DataError(f"expected 2-D frame, got shape {frame.shape}")
    in_h, in_w = frame.shape
    if out_h > in_h or out_w > in_w:
        raise ValueError(f"crop {out_h}x{out_w} larger than input {in_h}x{in_w}")
    top = (in_h - out_h) // 2
    left = (in_w - out_w) // 2
    return frame[top:top + out_h, left:left + out_w]


def normalize(sequences: list[np.ndarray]) -> tuple[float, float, list[np.ndarray]]:
    """Global zero-mean unit-variance statistics over all training pixels.

    Returns (mean, std, normalized copies). Statistics are computed once
    over the training split and must be re-applied to held-out data with
    :func:`apply_normalization`.
    """
    if not sequences:
        raise DataError("cannot compute normalization statistics from an empty set")
    flat = np.concatenate([np.asarray(s, dtype=np.float64).ravel() for s in sequences])
    mean = float(flat.mean())
    std = float(flat.std())
    if std <= 0.0:
        raise NumericalError("training pixels are constant; zero variance")
    return mean, std, [apply_normalization(s, mean, std) for s in sequences]


def apply_normalization(frames: np.ndarray, mean: float, std: float) -> np.ndarray:
    return (np.asarray(frames, dtype=np.float64) - mean) / std


def window_stack(frames: np.ndarray) -> np.ndarray:
    """Stack every anchor frame with its window neighbours: (n, 7, h, w).

    Out-of-range neighbour offsets clamp to the nearest valid frame, so
    there is exactly one sample per frame.
    """
    frames = np.asarray(frames)
    n = frames.shape[0]
    if n < 1:
        raise DataError("cannot window an empty sequence")
    anchors = np.arange(n)[:, None]
    idx = np.clip(anchors + np.asarray(WINDOW_OFFSETS)[None, :], 0, n - 1)
    return frames[idx]


def window_samples(frames: np.ndarray | FrameSequence,
                   labels: np.ndarray | None = None) -> list[WindowSample]:
    """One :class:`WindowSample` per frame of the sequence."""
    if isinstance(frames, FrameSequence):
        frames = frames.frames
    stacked = window_stack(frames)
    if labels is not None and len(labels) != stacked.shape[0]:
        raise DataError(f"{len(labels)} labels for {stacked.shape[0]} frames")
    return [
        WindowSample(channels=stacked[i], anchor_index=i,
                     label=None if labels is None else int(labels[i]))
        for i in range(stacked.shape[0])
    ]


def nearest_frame_indices(n_src: int, fps_src: float, n_dst: int, fps_dst: float) -> np.ndarray:
    """Map each destination-timeline frame to the nearest source frame.

    Used to carry per-frame annotations between modalities with different
    frame rates; frame i is taken to occur at time i / fps.
    """
    if n_src < 1 or n_dst < 1:
        raise DataError("sequences must be non-empty")
    times = np.arange(n_dst) / fps_dst
    idx = np.rint(times * fps_src).astype(np.int64)
    return np.clip(idx, 0, n_src - 1)


# ---------------------------------------------------------------------------
# Splitting


def split_prompt_disjoint(manifest: Manifest, test_prompts: set[str],
                          val_fraction: float = 0.1, seed: int = 0) -> Manifest:
    """Tag records test/train/validation so train and test share no prompt.

    Every record whose prompt is in ``test_prompts`` goes to test; the rest
    are shuffled deterministically and split train/validation.
    """
    if not test_prompts:
        raise ValueError("test prompt set must be nonempty")
    test_recs, rest = [], []
    for r in manifest.records:
        (test_recs if r.prompt in test_prompts else rest).append(r)

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(rest))
    n_val = int(round(val_fraction * len(rest)))
    val_idx = set(order[:n_val].tolist())

    tagged = [replace(r, split="test", root=r.root) for r in test_recs]
    for j, r in enumerate(rest):
        tagged.append(replace(r, split="validation" if j in val_idx else "train", root=r.root))
    if not any(r.split == "train" for r in tagged):
        raise DataError("split left no training records")

    out = Manifest(phones=list(manifest.phones), records=tagged, root=manifest.root)
    out.validate_prompt_disjoint()
    return out
