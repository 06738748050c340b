"""Synthetic corpora for every modality and the checksummed corpus container."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError

COLORS = {"red": (1.0, 0.1, 0.1), "green": (0.1, 0.9, 0.2), "blue": (0.2, 0.3, 1.0), "yellow": (1.0, 0.9, 0.1)}
SHAPES = ("square", "ring", "cross", "bar")
ROWS = ("top", "middle", "bottom")
COLS = ("left", "center", "right")
MOTIONS = {"left": (0, -1), "right": (0, 1), "up": (-1, 0), "down": (1, 0), "static": (0, 0)}
MIRROR = {"left": "right", "right": "left", "up": "down", "down": "up", "static": "static"}
ALPHABET = "abcdefghijklmnopqrstuvwxyz"

IMAGE_INSTRUCTIONS = (
    "describe this image in detail",
    "what do you see in the image",
    "give a short caption for the image",
    "tell me about this picture",
    "summarize the image",
)
VIDEO_INSTRUCTIONS = (
    "can you describe what you notice in the video",
    "describe the video",
    "what happens in this clip",
    "caption the video",
    "tell me about the video",
)
SPEECH_INSTRUCTIONS = (
    "Please faithfully recognize the speech",
    "transcribe the speech",
    "write down what is said",
    "what does the speaker say",
    "recognize the speech",
)
VSQA_INSTRUCTION = "answer the question in the speech based on the image"
VSQA_QUESTIONS = ("color", "shape", "where")

# fixed instructions used for stage-2 alignment
STAGE2_INSTRUCTIONS = {"image": IMAGE_INSTRUCTIONS[0], "video": VIDEO_INSTRUCTIONS[0], "speech": SPEECH_INSTRUCTIONS[0]}


@dataclass
class SpeechSpec:
    d_in: int = 16
    min_len: int = 3
    max_len: int = 8
    min_expansion: int = 12
    max_expansion: int = 20
    noise: float = 0.3
    onset: float = 1.5


@dataclass
class ImageSpec:
    size: int = 24
    grid: int = 3


@dataclass
class VideoSpec:
    frames: int = 8
    step: int = 2


@dataclass
class SyntheticCorpusSpec:
    seed: int = 0
    n_items: int = 500
    speech: SpeechSpec = field(default_factory=SpeechSpec)
    image: ImageSpec = field(default_factory=ImageSpec)
    video: VideoSpec = field(default_factory=VideoSpec)
    frontend_reduction: int = 8

    def __post_init__(self):
        if isinstance(self.speech, dict):
            self.speech = SpeechSpec(**self.speech)
        if isinstance(self.image, dict):
            self.image = ImageSpec(**self.image)
        if isinstance(self.video, dict):
            self.video = VideoSpec(**self.video)
        sp = self.speech
        if sp.min_expansion < self.frontend_reduction:
            raise ConfigurationError(
                f"expansion factor {sp.min_expansion} is below the encoder reduction {self.frontend_reduction}; "
                "utterances could encode to fewer frames than tokens"
            )
        if not 1 <= sp.min_len <= sp.max_len or sp.min_expansion > sp.max_expansion:
            raise ConfigurationError("invalid speech length or expansion range")
        if self.image.size % self.image.grid:
            raise ConfigurationError("image size must be a multiple of the grid")
        if self.video.frames < 1:
            raise ConfigurationError("clips need at least one frame")

    def to_dict(self) -> dict:
        return asdict(self)


def _rng(seed: int, stream: str) -> np.random.Generator:
    tag = int.from_bytes(hashlib.sha256(stream.encode()).digest()[:4], "little")
    return np.random.default_rng([seed, tag])


# ---------------------------------------------------------------------------
# speech
# ---------------------------------------------------------------------------


def speech_prototypes(spec: SyntheticCorpusSpec) -> tuple[np.ndarray, np.ndarray]:
    """Per-symbol prototype frames and the shared onset vector (depend on the seed only)."""
    rng = _rng(spec.seed, "prototypes")
    protos = rng.normal(size=(len(ALPHABET), spec.speech.d_in))
    onset = rng.normal(size=spec.speech.d_in)
    return protos, spec.speech.onset * onset / np.linalg.norm(onset)


def render_speech(text: str, spec: SyntheticCorpusSpec, rng: np.random.Generator, expansion: int | None = None) -> np.ndarray:
    """Frames for ``text``: k copies of each symbol's prototype, onset marked, plus Gaussian noise."""
    sp = spec.speech
    protos, onset = speech_prototypes(spec)
    frames = []
    for ch in text:
        k = expansion if expansion is not None else int(rng.integers(sp.min_expansion, sp.max_expansion + 1))
        block = np.repeat(protos[ALPHABET.index(ch)][None, :], k, axis=0)
        block[0] += onset
        frames.append(block)
    out = np.concatenate(frames, axis=0)
    if sp.noise > 0:
        out = out + rng.normal(scale=sp.noise, size=out.shape)
    return out


def gen_speech_corpus(spec: SyntheticCorpusSpec, n_items: int | None = None, stream: str = "speech") -> list[dict]:
    """Items ``{"frames", "text", "tokens"}``; tokens are the UTF-8 bytes of ``text``."""
    rng = _rng(spec.seed, stream)
    sp = spec.speech
    items = []
    for _ in range(spec.n_items if n_items is None else n_items):
        n = int(rng.integers(sp.min_len, sp.max_len + 1))
        text = "".join(ALPHABET[i] for i in rng.integers(0, len(ALPHABET), size=n))
        items.append({"frames": render_speech(text, spec, rng), "text": text, "tokens": list(text.encode())})
    return items


def majority_vote_decode(frames: np.ndarray, spec: SyntheticCorpusSpec, expansion: int) -> str:
    """Reference decoder for noiseless fixed-expansion speech: nearest prototype, majority per chunk."""
    protos, _ = speech_prototypes(spec)
    dist = ((frames[:, None, :] - protos[None, :, :]) ** 2).sum(-1)
    nearest = dist.argmin(axis=1)
    out = []
    for start in range(0, len(frames), expansion):
        votes = np.bincount(nearest[start : start + expansion], minlength=len(ALPHABET))
        out.append(ALPHABET[int(votes.argmax())])
    return "".join(out)


# ---------------------------------------------------------------------------
# images and video
# ---------------------------------------------------------------------------


def shape_mask(shape: str, cell: int) -> np.ndarray:
    m = np.zeros((cell, cell), bool)
    lo, hi = 1, cell - 1
    mid = cell // 2
    if shape == "square":
        m[lo:hi, lo:hi] = True
    elif shape == "ring":
        m[lo:hi, lo:hi] = True
        m[lo + 1 : hi - 1, lo + 1 : hi - 1] = False
    elif shape == "cross":
        m[mid - 1 : mid + 1, lo:hi] = True
        m[lo:hi, mid - 1 : mid + 1] = True
    elif shape == "bar":
        m[mid - 1 : mid + 1, lo:hi] = True
    else:
        raise ConfigurationError(f"unknown shape {shape!r}")
    return m


def image_caption(color: str, shape: str, row: int, col: int) -> str:
    return f"{color} {shape} {ROWS[row]} {COLS[col]}"


def render_image(color: str, shape: str, row: int, col: int, spec: SyntheticCorpusSpec) -> np.ndarray:
    size, grid = spec.image.size, spec.image.grid
    cell = size // grid
    img = np.zeros((size, size, 3))
    mask = shape_mask(shape, cell)
    img[row * cell : (row + 1) * cell, col * cell : (col + 1) * cell][mask] = COLORS[color]
    return img


def gen_image_corpus(spec: SyntheticCorpusSpec, n_items: int | None = None, stream: str = "image") -> list[dict]:
    """Items ``{"pixels", "caption", "tokens", "attrs"}``; the caption is a pure function of ``attrs``."""
    rng = _rng(spec.seed, stream)
    colors = list(COLORS)
    items = []
    for _ in range(spec.n_items if n_items is None else n_items):
        attrs = {
            "color": colors[int(rng.integers(len(colors)))],
            "shape": SHAPES[int(rng.integers(len(SHAPES)))],
            "row": int(rng.integers(spec.image.grid)),
            "col": int(rng.integers(spec.image.grid)),
        }
        caption = image_caption(**attrs)
        items.append({"pixels": render_image(spec=spec, **attrs), "caption": caption, "tokens": list(caption.encode()), "attrs": attrs})
    return items


def video_caption(color: str, shape: str, motion: str) -> str:
    return f"{color} {shape} {motion}"


def render_clip(color: str, shape: str, motion: str, start: tuple[int, int], spec: SyntheticCorpusSpec) -> np.ndarray:
    size = spec.image.size
    cell = size // spec.image.grid
    mask = shape_mask(shape, cell)
    dy, dx = MOTIONS[motion]
    clip = np.zeros((spec.video.frames, size, size, 3))
    for f in range(spec.video.frames):
        y = start[0] + dy * spec.video.step * f
        x = start[1] + dx * spec.video.step * f
        clip[f, y : y + cell, x : x + cell][mask] = COLORS[color]
    return clip


def gen_video_corpus(spec: SyntheticCorpusSpec, n_items: int | None = None, stream: str = "video") -> list[dict]:
    """Items ``{"frames", "caption", "tokens", "attrs"}`` with a shape translating by the motion rule."""
    rng = _rng(spec.seed, stream)
    size = spec.image.size
    cell = size // spec.image.grid
    travel = spec.video.step * (spec.video.frames - 1)
    if travel > size - cell:
        raise ConfigurationError("clip too long for the frame size")
    colors, motions = list(COLORS), list(MOTIONS)
    items = []
    for _ in range(spec.n_items if n_items is None else n_items):
        color = colors[int(rng.integers(len(colors)))]
        shape = SHAPES[int(rng.integers(len(SHAPES)))]
        motion = motions[int(rng.integers(len(motions)))]
        dy, dx = MOTIONS[motion]
        span = size - cell
        y0 = int(rng.integers(0, span - travel + 1)) + (travel if dy < 0 else 0) if dy else int(rng.integers(0, span + 1))
        x0 = int(rng.integers(0, span - travel + 1)) + (travel if dx < 0 else 0) if dx else int(rng.integers(0, span + 1))
        caption = video_caption(color, shape, motion)
        items.append(
            {
                "frames": render_clip(color, shape, motion, (y0, x0), spec),
                "caption": caption,
                "tokens": list(caption.encode()),
                "attrs": {"color": color, "shape": shape, "motion": motion, "start": [y0, x0]},
            }
        )
    return items


def infer_motion(frames: np.ndarray) -> str:
    """Motion word from the displacement of the lit-pixel centroid between first and last frame."""
    frames = np.asarray(frames)

    def centroid(img):
        ys, xs = np.nonzero(img.sum(axis=-1) > 0)
        return np.array([ys.mean(), xs.mean()])

    d = centroid(frames[-1]) - centroid(frames[0])
    if np.allclose(d, 0.0):
        return "static"
    if abs(d[0]) >= abs(d[1]):
        return "down" if d[0] > 0 else "up"
    return "right" if d[1] > 0 else "left"


# ---------------------------------------------------------------------------
# instruction data (stage 3) and decoder pretraining text
# ---------------------------------------------------------------------------

# stage-3 family counts; sampling weights are proportional to them
FAMILY_COUNTS = {"image": 3500, "speech": 2000, "video": 1000, "image_speech": 1000}


def vsqa_answer(question: str, attrs: dict) -> str:
    if question == "color":
        return attrs["color"]
    if question == "shape":
        return attrs["shape"]
    return f"{ROWS[attrs['row']]} {COLS[attrs['col']]}"


def gen_instruction_corpus(spec: SyntheticCorpusSpec, n_items: int, n_images: int, n_videos: int, n_speech: int, stream: str = "instruct") -> list[dict]:
    """Stage-3 items referencing corpus entries by index.

    ``{"family", "image"?, "video"?, "speech"?, "question_frames"?, "instruction", "answer"}``
    """
    rng = _rng(spec.seed, stream)
    fams = list(FAMILY_COUNTS)
    p = np.array([FAMILY_COUNTS[f] for f in fams], dtype=float)
    p /= p.sum()
    items = []
    for _ in range(n_items):
        fam = fams[int(rng.choice(len(fams), p=p))]
        item = {"family": fam}
        if fam == "image":
            item.update(image=int(rng.integers(n_images)), instruction=IMAGE_INSTRUCTIONS[int(rng.integers(5))])
        elif fam == "video":
            item.update(video=int(rng.integers(n_videos)), instruction=VIDEO_INSTRUCTIONS[int(rng.integers(5))])
        elif fam == "speech":
            item.update(speech=int(rng.integers(n_speech)), instruction=SPEECH_INSTRUCTIONS[int(rng.integers(5))])
        else:
            q = VSQA_QUESTIONS[int(rng.integers(len(VSQA_QUESTIONS)))]
            item.update(
                image=int(rng.integers(n_images)),
                question=q,
                question_frames=render_speech(q, spec, rng),
                instruction=VSQA_INSTRUCTION,
            )
        items.append(item)
    return items


def gen_text_corpus(spec: SyntheticCorpusSpec, n_items: int, stream: str = "text") -> list[dict]:
    """Text-only prompts for pretraining the toy decoder.

    Payloads are plain text here: the decoder learns to read a payload back
    out (captions, transcripts) and to answer spoken questions about a caption.
    Items are ``{"payloads": {kind: text}, "instruction", "answer"}``.
    """
    rng = _rng(spec.seed, stream)
    colors, motions = list(COLORS), list(MOTIONS)
    sp = spec.speech
    items = []
    for _ in range(n_items):
        fam = int(rng.integers(5))
        attrs = {
            "color": colors[int(rng.integers(4))],
            "shape": SHAPES[int(rng.integers(4))],
            "row": int(rng.integers(spec.image.grid)),
            "col": int(rng.integers(spec.image.grid)),
        }
        if fam == 0:
            cap = image_caption(**attrs)
            items.append({"payloads": {"image": cap}, "instruction": IMAGE_INSTRUCTIONS[int(rng.integers(5))], "answer": cap})
        elif fam == 1:
            cap = video_caption(attrs["color"], attrs["shape"], motions[int(rng.integers(5))])
            items.append({"payloads": {"video": cap}, "instruction": VIDEO_INSTRUCTIONS[int(rng.integers(5))], "answer": cap})
        elif fam in (2, 3):
            n = int(rng.integers(sp.min_len, sp.max_len + 1))
            text = "".join(ALPHABET[i] for i in rng.integers(0, len(ALPHABET), size=n))
            items.append({"payloads": {"speech": text}, "instruction": SPEECH_INSTRUCTIONS[int(rng.integers(5))], "answer": text})
        else:
            q = VSQA_QUESTIONS[int(rng.integers(3))]
            items.append(
                {
                    "payloads": {"image": image_caption(**attrs), "speech": q},
                    "instruction": VSQA_INSTRUCTION,
                    "answer": vsqa_answer(q, attrs),
                }
            )
    return items


# ---------------------------------------------------------------------------
# corpus container
# ---------------------------------------------------------------------------

CORPUS_MAGIC = b"XLLMCORP"
CORPUS_VERSION = 1


def _split_item(item: dict) -> tuple[dict, dict]:
    meta, arrays = {}, {}
    for k, v in item.items():
        if isinstance(v, np.ndarray):
            arrays[k] = v
        else:
            meta[k] = v
    return meta, arrays


def save_corpus(path, kind: str, items: list[dict], spec: SyntheticCorpusSpec | None = None) -> str:
    """Write one container file; returns the payload SHA-256.

    Layout: magic, u32 version, u32 header length, JSON header (kind, spec,
    checksum, per-item index of metadata and array offsets), then the raw
    little-endian float64 payload.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    index = []
    chunks = []
    offset = 0
    for item in items:
        meta, arrays = _split_item(item)
        entry = {"meta": meta, "arrays": {}}
        for name, arr in arrays.items():
            raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            entry["arrays"][name] = {"offset": offset, "shape": list(arr.shape)}
            chunks.append(raw)
            offset += len(raw)
        index.append(entry)
    payload = b"".join(chunks)
    digest = hashlib.sha256(payload).hexdigest()
    header = {"kind": kind, "spec": spec.to_dict() if spec else None, "sha256": digest, "items": index}
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CORPUS_MAGIC)
        fh.write(struct.pack("<II", CORPUS_VERSION, len(blob)))
        fh.write(blob)
        fh.write(payload)
    return digest


def load_corpus(path) -> tuple[dict, list[dict]]:
    """Read a container, verifying its checksum. Returns ``(header, items)``."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"corpus file {path} not found")
    raw = path.read_bytes()
    if raw[:8] != CORPUS_MAGIC:
        raise DataError(f"{path} is not a corpus container")
    version, n = struct.unpack("<II", raw[8:16])
    if version != CORPUS_VERSION:
        raise DataError(f"unsupported corpus version {version}")
    header = json.loads(raw[16 : 16 + n])
    payload = raw[16 + n :]
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise DataError(f"{path} failed its checksum")
    items = []
    for entry in header["items"]:
        item = dict(entry["meta"])
        for name, info in entry["arrays"].items():
            count = int(np.prod(info["shape"]))
            start = info["offset"]
            item[name] = np.frombuffer(payload[start : start + 8 * count], dtype="<f8").reshape(info["shape"]).copy()
        items.append(item)
    return header, items


def corpus_checksum(path) -> str:
    return load_corpus(path)[0]["sha256"]
