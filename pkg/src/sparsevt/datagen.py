"""Procedural clip-text data whose pixels encode (noun, verb, scene).

Nouns are filled shapes with a hue per class, verbs are motion patterns of
that shape across frames, and each video has one background style shared by
all of its clips. Frames are rendered on demand from the ``frame_source``
string stored in each record.
"""

from __future__ import annotations

import colorsys
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sampling import ClipRecord, Taxonomy

NOUN_WORDS = [("cup", "mug"), ("ball", "sphere"), ("book", "notebook"), ("knife", "blade"),
              ("phone", "mobile"), ("plate", "dish"), ("bottle", "flask"), ("box", "crate")]
VERB_WORDS = [("hold", "keep"), ("slide", "push"), ("lift", "raise"), ("toss", "throw"),
              ("pull", "draw"), ("drop", "lower")]
SHAPES = ("square", "circle", "triangle", "cross")
MOTIONS = ("static", "left-right", "up-down", "diagonal", "grow", "shrink")
TEMPLATES = ("{verb} the {noun}", "c {verb} a {noun}", "person {verb} {noun}")
TEXTURES = ("plain", "hstripes", "vstripes", "checker")

SOURCE_PREFIX = "synth:"
STEP = 2.5  # pixels per frame for translating verbs
GROWTH = 1.2  # radius change per frame for grow/shrink


@dataclass(frozen=True)
class SynthSpec:
    n_videos: int = 60
    clips_per_video: int = 8
    n_noun_classes: int = 8
    n_verb_classes: int = 6
    n_scene_styles: int = 12
    frame_size: int = 32
    frames_per_clip: int = 4
    seed: int = 0
    nouns_per_scene: int = 4
    scene_noun_prob: float = 0.8
    distinct_within_video: bool = True

    def __post_init__(self):
        for name in ("n_videos", "clips_per_video", "n_noun_classes", "n_verb_classes",
                     "n_scene_styles", "frame_size", "frames_per_clip", "nouns_per_scene"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_noun_classes > len(NOUN_WORDS) or self.n_verb_classes > len(VERB_WORDS):
            raise ValueError(f"at most {len(NOUN_WORDS)} noun and {len(VERB_WORDS)} verb classes")
        if self.frame_size < 16:
            raise ValueError("frame_size must be >= 16")

    def check_patch(self, patch_size: int) -> None:
        if self.frame_size % patch_size:
            raise ValueError(f"frame_size {self.frame_size} not divisible by patch {patch_size}")


def build_taxonomy(spec: SynthSpec) -> Taxonomy:
    nouns = {w: c for c in range(spec.n_noun_classes) for w in NOUN_WORDS[c]}
    verbs = {w: c for c in range(spec.n_verb_classes) for w in VERB_WORDS[c]}
    return Taxonomy(nouns, verbs)


def noun_color(noun: int, n_nouns: int) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb(noun / n_nouns, 1.0, 1.0))


def scene_style(seed: int, scene: int) -> dict:
    rng = np.random.default_rng([seed, 7919, scene])
    base = np.array(colorsys.hsv_to_rgb(rng.uniform(), rng.uniform(0.2, 0.5), rng.uniform(0.15, 0.45)))
    return {"base": base, "texture": TEXTURES[scene % len(TEXTURES)],
            "period": int(rng.integers(3, 7)), "amp": float(rng.uniform(0.05, 0.12))}


def _scene_nouns(spec: SynthSpec, scene: int) -> list[int]:
    rng = np.random.default_rng([spec.seed, 104729, scene])
    k = min(spec.nouns_per_scene, spec.n_noun_classes)
    return sorted(rng.choice(spec.n_noun_classes, size=k, replace=False).tolist())


def _draw_action(rng, spec: SynthSpec, scene_nouns, used):
    combos = spec.n_noun_classes * spec.n_verb_classes
    for _ in range(100):
        pool = scene_nouns if rng.uniform() < spec.scene_noun_prob else range(spec.n_noun_classes)
        pair = (int(rng.choice(list(pool))), int(rng.integers(spec.n_verb_classes)))
        if not spec.distinct_within_video or pair not in used or len(used) >= combos:
            return pair
    free = [(n, v) for n in range(spec.n_noun_classes) for v in range(spec.n_verb_classes)
            if (n, v) not in used]
    return free[int(rng.integers(len(free)))]


def _placement(rng, verb: int, size: int, frames: int) -> dict:
    motion = MOTIONS[verb]
    r = float(rng.uniform(3.5, 5.0))
    margin = r + 1.0 + (GROWTH * (frames - 1) if motion in ("grow", "shrink") else 0.0)
    lo, hi = margin, size - 1 - margin
    dx = STEP * rng.choice([-1, 1]) if motion in ("left-right", "diagonal") else 0.0
    dy = STEP * rng.choice([-1, 1]) if motion in ("up-down", "diagonal") else 0.0

    def start(d):
        # keep every frame's centre inside [lo, hi]
        a, b = lo - min(0.0, d * (frames - 1)), hi - max(0.0, d * (frames - 1))
        return float(rng.uniform(a, b)) if a < b else (lo + hi - d * (frames - 1)) / 2

    return {"cx": round(start(dx), 3), "cy": round(start(dy), 3), "r": round(r, 3),
            "dx": float(dx), "dy": float(dy)}


def make_source(**fields) -> str:
    return SOURCE_PREFIX + ";".join(f"{k}={v}" for k, v in fields.items())


def parse_source(source: str) -> dict:
    if not source.startswith(SOURCE_PREFIX):
        raise ValueError(f"not a generator spec: {source!r}")
    out = {}
    try:
        for item in source[len(SOURCE_PREFIX):].split(";"):
            key, val = item.split("=")
            out[key] = float(val)
    except ValueError as err:
        raise ValueError(f"malformed generator spec {source!r}") from err
    required = {"noun", "verb", "scene", "nouns", "seed", "size", "frames", "cx", "cy", "r", "dx", "dy"}
    missing = required - out.keys()
    if missing:
        raise ValueError(f"generator spec missing {sorted(missing)}")
    for key in ("noun", "verb", "scene", "nouns", "seed", "size", "frames"):
        out[key] = int(out[key])
    if not 0 <= out["verb"] < len(MOTIONS) or not 0 <= out["noun"] < out["nouns"]:
        raise ValueError(f"class id out of range in {source!r}")
    return out


def generate_dataset(spec: SynthSpec) -> tuple[list[ClipRecord], Taxonomy]:
    taxonomy = build_taxonomy(spec)
    records = []
    for v in range(spec.n_videos):
        rng = np.random.default_rng([spec.seed, v])
        scene = int(rng.integers(spec.n_scene_styles))
        scene_nouns = _scene_nouns(spec, scene)
        used, t = set(), 0.0
        for c in range(spec.clips_per_video):
            noun, verb = _draw_action(rng, spec, scene_nouns, used)
            used.add((noun, verb))
            place = _placement(rng, verb, spec.frame_size, spec.frames_per_clip)
            text = TEMPLATES[int(rng.integers(len(TEMPLATES)))].format(
                verb=VERB_WORDS[verb][int(rng.integers(2))], noun=NOUN_WORDS[noun][int(rng.integers(2))])
            source = make_source(noun=noun, verb=verb, scene=scene, nouns=spec.n_noun_classes,
                                 seed=spec.seed, size=spec.frame_size, frames=spec.frames_per_clip, **place)
            start = round(t, 3)
            records.append(ClipRecord(f"v{v:04d}_c{c:02d}", f"v{v:04d}", start, round(start + 1.0, 3),
                                      text, (noun,), (verb,), source))
            # consecutive clips sometimes overlap in time
            t = start + float(rng.uniform(0.7, 1.7))
    return records, taxonomy


def _background(style: dict, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    p = style["period"]
    tex = {"plain": np.zeros((size, size)),
           "hstripes": (yy // p) % 2,
           "vstripes": (xx // p) % 2,
           "checker": ((yy // p) + (xx // p)) % 2}[style["texture"]]
    img = style["base"][None, None, :] + style["amp"] * (tex[..., None] * 2 - 1)
    return np.clip(img, 0.0, 1.0)


def shape_mask(shape: str, size: int, cx: float, cy: float, r: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    dx, dy = xx - cx, yy - cy
    if shape == "square":
        return (np.abs(dx) <= r) & (np.abs(dy) <= r)
    if shape == "circle":
        return dx ** 2 + dy ** 2 <= r ** 2
    if shape == "triangle":
        return (dy >= -r) & (dy <= r) & (np.abs(dx) <= (dy + r) / 2)
    if shape == "cross":
        w = r / 2.5
        return ((np.abs(dx) <= r) & (np.abs(dy) <= w)) | ((np.abs(dy) <= r) & (np.abs(dx) <= w))
    raise ValueError(f"unknown shape {shape!r}")


def trajectory(src: dict) -> list[tuple[float, float, float]]:
    """Per-frame (cx, cy, radius) of the object."""
    motion = MOTIONS[src["verb"]]
    out = []
    for f in range(src["frames"]):
        r = src["r"]
        if motion == "grow":
            r = r + GROWTH * f
        elif motion == "shrink":
            r = r + GROWTH * (src["frames"] - 1 - f)
        out.append((src["cx"] + src["dx"] * f, src["cy"] + src["dy"] * f, r))
    return out


def render_clip(record: ClipRecord) -> np.ndarray:
    """F x H x W x 3 float32 array in [0, 1]."""
    src = parse_source(record.frame_source)
    size = src["size"]
    bg = _background(scene_style(src["seed"], src["scene"]), size)
    color = noun_color(src["noun"], src["nouns"])
    shape = SHAPES[src["noun"] % len(SHAPES)]
    frames = []
    for cx, cy, r in trajectory(src):
        img = bg.copy()
        img[shape_mask(shape, size, cx, cy, r)] = color
        frames.append(img)
    return np.stack(frames).astype(np.float32)


def save_manifest(records, path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")


def load_manifest(path) -> list[ClipRecord]:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                records.append(ClipRecord(d["clip_id"], d["video_id"], float(d["t_start"]),
                                          float(d["t_end"]), d["text"], tuple(d["noun_ids"]),
                                          tuple(d["verb_ids"]), d["frame_source"]))
            except (ValueError, KeyError, TypeError) as err:
                raise ValueError(f"{path}: line {lineno}: {err}") from err
    return records


def write_ppm(frames: np.ndarray, path_prefix) -> list[Path]:
    """Dump each frame as a binary PPM for inspection."""
    paths = []
    for i, f in enumerate(frames):
        p = Path(f"{path_prefix}_{i}.ppm")
        data = (np.clip(f, 0, 1) * 255).round().astype(np.uint8)
        p.write_bytes(f"P6 {f.shape[1]} {f.shape[0]} 255\n".encode() + data.tobytes())
        paths.append(p)
    return paths
