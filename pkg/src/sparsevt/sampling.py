"""Action-aware positives, scene-aware hard negatives and augmented batches."""

from __future__ import annotations

import logging
import zlib
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Taxonomy:
    noun_classes: dict[str, int]
    verb_classes: dict[str, int]

    def __post_init__(self):
        for kind in ("noun_classes", "verb_classes"):
            ids = set(getattr(self, kind).values())
            if ids and ids != set(range(len(ids))):
                raise ValueError(f"{kind} ids must be dense from 0")

    def save(self, path) -> None:
        lines = [f"noun {w} {c}" for w, c in sorted(self.noun_classes.items(), key=lambda x: (x[1], x[0]))]
        lines += [f"verb {w} {c}" for w, c in sorted(self.verb_classes.items(), key=lambda x: (x[1], x[0]))]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "Taxonomy":
        nouns, verbs = {}, {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 3 or parts[0] not in ("noun", "verb"):
                raise ValueError(f"{path}:{lineno}: expected '<noun|verb> <surface> <class_id>'")
            table = nouns if parts[0] == "noun" else verbs
            if parts[1] in table:
                raise ValueError(f"{path}:{lineno}: duplicate surface word {parts[1]!r}")
            table[parts[1]] = int(parts[2])
        return cls(nouns, verbs)


@dataclass(frozen=True)
class ClipRecord:
    clip_id: str
    video_id: str
    t_start: float
    t_end: float
    text: str
    noun_ids: tuple[int, ...]
    verb_ids: tuple[int, ...]
    frame_source: str

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ValueError(f"{self.clip_id}: t_start must precede t_end")
        object.__setattr__(self, "noun_ids", tuple(sorted(set(self.noun_ids))))
        object.__setattr__(self, "verb_ids", tuple(sorted(set(self.verb_ids))))

    def to_json(self) -> dict:
        d = asdict(self)
        d["noun_ids"], d["verb_ids"] = list(self.noun_ids), list(self.verb_ids)
        return d

    def overlaps(self, other: "ClipRecord") -> bool:
        return self.t_start < other.t_end and other.t_start < self.t_end


class Canonical(NamedTuple):
    noun_ids: frozenset
    verb_ids: frozenset
    unknown: int


def canonicalize(words, taxonomy: Taxonomy) -> Canonical:
    """Map surface words to class ids; words in neither table are counted and dropped."""
    nouns, verbs, unknown = set(), set(), 0
    for w in words:
        hit = False
        if w in taxonomy.noun_classes:
            nouns.add(taxonomy.noun_classes[w])
            hit = True
        if w in taxonomy.verb_classes:
            verbs.add(taxonomy.verb_classes[w])
            hit = True
        unknown += not hit
    if unknown:
        log.warning("dropped %d unknown annotation word(s)", unknown)
    return Canonical(frozenset(nouns), frozenset(verbs), unknown)


def positive_mask(records) -> np.ndarray:
    """Boolean [n, n]: shared noun class and shared verb class, diagonal forced."""
    n = len(records)
    nouns = _incidence([r.noun_ids for r in records])
    verbs = _incidence([r.verb_ids for r in records])
    m = ((nouns @ nouns.T) > 0) & ((verbs @ verbs.T) > 0)
    m[np.arange(n), np.arange(n)] = True
    return m


def _incidence(id_sets) -> np.ndarray:
    width = 1 + max((max(s) for s in id_sets if s), default=0)
    out = np.zeros((len(id_sets), width), dtype=np.int64)
    for i, s in enumerate(id_sets):
        out[i, list(s)] = 1
    return out


def positive_sets(records) -> dict[int, frozenset[int]]:
    m = positive_mask(records)
    return {i: frozenset(np.flatnonzero(row).tolist()) for i, row in enumerate(m)}


class DatasetIndex:
    """Clips grouped by video and sorted by start time; immutable after construction."""

    def __init__(self, records):
        groups = defaultdict(list)
        for r in records:
            groups[r.video_id].append(r)
        self.by_video = {v: tuple(sorted(rs, key=lambda r: (r.t_start, r.clip_id)))
                         for v, rs in groups.items()}
        self.by_id = {r.clip_id: r for r in records}

    def __len__(self):
        return len(self.by_id)


def _gap(a: ClipRecord, b: ClipRecord) -> float:
    return max(b.t_start - a.t_end, a.t_start - b.t_end)


def _record_rng(seed: int, record: ClipRecord) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(record.clip_id.encode())])


def sample_hard_negative(record: ClipRecord, index: DatasetIndex, seed: int,
                         adjacency_k: int = 2) -> ClipRecord | None:
    """Same-video clip with a disjoint interval, drawn among the ``adjacency_k`` nearest in time."""
    cands = [c for c in index.by_video.get(record.video_id, ())
             if c.clip_id != record.clip_id and not c.overlaps(record)]
    if not cands:
        return None
    cands.sort(key=lambda c: (_gap(record, c), c.t_start, c.clip_id))
    near = cands[:max(1, adjacency_k)]
    return near[int(_record_rng(seed, record).integers(len(near)))]


def is_hard_negative(anchor: ClipRecord, neg: ClipRecord) -> bool:
    return (anchor.video_id == neg.video_id and anchor.clip_id != neg.clip_id
            and not anchor.overlaps(neg))


@dataclass
class AugmentedBatch:
    originals: list[ClipRecord]
    negatives: list[ClipRecord | None]
    hard_pairs: dict[int, int] = field(default_factory=dict)
    positives: np.ndarray | None = None

    @property
    def records(self) -> list[ClipRecord]:
        return self.originals + [n for n in self.negatives if n is not None]

    def positive_sets(self) -> dict[int, frozenset[int]]:
        return {i: frozenset(np.flatnonzero(row).tolist()) for i, row in enumerate(self.positives)}


def build_augmented_batch(batch, index: DatasetIndex, seed: int, adjacency_k: int = 2) -> AugmentedBatch:
    batch = list(batch)
    if not batch:
        raise ValueError("empty batch")
    negatives = [sample_hard_negative(r, index, seed, adjacency_k) for r in batch]
    hard_pairs, row = {}, len(batch)
    for j, neg in enumerate(negatives):
        if neg is not None:
            hard_pairs[j] = row
            row += 1
    out = AugmentedBatch(batch, negatives, hard_pairs)
    out.positives = positive_mask(out.records)
    return out
