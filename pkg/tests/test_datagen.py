from collections import defaultdict
from dataclasses import replace

import numpy as np
import pytest

from sparsevt.datagen import (MOTIONS, SynthSpec, generate_dataset, load_manifest, parse_source, render_clip,
                              save_manifest, write_ppm)


def centroid(mask):
    ys, xs = np.nonzero(mask)
    return xs.mean(), ys.mean()


def object_mask(frames, record):
    """Pixels matching the noun hue (saturated, bright) in every frame."""
    hi = frames.max(-1)
    lo = frames.min(-1)
    return (hi > 0.95) & (hi - lo > 0.6)


def decode(frames):
    """Hand-written classifier: hue histogram -> noun, centroid/area motion -> verb."""
    obj = object_mask(frames, None)
    px = frames[obj]
    r, g, b = px.mean(0)
    import colorsys

    hue = colorsys.rgb_to_hsv(r, g, b)[0]
    areas = obj.reshape(len(frames), -1).sum(1)
    cs = np.array([centroid(m) for m in obj])
    dx, dy = cs[-1] - cs[0]
    da = areas[-1] - areas[0]
    if abs(da) > 0.3 * areas[0]:
        verb = "grow" if da > 0 else "shrink"
    elif abs(dx) > 3 and abs(dy) > 3:
        verb = "diagonal"
    elif abs(dx) > 3:
        verb = "left-right"
    elif abs(dy) > 3:
        verb = "up-down"
    else:
        verb = "static"
    return hue, verb


def test_single_clip_dataset():
    recs, tax = generate_dataset(SynthSpec(n_videos=1, clips_per_video=1))
    assert len(recs) == 1
    assert recs[0].noun_ids and recs[0].verb_ids
    words = recs[0].text.split()
    assert any(w in tax.noun_classes for w in words) and any(w in tax.verb_classes for w in words)


def test_same_seed_same_bytes(tmp_path):
    spec = SynthSpec(n_videos=5, seed=11)
    save_manifest(generate_dataset(spec)[0], tmp_path / "a.jsonl")
    save_manifest(generate_dataset(spec)[0], tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_intra_video_structure():
    recs, _ = generate_dataset(SynthSpec(n_videos=10, clips_per_video=8, seed=3))
    by_video = defaultdict(list)
    for r in recs:
        by_video[r.video_id].append(r)
    assert len(by_video) == 10
    for clips in by_video.values():
        scenes = {parse_source(c.frame_source)["scene"] for c in clips}
        assert len(scenes) == 1
        actions = {(c.noun_ids, c.verb_ids) for c in clips}
        assert len(actions) == len(clips)


def test_repeated_actions_allowed_when_not_distinct():
    spec = SynthSpec(n_videos=20, clips_per_video=8, n_noun_classes=2, n_verb_classes=2, distinct_within_video=False)
    recs, _ = generate_dataset(spec)
    by_video = defaultdict(set)
    for r in recs:
        by_video[r.video_id].add((r.noun_ids, r.verb_ids))
    assert all(len(a) <= 4 for a in by_video.values())


def test_two_synonyms_per_class():
    _, tax = generate_dataset(SynthSpec(n_videos=1))
    for table in (tax.noun_classes, tax.verb_classes):
        counts = np.bincount(list(table.values()))
        assert (counts == 2).all()


def test_render_deterministic_and_range():
    recs, _ = generate_dataset(SynthSpec(n_videos=2))
    a, b = render_clip(recs[0]), render_clip(recs[0])
    assert np.array_equal(a, b)
    assert a.shape == (4, 32, 32, 3) and a.dtype == np.float32
    assert a.min() >= 0 and a.max() <= 1


def find(recs, motion):
    return next(r for r in recs if MOTIONS[r.verb_ids[0]] == motion)


def test_static_frames_identical():
    recs, _ = generate_dataset(SynthSpec(n_videos=10))
    frames = render_clip(find(recs, "static"))
    assert all(np.array_equal(frames[0], f) for f in frames[1:])


@pytest.mark.parametrize("motion, axis", [("left-right", 0), ("up-down", 1)])
def test_translation_moves_monotonically(motion, axis):
    recs, _ = generate_dataset(SynthSpec(n_videos=20))
    for r in [r for r in recs if MOTIONS[r.verb_ids[0]] == motion][:10]:
        frames = render_clip(r)
        cs = [centroid(m)[axis] for m in object_mask(frames, r)]
        steps = np.diff(cs)
        assert (steps > 0).all() or (steps < 0).all()


def test_scene_difference_is_background():
    recs, _ = generate_dataset(SynthSpec(n_videos=30))
    a = recs[0]
    src = parse_source(a.frame_source)
    other = next(r for r in recs if parse_source(r.frame_source)["scene"] != src["scene"])
    other_scene = parse_source(other.frame_source)["scene"]
    b = replace(a, frame_source=a.frame_source.replace(f"scene={src['scene']};", f"scene={other_scene};"))
    fa, fb = render_clip(a), render_clip(b)
    obj = object_mask(fa, a)
    diff = np.abs(fa - fb).sum(-1)
    assert diff[obj].max() == 0
    assert diff[~obj].mean() > 0.01


def test_pixels_decodable_by_hand_classifier():
    spec = SynthSpec(n_videos=30, seed=4)
    recs, _ = generate_dataset(spec)
    hits_noun = hits_verb = 0
    for r in recs:
        hue, verb = decode(render_clip(r))
        noun = int(round(hue * spec.n_noun_classes)) % spec.n_noun_classes
        hits_noun += noun == r.noun_ids[0]
        hits_verb += verb == MOTIONS[r.verb_ids[0]]
    assert hits_noun / len(recs) > 0.95
    assert hits_verb / len(recs) > 0.9


@pytest.mark.parametrize("source", ["file:x.png", "synth:noun=1;verb", "synth:noun=1", "synth:noun=a;verb=1"])
def test_malformed_source(source):
    recs, _ = generate_dataset(SynthSpec(n_videos=1))
    with pytest.raises(ValueError):
        render_clip(replace(recs[0], frame_source=source))


def test_manifest_roundtrip(tmp_path):
    recs, _ = generate_dataset(SynthSpec(n_videos=3))
    save_manifest(recs, tmp_path / "m.jsonl")
    assert load_manifest(tmp_path / "m.jsonl") == recs


def test_empty_manifest(tmp_path):
    (tmp_path / "m.jsonl").write_text("")
    assert load_manifest(tmp_path / "m.jsonl") == []


def test_corrupt_line_reported(tmp_path):
    recs, _ = generate_dataset(SynthSpec(n_videos=1))
    save_manifest(recs[:4], tmp_path / "m.jsonl")
    lines = (tmp_path / "m.jsonl").read_text().splitlines()
    lines[2] = lines[2][:20]
    (tmp_path / "m.jsonl").write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError, match="line 3"):
        load_manifest(tmp_path / "m.jsonl")


def test_ppm_dump(tmp_path):
    recs, _ = generate_dataset(SynthSpec(n_videos=1))
    paths = write_ppm(render_clip(recs[0]), tmp_path / "clip")
    assert len(paths) == 4
    assert paths[0].read_bytes().startswith(b"P6 32 32 255\n")
    assert len(paths[0].read_bytes()) == len(b"P6 32 32 255\n") + 32 * 32 * 3


def test_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(n_videos=0)
    with pytest.raises(ValueError):
        SynthSpec(frame_size=36).check_patch(8)
