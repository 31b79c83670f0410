from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from safenav.grounding import (DEFAULT_CONFIDENCE, EMBED_DIM, LandmarkClause,
                               ParseError, embed_crop, embed_text,
                               format_clause, match_landmark,
                               parse_instruction, propose_regions, similarity)
from safenav.perception import BBox, DetectorNoise, detect_objects, render_frame
from safenav.world import CameraIntrinsics, Landmark, Pose, SafetyParams, Scenario, vec3

DATA = Path(__file__).parent / "data"
INTR = CameraIntrinsics(f_px=64.0, c_x=64.0, c_y=48.0, width=128, height=96,
                        max_depth=30.0)
POSE = Pose(vec3(0, 0, -1.5), 0.0)


def scene(landmarks):
    return Scenario(
        name="t", bounds_min=vec3(-50, -50, -50), bounds_max=vec3(50, 50, 0),
        landmarks=tuple(landmarks), obstacles=(),
        drone_start=POSE, intrinsics=INTR, safety=SafetyParams(),
        drone_radius=0.3)


def lm(oid, pos, label, attrs=(), extent=(0.4, 0.6, 0.6)):
    return Landmark(id=oid, class_label=label, attribute_tokens=tuple(attrs),
                    position=np.asarray(pos, float),
                    extent=np.asarray(extent, float))


# --- parser ----------------------------------------------------------------

def test_simple_side_clause():
    cls = parse_instruction("Go to the tree on the right.")
    assert len(cls) == 1
    assert cls[0].tokens == ("tree",)
    assert cls[0].side_modifier == "right"
    assert cls[0].action == "goto"


def test_city_cmd1_clause_sequence():
    cls = parse_instruction(
        "Go past the first traffic light and go straight past the blue car. "
        "After crossing a blue mailbox, turn right at the stop sign, and land "
        "in front of the gas station.")
    assert [c.tokens for c in cls] == [("traffic", "light"), ("blue", "car"),
                                       ("blue", "mailbox"), ("stop", "sign"),
                                       ("gas", "station")]
    assert cls[0].ordinal == 1
    assert cls[3].side_modifier == "right"
    assert cls[4].action == "land" and cls[4].relation == "before"


def test_empty_instruction_rejected():
    with pytest.raises(ParseError):
        parse_instruction("")
    with pytest.raises(ParseError):
        parse_instruction("   ")


def test_unparseable_fragment_reported():
    with pytest.raises(ParseError, match="wibble"):
        parse_instruction("wibble wobble nonsense opening.")


def test_order_indices_strictly_increasing():
    cls = parse_instruction(
        "Fly between the two houses, look for a tree, and fly towards it.")
    assert [c.order_index for c in cls] == list(range(len(cls)))


def test_parser_corpus_matches_golden():
    instructions = [l.strip() for l in
                    (DATA / "instructions.txt").read_text().splitlines() if l.strip()]
    lines = []
    for text in instructions:
        lines.append("# " + text)
        for cl in parse_instruction(text):
            lines.append(format_clause(cl))
        lines.append("")
    assert "\n".join(lines) == (DATA / "parser_golden.txt").read_text()


def test_conditional_guard_captured():
    cls = parse_instruction("If a white truck is visible, land in front of it.")
    assert len(cls) == 1
    assert cls[0].conditional == ("white", "truck")
    assert cls[0].tokens == ("white", "truck")
    assert cls[0].action == "land"


# --- embeddings ------------------------------------------------------------

def test_embed_text_deterministic_unit():
    a = embed_text(["tree"])
    b = embed_text(["tree"])
    assert np.array_equal(a, b)
    assert abs(np.linalg.norm(a) - 1.0) < 1e-9


def test_embed_text_near_orthogonal_for_distinct_tokens():
    rng = np.random.default_rng(0)
    words = [f"w{k}" for k in range(2000)]
    total = 0.0
    n = 1000
    for _ in range(n):
        i, j = rng.choice(len(words), size=2, replace=False)
        total += abs(similarity(embed_text([words[i]]), embed_text([words[j]])))
    assert total / n <= 0.15


def test_embed_crop_matches_text_when_noise_free():
    assert similarity(embed_crop(("tree",)), embed_text(("tree",))) == pytest.approx(1.0)


def test_shared_token_scores_higher():
    s_shared = similarity(embed_crop(("blue", "car")), embed_text(("car",)))
    s_unrelated = similarity(embed_crop(("tree",)), embed_text(("car",)))
    assert s_shared > s_unrelated
    assert s_shared > 0.5


def test_noisy_self_cosine_calibration():
    rng = np.random.default_rng(1)
    vals = [similarity(embed_crop(("tree",), noise_sigma=0.3, rng=rng),
                       embed_text(("tree",))) for _ in range(1000)]
    assert 0.85 <= float(np.mean(vals)) <= 0.99


def test_similarity_bounds_and_quotient():
    v = embed_text(["house"])
    assert similarity(v, v) == pytest.approx(1.0)
    assert similarity(v, -v) == pytest.approx(-1.0)
    # equals the full cosine quotient for scaled (non-normalized) inputs
    rng = np.random.default_rng(2)
    for _ in range(50):
        a = embed_text([f"a{rng.integers(100)}"])
        b = embed_text([f"b{rng.integers(100)}"])
        ka, kb = rng.uniform(0.1, 10, size=2)
        full = (ka * a) @ (kb * b) / (np.linalg.norm(ka * a) * np.linalg.norm(kb * b))
        assert abs(similarity(a, b) - full) < 1e-12


# --- matching --------------------------------------------------------------

def make_frame_and_dets(landmarks):
    sc = scene(landmarks)
    frame = render_frame(sc, {}, POSE, INTR, 0.0)
    dets = detect_objects(frame, sc.object_labels())
    return sc, frame, dets


def clause(tokens, **kw):
    return LandmarkClause(tokens=tuple(tokens), **kw)


def test_match_exact_landmark():
    sc, frame, dets = make_frame_and_dets(
        [lm(1, [6, -2, -1.5], "tree"), lm(2, [6, 2, -1.5], "house")])
    m = match_landmark(clause(["tree"]), dets, frame, sc.object_tokens())
    assert m is not None and m.bbox.object_id == 1
    assert m.score == pytest.approx(1.0)
    assert not m.via_fallback


def test_unknown_landmark_unresolved():
    sc, frame, dets = make_frame_and_dets(
        [lm(1, [6, -2, -1.5], "tree"), lm(2, [6, 2, -1.5], "house")])
    assert match_landmark(clause(["zebra"]), dets, frame, sc.object_tokens()) is None


def test_side_modifier_disambiguates():
    sc, frame, dets = make_frame_and_dets(
        [lm(1, [8, -4, -1.5], "house", attrs=("red",)),
         lm(2, [8, 4, -1.5], "house", attrs=("green",))])
    left = match_landmark(clause(["house"], side_modifier="left"),
                          dets, frame, sc.object_tokens())
    right = match_landmark(clause(["house"], side_modifier="right"),
                           dets, frame, sc.object_tokens())
    assert left.bbox.object_id == 1   # -y is the left side
    assert right.bbox.object_id == 2


def test_noisy_matching_accuracy():
    sc, frame, dets = make_frame_and_dets(
        [lm(1, [7, -2, -1.5], "car", attrs=("blue",)),
         lm(2, [7, 2, -1.5], "car", attrs=("red",))])
    rng = np.random.default_rng(42)
    hits = 0
    for _ in range(500):
        m = match_landmark(clause(["blue", "car"]), dets, frame,
                           sc.object_tokens(), noise_sigma=0.2, rng=rng)
        hits += int(m is not None and m.bbox.object_id == 1)
    assert hits / 500 >= 0.9


def test_fallback_recovers_dropped_detection():
    sc = scene([lm(1, [6, 0, -1.5], "tree", extent=(0.4, 1.0, 1.0))])
    frame = render_frame(sc, {}, POSE, INTR, 0.0)
    rng = np.random.default_rng(3)
    recovered = 0
    for _ in range(200):
        dets = detect_objects(frame, sc.object_labels(),
                              DetectorNoise(p_drop=1.0), rng)  # always dropped
        assert dets == []
        m = match_landmark(clause(["tree"]), dets, frame, sc.object_tokens())
        if m is not None and m.via_fallback and m.bbox.object_id == 1:
            recovered += 1
    assert recovered / 200 >= 0.95


def test_propose_regions_grid():
    sc = scene([lm(1, [6, 0, -1.5], "tree")])
    frame = render_frame(sc, {}, POSE, INTR, 0.0)
    props = propose_regions(frame, sc.object_labels())
    assert 1 <= len(props) <= 12
    assert any(p.object_id == 1 for p in props)
    empty = render_frame(scene([]), {}, POSE, INTR, 0.0)
    assert propose_regions(empty, {}) == []


def test_between_clause_returns_partner():
    sc, frame, dets = make_frame_and_dets(
        [lm(1, [8, -4, -1.5], "house"), lm(2, [8, 4, -1.5], "house")])
    m = match_landmark(clause(["house"], relation="between"), dets, frame,
                       sc.object_tokens())
    assert m is not None and m.partner is not None
    assert {m.bbox.object_id, m.partner.object_id} == {1, 2}


def test_ordinal_picks_nearest_first():
    sc, frame, dets = make_frame_and_dets(
        [lm(1, [12, -1, -1.5], "cone"), lm(2, [6, 1, -1.5], "cone")])
    first = match_landmark(clause(["cone"], ordinal=1), dets, frame,
                           sc.object_tokens())
    second = match_landmark(clause(["cone"], ordinal=2), dets, frame,
                            sc.object_tokens())
    assert first.bbox.object_id == 2   # nearer
    assert second.bbox.object_id == 1


def test_scale_invariance_of_argmax():
    # multiplying an embedding by a positive scalar does not change decisions
    sc, frame, dets = make_frame_and_dets(
        [lm(1, [6, -2, -1.5], "tree"), lm(2, [6, 2, -1.5], "house")])
    z = embed_text(("tree",))
    for k in (0.1, 3.0, 42.0):
        zz = k * z
        full = lambda a, b: float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
        s1 = full(zz, embed_crop(("tree",)))
        s2 = full(zz, embed_crop(("house",)))
        assert (s1 > s2) == (similarity(z, embed_crop(("tree",))) >
                             similarity(z, embed_crop(("house",))))


def test_matching_determinism():
    sc, frame, dets = make_frame_and_dets(
        [lm(1, [6, -2, -1.5], "tree"), lm(2, [6, 2, -1.5], "house")])
    m1 = match_landmark(clause(["tree"]), dets, frame, sc.object_tokens())
    m2 = match_landmark(clause(["tree"]), dets, frame, sc.object_tokens())
    assert m1 == m2
