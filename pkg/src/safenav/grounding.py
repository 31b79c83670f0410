"""Instruction parsing and landmark grounding.

The parser is a small pattern grammar over connective phrases ("go past",
"turn right at", "land in front of", "fly between", "if ... is visible"),
producing ordered landmark clauses. The embedding provider is deterministic
and identity-based: every token hashes to a pseudo-random unit vector and a
phrase embeds to the normalized token-vector sum, so identical phrases always
land on the same point of the sphere and unrelated phrases are near
orthogonal at D = 64. Crops embed through the rendered object's own identity
tokens (plus optional Gaussian perturbation), which isolates the matching /
threshold / fallback logic from any particular neural encoder; swap in a real
encoder by replacing embed_text/embed_crop.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

import numpy as np

from .perception import BBox, Frame, crop_depth_median
from .world import stable_seed

EMBED_DIM = 64
DEFAULT_CONFIDENCE = 0.2

_ARTICLES = {"the", "a", "an", "two", "first", "second", "third", "fourth"}
_STOPWORDS = {
    "go", "fly", "head", "turn", "land", "find", "look", "for", "pass",
    "enter", "follow", "ascend", "to", "towards", "toward", "on", "in",
    "front", "of", "at", "past", "before", "between", "through", "inside",
    "near", "and", "then", "after", "if", "is", "visible", "straight",
    "left", "right", "it", "with", "floor",
}
_ORDINALS = {"first": 1, "second": 2, "third": 3, "fourth": 4}
_PLURAL_KEEP = {"gas", "stairs", "bus", "grass"}


class ParseError(ValueError):
    """Instruction text the grammar cannot consume; carries the leftover."""


@dataclass(frozen=True)
class LandmarkClause:
    tokens: tuple[str, ...]
    action: str = "goto"                 # goto | land | ascend | pass
    side_modifier: str = "none"          # left | right | none
    relation: str = "none"               # past | before | between | at | none
    conditional: tuple[str, ...] = ()    # visibility-guard tokens, empty = none
    order_index: int = 0
    ordinal: int | None = None           # "first" = 1, "second" = 2, ...

    def __post_init__(self):
        if not self.tokens:
            raise ValueError("clause tokens non-empty")


@dataclass(frozen=True)
class Match:
    clause_index: int
    bbox: BBox
    score: float
    via_fallback: bool = False
    partner: BBox | None = None          # second anchor for 'between' clauses


def _depluralize(tok: str) -> str:
    if tok in _PLURAL_KEEP or len(tok) < 5 or not tok.endswith("s"):
        return tok
    return tok[:-1]


def _landmark_tokens(words: list[str]) -> tuple[tuple[str, ...], int | None]:
    ordinal = None
    toks = []
    for w in words:
        if w in _ORDINALS and ordinal is None:
            ordinal = _ORDINALS[w]
            continue
        if w in _ARTICLES or w in _STOPWORDS:
            continue
        toks.append(_depluralize(w))
    return tuple(toks), ordinal


_VERB_PATTERNS = [
    # (regex, action, relation) applied to a normalized fragment
    (re.compile(r"^(?:go|fly|head)?\s*(?:straight\s+)?past\s+(?P<lm>.+)$"), "pass", "past"),
    (re.compile(r"^pass\s+between\s+(?P<lm>.+)$"), "pass", "between"),
    (re.compile(r"^(?:fly|go)\s+between\s+(?P<lm>.+)$"), "pass", "between"),
    (re.compile(r"^(?:fly|go)\s+through\s+(?P<lm>.+)$"), "pass", "at"),
    (re.compile(r"^(?:go|fly|head)\s+(?:to|towards|toward)\s+(?P<lm>.+)$"), "goto", "none"),
    (re.compile(r"^(?:find|look\s+for)\s+(?P<lm>.+)$"), "goto", "none"),
    (re.compile(r"^follow\s+(?P<lm>.+)$"), "pass", "none"),
    (re.compile(r"^enter\s+(?P<lm>.+)$"), "goto", "at"),
    (re.compile(r"^land\s+(?:in\s+front\s+of|before)\s+(?P<lm>.+)$"), "land", "before"),
    (re.compile(r"^land\s+(?:inside|at|on|near|in)\s+(?P<lm>.+)$"), "land", "at"),
    (re.compile(r"^pass\s+(?P<lm>.+)$"), "pass", "past"),
]
_TURN_AT = re.compile(r"^turn\s+(?P<side>left|right)\s+(?P<rel>at|before)\s+(?P<lm>.+)$")
_TURN_BARE = re.compile(r"^turn\s+(?P<side>left|right)$")
_COND_VISIBLE = re.compile(r"^if\s+(?P<lm>.+?)\s+is\s+visible$")
_COND_SIDE = re.compile(r"^if\s+(?P<lm>.+?)\s+is\s+on\s+the\s+(?P<side>left|right)$")
_SIDE_SUFFIX = re.compile(r"^(?P<lm>.+?)\s+on\s+the\s+(?P<side>left|right)$")
_PREFIX_AT = re.compile(r"^at\s+(?P<lm>.+)$")
_PREFIX_BEFORE = re.compile(r"^before\s+(?P<lm>.+)$")
_PREFIX_AFTER = re.compile(r"^after\s+(?:crossing\s+)?(?P<lm>.+)$")
_BARE_ACTION = re.compile(r"^(?P<act>land|ascend)(?:\s+.*)?$")


@dataclass
class _ParserState:
    clauses: list[LandmarkClause] = field(default_factory=list)
    last_tokens: tuple[str, ...] = ()
    pending_side: str = "none"
    pending_cond: tuple[str, ...] = ()
    pending_cond_side: str = "none"
    last_action: str = "goto"
    last_relation: str = "none"
    sentence: int = 0
    last_clause_sentence: int = -1


def _emit(state: _ParserState, tokens, action, side, relation, ordinal,
          conditional=()):
    state.clauses.append(LandmarkClause(
        tokens=tokens, action=action,
        side_modifier=side, relation=relation,
        conditional=tuple(conditional), order_index=len(state.clauses),
        ordinal=ordinal))
    state.last_tokens = tokens
    state.last_action = action
    state.last_relation = relation
    state.last_clause_sentence = state.sentence
    state.pending_side = "none"
    state.pending_cond = ()
    state.pending_cond_side = "none"


def _merge_action(state: _ParserState, action: str) -> bool:
    if not state.clauses:
        return False
    last = state.clauses[-1]
    state.clauses[-1] = replace(last, action=action)
    state.last_action = action
    return True


def _consume_fragment(state: _ParserState, frag: str) -> None:
    frag = re.sub(r"^then\s+", "", frag.strip())
    if not frag:
        return
    m = _COND_VISIBLE.match(frag)
    if m:
        toks, _ = _landmark_tokens(m.group("lm").split())
        state.pending_cond = toks
        state.last_tokens = toks
        return
    m = _COND_SIDE.match(frag)
    if m:
        toks, _ = _landmark_tokens(m.group("lm").split())
        state.pending_cond = toks
        state.pending_cond_side = m.group("side")
        state.last_tokens = toks
        return
    m = _TURN_BARE.match(frag)
    if m:
        side = m.group("side")
        # "Before the white truck, turn left": the turn belongs to the clause
        # just emitted in this sentence; a sentence-leading turn applies ahead.
        if (state.clauses and state.last_clause_sentence == state.sentence
                and state.clauses[-1].side_modifier == "none"):
            state.clauses[-1] = replace(state.clauses[-1], side_modifier=side)
        else:
            state.pending_side = side
        return
    m = _TURN_AT.match(frag)
    if m:
        toks, ordinal = _landmark_tokens(m.group("lm").split())
        if not toks:
            raise ParseError(f"no landmark in: {frag!r}")
        _emit(state, toks, "goto", m.group("side"), m.group("rel"), ordinal)
        return
    m = _BARE_ACTION.match(frag)
    if m:
        act = m.group("act")
        rest = frag[len(act):].strip()
        # "land in front of X" style fragments carry their own landmark
        for pat, action, relation in _VERB_PATTERNS:
            vm = pat.match(frag)
            if vm and action == act:
                return _landmark_fragment(state, vm.group("lm"), action, relation)
        toks, _ = _landmark_tokens(rest.split())
        if toks:
            return _landmark_fragment(state, rest, act, "at")
        if not _merge_action(state, act):
            raise ParseError(f"{act!r} with no landmark in scope: {frag!r}")
        return
    for pat, action, relation in _VERB_PATTERNS:
        m = pat.match(frag)
        if m:
            return _landmark_fragment(state, m.group("lm"), action, relation)
    m = _PREFIX_AFTER.match(frag)
    if m:
        return _landmark_fragment(state, m.group("lm"), "pass", "past")
    m = _PREFIX_BEFORE.match(frag)
    if m:
        return _landmark_fragment(state, m.group("lm"), "goto", "before")
    m = _PREFIX_AT.match(frag)
    if m:
        return _landmark_fragment(state, m.group("lm"), "goto", "at")
    # bare continuation like "the stop sign": inherit the previous verb
    toks, ordinal = _landmark_tokens(frag.split())
    if toks and state.clauses:
        _emit(state, toks, state.last_action, "none", state.last_relation, ordinal)
        return
    raise ParseError(f"cannot parse instruction fragment: {frag!r}")


def _landmark_fragment(state: _ParserState, lm_text: str, action: str,
                       relation: str) -> None:
    # "the alley before the blue mailbox": the trailing landmark is a
    # locative anchor that follows in instruction order
    if relation != "before" and " before " in lm_text:
        lm_text, anchor = lm_text.split(" before ", 1)
        _landmark_fragment(state, lm_text, action, relation)
        _landmark_fragment(state, anchor, "pass", "before")
        return
    side = "none"
    m = _SIDE_SUFFIX.match(lm_text)
    if m:
        lm_text, side = m.group("lm"), m.group("side")
    words = lm_text.split()
    conditional: tuple[str, ...] = ()
    if "it" in words:
        if not state.last_tokens:
            raise ParseError(f"pronoun with no referent: {lm_text!r}")
        toks, ordinal = state.last_tokens, None
        if state.pending_cond:
            conditional = state.pending_cond
            if state.pending_cond_side != "none" and side == "none":
                side = state.pending_cond_side
        elif state.clauses and state.clauses[-1].tokens == toks:
            # "find the mailbox, and fly towards it": update, don't duplicate
            last = state.clauses[-1]
            new_action = action if action != "pass" else last.action
            new_relation = relation if relation not in ("none",) else last.relation
            state.clauses[-1] = replace(last, action=new_action, relation=new_relation)
            state.last_action = new_action
            return
    else:
        toks, ordinal = _landmark_tokens(words)
        if not toks:
            raise ParseError(f"no landmark tokens in: {lm_text!r}")
        if state.pending_cond:
            conditional = state.pending_cond
    if state.pending_side != "none" and side == "none":
        side = state.pending_side
    _emit(state, toks, action, side, relation, ordinal, conditional)


def format_clause(cl: LandmarkClause) -> str:
    """One-line record form of a clause, used by the golden parse corpus."""
    cond = "+".join(cl.conditional) if cl.conditional else "-"
    ordinal = cl.ordinal if cl.ordinal is not None else "-"
    return (f"clause {cl.order_index} tokens={'+'.join(cl.tokens)} "
            f"action={cl.action} side={cl.side_modifier} rel={cl.relation} "
            f"cond={cond} ordinal={ordinal}")


def parse_instruction(text: str) -> list[LandmarkClause]:
    """Ordered landmark clauses from an instruction. Raises ParseError with
    the unconsumed fragment when the grammar cannot make sense of it."""
    if not text or not text.strip():
        raise ParseError("empty instruction")
    norm = re.sub(r"\s+", " ", text.strip().lower())
    state = _ParserState()
    for si, sentence in enumerate(re.split(r"[.!?;]+", norm)):
        sentence = sentence.strip()
        if not sentence:
            continue
        state.sentence = si
        for frag in re.split(r",|\band\b", sentence):
            _consume_fragment(state, frag.strip())
    if not state.clauses:
        raise ParseError(f"no landmark clauses found in: {text!r}")
    return state.clauses


# --- deterministic embedding provider -------------------------------------

_token_cache: dict[tuple[int, str], np.ndarray] = {}
_text_cache: dict[tuple[int, tuple[str, ...]], np.ndarray] = {}


def _token_vector(token: str, seed: int) -> np.ndarray:
    key = (seed, token)
    v = _token_cache.get(key)
    if v is None:
        rng = np.random.default_rng(stable_seed("tok", seed, token))
        v = rng.standard_normal(EMBED_DIM)
        v /= np.linalg.norm(v)
        _token_cache[key] = v
    return v


def embed_text(tokens, seed: int = 0) -> np.ndarray:
    """Unit embedding of a token phrase: normalized sum of per-token hash
    vectors. Deterministic across runs for a given seed."""
    toks = tuple(tokens)
    if not toks:
        raise ValueError("tokens non-empty")
    key = (seed, tuple(sorted(toks)))
    v = _text_cache.get(key)
    if v is None:
        v = np.sum([_token_vector(t, seed) for t in toks], axis=0)
        v = v / np.linalg.norm(v)
        _text_cache[key] = v
    return v.copy()


def embed_crop(object_tokens, noise_sigma: float = 0.0,
               rng: np.random.Generator | None = None,
               seed: int = 0) -> np.ndarray:
    """Embedding of a rendered object crop via its identity tokens, with an
    optional Gaussian perturbation (scaled per-component by 1/sqrt(D) so
    noise_sigma is roughly the expected embedding displacement)."""
    v = embed_text(object_tokens, seed=seed)
    if noise_sigma > 0.0:
        if rng is None:
            raise ValueError("rng required when noise_sigma > 0")
        v = v + noise_sigma * rng.standard_normal(EMBED_DIM) / np.sqrt(EMBED_DIM)
        v = v / np.linalg.norm(v)
    return v


def similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine score of two unit embeddings (plain dot product)."""
    return float(a @ b)


def propose_regions(frame: Frame, labels: dict[int, str],
                    grid: tuple[int, int] = (4, 3)) -> list[BBox]:
    """Fallback region proposals: a fixed grid of patches (12 by default),
    each assigned the dominant non-background id inside it; all-background
    patches are dropped."""
    h, w = frame.id_map.shape
    nx, ny = grid
    out: list[BBox] = []
    for gy in range(ny):
        for gx in range(nx):
            x1, x2 = (w * gx) // nx, (w * (gx + 1)) // nx
            y1, y2 = (h * gy) // ny, (h * (gy + 1)) // ny
            patch = frame.id_map[y1:y2, x1:x2]
            ids = patch[patch > 0]
            if ids.size == 0:
                continue
            dominant = int(np.bincount(ids).argmax())
            out.append(BBox(x1=x1, y1=y1, x2=x2, y2=y2,
                            label=labels.get(dominant, "object"),
                            object_id=dominant))
    return out


def _side_filter(cands: list[tuple[float, BBox]], side: str) -> list[tuple[float, BBox]]:
    """Restrict to the required side of the candidate set (extreme pick):
    with several same-class candidates, "on the left" means the leftmost one,
    which stays stable as the camera turns."""
    if side == "none" or len(cands) <= 1:
        return cands
    xs = [b.center[0] for _, b in cands]
    extreme = min(xs) if side == "left" else max(xs)
    return [(s, b) for s, b in cands if b.center[0] == extreme]


def match_landmark(clause: LandmarkClause, detections: list[BBox], frame: Frame,
                   object_tokens: dict[int, tuple[str, ...]],
                   theta_conf: float = DEFAULT_CONFIDENCE, *,
                   noise_sigma: float = 0.0,
                   rng: np.random.Generator | None = None,
                   seed: int = 0,
                   exclude_ids: frozenset[int] = frozenset()) -> Match | None:
    """Best-scoring detection for a clause, or None (unresolved).

    Candidates should be the static detections of the current frame. Scores
    are cosine similarities between the clause text embedding and each crop
    embedding; the argmax wins if it clears theta_conf. A stated side
    restricts candidates to that half of the image when possible; an ordinal
    picks among equal-scoring candidates by increasing depth. If nothing
    clears the threshold, grid region proposals are scored the same way
    before giving up.
    """
    z_text = embed_text(clause.tokens, seed=seed)

    def score_all(boxes: list[BBox]) -> list[tuple[float, BBox]]:
        scored = []
        for b in boxes:
            toks = object_tokens.get(b.object_id)
            if not toks:
                continue
            z_obj = embed_crop(toks, noise_sigma=noise_sigma, rng=rng, seed=seed)
            scored.append((similarity(z_obj, z_text), b))
        return scored

    def pick(scored: list[tuple[float, BBox]], via_fallback: bool) -> Match | None:
        passing = [(s, b) for s, b in scored if s > theta_conf]
        if not passing:
            return None
        passing = _side_filter(passing, clause.side_modifier)
        best = max(s for s, _ in passing)
        top = [(s, b) for s, b in passing if s >= best - 1e-9]
        if clause.ordinal is not None and len(top) > 1:
            by_depth = sorted(top, key=lambda sb: crop_depth_median(frame, sb[1]))
            s, b = by_depth[min(clause.ordinal - 1, len(by_depth) - 1)]
            return Match(clause.order_index, b, s, via_fallback)
        c_x = frame.id_map.shape[1] / 2
        c_y = frame.id_map.shape[0] / 2

        def tie_key(sb):
            s, b = sb
            ci, cj = b.center
            return (-s, (ci - c_x) ** 2 + (cj - c_y) ** 2, b.object_id)

        ranked = sorted(passing, key=tie_key)
        s, b = ranked[0]
        partner = None
        if clause.relation == "between":
            for s2, b2 in ranked[1:]:
                if b2.object_id != b.object_id:
                    partner = b2
                    break
        return Match(clause.order_index, b, s, via_fallback, partner=partner)

    got = pick(score_all(detections), via_fallback=False)
    if got is not None:
        return got
    labels = {oid: " ".join(toks) for oid, toks in object_tokens.items()}
    proposals = propose_regions(frame, labels)
    seen = {b.object_id for b in detections} | exclude_ids
    proposals = [b for b in proposals if b.object_id not in seen]
    return pick(score_all(proposals), via_fallback=True)
