"""Deterministic miniature interactive-fiction engine.

Exposes the full environment loop (load/reset/step), pure side-effect-free
renderers for the look and inventory handicaps, snapshot/restore, and a
canonical state digest used for world-change detection.  All parser failures
are in-fiction text responses; step never raises on player input.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .templates import Template, TemplateError, parse_template

SENTINEL_PREV_ACTION = "<start>"
INVENTORY = "#inventory"

DIRECTIONS = (
    "north", "south", "east", "west", "up", "down",
    "northeast", "northwest", "southeast", "southwest",
)

SNAPSHOT_MAGIC = b"KGSV"
SNAPSHOT_VERSION = 1

# Fixed in-fiction failure responses; the examine probe in the knowledge-graph
# module treats exactly these as "not interactive".
RESP_UNRECOGNIZED = "That phrase is not recognized."
RESP_NO_SUCH_THING = "You can't see any such thing."
RESP_NO_WAY = "You can't go that way."
RESP_NOTHING_HAPPENS = "Nothing happens."
_FAILURE_PREFIXES = (
    RESP_UNRECOGNIZED,
    RESP_NO_SUCH_THING,
    RESP_NO_WAY,
    RESP_NOTHING_HAPPENS,
    "Which ",
    "You can't",
    "You aren't",
    "You already",
    "You don't",
    "It's locked",
    "It's already",
    "It doesn't",
    "It isn't",
    "Nothing is written",
    "Time passes",
)


def is_failure(response: str) -> bool:
    """True when a parser response indicates the command had no real referent
    or effect (used by the examine probe)."""
    return any(response.startswith(p) for p in _FAILURE_PREFIXES)


class GameError(ValueError):
    """Base class for game-definition problems."""


class GameParseError(GameError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class GameReferenceError(GameError):
    """A section references an undeclared room or object."""


class VocabularyError(GameError):
    """Declared vocabulary does not cover template or object words."""


class SnapshotError(ValueError):
    """Snapshot bytes are corrupt or from an incompatible version."""


# ---------------------------------------------------------------------------
# Game definition


@dataclass(frozen=True)
class RoomDef:
    id: str
    name: str
    desc: str

    def words(self) -> set[str]:
        return set(self.id.lower().split("-")) | set(self.name.lower().split())


@dataclass(frozen=True)
class ObjectDef:
    id: str
    name: str
    aliases: tuple[str, ...]
    location: str  # room id, INVENTORY, or "in <object id>"
    takeable: bool = False
    openable: bool = False
    lockable: bool = False
    readable: bool = False
    container: bool = False
    is_open: bool = False
    locked: bool = False
    key: str | None = None
    text: str = ""
    desc: str = ""

    def reference_words(self) -> tuple[str, ...]:
        """Words that may refer to this object, longest aliases first."""
        refs = [self.name.lower()] + [a.lower() for a in self.aliases]
        for alias in list(refs):
            for w in alias.split():
                if w not in refs:
                    refs.append(w)
        return tuple(refs)


@dataclass(frozen=True)
class RewardRule:
    id: str
    points: int
    once: bool
    trigger: tuple[str, ...]  # (kind, *args)


@dataclass(frozen=True)
class GameSpec:
    name: str
    start: str
    gamma: float
    max_score: int
    rooms: dict[str, RoomDef]
    exits: dict[tuple[str, str], str]
    objects: dict[str, ObjectDef]
    templates: tuple[Template, ...]
    rewards: tuple[RewardRule, ...]
    victory: tuple[tuple[str, ...], ...]  # conjunction of state predicates
    vocabulary: tuple[str, ...]
    nouns: frozenset[str]
    adjectives: frozenset[str]
    valid_step_cap: int = 100
    turn_cap: int = 1000
    stochastic: bool = False


@dataclass(frozen=True)
class WorldState:
    room: str
    locations: tuple[tuple[str, str], ...]  # object id -> place, sorted
    flags: tuple[str, ...]  # names of set flags, sorted
    score: int
    collected: frozenset[str]
    turn: int = 0
    valid_steps: int = 0

    def location_of(self, obj: str) -> str:
        for oid, place in self.locations:
            if oid == obj:
                return place
        raise KeyError(obj)

    def flag(self, name: str) -> bool:
        return name in self.flags


@dataclass(frozen=True)
class Observation:
    o_desc: str
    o_game: str
    o_inv: str
    a_prev: str
    score: int


def _pack_state(
    room: str,
    locations: dict[str, str],
    flags: Iterable[str],
    score: int,
    collected: frozenset[str],
    turn: int = 0,
    valid_steps: int = 0,
) -> WorldState:
    return WorldState(
        room=room,
        locations=tuple(sorted(locations.items())),
        flags=tuple(sorted(set(flags))),
        score=score,
        collected=collected,
        turn=turn,
        valid_steps=valid_steps,
    )


def digest(state: WorldState) -> str:
    """64-bit hex digest of the canonical state, excluding turn counters.

    Equal states (modulo counters) hash equal regardless of construction
    order because all collections are stored sorted.
    """
    payload = repr(
        (state.room, state.locations, state.flags, state.score, sorted(state.collected))
    ).encode("utf-8")
    return hashlib.blake2b(payload, digest_size=8).hexdigest()


def world_changed(before: str, after: str) -> bool:
    """True iff two state digests differ."""
    return before != after


# ---------------------------------------------------------------------------
# Game file loading

_BOOL_KEYS = {"takeable", "openable", "lockable", "readable", "container", "open", "locked"}


def _parse_bool(value: str, line: int) -> bool:
    v = value.strip().lower()
    if v in ("yes", "true", "1"):
        return True
    if v in ("no", "false", "0"):
        return False
    raise GameParseError(line, f"expected yes/no, got {value!r}")


def load_game(text: str) -> GameSpec:
    """Parse and validate a game-definition document."""
    sections: list[tuple[str, int, dict[str, str], list[tuple[str, str, int]]]] = []
    current: dict[str, str] | None = None
    entries: list[tuple[str, str, int]] | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip().lower()
            current = {}
            entries = []
            sections.append((name, lineno, current, entries))
            continue
        if current is None:
            raise GameParseError(lineno, f"content before any section: {line.strip()!r}")
        if ":" not in line:
            raise GameParseError(lineno, f"expected 'key: value', got {line.strip()!r}")
        key, value = line.split(":", 1)
        key = key.strip().lower()
        value = value.strip()
        current[key] = value
        entries.append((key, value, lineno))
    if not sections:
        raise GameParseError(0, "empty game definition")

    meta: dict[str, str] = {}
    rooms: dict[str, RoomDef] = {}
    exits: dict[tuple[str, str], str] = {}
    objects: dict[str, ObjectDef] = {}
    templates: list[Template] = []
    rewards: list[RewardRule] = []
    victory: list[tuple[str, ...]] = []
    declared_vocab: list[str] | None = None

    def need(kv: dict[str, str], key: str, lineno: int) -> str:
        if key not in kv:
            raise GameParseError(lineno, f"missing required key {key!r}")
        return kv[key]

    for name, lineno, kv, entry_list in sections:
        if name == "meta":
            meta.update(kv)
        elif name == "room":
            rid = need(kv, "id", lineno)
            if rid in rooms:
                raise GameParseError(lineno, f"duplicate room id {rid!r}")
            rooms[rid] = RoomDef(
                id=rid, name=need(kv, "name", lineno), desc=need(kv, "desc", lineno)
            )
        elif name == "exit":
            src = need(kv, "from", lineno)
            direction = need(kv, "dir", lineno).lower()
            dst = need(kv, "to", lineno)
            exits[(src, direction)] = dst
        elif name == "object":
            oid = need(kv, "id", lineno)
            if oid in objects:
                raise GameParseError(lineno, f"duplicate object id {oid!r}")
            aliases = tuple(
                a.strip().lower() for a in kv.get("aliases", "").split(",") if a.strip()
            )
            bools = {
                k: _parse_bool(kv[k], lineno) for k in _BOOL_KEYS if k in kv
            }
            objects[oid] = ObjectDef(
                id=oid,
                name=need(kv, "name", lineno).lower(),
                aliases=aliases,
                location=need(kv, "loc", lineno),
                takeable=bools.get("takeable", False),
                openable=bools.get("openable", False),
                lockable=bools.get("lockable", False),
                readable=bools.get("readable", False),
                container=bools.get("container", False) or bools.get("openable", False),
                is_open=bools.get("open", False),
                locked=bools.get("locked", False),
                key=kv.get("key"),
                text=kv.get("text", ""),
                desc=kv.get("desc", ""),
            )
        elif name == "template":
            for key, value, entry_line in entry_list:
                if key != "pattern":
                    raise GameParseError(entry_line, f"unknown template key {key!r}")
                try:
                    templates.append(parse_template(value))
                except TemplateError as exc:
                    raise GameParseError(entry_line, str(exc)) from exc
        elif name == "reward":
            rid = need(kv, "id", lineno)
            if any(r.id == rid for r in rewards):
                raise GameParseError(lineno, f"duplicate reward id {rid!r}")
            trigger = tuple(need(kv, "when", lineno).lower().split())
            rewards.append(
                RewardRule(
                    id=rid,
                    points=int(need(kv, "points", lineno)),
                    once=_parse_bool(kv.get("once", "yes"), lineno),
                    trigger=trigger,
                )
            )
        elif name == "victory":
            for key, value, entry_line in entry_list:
                if key != "when":
                    raise GameParseError(entry_line, f"unknown victory key {key!r}")
                victory.append(tuple(value.lower().split()))
        elif name == "vocab":
            declared_vocab = [
                w.strip().lower()
                for w in kv.get("words", "").replace(",", " ").split()
                if w.strip()
            ]
        else:
            raise GameParseError(lineno, f"unknown section [{name}]")

    if "start" not in meta:
        raise GameParseError(0, "missing [meta] start room")
    start = meta["start"]
    if start not in rooms:
        raise GameReferenceError(f"start room {start!r} is not declared")
    for (src, direction), dst in exits.items():
        if src not in rooms:
            raise GameReferenceError(f"exit from undeclared room {src!r}")
        if dst not in rooms:
            raise GameReferenceError(f"exit to undeclared room {dst!r}")
    for obj in objects.values():
        loc = obj.location
        if loc.startswith("in "):
            target = loc[3:].strip()
            if target not in objects:
                raise GameReferenceError(
                    f"object {obj.id!r} placed in undeclared container {target!r}"
                )
        elif loc != INVENTORY and loc != "inventory" and loc not in rooms:
            raise GameReferenceError(
                f"object {obj.id!r} placed in undeclared room {loc!r}"
            )
        if obj.key is not None and obj.key not in objects:
            raise GameReferenceError(
                f"object {obj.id!r} keyed by undeclared object {obj.key!r}"
            )
    for rule in rewards:
        _check_predicate_refs(rule.trigger, rooms, objects, f"reward {rule.id!r}")
    for pred in victory:
        _check_predicate_refs(pred, rooms, objects, "victory condition")

    nouns: set[str] = set()
    adjectives: set[str] = set()
    for room in rooms.values():
        nouns.update(room.words())
    for obj in objects.values():
        for alias in (obj.name,) + obj.aliases:
            words = alias.split()
            if words:
                nouns.add(words[-1])
                adjectives.update(words[:-1])
            if len(words) == 1:
                nouns.add(words[0])
    adjectives -= nouns

    required: set[str] = set()
    for t in templates:
        required.update(t.words())
    for obj in objects.values():
        for alias in (obj.name,) + obj.aliases:
            required.update(alias.split())
    required.update(w for room in rooms.values() for w in room.words())

    if declared_vocab is not None:
        missing = required - set(declared_vocab)
        if missing:
            raise VocabularyError(
                f"declared vocabulary is missing words: {sorted(missing)}"
            )
        vocabulary = tuple(sorted(set(declared_vocab)))
    else:
        vocabulary = tuple(sorted(required))

    gamma = float(meta.get("gamma", "0.9"))
    if not (0.0 < gamma <= 1.0):
        raise GameParseError(0, f"gamma must be in (0, 1], got {gamma}")

    return GameSpec(
        name=meta.get("name", "game"),
        start=start,
        gamma=gamma,
        max_score=int(meta.get("max-score", "0")),
        rooms=rooms,
        exits=exits,
        objects=objects,
        templates=tuple(templates),
        rewards=tuple(rewards),
        victory=tuple(victory),
        vocabulary=vocabulary,
        nouns=frozenset(nouns),
        adjectives=frozenset(adjectives),
        valid_step_cap=int(meta.get("valid-step-cap", "100")),
        turn_cap=int(meta.get("turn-cap", "1000")),
        stochastic=meta.get("stochastic", "no").lower() in ("yes", "true", "1"),
    )


_PREDICATE_ARITY = {
    "take": 1, "open": 1, "visit": 1, "enter": 1, "bring": 2, "in": 2,
    "has": 1, "at": 1, "score": 1, "unlock": 1, "drop": 1,
}


def _check_predicate_refs(pred: tuple[str, ...], rooms, objects, where: str) -> None:
    if not pred or pred[0] not in _PREDICATE_ARITY:
        raise GameParseError(0, f"{where}: unknown predicate {' '.join(pred)!r}")
    kind, *args = pred
    if len(args) != _PREDICATE_ARITY[kind]:
        raise GameParseError(0, f"{where}: predicate {kind!r} takes "
                             f"{_PREDICATE_ARITY[kind]} argument(s)")
    ids = set(rooms) | set(objects)
    for a in args:
        if kind == "score":
            continue
        if a not in ids:
            raise GameReferenceError(f"{where}: unknown room/object {a!r}")


def load_game_file(path) -> GameSpec:
    with open(path, encoding="utf-8") as fh:
        return load_game(fh.read())


# ---------------------------------------------------------------------------
# State construction and rendering


def reset(spec: GameSpec, seed: int = 0) -> tuple[WorldState, Observation]:
    """Initial state and observation.  Bundled games are deterministic, so the
    seed only matters for specs that declare stochastic behaviour."""
    locations = {o.id: _normalize_loc(o.location) for o in spec.objects.values()}
    flags = [f"visited:{spec.start}"]
    for o in spec.objects.values():
        if o.is_open:
            flags.append(f"open:{o.id}")
        if o.locked:
            flags.append(f"locked:{o.id}")
    state = _pack_state(spec.start, locations, flags, 0, frozenset())
    o_desc = render_look(state, spec)
    obs = Observation(
        o_desc=o_desc,
        o_game=o_desc,
        o_inv=render_inventory(state, spec),
        a_prev=SENTINEL_PREV_ACTION,
        score=0,
    )
    return state, obs


def _normalize_loc(loc: str) -> str:
    if loc == "inventory" or loc == INVENTORY:
        return INVENTORY
    if loc.startswith("in "):
        return "in " + loc[3:].strip()
    return loc


def objects_in_scope(state: WorldState, spec: GameSpec) -> list[ObjectDef]:
    """Objects in the current room, the inventory, and open containers here."""
    loc = dict(state.locations)
    out = []
    for oid in spec.objects:  # declaration order for stable rendering
        place = loc[oid]
        if place == INVENTORY or place == state.room:
            out.append(spec.objects[oid])
        elif place.startswith("in "):
            holder_id = place[3:]
            holder = spec.objects[holder_id]
            if loc[holder_id] in (state.room, INVENTORY) and (
                not holder.openable or f"open:{holder_id}" in state.flags
            ):
                out.append(spec.objects[oid])
    return out


def in_scope_words(state: WorldState, spec: GameSpec) -> tuple[str, ...]:
    """All single words that can refer to an in-scope object (handicap)."""
    words: set[str] = set()
    for obj in objects_in_scope(state, spec):
        for ref in obj.reference_words():
            words.update(ref.split())
    return tuple(sorted(words))


def _article(name: str) -> str:
    return "an" if name[:1] in "aeiou" else "a"


def render_look(state: WorldState, spec: GameSpec) -> str:
    """Room description exactly as the ``look`` command would print it."""
    room = spec.rooms[state.room]
    lines = [room.name, room.desc]
    loc = dict(state.locations)
    here = [o for o in spec.objects.values() if loc[o.id] == state.room]
    for obj in here:
        lines.append(f"There is {_article(obj.name)} {obj.name} here.")
        if obj.container and (not obj.openable or state.flag(f"open:{obj.id}")):
            inside = [o for o in spec.objects.values() if loc[o.id] == f"in {obj.id}"]
            if inside:
                listing = " and ".join(f"{_article(o.name)} {o.name}" for o in inside)
                lines.append(f"The {obj.name} contains {listing}.")
    return "\n".join(lines)


def render_inventory(state: WorldState, spec: GameSpec) -> str:
    loc = dict(state.locations)
    held = [o for o in spec.objects.values() if loc[o.id] == INVENTORY]
    if not held:
        return "You are empty-handed."
    listing = " and ".join(f"{_article(o.name)} {o.name}" for o in held)
    return f"You are carrying {listing}."


# ---------------------------------------------------------------------------
# Snapshot / restore


def snapshot(state: WorldState) -> bytes:
    payload = json.dumps(
        {
            "room": state.room,
            "locations": list(state.locations),
            "flags": list(state.flags),
            "score": state.score,
            "collected": sorted(state.collected),
            "turn": state.turn,
            "valid_steps": state.valid_steps,
        },
        sort_keys=True,
    ).encode("utf-8")
    header = SNAPSHOT_MAGIC + struct.pack("<HI", SNAPSHOT_VERSION, len(payload))
    return header + payload + struct.pack("<I", zlib.crc32(payload))


def restore(blob: bytes) -> WorldState:
    if len(blob) < 14 or blob[:4] != SNAPSHOT_MAGIC:
        raise SnapshotError("not a snapshot (bad magic)")
    version, length = struct.unpack("<HI", blob[4:10])
    if version != SNAPSHOT_VERSION:
        raise SnapshotError(f"unsupported snapshot version {version}")
    payload = blob[10 : 10 + length]
    if len(payload) != length or len(blob) != 14 + length:
        raise SnapshotError("snapshot truncated")
    (crc,) = struct.unpack("<I", blob[10 + length :])
    if crc != zlib.crc32(payload):
        raise SnapshotError("snapshot checksum mismatch")
    try:
        data = json.loads(payload.decode("utf-8"))
        return WorldState(
            room=data["room"],
            locations=tuple((a, b) for a, b in data["locations"]),
            flags=tuple(data["flags"]),
            score=int(data["score"]),
            collected=frozenset(data["collected"]),
            turn=int(data["turn"]),
            valid_steps=int(data["valid_steps"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SnapshotError(f"malformed snapshot payload: {exc}") from exc


# ---------------------------------------------------------------------------
# Command parsing

# Verb meanings the engine can execute.  A template's verb group is mapped to
# a meaning via ANY of its aliases; templates with no executable meaning parse
# fine but always answer "Nothing happens."
_VERB_MEANINGS = {
    "look": "look", "l": "look",
    "inventory": "inventory", "i": "inventory",
    "examine": "examine", "x": "examine", "inspect": "examine",
    "take": "take", "get": "take", "grab": "take", "carry": "take", "hold": "take",
    "drop": "drop", "discard": "drop",
    "open": "open", "unlock": "unlock",
    "close": "close", "shut": "close",
    "lock": "lock",
    "read": "read",
    "put": "put", "insert": "put",
    "wait": "wait", "z": "wait",
    "go": "go",
}
for _d in DIRECTIONS:
    _VERB_MEANINGS[_d] = _d

_ARTICLES = ("a", "an", "the")

# Meta commands always understood even when absent from the game's templates.
_BUILTIN_PATTERNS = ("look", "inventory", "examine OBJ", "wait")


def _builtin_templates() -> tuple[Template, ...]:
    return tuple(parse_template(p) for p in _BUILTIN_PATTERNS)


_BUILTINS = None


def _get_builtins() -> tuple[Template, ...]:
    global _BUILTINS
    if _BUILTINS is None:
        _BUILTINS = _builtin_templates()
    return _BUILTINS


def _verb_meaning(template: Template) -> str | None:
    for alias in template.verbs:
        head = alias.split()[0]
        if head in _VERB_MEANINGS:
            return _VERB_MEANINGS[head]
    return None


def _parser_index(spec: GameSpec) -> dict[str, list[Template]]:
    """First-word index over game plus builtin templates (cached on the spec)."""
    index = getattr(spec, "_first_word_index", None)
    if index is None:
        index = {}
        for template in tuple(spec.templates) + _get_builtins():
            for alias in template.verbs:
                index.setdefault(alias.split()[0], []).append(template)
        object.__setattr__(spec, "_first_word_index", index)
    return index


def _strip_articles(words: Sequence[str]) -> tuple[str, ...]:
    return tuple(w for w in words if w not in _ARTICLES)


def _match_template(template: Template, tokens: Sequence[str]) -> list[tuple[str, ...]] | None:
    """Try to match tokens against a template (any alias spelling).

    Returns the list of captured object word spans, or None when the template
    does not match.  Spans between fixed parts are captured greedily; for the
    two-blank shape every preposition split is tried, longest first span first.
    """
    joined = " ".join(tokens)

    def phrase_matches(aliases: Iterable[str], words: Sequence[str]) -> list[int]:
        """Lengths (token counts) of aliases matching a prefix of words."""
        out = []
        for alias in aliases:
            parts = alias.split()
            if list(words[: len(parts)]) == parts:
                out.append(len(parts))
        return sorted(set(out), reverse=True)

    results: list[list[tuple[str, ...]]] = []

    def walk(slot_idx: int, pos: int, captured: list[tuple[str, ...]]) -> None:
        if results:
            return
        if slot_idx == len(template.slots):
            if pos == len(tokens):
                results.append(captured)
            return
        slot = template.slots[slot_idx]
        if slot == "V":
            for length in phrase_matches(template.verbs, tokens[pos:]):
                walk(slot_idx + 1, pos + length, captured)
        elif slot == "P":
            for length in phrase_matches(template.prepositions, tokens[pos:]):
                walk(slot_idx + 1, pos + length, captured)
        else:  # OBJ: try longest span first
            rest = template.slots[slot_idx + 1 :]
            if not rest:
                span = _strip_articles(tokens[pos:])
                if span:
                    walk(slot_idx + 1, len(tokens), captured + [span])
                return
            for end in range(len(tokens), pos, -1):
                span = _strip_articles(tokens[pos:end])
                if not span:
                    continue
                walk(slot_idx + 1, end, captured + [span])
                if results:
                    return

    walk(0, 0, [])
    if not results:
        return None
    return results[0]


def _resolve_object(
    span: tuple[str, ...], scope: list[ObjectDef]
) -> ObjectDef | str | None:
    """Resolve a word span to one in-scope object.

    Returns the object, an ambiguity failure string, or None when nothing in
    scope matches.  Matching prefers the longest alias (most words).
    """
    text = " ".join(span)
    best: list[ObjectDef] = []
    best_len = 0
    for obj in scope:
        for alias in obj.reference_words():
            if alias == text:
                alias_len = len(alias.split())
                if alias_len > best_len:
                    best, best_len = [obj], alias_len
                elif alias_len == best_len and obj not in best:
                    best.append(obj)
    if not best:
        return None
    if len(best) > 1:
        names = " or the ".join(o.name for o in best)
        return f"Which {text} do you mean, the {names}?"
    return best[0]


# ---------------------------------------------------------------------------
# Step


def step_core(
    state: WorldState, action: str, spec: GameSpec
) -> tuple[WorldState, str, int, bool]:
    """Render-free transition: (successor, parser response, reward, done).

    Never mutates ``state``; failures are in-fiction responses and leave the
    world unchanged.  Used directly by the valid-action oracle, where the
    observation channels are not needed.
    """
    tokens = tuple(action.lower().split())
    response, after = _execute(state, tokens, spec)

    changed = after is not state
    reward = 0
    fired: set[str] = set()
    if changed:
        reward, fired = _apply_rewards(state, after, spec)
        if reward or fired:
            after = replace(
                after, score=after.score + reward, collected=after.collected | fired
            )
        changed = world_changed(digest(state), digest(after))
    after = replace(
        after,
        turn=state.turn + 1,
        valid_steps=state.valid_steps + (1 if changed else 0),
    )
    done = (
        _victory_holds(after, spec)
        or after.valid_steps >= spec.valid_step_cap
        or after.turn >= spec.turn_cap
    )
    return after, response, reward, done


def step(
    state: WorldState, action: str, spec: GameSpec
) -> tuple[WorldState, Observation, int, bool]:
    """Apply one parsed command and render the full observation."""
    after, response, reward, done = step_core(state, action, spec)
    tokens = action.lower().split()
    obs = Observation(
        o_desc=render_look(after, spec),
        o_game=response,
        o_inv=render_inventory(after, spec),
        a_prev=" ".join(tokens) if tokens else SENTINEL_PREV_ACTION,
        score=after.score,
    )
    return after, obs, reward, done


def _execute(
    state: WorldState, tokens: tuple[str, ...], spec: GameSpec
) -> tuple[str, WorldState]:
    if not tokens:
        return RESP_UNRECOGNIZED, state
    if len(tokens) == 2 and tokens[0] == "go" and tokens[1] in DIRECTIONS:
        tokens = tokens[1:]

    matches: list[tuple[Template, list[tuple[str, ...]]]] = []
    for template in _parser_index(spec).get(tokens[0], ()):
        spans = _match_template(template, tokens)
        if spans is not None:
            matches.append((template, spans))
    if not matches:
        return RESP_UNRECOGNIZED, state
    # Prefer the most structured reading ("open chest with key" binds the
    # two-blank template, not "open OBJ" with a three-word span).
    matches.sort(key=lambda m: len(m[0].slots), reverse=True)

    first_failure: tuple[str, WorldState] | None = None
    scope: list[ObjectDef] | None = None
    for template, spans in matches:
        meaning = _verb_meaning(template)
        if meaning is None:
            if first_failure is None:
                first_failure = (RESP_NOTHING_HAPPENS, state)
            continue
        if spans and scope is None:
            scope = objects_in_scope(state, spec)
        resolved: list[ObjectDef] = []
        failure: str | None = None
        for span in spans:
            hit = _resolve_object(span, scope)
            if hit is None:
                # room self-reference supports "examine field" style commands
                if meaning == "examine" and _resolve_room(span, state, spec):
                    return spec.rooms[state.room].desc, state
                failure = RESP_NO_SUCH_THING
                break
            if isinstance(hit, str):
                failure = hit
                break
            resolved.append(hit)
        if failure is not None:
            if first_failure is None:
                first_failure = (failure, state)
            continue
        return _dispatch(meaning, resolved, state, spec)
    assert first_failure is not None
    return first_failure


def _resolve_room(span: tuple[str, ...], state: WorldState, spec: GameSpec) -> bool:
    room = spec.rooms[state.room]
    text = " ".join(span)
    return text in room.words() or text == room.name.lower() or text == room.id


def _move_object(state: WorldState, obj_id: str, place: str) -> WorldState:
    locations = dict(state.locations)
    locations[obj_id] = place
    return replace(state, locations=tuple(sorted(locations.items())))


def _set_flag(state: WorldState, name: str, value: bool) -> WorldState:
    flags = set(state.flags)
    if value:
        flags.add(name)
    else:
        flags.discard(name)
    return replace(state, flags=tuple(sorted(flags)))


def _dispatch(
    meaning: str, objs: list[ObjectDef], state: WorldState, spec: GameSpec
) -> tuple[str, WorldState]:
    if meaning in DIRECTIONS:
        return _do_go(meaning, state, spec)
    if meaning == "go":
        return RESP_NO_WAY, state
    if meaning == "look":
        return render_look(state, spec), state
    if meaning == "inventory":
        return render_inventory(state, spec), state
    if meaning == "wait":
        return "Time passes.", state
    if meaning == "examine":
        obj = objs[0]
        desc = obj.desc or f"You see nothing special about the {obj.name}."
        if obj.readable and obj.text:
            desc = f"{desc} Something is written on it."
        return desc, state
    if meaning == "read":
        obj = objs[0]
        if not obj.readable or not obj.text:
            return "Nothing is written on it.", state
        return obj.text, state
    if meaning == "take":
        return _do_take(objs[0], state)
    if meaning == "drop":
        return _do_drop(objs[0], state)
    if meaning == "open":
        if len(objs) == 2:
            return _do_unlock_open(objs[0], objs[1], state, spec)
        return _do_open(objs[0], state, spec)
    if meaning == "unlock":
        if len(objs) == 2:
            return _do_unlock_open(objs[0], objs[1], state, spec)
        return "It doesn't budge.", state
    if meaning == "close":
        return _do_close(objs[0], state)
    if meaning == "lock":
        return "It doesn't budge.", state
    if meaning == "put":
        if len(objs) == 2:
            return _do_put(objs[0], objs[1], state)
        return RESP_NOTHING_HAPPENS, state
    return RESP_NOTHING_HAPPENS, state


def _do_go(direction: str, state: WorldState, spec: GameSpec) -> tuple[str, WorldState]:
    dst = spec.exits.get((state.room, direction))
    if dst is None:
        return RESP_NO_WAY, state
    after = replace(state, room=dst)
    after = _set_flag(after, f"visited:{dst}", True)
    return render_look(after, spec), after


def _do_take(obj: ObjectDef, state: WorldState) -> tuple[str, WorldState]:
    if state.location_of(obj.id) == INVENTORY:
        return "You already have that.", state
    if not obj.takeable:
        return "You can't take that.", state
    return "Taken.", _move_object(state, obj.id, INVENTORY)


def _do_drop(obj: ObjectDef, state: WorldState) -> tuple[str, WorldState]:
    if state.location_of(obj.id) != INVENTORY:
        return "You aren't carrying that.", state
    return "Dropped.", _move_object(state, obj.id, state.room)


def _do_open(obj: ObjectDef, state: WorldState, spec: GameSpec) -> tuple[str, WorldState]:
    if not obj.openable:
        return "You can't open that.", state
    if state.flag(f"locked:{obj.id}"):
        return "It's locked.", state
    if state.flag(f"open:{obj.id}"):
        return "It's already open.", state
    after = _set_flag(state, f"open:{obj.id}", True)
    loc = dict(after.locations)
    inside = [o for o in spec.objects.values() if loc[o.id] == f"in {obj.id}"]
    if inside:
        listing = " and ".join(f"{_article(o.name)} {o.name}" for o in inside)
        return f"You open the {obj.name}, revealing {listing}.", after
    return "Opened.", after


def _do_close(obj: ObjectDef, state: WorldState) -> tuple[str, WorldState]:
    if not obj.openable:
        return "You can't close that.", state
    if not state.flag(f"open:{obj.id}"):
        return "It isn't open.", state
    return "Closed.", _set_flag(state, f"open:{obj.id}", False)


def _do_unlock_open(
    obj: ObjectDef, key: ObjectDef, state: WorldState, spec: GameSpec
) -> tuple[str, WorldState]:
    if not obj.lockable:
        return "It doesn't need a key.", state
    if state.location_of(key.id) != INVENTORY:
        return "You aren't carrying that.", state
    if not state.flag(f"locked:{obj.id}"):
        return _do_open(obj, state, spec)
    if obj.key != key.id:
        return "It doesn't fit.", state
    after = _set_flag(state, f"locked:{obj.id}", False)
    response, after = _do_open(obj, after, spec)
    if response.startswith("You open"):
        return response.replace("You open", f"The {key.name} turns. You open", 1), after
    return f"The {key.name} turns. Opened.", after


def _do_put(obj: ObjectDef, target: ObjectDef, state: WorldState) -> tuple[str, WorldState]:
    if state.location_of(obj.id) != INVENTORY:
        return "You aren't carrying that.", state
    if not target.container or obj.id == target.id:
        return "You can't put things in that.", state
    if target.openable and not state.flag(f"open:{target.id}"):
        return "It isn't open.", state
    after = _move_object(state, obj.id, f"in {target.id}")
    return f"You put the {obj.name} in the {target.name}.", after


# ---------------------------------------------------------------------------
# Rewards and victory


def _holds_transition(
    trigger: tuple[str, ...], before: WorldState, after: WorldState
) -> bool:
    kind, *args = trigger
    b_loc, a_loc = dict(before.locations), dict(after.locations)
    if kind == "take":
        return a_loc.get(args[0]) == INVENTORY and b_loc.get(args[0]) != INVENTORY
    if kind == "drop":
        return b_loc.get(args[0]) == INVENTORY and a_loc.get(args[0]) != INVENTORY
    if kind == "open":
        return after.flag(f"open:{args[0]}") and not before.flag(f"open:{args[0]}")
    if kind == "unlock":
        return before.flag(f"locked:{args[0]}") and not after.flag(f"locked:{args[0]}")
    if kind == "visit":
        return after.flag(f"visited:{args[0]}") and not before.flag(f"visited:{args[0]}")
    if kind == "enter":
        return after.room == args[0] and before.room != args[0]
    if kind == "bring":
        obj, room = args
        now = after.room == room and a_loc.get(obj) == INVENTORY
        was = before.room == room and b_loc.get(obj) == INVENTORY
        return now and not was
    if kind == "in":
        obj, place = args
        return a_loc.get(obj) == f"in {place}" and b_loc.get(obj) != f"in {place}"
    return False


def _apply_rewards(
    before: WorldState, after: WorldState, spec: GameSpec
) -> tuple[int, set[str]]:
    points = 0
    fired: set[str] = set()
    for rule in spec.rewards:
        if rule.once and rule.id in before.collected:
            continue
        if _holds_transition(rule.trigger, before, after):
            points += rule.points
            if rule.once:
                fired.add(rule.id)
    return points, fired


def _holds_state(pred: tuple[str, ...], state: WorldState, spec: GameSpec) -> bool:
    kind, *args = pred
    loc = dict(state.locations)
    if kind == "has":
        return loc.get(args[0]) == INVENTORY
    if kind == "at":
        return state.room == args[0]
    if kind == "open":
        return state.flag(f"open:{args[0]}")
    if kind == "in":
        return loc.get(args[0]) == f"in {args[1]}"
    if kind == "score":
        return state.score >= int(args[0])
    if kind == "visit":
        return state.flag(f"visited:{args[0]}")
    return False


def _victory_holds(state: WorldState, spec: GameSpec) -> bool:
    if not spec.victory:
        return False
    return all(_holds_state(pred, state, spec) for pred in spec.victory)


# ---------------------------------------------------------------------------
# Convenience stateful wrapper


class Engine:
    """Mutable convenience wrapper holding a live (spec, state, observation)."""

    def __init__(self, spec: GameSpec, seed: int = 0):
        self.spec = spec
        self.state, self.obs = reset(spec, seed)
        self.done = False
        self.last_reward = 0

    def step(self, action: str) -> tuple[Observation, int, bool]:
        self.state, self.obs, self.last_reward, self.done = step(
            self.state, action, self.spec
        )
        return self.obs, self.last_reward, self.done

    def reset(self, seed: int = 0) -> Observation:
        self.state, self.obs = reset(self.spec, seed)
        self.done = False
        self.last_reward = 0
        return self.obs

    def digest(self) -> str:
        return digest(self.state)
