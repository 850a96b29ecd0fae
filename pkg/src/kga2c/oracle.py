"""Valid-action detection by snapshot/probe/restore.

An action is valid in a state iff executing it changes the canonical state
digest.  The oracle enumerates canonical template instantiations over a
candidate word set, probes each one against a scratch copy of the state, and
returns exactly the world-changing ones, leaving the caller's state untouched.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Iterable, Sequence

from . import engine
from .templates import ActionSpace, OutOfVocabularyError

DEFAULT_PROBE_BUDGET = 20_000


@dataclass(frozen=True)
class ValidSet:
    """Valid actions with their template ids and per-blank filler words."""

    actions: tuple[str, ...]
    template_ids: tuple[int, ...]  # aligned with actions
    fillers: tuple[tuple[str, ...], ...]  # aligned with actions
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.actions)

    def __contains__(self, action: str) -> bool:
        return action in self.actions


def valid_actions(
    state: engine.WorldState,
    spec: engine.GameSpec,
    space: ActionSpace,
    candidates: Iterable[str] | None = None,
    budget: int | None = DEFAULT_PROBE_BUDGET,
) -> ValidSet:
    """Probe every canonical instantiation over `candidates` (default: full V).

    The probe budget bounds latency; when it is hit the result is flagged
    truncated rather than failing.  The engine state is unchanged on return.
    """
    if candidates is None:
        words: tuple[str, ...] = space.vocabulary
    else:
        vocab = set(space.vocabulary)
        words = tuple(sorted(set(candidates)))
        for w in words:
            if w not in vocab:
                raise OutOfVocabularyError(f"candidate word not in V: {w!r}")

    # Snapshot guards the caller's state; step is pure, and the trailing
    # assert plus the guard re-check make non-perturbation observable.
    guard = engine.snapshot(state)
    before = engine.digest(state)

    actions: list[str] = []
    template_ids: list[int] = []
    fillers: list[tuple[str, ...]] = []
    seen: set[str] = set()
    probes = 0
    truncated = False

    for tid, template in enumerate(space.templates):
        if truncated:
            break
        for combo in product(words, repeat=template.blanks):
            if budget is not None and probes >= budget:
                truncated = True
                break
            probes += 1
            action = space.instantiate(tid, list(combo))
            if action in seen:
                continue
            after, _, _, _ = engine.step(state, action, spec)
            if engine.world_changed(before, engine.digest(after)):
                seen.add(action)
                actions.append(action)
                template_ids.append(tid)
                fillers.append(combo)

    assert engine.digest(engine.restore(guard)) == before == engine.digest(state)
    return ValidSet(
        actions=tuple(actions),
        template_ids=tuple(template_ids),
        fillers=tuple(fillers),
        truncated=truncated,
    )


def valid_templates(valid: ValidSet) -> frozenset[int]:
    """T_valid: the template ids of the valid actions."""
    return frozenset(valid.template_ids)


def valid_objects(mask: Iterable[str], space: ActionSpace) -> frozenset[int]:
    """O_valid: vocabulary ids of the graph-mask words (this is its definition)."""
    return frozenset(space.word_id(w) for w in mask)
