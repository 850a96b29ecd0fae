"""Miniature interactive-fiction lab: a deterministic text-game engine plus a
knowledge-graph advantage actor-critic agent over a template action space."""

from importlib import resources

__version__ = "0.1.0"

BUNDLED_GAMES = ("microzork", "corridor", "pantry")


def bundled_game_text(name: str) -> str:
    """Source text of a bundled game definition."""
    return resources.files("kga2c.data").joinpath(f"{name}.game").read_text("utf-8")


def bundled_corpus_lines() -> list[str]:
    """The bundled playthrough command corpus, one command per line."""
    text = resources.files("kga2c.data").joinpath("corpus.txt").read_text("utf-8")
    return [line for line in text.splitlines() if line.strip()]
