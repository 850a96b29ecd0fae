import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from kga2c import bundled_corpus_lines, bundled_game_text
from kga2c.engine import load_game
from kga2c.templates import FrequencyTable, build_action_space


@pytest.fixture(scope="session")
def corpus():
    return bundled_corpus_lines()


@pytest.fixture(scope="session")
def microzork():
    return load_game(bundled_game_text("microzork"))


@pytest.fixture(scope="session")
def corridor():
    return load_game(bundled_game_text("corridor"))


@pytest.fixture(scope="session")
def pantry():
    return load_game(bundled_game_text("pantry"))


@pytest.fixture(scope="session")
def microzork_space(microzork, corpus):
    freq = FrequencyTable.from_lines(corpus)
    return build_action_space(microzork.templates, microzork.vocabulary, freq)


MICROZORK_WALKTHROUGH = [
    "take key",
    "north",
    "north",
    "open chest with key",
    "take coin",
    "down",
]

PANTRY_WALKTHROUGH = [
    "open cupboard",
    "take jar",
    "open jar",
    "take cookie",
    "north",
    "take bread",
    "put bread in basket",
    "south",
    "down",
    "take cheese",
    "up",
    "north",
    "put cheese in basket",
]

CORRIDOR_WALKTHROUGH = ["east", "east", "east"]


@pytest.fixture(scope="session")
def walkthroughs():
    return {
        "microzork": MICROZORK_WALKTHROUGH,
        "pantry": PANTRY_WALKTHROUGH,
        "corridor": CORRIDOR_WALKTHROUGH,
    }
