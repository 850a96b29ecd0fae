import random

import pytest

from kga2c import bundled_game_text
from kga2c import engine
from kga2c.engine import (
    GameParseError,
    GameReferenceError,
    SnapshotError,
    VocabularyError,
    digest,
    load_game,
    render_inventory,
    render_look,
    reset,
    restore,
    snapshot,
    step,
    world_changed,
)

from conftest import MICROZORK_WALKTHROUGH, PANTRY_WALKTHROUGH, CORRIDOR_WALKTHROUGH


TINY_GAME = """
[meta]
name: tiny
start: cell

[room]
id: cell
name: Cell
desc: A bare cell. A hall lies north.

[room]
id: hall
name: Hall
desc: A hall.

[exit]
from: cell
dir: north
to: hall

[object]
id: pebble
name: pebble
loc: cell
takeable: yes

[template]
pattern: north

[template]
pattern: [take/get] OBJ

[template]
pattern: [drop] OBJ
"""


class TestLoadGame:
    def test_microzork_counts(self, microzork):
        assert len(microzork.rooms) == 5
        assert len(microzork.objects) == 7
        assert len(microzork.templates) == 12

    def test_bundled_games_load(self, corridor, pantry):
        assert len(corridor.rooms) == 5
        assert len(corridor.objects) == 0
        assert len(pantry.objects) == 7

    def test_empty_document_is_parse_error(self):
        with pytest.raises(GameParseError):
            load_game("")

    def test_exit_to_undeclared_room(self):
        bad = TINY_GAME.replace("to: hall", "to: basement")
        with pytest.raises(GameReferenceError):
            load_game(bad)

    def test_object_in_undeclared_container(self):
        bad = TINY_GAME.replace("loc: cell", "loc: in satchel")
        with pytest.raises(GameReferenceError):
            load_game(bad)

    def test_parse_error_carries_line_number(self):
        bad = "[meta]\nstart cell\n"
        with pytest.raises(GameParseError) as err:
            load_game(bad)
        assert err.value.line == 2

    def test_duplicate_reward_id_rejected(self):
        bad = TINY_GAME + (
            "\n[reward]\nid: r\nwhen: take pebble\npoints: 1\n"
            "\n[reward]\nid: r\nwhen: take pebble\npoints: 2\n"
        )
        with pytest.raises(GameParseError):
            load_game(bad)

    def test_incomplete_declared_vocabulary(self):
        bad = TINY_GAME + "\n[vocab]\nwords: north, take\n"
        with pytest.raises(VocabularyError):
            load_game(bad)

    def test_vocabulary_covers_templates_and_objects(self, microzork):
        vocab = set(microzork.vocabulary)
        for t in microzork.templates:
            assert t.words() <= vocab
        for obj in microzork.objects.values():
            for alias in (obj.name,) + obj.aliases:
                assert set(alias.split()) <= vocab

    def test_gamma_in_range(self, microzork):
        assert 0.0 < microzork.gamma <= 1.0


class TestReset:
    def test_start_room_and_score(self, microzork):
        state, obs = reset(microzork, 0)
        assert state.room == "field"
        assert state.score == 0
        assert obs.score == 0
        assert obs.o_desc.startswith("Field")

    def test_seed_does_not_matter_for_deterministic_spec(self, microzork):
        s1, o1 = reset(microzork, 0)
        s2, o2 = reset(microzork, 12345)
        assert s1 == s2
        assert o1 == o2

    def test_reset_twice_equal_digest(self, microzork):
        s1, _ = reset(microzork, 0)
        s2, _ = reset(microzork, 0)
        assert digest(s1) == digest(s2)

    def test_observation_channels_nonempty(self, microzork):
        _, obs = reset(microzork, 0)
        assert obs.o_desc and obs.o_game and obs.o_inv and obs.a_prev
        assert obs.a_prev == engine.SENTINEL_PREV_ACTION
        assert obs.o_game == obs.o_desc


class TestStep:
    def test_take_key(self, microzork):
        state, _ = reset(microzork, 0)
        after, obs, reward, done = step(state, "take key", microzork)
        assert obs.o_game == "Taken."
        assert after.location_of("key") == engine.INVENTORY
        assert reward == 0 and not done

    def test_unknown_phrase_changes_nothing(self, microzork):
        state, _ = reset(microzork, 0)
        after, obs, reward, done = step(state, "frobnicate zork", microzork)
        assert obs.o_game == engine.RESP_UNRECOGNIZED
        assert digest(after) == digest(state)
        assert reward == 0

    def test_open_chest_with_key_scores_ten(self, microzork):
        state, _ = reset(microzork, 0)
        for action in ["take key", "north", "north"]:
            state, _, _, _ = step(state, action, microzork)
        assert state.score == 0
        state, obs, reward, done = step(state, "open chest with key", microzork)
        assert reward == 10
        assert state.score == 10
        assert "revealing" in obs.o_game

    def test_walkthrough_reaches_max_score(self, microzork):
        state, _ = reset(microzork, 0)
        total = 0
        for action in MICROZORK_WALKTHROUGH:
            state, _, reward, done = step(state, action, microzork)
            total += reward
        assert done
        assert state.score == 30 == total

    def test_pantry_walkthrough(self, pantry):
        state, _ = reset(pantry, 0)
        for action in PANTRY_WALKTHROUGH:
            state, _, _, done = step(state, action, pantry)
        assert done and state.score == 20

    def test_corridor_walkthrough(self, corridor):
        state, _ = reset(corridor, 0)
        for action in CORRIDOR_WALKTHROUGH:
            state, _, _, done = step(state, action, corridor)
        assert done and state.score == 5

    def test_step_does_not_mutate_input(self, microzork):
        state, _ = reset(microzork, 0)
        before = digest(state)
        step(state, "take key", microzork)
        assert digest(state) == before

    def test_input_case_insensitive(self, microzork):
        state, _ = reset(microzork, 0)
        _, obs, _, _ = step(state, "TAKE Key", microzork)
        assert obs.o_game == "Taken."

    def test_alias_and_adjective_reference(self, microzork):
        state, _ = reset(microzork, 0)
        _, obs, _, _ = step(state, "take brass", microzork)
        assert obs.o_game == "Taken."
        _, obs, _, _ = step(state, "get brass key", microzork)
        assert obs.o_game == "Taken."

    def test_ambiguous_reference_fails_in_fiction(self):
        game = TINY_GAME + (
            "\n[object]\nid: door-a\nname: wooden door\naliases: door\nloc: cell\n"
            "\n[object]\nid: door-b\nname: trap door\naliases: door\nloc: cell\n"
            "\n[template]\npattern: [open] OBJ\n"
        )
        spec = load_game(game)
        state, _ = reset(spec, 0)
        after, obs, _, _ = step(state, "open door", spec)
        assert obs.o_game.startswith("Which door do you mean")
        assert digest(after) == digest(state)

    def test_locked_chest_refuses_plain_open(self, microzork):
        state, _ = reset(microzork, 0)
        for action in ["north", "north"]:
            state, _, _, _ = step(state, action, microzork)
        after, obs, _, _ = step(state, "open chest", microzork)
        assert obs.o_game == "It's locked."
        assert digest(after) == digest(state)

    def test_wrong_key_does_not_fit(self, microzork):
        state, _ = reset(microzork, 0)
        for action in ["north", "east", "take lamp", "west", "north"]:
            state, _, _, _ = step(state, action, microzork)
        after, obs, _, _ = step(state, "open chest with lamp", microzork)
        assert obs.o_game == "It doesn't fit."
        assert digest(after) == digest(state)

    def test_turn_counters(self, microzork):
        state, _ = reset(microzork, 0)
        state, _, _, _ = step(state, "look", microzork)
        assert state.turn == 1 and state.valid_steps == 0
        state, _, _, _ = step(state, "take key", microzork)
        assert state.turn == 2 and state.valid_steps == 1

    def test_go_direction_form(self, microzork):
        state, _ = reset(microzork, 0)
        after, _, _, _ = step(state, "go north", microzork)
        assert after.room == "path"


class TestRendering:
    def test_start_look_text(self, microzork):
        state, _ = reset(microzork, 0)
        text = render_look(state, microzork)
        assert "open field" in text
        assert "There is a brass key here." in text

    def test_inventory_after_take(self, microzork):
        state, _ = reset(microzork, 0)
        assert render_inventory(state, microzork) == "You are empty-handed."
        state, _, _, _ = step(state, "take key", microzork)
        assert "brass key" in render_inventory(state, microzork)

    def test_render_is_pure(self, microzork):
        state, _ = reset(microzork, 0)
        assert render_look(state, microzork) == render_look(state, microzork)
        assert render_inventory(state, microzork) == render_inventory(state, microzork)

    def test_render_matches_look_step(self, microzork):
        state, _ = reset(microzork, 0)
        state, _, _, _ = step(state, "take key", microzork)
        _, obs, _, _ = step(state, "look", microzork)
        assert obs.o_game == render_look(state, microzork)
        _, obs, _, _ = step(state, "inventory", microzork)
        assert obs.o_game == render_inventory(state, microzork)

    def test_open_container_lists_contents(self, microzork):
        state, _ = reset(microzork, 0)
        state, _, _, _ = step(state, "open mailbox", microzork)
        assert "The mailbox contains a leaflet." in render_look(state, microzork)


class TestSnapshot:
    def test_round_trip_digest(self, microzork):
        state, _ = reset(microzork, 0)
        state, _, _, _ = step(state, "take key", microzork)
        assert digest(restore(snapshot(state))) == digest(state)
        assert restore(snapshot(state)) == state

    def test_snapshot_then_step_then_restore(self, microzork):
        state, _ = reset(microzork, 0)
        blob = snapshot(state)
        stepped, _, _, _ = step(state, "take key", microzork)
        assert digest(stepped) != digest(state)
        assert digest(restore(blob)) == digest(state)

    def test_corrupted_snapshot_rejected(self, microzork):
        state, _ = reset(microzork, 0)
        blob = bytearray(snapshot(state))
        blob[len(blob) // 2] ^= 0xFF
        with pytest.raises(SnapshotError):
            restore(bytes(blob))

    def test_foreign_bytes_rejected(self):
        with pytest.raises(SnapshotError):
            restore(b"this is not a snapshot at all")

    def test_version_mismatch_rejected(self, microzork):
        state, _ = reset(microzork, 0)
        blob = bytearray(snapshot(state))
        blob[4] = 99
        with pytest.raises(SnapshotError):
            restore(bytes(blob))


class TestWorldChanged:
    def test_take_changes_world(self, microzork):
        state, _ = reset(microzork, 0)
        after, _, _, _ = step(state, "take key", microzork)
        assert world_changed(digest(state), digest(after))

    def test_look_does_not_change_world(self, microzork):
        state, _ = reset(microzork, 0)
        after, _, _, _ = step(state, "look", microzork)
        assert not world_changed(digest(state), digest(after))

    def test_walking_into_wall_does_not_change_world(self, microzork):
        state, _ = reset(microzork, 0)
        after, _, _, _ = step(state, "south", microzork)
        assert not world_changed(digest(state), digest(after))


class TestInvariants:
    def _random_actions(self, spec, space, rng, n):
        words = list(spec.vocabulary)
        actions = []
        for _ in range(n):
            t = rng.choice(space.templates)
            fillers = [rng.choice(words) for _ in range(t.blanks)]
            actions.append(space.instantiate(space.templates.index(t), fillers))
        return actions

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_determinism_and_reward_conservation(self, microzork, microzork_space, seed):
        rng = random.Random(seed)
        actions = self._random_actions(microzork, microzork_space, rng, 120)
        state, _ = reset(microzork, 0)
        replay, _ = reset(microzork, 0)
        total = 0
        for action in actions:
            nxt, obs, reward, done = step(state, action, microzork)
            nxt2, obs2, reward2, done2 = step(replay, action, microzork)
            assert digest(nxt) == digest(nxt2)
            assert (obs, reward, done) == (obs2, reward2, done2)
            total += reward
            state, replay = nxt, nxt2
            if done:
                break
        assert state.score == total

    @pytest.mark.parametrize("seed", [10, 11, 12])
    def test_once_rules_never_fire_twice(self, microzork, microzork_space, seed):
        rng = random.Random(seed)
        state, _ = reset(microzork, 0)
        fired: dict[str, int] = {}
        for action in self._random_actions(microzork, microzork_space, rng, 300):
            before = state.collected
            state, _, _, done = step(state, action, microzork)
            for rid in state.collected - before:
                fired[rid] = fired.get(rid, 0) + 1
            if done:
                break
        assert all(count == 1 for count in fired.values())

    def test_score_equals_collected_points(self, microzork):
        state, _ = reset(microzork, 0)
        for action in MICROZORK_WALKTHROUGH:
            state, _, _, _ = step(state, action, microzork)
            expected = sum(
                rule.points
                for rule in microzork.rewards
                if rule.id in state.collected
            )
            assert state.score == expected

    def test_episode_ends_by_valid_step_cap(self, microzork):
        state, _ = reset(microzork, 0)
        done = False
        steps = 0
        # alternating movement is always a valid action
        toggle = ["north", "south"]
        while not done:
            state, _, _, done = step(state, toggle[steps % 2], microzork)
            steps += 1
            assert steps <= microzork.valid_step_cap
        assert state.valid_steps == microzork.valid_step_cap == 100

    def test_hard_turn_cap_bounds_invalid_loops(self, microzork):
        state, _ = reset(microzork, 0)
        done = False
        turns = 0
        while not done:
            state, _, _, done = step(state, "frobnicate zork", microzork)
            turns += 1
            assert turns <= microzork.turn_cap
        assert state.turn == microzork.turn_cap == 1000
        assert state.valid_steps == 0
