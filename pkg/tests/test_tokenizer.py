import math
import random
from functools import reduce
from itertools import combinations

import pytest

from kga2c.tokenizer import (
    BOUNDARY,
    MAX_PIECE_LEN,
    SPECIALS,
    SubwordModel,
    TokenizerError,
    decode,
    encode,
    train_unigram,
)


@pytest.fixture(scope="module")
def model(corpus):
    return train_unigram(corpus, 512)


def brute_force_best_loglik(model: SubwordModel, text: str) -> float:
    """Exhaustive segmentation oracle.  Sums each candidate right-to-left,
    matching the DP's association order, so equality is exact."""
    total = 0.0
    for word in text.split():
        marked = BOUNDARY + word
        n = len(marked)
        best = -math.inf
        for r in range(n):  # r interior cut points
            for cuts in combinations(range(1, n), r):
                bounds = [0, *cuts, n]
                pieces = [marked[a:b] for a, b in zip(bounds, bounds[1:])]
                if any(len(p) > MAX_PIECE_LEN for p in pieces):
                    continue
                if any(p not in model.log_probs for p in pieces):
                    continue
                ll = reduce(
                    lambda acc, p: model.log_probs[p] + acc, reversed(pieces), 0.0
                )
                best = max(best, ll)
        total += best
    return total


def viterbi_loglik(model: SubwordModel, text: str) -> float:
    total = 0.0
    for word in text.split():
        from kga2c.tokenizer import _viterbi

        score, _ = _viterbi(BOUNDARY + word, model.log_probs)
        total += score
    return total


class TestTraining:
    def test_bundled_corpus_exact_target(self, model):
        assert len(model) == 512

    def test_character_floor_corpus(self):
        m = train_unigram(["aaaa"], target_size=2 + len(SPECIALS))
        learned = set(m.pieces) - set(SPECIALS)
        assert learned == {BOUNDARY, "a"}

    def test_target_below_floor_rejected(self):
        with pytest.raises(TokenizerError):
            train_unigram(["abc def"], target_size=3)

    def test_empty_corpus_rejected(self):
        with pytest.raises(TokenizerError):
            train_unigram([], target_size=100)
        with pytest.raises(TokenizerError):
            train_unigram(["   ", ""], target_size=100)

    def test_deterministic(self, corpus):
        a = train_unigram(corpus, 256)
        b = train_unigram(corpus, 256)
        assert a.pieces == b.pieces
        assert a.log_probs == b.log_probs

    def test_probabilities_form_subdistribution(self, model):
        total = sum(math.exp(lp) for lp in model.log_probs.values())
        assert total <= 1.0 + 1e-9

    def test_monotone_pruning(self, corpus):
        m = train_unigram(corpus, 512)
        assert m.prune_trace, "expected at least one pruning round"
        for max_pruned, min_kept in m.prune_trace:
            assert max_pruned <= min_kept

    def test_every_corpus_character_has_piece(self, model, corpus):
        chars = {c for line in corpus for c in line if not c.isspace()}
        for c in chars:
            assert c in model.log_probs


class TestEncode:
    def test_empty_string(self, model):
        assert encode(model, "") == []

    def test_round_trip_all_corpus_lines(self, model, corpus):
        for line in corpus:
            assert decode(model, encode(model, line)) == line

    def test_unknown_character_maps_to_unk(self, model):
        ids = encode(model, "key¿")
        assert model.unk_id in ids

    def test_sentinel_is_single_piece(self, model):
        assert encode(model, "<start>") == [model.start_id]

    @pytest.mark.parametrize("seed", range(6))
    def test_viterbi_matches_brute_force(self, model, corpus, seed):
        rng = random.Random(seed)
        for _ in range(40):
            line = rng.choice(corpus)
            if len(line) > 12:
                start = rng.randrange(0, len(line) - 12 + 1)
                text = line[start : start + rng.randint(1, 12)]
            else:
                text = line
            text = text.strip()
            if not text:
                continue
            assert viterbi_loglik(model, text) == brute_force_best_loglik(model, text)

    def test_ties_prefer_fewer_pieces(self):
        lp = math.log(0.25)
        model = SubwordModel(
            {
                "<pad>": -20.0, "<unk>": -20.0, "<start>": -20.0,
                BOUNDARY: lp, "a": lp, BOUNDARY + "a": 2 * lp, "aa": 2 * lp,
            }
        )
        ids = encode(model, "aa")
        # "_a" + "aa"... all segmentations score 3*lp; fewest pieces wins (2)
        assert len(ids) == 2


class TestDecode:
    def test_inverse_on_corpus(self, model, corpus):
        line = corpus[0]
        assert decode(model, encode(model, line)) == line

    def test_empty_ids(self, model):
        assert decode(model, []) == ""

    def test_out_of_range_id(self, model):
        with pytest.raises(TokenizerError):
            decode(model, [len(model)])


class TestModelFile:
    def test_bit_exact_round_trip(self, model, tmp_path):
        path = tmp_path / "pieces.tsv"
        model.save(path)
        loaded = SubwordModel.load(path)
        assert loaded.pieces == model.pieces
        assert loaded.log_probs == model.log_probs

    def test_specials_first(self, model, tmp_path):
        path = tmp_path / "pieces.tsv"
        model.save(path)
        head = path.read_text("utf-8").splitlines()[:3]
        assert [line.split("\t")[0] for line in head] == list(SPECIALS)

    def test_malformed_file_rejected(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("nota model file\n", encoding="utf-8")
        with pytest.raises(TokenizerError):
            SubwordModel.load(path)
