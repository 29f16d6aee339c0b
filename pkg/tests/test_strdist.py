import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shelfmatch.corpus import Catalog, CatalogEntry, Detection
from shelfmatch.strdist import (
    best_matches, fuzzy_best_match, levenshtein, levenshtein_dp, levenshtein_pairs,
    normalized_similarity,
)

ALPHABET = "abcde xyzàéñ漢字ß́"


def rand_text(rng, max_len, alphabet=ALPHABET):
    return "".join(rng.choice(alphabet) for _ in range(rng.randint(0, max_len)))


def test_dp_oracle_textbook_values():
    assert levenshtein_dp("kitten", "sitting") == 3
    assert levenshtein_dp("flaw", "lawn") == 2
    assert levenshtein_dp("", "") == 0


@pytest.mark.parametrize("a, b, d", [("kitten", "sitting", 3), ("abc", "abc", 0), ("", "abc", 3),
                                     ("abc", "", 3), ("café", "cafe", 1)])
def test_levenshtein_examples(a, b, d):
    assert levenshtein(a, b) == d
    assert levenshtein_pairs([a], [b]).tolist() == [d]


@pytest.mark.parametrize("a, b, s", [("abc", "abc", 1.0), ("", "abc", 0.0), ("", "", 1.0),
                                     ("kitten", "sitting", 1 - 3 / 7)])
def test_normalized_similarity(a, b, s):
    assert normalized_similarity(a, b) == pytest.approx(s, abs=1e-15)
    assert normalized_similarity(b, a) == normalized_similarity(a, b)


def test_long_patterns_cross_word_boundaries():
    rng = random.Random(5)
    for n in (63, 64, 65, 127, 128, 129, 300):
        a = rand_text(rng, 0, "ab") + "".join(rng.choice("abc") for _ in range(n))
        b = "".join(rng.choice("abc") for _ in range(n + rng.randint(-5, 5)))
        d = levenshtein_dp(a, b)
        assert levenshtein(a, b) == d
        assert levenshtein_pairs([a], [b]).tolist() == [d]


@given(st.text(max_size=30), st.text(max_size=30))
@settings(max_examples=300)
def test_bitparallel_equals_dp(a, b):
    assert levenshtein(a, b) == levenshtein_dp(a, b)


def test_compiled_equals_dp_random():
    rng = random.Random(0)
    pairs = [(rand_text(rng, 80), rand_text(rng, 80)) for _ in range(1000)]
    got = levenshtein_pairs([a for a, _ in pairs], [b for _, b in pairs])
    assert got.tolist() == [levenshtein_dp(a, b) for a, b in pairs]


@given(st.text(max_size=20), st.text(max_size=20), st.text(max_size=20))
@settings(max_examples=200)
def test_metric_axioms(a, b, c):
    ab, bc, ac = levenshtein(a, b), levenshtein(b, c), levenshtein(a, c)
    assert ab >= 0 and (ab == 0) == (a == b)
    assert ab == levenshtein(b, a)
    assert ac <= ab + bc
    s = normalized_similarity(a, b)
    assert 0.0 <= s <= 1.0 and (s == 1.0) == (a == b)


def _exhaustive(queries, targets):
    pos, sim = [], []
    for q in queries:
        sims = [normalized_similarity(q, t) for t in targets]
        best = max(sims)
        pos.append(sims.index(best))
        sim.append(best)
    return pos, sim


def test_pruned_equals_exhaustive_small():
    rng = random.Random(1)
    words = ["dune", "herbert", "hobbit", "tolkien", "ring", "lord", "the", "of", "la", "casa"]
    targets = [" ".join(rng.choice(words) for _ in range(rng.randint(1, 4))) for _ in range(300)]
    queries = [rand_text(rng, 3, "xz") + rng.choice(targets)[: rng.randint(0, 20)] for _ in range(100)]
    pos, sim = best_matches(queries, targets)
    ref_pos, ref_sim = _exhaustive(queries, targets)
    assert pos.tolist() == ref_pos
    assert sim.tolist() == ref_sim


def test_pruned_equals_unpruned_large():
    rng = random.Random(2)
    targets = [rand_text(rng, 40, "abcdefgh ") for _ in range(10_000)]
    queries = [rand_text(rng, 40, "abcdefgh ") for _ in range(40)] + targets[:10]
    p1, s1 = best_matches(queries, targets, prune=True)
    p2, s2 = best_matches(queries, targets, prune=False)
    assert np.array_equal(p1, p2) and s1.tobytes() == s2.tobytes()


def test_fuzzy_best_match_exact_and_ties():
    cat = Catalog([
        CatalogEntry("a", "Frank Herbert", "Dune"),
        CatalogEntry("b", "J.R.R. Tolkien", "The Hobbit"),
        CatalogEntry("c", "J R R Tolkien", "the hobbit"),
    ])
    dets = [Detection("i", "1", "tolkien the hobbit"), Detection("i", "2", "J.R.R. TOLKIEN the hobbit"),
            Detection("i", "3", "frank herbert dune")]
    recs = fuzzy_best_match(dets, cat)
    assert [(r.predicted_id, r.score, r.stage) for r in recs][1:] == [("b", 1.0, "fuzzy"), ("a", 1.0, "fuzzy")]
    # "b" and "c" compose to the same text, so the lower position wins every tie
    assert recs[0].predicted_id == "b"


def test_fuzzy_raw_mode_keeps_case():
    cat = Catalog([CatalogEntry("a", "", "ABC"), CatalogEntry("b", "", "abd")])
    assert fuzzy_best_match([Detection("i", "1", "abc")], cat, normalize=False)[0].predicted_id == "b"
    assert fuzzy_best_match([Detection("i", "1", "abc")], cat)[0].predicted_id == "a"


def test_fuzzy_empty_catalogue():
    with pytest.raises(ValueError, match="empty"):
        fuzzy_best_match([Detection("i", "1", "x")], Catalog([]))
