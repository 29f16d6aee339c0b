import numpy as np
import pytest

from shelfmatch.corpus import compose_target_text, normalize_text
from shelfmatch.synth import (
    NO_CORRUPTION, CorruptionConfig, SynthSample, corrupt_text, gen_benchmark, gen_rerank_dataset,
    stream,
)

TEXT = "tolkien the lord of the rings the fellowship of the ring"
VOCAB = ["alpha", "beta", "gamma"]


def test_identity_configuration():
    assert corrupt_text(TEXT, NO_CORRUPTION, stream(0, 0), VOCAB) == TEXT


def test_delete_every_character():
    cfg = CorruptionConfig(p_char_del=1.0, p_char_sub=0.0, p_word_del=0.0, p_word_rep=0.0)
    assert corrupt_text(TEXT, cfg, stream(0, 0), VOCAB) == ""


def test_delete_every_word():
    cfg = CorruptionConfig(0.0, 0.0, 1.0, 0.0)
    assert corrupt_text(TEXT, cfg, stream(0, 0), VOCAB) == ""


def test_replace_every_word():
    cfg = CorruptionConfig(0.0, 0.0, 0.0, 1.0)
    out = corrupt_text(TEXT, cfg, stream(0, 0), VOCAB).split(" ")
    assert len(out) == len(TEXT.split()) and set(out) <= set(VOCAB)


def test_substitute_every_character():
    cfg = CorruptionConfig(0.0, 1.0, 0.0, 0.0, alphabet="#")
    assert corrupt_text("ab c", cfg, stream(0, 0)) == "####"


def test_determinism_and_seed_sensitivity():
    cfg = CorruptionConfig()
    a = corrupt_text(TEXT, cfg, stream(1, 0), VOCAB)
    assert corrupt_text(TEXT, cfg, stream(1, 0), VOCAB) == a
    outs = {corrupt_text(TEXT, cfg, stream(s, 0), VOCAB) for s in range(10)}
    assert len(outs) > 1


@pytest.mark.parametrize("kwargs", [{"p_char_del": -0.1}, {"p_word_rep": 1.5}, {"alphabet": ""}])
def test_config_guards(kwargs):
    with pytest.raises(ValueError):
        CorruptionConfig(**kwargs)


def test_expected_length_decreases_with_deletion():
    means = []
    for p in (0.0, 0.2, 0.5):
        cfg = CorruptionConfig(p_char_del=p, p_char_sub=0.0, p_word_del=0.0, p_word_rep=0.0)
        means.append(np.mean([len(corrupt_text(TEXT, cfg, stream(3, 0, i))) for i in range(1000)]))
    assert means[0] > means[1] > means[2]
    assert means[0] == len(TEXT)


@pytest.fixture(scope="module")
def small_bench():
    return gen_benchmark(60, 5, CorruptionConfig(seed=11))


def test_rerank_samples_construction(small_bench):
    samples = gen_rerank_dataset(small_bench.catalog, k=10, n_samples=400, cfg=CorruptionConfig(seed=4))
    texts = small_bench.catalog.texts()
    for s in samples:
        src = small_bench.catalog.position(s.source_id)
        assert s.k == 10 and len(set(s.candidates)) == 10
        assert list(s.candidate_texts) == [texts[p] for p in s.candidates]
        order = sorted(zip(s.scores, s.candidates), key=lambda c: (-c[0], c[1]))
        assert [p for _, p in order] == list(s.candidates)
        if s.label < s.k:
            assert s.candidates[s.label] == src
        else:
            assert src not in s.candidates
    frac = np.mean([s.is_none for s in samples])
    assert 0.4 < frac < 0.6


def test_rerank_dataset_deterministic(small_bench):
    a = gen_rerank_dataset(small_bench.catalog, n_samples=50, cfg=CorruptionConfig(seed=9))
    b = gen_rerank_dataset(small_bench.catalog, n_samples=50, cfg=CorruptionConfig(seed=9))
    assert a == b


def test_rerank_dataset_guards(small_bench):
    with pytest.raises(ValueError, match="more than K"):
        gen_rerank_dataset(small_bench.catalog, k=len(small_bench.catalog))


def test_sample_dict_roundtrip(small_bench):
    (s,) = gen_rerank_dataset(small_bench.catalog, n_samples=1, cfg=CorruptionConfig(seed=2))
    assert SynthSample.from_dict(s.to_dict()) == s
    bad = s.to_dict() | {"label": 99}
    with pytest.raises(ValueError):
        SynthSample.from_dict(bad)


def test_exact_regime_catalogue_is_the_shelf():
    b = gen_benchmark(40, 1, CorruptionConfig(seed=3))
    assert len(b.catalog) == 40
    assert {d.gt_ids[0] for d in b.detections} == set(b.catalog.index)


def test_zero_corruption_texts_identical():
    b = gen_benchmark(40, 3, NO_CORRUPTION)
    for d in b.detections:
        entry = b.catalog[b.catalog.position(d.gt_ids[0])]
        assert normalize_text(d.ocr_text) == compose_target_text(entry)


def test_distractor_regimes_are_nested():
    small = gen_benchmark(50, 2, CorruptionConfig(seed=8))
    large = gen_benchmark(50, 6, CorruptionConfig(seed=8))
    assert small.detections == large.detections
    assert len(large.catalog) == 300
    assert set(small.catalog.index) < set(large.catalog.index)
    for entry in small.catalog.entries:
        assert large.catalog[large.catalog.position(entry.id)] == entry


def test_not_in_list_detections():
    b = gen_benchmark(30, 2, CorruptionConfig(seed=5), n_not_in_list=7)
    absent = [d for d in b.detections if d.gt_ids == ()]
    assert len(absent) == 7 and len(b.detections) == 37 and len(b.catalog) == 60


def test_unique_composed_texts():
    b = gen_benchmark(200, 5, CorruptionConfig(seed=1), series_fraction=0.5)
    texts = b.catalog.texts()
    assert len(set(texts)) == len(texts)


def test_benchmark_guards():
    with pytest.raises(ValueError):
        gen_benchmark(0)
    with pytest.raises(ValueError):
        gen_benchmark(10, 0.5)
