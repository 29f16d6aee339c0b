"""Synthetic OCR-style corruption, reranker training data and seeded benchmarks.

Randomness is split by counter: every sample or detection draws from its
own generator seeded with ``(seed, stream, index)``, so any subset of the
output can be regenerated independently and results do not depend on
generation order.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from shelfmatch.corpus import Catalog, CatalogEntry, Detection, compose_target_text, normalize_text
from shelfmatch.embed import EmbedConfig, embed_batch
from shelfmatch.simtopk import matrix_blocks, similarity_matrix, top_k_candidates

DEFAULT_ALPHABET = string.ascii_lowercase + string.digits + " " + "áéíóúàèìòùäëïöüñç·"

# stream tags for counter-based seeding
_ENTRIES, _DISTRACTORS, _ORDER, _CORRUPT, _RERANK, _WORDS = range(6)


def stream(seed: int, tag: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, tag, index])


@dataclass(frozen=True)
class CorruptionConfig:
    p_char_del: float = 0.05
    p_char_sub: float = 0.05
    p_word_del: float = 0.15
    p_word_rep: float = 0.10
    alphabet: str = DEFAULT_ALPHABET
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("p_char_del", "p_char_sub", "p_word_del", "p_word_rep"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be a probability, got {p}")
        if not self.alphabet:
            raise ValueError("substitution alphabet must be non-empty")


NO_CORRUPTION = CorruptionConfig(0.0, 0.0, 0.0, 0.0)


def corrupt_text(text: str, cfg: CorruptionConfig, rng: np.random.Generator,
                 vocab: Sequence[str] = ()) -> str:
    """Word-level then character-level corruption of a normalized text.

    Each token is deleted with ``p_word_del``, otherwise replaced by a
    uniform vocabulary token with ``p_word_rep``. Each surviving character
    is then deleted with ``p_char_del``, otherwise substituted from the
    alphabet with ``p_char_sub``. Draw counts depend only on the input
    length, so the generator state advances predictably.
    """
    tokens = text.split(" ") if text else []
    u_del = rng.random(len(tokens))
    u_rep = rng.random(len(tokens))
    picks = rng.integers(0, max(len(vocab), 1), size=len(tokens))
    kept = []
    for tok, ud, ur, pick in zip(tokens, u_del, u_rep, picks):
        if ud < cfg.p_word_del:
            continue
        if ur < cfg.p_word_rep and vocab:
            tok = vocab[pick]
        kept.append(tok)
    chars = " ".join(kept)
    c_del = rng.random(len(chars))
    c_sub = rng.random(len(chars))
    subs = rng.integers(0, len(cfg.alphabet), size=len(chars))
    out = []
    for ch, cd, cs, sub in zip(chars, c_del, c_sub, subs):
        if cd < cfg.p_char_del:
            continue
        out.append(cfg.alphabet[sub] if cs < cfg.p_char_sub else ch)
    return "".join(out)


def catalog_vocabulary(texts: Sequence[str]) -> list[str]:
    return sorted({tok for t in texts for tok in t.split()})


# -- reranker training data ------------------------------------------------------


@dataclass(frozen=True)
class SynthSample:
    """A corrupted catalogue text with K candidates; ``label == len(candidates)``
    means the source entry is not among them."""

    corrupted_text: str
    source_id: str
    candidates: tuple[int, ...]
    scores: tuple[float, ...]
    candidate_texts: tuple[str, ...]
    label: int

    @property
    def k(self) -> int:
        return len(self.candidates)

    @property
    def is_none(self) -> bool:
        return self.label == len(self.candidates)

    def to_dict(self) -> dict:
        return {
            "text": self.corrupted_text,
            "source_id": self.source_id,
            "candidates": list(self.candidates),
            "scores": list(self.scores),
            "candidate_texts": list(self.candidate_texts),
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SynthSample":
        sample = cls(
            str(obj["text"]), str(obj["source_id"]),
            tuple(int(c) for c in obj["candidates"]),
            tuple(float(s) for s in obj["scores"]),
            tuple(str(t) for t in obj["candidate_texts"]),
            int(obj["label"]),
        )
        n = len(sample.candidates)
        if not (len(sample.scores) == len(sample.candidate_texts) == n) or not 0 <= sample.label <= n:
            raise ValueError("inconsistent sample: candidates, scores, texts and label disagree")
        return sample


def gen_rerank_dataset(catalog: Catalog, embed_cfg: EmbedConfig = EmbedConfig(), k: int = 10,
                       n_samples: int = 10_000, cfg: CorruptionConfig = CorruptionConfig(),
                       block_size: int = 4096) -> list[SynthSample]:
    """Corrupted-entry samples where half include the source among the top-K
    embedding candidates and half do not.

    Inclusion is forced by swapping the source in for the lowest-scoring
    candidate and re-sorting; exclusion drops it and promotes candidate K+1.
    """
    if k < 1:
        raise ValueError("K must be >= 1")
    if len(catalog) <= k:
        raise ValueError(f"catalogue needs more than K={k} entries, has {len(catalog)}")
    if n_samples < 0:
        raise ValueError("n_samples must be non-negative")
    texts = catalog.texts()
    vocab = catalog_vocabulary(texts)
    T = embed_batch(texts, embed_cfg)

    sources, corrupted, heads = [], [], []
    for s in range(n_samples):
        rng = stream(cfg.seed, _RERANK, s)
        pos = int(rng.integers(len(catalog)))
        sources.append(pos)
        corrupted.append(normalize_text(corrupt_text(texts[pos], cfg, rng, vocab)))
        heads.append(bool(rng.random() < 0.5))

    B = embed_batch(corrupted, embed_cfg)
    cands = top_k_candidates(B, matrix_blocks(T, block_size), k + 1) if n_samples else []

    samples = []
    for s in range(n_samples):
        pos = sources[s]
        ranked = list(zip(cands[s].positions.tolist(), cands[s].scores.tolist()))
        present = [p for p, _ in ranked[:k]]
        if heads[s]:
            chosen = ranked[:k]
            if pos not in present:
                own = float(similarity_matrix(B[s:s + 1], T[pos:pos + 1])[0, 0])
                chosen = sorted(chosen[:-1] + [(pos, own)], key=lambda c: (-c[1], c[0]))
            label = [p for p, _ in chosen].index(pos)
        else:
            chosen = [c for c in ranked if c[0] != pos][:k]
            label = k
        samples.append(SynthSample(
            corrupted[s], catalog[pos].id,
            tuple(p for p, _ in chosen), tuple(sc for _, sc in chosen),
            tuple(texts[p] for p, _ in chosen), label,
        ))
    return samples


# -- benchmark generation --------------------------------------------------------

_ONSETS = ["", "b", "c", "d", "f", "g", "l", "m", "n", "p", "r", "s", "t", "v", "x", "ll",
           "br", "cr", "tr", "pl", "gr", "ch", "qu", "j", "z"]
_VOWELS = ["a", "e", "i", "o", "u", "a", "e", "o", "à", "è", "é", "í", "ò", "ó", "ú", "ia", "ue"]
_CODAS = ["", "", "", "n", "s", "r", "l", "t", "ll", "ns", "rt"]


@dataclass(frozen=True)
class WordSource:
    """Seeded pseudo-word lexicon: title words (Zipf-weighted) and name pools."""

    seed: int = 0
    n_words: int = 6000
    n_first: int = 600
    n_last: int = 4000
    words: list[str] = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)
    first_names: list[str] = field(init=False, repr=False)
    last_names: list[str] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        rng = stream(self.seed, _WORDS)

        def draw(n: int, lo: int, hi: int) -> list[str]:
            out: dict[str, None] = {}
            while len(out) < n:
                syl = int(rng.integers(lo, hi + 1))
                word = "".join(
                    _ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))]
                    + _CODAS[rng.integers(len(_CODAS))] for _ in range(syl)
                )
                out.setdefault(word, None)
            return list(out)

        words = draw(self.n_words, 1, 4)
        ranks = np.arange(1, len(words) + 1, dtype=np.float64)
        weights = 1.0 / ranks
        object.__setattr__(self, "words", words)
        object.__setattr__(self, "weights", weights / weights.sum())
        object.__setattr__(self, "first_names", [w.capitalize() for w in draw(self.n_first, 2, 3)])
        object.__setattr__(self, "last_names", [w.capitalize() for w in draw(self.n_last, 2, 4)])

    def vocabulary(self) -> list[str]:
        names = {normalize_text(n) for n in self.first_names + self.last_names}
        return sorted(set(self.words) | names)

    def entry(self, rng: np.random.Generator) -> tuple[str, str]:
        """One (author, title) pair."""
        author = f"{self.first_names[rng.integers(len(self.first_names))]} " \
                 f"{self.last_names[rng.integers(len(self.last_names))]}"
        n_title = int(rng.integers(1, 7))
        idx = rng.choice(len(self.words), size=n_title, p=self.weights)
        title = " ".join(self.words[i] for i in idx).capitalize()
        return author, title


def _isbn13(rng: np.random.Generator) -> str:
    digits = [9, 7, 8] + [int(d) for d in rng.integers(0, 10, size=9)]
    check = (10 - sum(d * (3 if i % 2 else 1) for i, d in enumerate(digits)) % 10) % 10
    return "".join(map(str, digits + [check]))


def _unique_entries(words: WordSource, seed: int, tag: int, n: int, taken: set[str],
                    series_fraction: float) -> list[tuple[str, str, str]]:
    """``n`` (author, title, isbn) triples whose composed text is not in ``taken``.

    A ``series_fraction`` of entries come in runs of 2-4 sharing author and a
    series name, the case where independent argmax matching collides.
    """
    out: list[tuple[str, str, str]] = []
    i = 0
    while len(out) < n:
        rng = stream(seed, tag, i)
        i += 1
        author, title = words.entry(rng)
        group = [(author, title)]
        if rng.random() < series_fraction:
            series = title
            for vol in range(int(rng.integers(1, 4))):
                _, sub = words.entry(rng)
                group.append((author, f"{series} {vol + 2} {sub.lower()}"))
        for a, t in group:
            if len(out) == n:
                break
            key = normalize_text(f"{a} {t}")
            if key in taken:
                continue
            taken.add(key)
            out.append((a, t, _isbn13(rng)))
    return out


@dataclass(frozen=True)
class Benchmark:
    catalog: Catalog
    detections: list[Detection]


def gen_benchmark(n_queries: int = 1000, distractor_multiplier: float = 1.0,
                  cfg: CorruptionConfig = CorruptionConfig(), n_not_in_list: int = 0,
                  series_fraction: float = 0.1, shelf_size: int = 26,
                  words: WordSource | None = None) -> Benchmark:
    """Seeded shelf-matching benchmark.

    The catalogue holds the ``n_queries`` shelved books plus distractors up
    to ``round(n_queries * distractor_multiplier)`` entries; multiplier 1 is
    the exact-list regime. Shelved books and their corrupted spine texts do
    not depend on the multiplier, and larger catalogues are supersets of
    smaller ones, so regimes can be compared query for query. Another
    ``n_not_in_list`` shelved books are left out of the catalogue and carry
    empty ground truth.
    """
    if n_queries < 1:
        raise ValueError("n_queries must be >= 1")
    if distractor_multiplier < 1:
        raise ValueError("distractor multiplier must be >= 1")
    if n_not_in_list < 0 or shelf_size < 1:
        raise ValueError("n_not_in_list must be >= 0 and shelf_size >= 1")
    n_targets = int(round(n_queries * distractor_multiplier))
    words = words or WordSource(cfg.seed)
    taken: set[str] = set()
    shelved = _unique_entries(words, cfg.seed, _ENTRIES, n_queries + n_not_in_list, taken,
                              series_fraction)
    distractors = _unique_entries(words, cfg.seed, _DISTRACTORS, n_targets - n_queries, taken,
                                  series_fraction)

    entries = [CatalogEntry(f"b{i:07d}", a, t, isbn) for i, (a, t, isbn) in enumerate(shelved)]
    entries += [CatalogEntry(f"d{i:08d}", a, t, isbn) for i, (a, t, isbn) in enumerate(distractors)]
    in_list = entries[:n_queries] + entries[n_queries + n_not_in_list:]
    order = stream(cfg.seed, _ORDER, n_targets).permutation(len(in_list))
    catalog = Catalog(in_list[i] for i in order)

    vocab = words.vocabulary()
    # shelved books are laid out on shelves in a seeded order, absent ones mixed in
    shelf_order = stream(cfg.seed, _ORDER).permutation(n_queries + n_not_in_list)
    detections = []
    for slot, idx in enumerate(shelf_order):
        entry = entries[idx]
        rng = stream(cfg.seed, _CORRUPT, int(idx))
        text = corrupt_text(compose_target_text(entry), cfg, rng, vocab)
        gt = (entry.id,) if idx < n_queries else ()
        detections.append(Detection(
            f"img{slot // shelf_size:04d}", f"s{slot % shelf_size:03d}", text, gt, "book",
        ))
    return Benchmark(catalog, detections)
