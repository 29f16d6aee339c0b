"""Levenshtein distance, normalized edit similarity and the fuzzy-match baseline.

Distances count Unicode code points. The scalar path uses the Myers /
Hyyrö bit-vector recurrence on Python integers (any pattern length); the
catalogue search runs the same recurrence on 64-bit words under numba,
with two exact cutoffs: the length-difference bound and an early exit
once the running distance cannot beat the best similarity so far.
"""

from __future__ import annotations

from typing import Sequence

import numba
import numpy as np

from shelfmatch.corpus import Catalog, Detection, MatchRecord, normalize_text


def levenshtein_dp(a: str, b: str) -> int:
    """Textbook O(len(a) * len(b)) dynamic program."""
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, cb in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb))
        prev = cur
    return prev[-1]


def levenshtein(a: str, b: str) -> int:
    """Edit distance (insert, delete, substitute; unit costs)."""
    if len(a) < len(b):
        a, b = b, a
    m = len(b)
    if m == 0:
        return len(a)
    peq: dict[str, int] = {}
    for i, c in enumerate(b):
        peq[c] = peq.get(c, 0) | (1 << i)
    mask = (1 << m) - 1
    last = 1 << (m - 1)
    pv, mv, score = mask, 0, m
    for c in a:
        eq = peq.get(c, 0)
        d0 = (((eq & pv) + pv) ^ pv) | eq | mv
        ph = mv | ~(d0 | pv)
        mh = pv & d0
        if ph & last:
            score += 1
        elif mh & last:
            score -= 1
        ph = (ph << 1) | 1
        mh <<= 1
        pv = (mh | ~(d0 | ph)) & mask
        mv = ph & d0 & mask
    return score


def normalized_similarity(a: str, b: str) -> float:
    """``1 - distance / max(len(a), len(b))``; two empty strings score 1."""
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(a, b) / longest


# -- batch search ------------------------------------------------------------


def _codepoints(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-32-le"), dtype=np.uint32)


def encode_texts(texts: Sequence[str], alphabet: dict[int, int] | None = None
                 ) -> tuple[np.ndarray, np.ndarray, dict[int, int]]:
    """Concatenate texts as compact symbol ids plus offsets.

    Code points not in ``alphabet`` get fresh ids, so the same alphabet can
    be threaded through the catalogue and the queries.
    """
    alphabet = {} if alphabet is None else alphabet
    offsets = np.zeros(len(texts) + 1, dtype=np.int64)
    np.cumsum([len(t) for t in texts], out=offsets[1:])
    cps = _codepoints("".join(texts))
    uniq, inverse = np.unique(cps, return_inverse=True)
    remap = np.empty(len(uniq), dtype=np.int32)
    for k, cp in enumerate(uniq.tolist()):
        remap[k] = alphabet.setdefault(cp, len(alphabet))
    return remap[inverse].astype(np.int32), offsets, alphabet


@numba.njit(cache=True)
def _build_peq(q, n_symbols):
    words = (len(q) + 63) // 64
    peq = np.zeros((n_symbols, words), dtype=np.uint64)
    for i in range(len(q)):
        peq[q[i], i // 64] |= np.uint64(1) << np.uint64(i % 64)
    return peq


@numba.njit(cache=True)
def _myers_cutoff(peq, m, t, cutoff):
    """Distance between the pattern behind ``peq`` (length m) and ``t``;
    returns ``cutoff + 1`` as soon as the distance must exceed ``cutoff``."""
    n = len(t)
    if m == 0:
        return n
    words = peq.shape[1]
    pv = np.empty(words, dtype=np.uint64)
    mv = np.zeros(words, dtype=np.uint64)
    pv[:] = ~np.uint64(0)
    last = np.uint64(1) << np.uint64((m - 1) % 64)
    one = np.uint64(1)
    sh = np.uint64(63)
    score = m
    for j in range(n):
        c = t[j]
        hp_carry = one
        hn_carry = np.uint64(0)
        add_carry = np.uint64(0)
        for w in range(words):
            eq = peq[c, w]
            p = pv[w]
            v = mv[w]
            x = eq & p
            s = x + p
            c1 = np.uint64(1) if s < x else np.uint64(0)
            s2 = s + add_carry
            c2 = np.uint64(1) if s2 < s else np.uint64(0)
            add_carry = c1 | c2
            d0 = (s2 ^ p) | eq | v
            hp = v | ~(d0 | p)
            hn = p & d0
            if w == words - 1:
                if hp & last:
                    score += 1
                elif hn & last:
                    score -= 1
            hp_out = hp >> sh
            hn_out = hn >> sh
            hp = (hp << one) | hp_carry
            hn = (hn << one) | hn_carry
            hp_carry = hp_out
            hn_carry = hn_out
            pv[w] = hn | ~(d0 | hp)
            mv[w] = hp & d0
        # the remaining n - j - 1 characters can lower the distance by at most one each
        if score - (n - j - 1) > cutoff:
            return cutoff + 1
    return score


@numba.njit(cache=True)
def _distance(q, t, n_symbols):
    # the shorter string is the bit pattern
    if len(q) < len(t):
        q, t = t, q
    return _myers_cutoff(_build_peq(t, n_symbols), len(t), q, len(q) + len(t))


@numba.njit(cache=True, parallel=True)
def _pairwise_kernel(a_sym, a_off, b_sym, b_off, n_symbols, out):
    for k in numba.prange(len(out)):
        out[k] = _distance(a_sym[a_off[k]:a_off[k + 1]], b_sym[b_off[k]:b_off[k + 1]], n_symbols)


def levenshtein_pairs(a: Sequence[str], b: Sequence[str]) -> np.ndarray:
    """Distances for aligned pairs ``(a[k], b[k])`` via the compiled kernel."""
    if len(a) != len(b):
        raise ValueError("need equally many left and right strings")
    a_sym, a_off, alphabet = encode_texts(a)
    b_sym, b_off, alphabet = encode_texts(b, alphabet)
    out = np.empty(len(a), dtype=np.int64)
    _pairwise_kernel(a_sym, a_off, b_sym, b_off, max(len(alphabet), 1), out)
    return out


@numba.njit(cache=True, parallel=True)
def _best_match_kernel(q_sym, q_off, t_sym, t_off, n_symbols, prune, best_pos, best_sim):
    n_targets = len(t_off) - 1
    for i in numba.prange(len(q_off) - 1):
        q = q_sym[q_off[i]:q_off[i + 1]]
        la = len(q)
        peq = _build_peq(q, n_symbols)
        bp = -1
        bs = -1.0
        for j in range(n_targets):
            t = t_sym[t_off[j]:t_off[j + 1]]
            lb = len(t)
            longest = max(la, lb)
            if longest == 0:
                sim = 1.0
            else:
                cutoff = la + lb
                if prune and bp >= 0:
                    # similarity <= 1 - |la - lb| / longest; a tie with the incumbent loses
                    if 1.0 - abs(la - lb) / longest <= bs:
                        continue
                    # largest distance that still gives a strictly better similarity
                    cutoff = longest
                    while cutoff >= 0 and 1.0 - cutoff / longest <= bs:
                        cutoff -= 1
                    if cutoff < 0:
                        continue
                d = _myers_cutoff(peq, la, t, cutoff)
                if d > cutoff:
                    continue
                sim = 1.0 - d / longest
            if sim > bs:
                bs = sim
                bp = j
        best_pos[i] = bp
        best_sim[i] = bs


def best_matches(queries: Sequence[str], targets: Sequence[str], prune: bool = True
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Most similar target per query: ``(positions, similarities)``.

    Ties go to the lowest target position. Pruning never changes the result.
    """
    if not len(targets):
        raise ValueError("cannot match against an empty catalogue")
    t_sym, t_off, alphabet = encode_texts(targets)
    q_sym, q_off, alphabet = encode_texts(queries, alphabet)
    best_pos = np.empty(len(queries), dtype=np.int64)
    best_sim = np.empty(len(queries), dtype=np.float64)
    if len(queries):
        _best_match_kernel(q_sym, q_off, t_sym, t_off, max(len(alphabet), 1), prune,
                           best_pos, best_sim)
    return best_pos, best_sim


def fuzzy_best_match(detections: Sequence[Detection], catalog: Catalog,
                     normalize: bool = True, prune: bool = True) -> list[MatchRecord]:
    """Fuzzy-string baseline: each detection gets the catalogue entry whose
    composed author+title text has the highest normalized edit similarity."""
    if not len(catalog):
        raise ValueError("cannot match against an empty catalogue")
    queries = [normalize_text(d.ocr_text) if normalize else d.ocr_text for d in detections]
    positions, sims = best_matches(queries, catalog.texts(normalize), prune)
    return [
        MatchRecord(d.image_id, d.segment_id, catalog[int(p)].id, float(s), "fuzzy")
        for d, p, s in zip(detections, positions, sims)
    ]
