"""Witten-Bell smoothed bigram language model with backoff to a smoothed
unigram.

Histories are the sentence-begin symbol or any vocabulary word; predicted
events are vocabulary words plus the sentence-end symbol. For every
history the smoothed conditional distribution sums to one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from ..errors import DataError

BOS = "<s>"
EOS = "</s>"


@dataclass
class BigramLm:
    vocab: list[str]
    unigram: dict[str, float]                      # event -> smoothed P
    seen: dict[str, dict[str, float]] = field(repr=False, default_factory=dict)
    backoff: dict[str, float] = field(repr=False, default_factory=dict)
    interpolate_full: set[str] = field(repr=False, default_factory=set)

    @property
    def events(self) -> list[str]:
        return self.vocab + [EOS]

    def prob(self, word: str, history: str) -> float:
        """P(word | history); history is BOS or a vocabulary word."""
        if word not in self.unigram:
            raise DataError(f"word {word!r} outside the language model vocabulary")
        if history not in self.seen:
            return self.unigram[word]
        succ = self.seen[history]
        if history in self.interpolate_full:
            # every event observed after this history: no unseen mass to
            # back off to, so the reserved mass interpolates the unigram
            return succ[word] + self.backoff[history] * self.unigram[word]
        if word in succ:
            return succ[word]
        return self.backoff[history] * self.unigram[word]

    def logprob(self, word: str, history: str) -> float:
        return math.log(self.prob(word, history))

    def sentence_logprob(self, words: list[str]) -> float:
        total = 0.0
        history = BOS
        for w in words:
            total += self.logprob(w, history)
            history = w
        return total + self.logprob(EOS, history)


def train_bigram(sentences: list[list[str]]) -> BigramLm:
    """Maximum-likelihood bigram with Witten-Bell smoothing.

    Seen successors get count / (count(h) + types(h)); the remaining
    types/(count+types) mass backs off to the smoothed unigram over the
    unseen events.
    """
    sentences = [s for s in sentences if s]
    if not sentences:
        raise DataError("cannot train a language model on an empty corpus")
    vocab = sorted({w for s in sentences for w in s})

    uni_counts: dict[str, int] = {}
    big_counts: dict[str, dict[str, int]] = {}
    for s in sentences:
        history = BOS
        for w in s + [EOS]:
            uni_counts[w] = uni_counts.get(w, 0) + 1
            hist = big_counts.setdefault(history, {})
            hist[w] = hist.get(w, 0) + 1
            history = w

    events = vocab + [EOS]
    n_tokens = sum(uni_counts.values())
    n_types = len(uni_counts)
    v = len(events)
    denom = n_tokens + n_types
    unigram = {w: (uni_counts.get(w, 0) + n_types / v) / denom for w in events}

    lm = BigramLm(vocab=vocab, unigram=unigram)
    for history, succ in big_counts.items():
        c_h = sum(succ.values())
        t_h = len(succ)
        lm.seen[history] = {w: c / (c_h + t_h) for w, c in succ.items()}
        alpha = t_h / (c_h + t_h)
        unseen_mass = sum(unigram[w] for w in events if w not in succ)
        if unseen_mass > 0.0:
            lm.backoff[history] = alpha / unseen_mass
        else:
            lm.interpolate_full.add(history)
            lm.backoff[history] = alpha
    return lm
