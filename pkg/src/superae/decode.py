"""Greedy and beam-search decoding from the content encoder.

Scores are raw summed log-probabilities; there is no length normalization,
so beams favour shorter outputs when the model is uncertain.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import numerics as nx
from .corpus import BOS, EOS, UNK
from .model import DecoderState, EncoderOutput, SuperAE
from .numerics import Value

MAX_LEN_CAP = 100


def default_max_len(source_len: int, cap: int = MAX_LEN_CAP) -> int:
    return max(1, min(cap, math.ceil(1.5 * source_len)))


@dataclass
class Hypothesis:
    tokens: tuple[int, ...]
    log_prob: float
    state: DecoderState | None = None
    finished: bool = False

    @property
    def summary(self) -> tuple[int, ...]:
        """Tokens without the terminating EOS."""
        return self.tokens[:-1] if self.tokens and self.tokens[-1] == EOS else self.tokens


def _tile(enc: EncoderOutput, n: int) -> EncoderOutput:
    return EncoderOutput(Value(np.repeat(enc.annotations.data, n, axis=0)),
                         Value(np.repeat(enc.z.data, n, axis=0)),
                         np.repeat(enc.mask, n, axis=0))


def _encode_one(model: SuperAE, source: Sequence[int]) -> EncoderOutput:
    src = np.asarray(source, dtype=np.int64)[None, :]
    return model.encode_content(src, np.ones(src.shape))


def _top_candidates(scores: np.ndarray, k: int) -> np.ndarray:
    """Flat indices of every entry scoring at least the k-th best (ties kept for exact ordering)."""
    flat = scores.reshape(-1)
    if k >= flat.size:
        return np.flatnonzero(flat > -np.inf)
    kth = np.partition(flat, flat.size - k)[flat.size - k]
    return np.flatnonzero((flat >= kth) & (flat > -np.inf))


def beam_search(model: SuperAE, source: Sequence[int], beam_size: int = 10, max_len: int | None = None,
                suppress_unk: bool = False) -> Hypothesis:
    """Best completed hypothesis by total log-probability; ties go to the smaller token sequence."""
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    max_len = default_max_len(len(source)) if max_len is None else max_len
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    with nx.no_grad():
        enc = _encode_one(model, source)
        state = model.init_decoder(enc.z)
        live = [Hypothesis((), 0.0, None)]
        rows = np.zeros(1, dtype=np.int64)
        finished: list[Hypothesis] = []
        for _ in range(max_len):
            prev = np.array([h.tokens[-1] if h.tokens else BOS for h in live])
            logp, new_state = model.decode_step(prev, state.select(rows), _tile(enc, len(live)), log_probs=True)
            lp = logp.data.astype(np.float64)
            if suppress_unk:
                lp[:, UNK] = -np.inf
            totals = np.array([h.log_prob for h in live])[:, None] + lp
            V = totals.shape[1]
            cands = [(float(totals.flat[i]), live[i // V].tokens + (int(i % V),), i // V)
                     for i in _top_candidates(totals, beam_size)]
            cands.sort(key=lambda c: (-c[0], c[1]))
            next_live, next_rows = [], []
            for score, toks, parent in cands[:beam_size]:
                if toks[-1] == EOS or len(toks) == max_len:
                    finished.append(Hypothesis(toks, score, new_state.select([parent]), True))
                else:
                    next_live.append(Hypothesis(toks, score, None))
                    next_rows.append(parent)
            if not next_live:
                break
            live, rows, state = next_live, np.asarray(next_rows), new_state
            best_done = max((h.log_prob for h in finished), default=-np.inf)
            # log-probs only fall as hypotheses grow, so no live beam can overtake
            if best_done > max(h.log_prob for h in live):
                break
        if not finished:
            # every extension had zero probability; fall back to the best live beam
            finished = [Hypothesis(h.tokens, h.log_prob, None, True) for h in live]
        return min(finished, key=lambda h: (-h.log_prob, h.tokens))


def greedy_decode(model: SuperAE, source: Sequence[int], max_len: int | None = None,
                  suppress_unk: bool = False) -> list[int]:
    """Argmax decoding; returns the summary tokens without EOS."""
    return greedy_decode_batch(model, [source], max_len, suppress_unk)[0]


def greedy_decode_batch(model: SuperAE, sources: Sequence[Sequence[int]], max_len: int | None = None,
                        suppress_unk: bool = False) -> list[list[int]]:
    if not sources:
        return []
    lens = [len(s) for s in sources]
    limits = [default_max_len(n) if max_len is None else max_len for n in lens]
    if min(limits) < 1:
        raise ValueError("max_len must be >= 1")
    B, T = len(sources), max(lens)
    src = np.zeros((B, T), dtype=np.int64)
    mask = np.zeros((B, T))
    for r, s in enumerate(sources):
        src[r, :len(s)] = s
        mask[r, :len(s)] = 1
    out: list[list[int]] = [[] for _ in range(B)]
    done = np.zeros(B, dtype=bool)
    with nx.no_grad():
        enc = model.encode_content(src, mask)
        state = model.init_decoder(enc.z)
        prev = np.full(B, BOS)
        for step in range(max(limits)):
            logp, state = model.decode_step(prev, state, enc, log_probs=True)
            lp = logp.data
            if suppress_unk:
                lp = lp.copy()
                lp[:, UNK] = -np.inf
            nxt = lp.argmax(axis=1)
            for r in range(B):
                if done[r]:
                    continue
                if nxt[r] == EOS:
                    done[r] = True
                else:
                    out[r].append(int(nxt[r]))
                    if step + 1 >= limits[r]:
                        done[r] = True
            if done.all():
                break
            prev = nxt
    return out


def write_generations(path: str | Path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({"text": rec["text"], "generated": rec["generated"], "log_prob": rec["log_prob"]},
                                ensure_ascii=False) + "\n")
