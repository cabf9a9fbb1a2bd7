import json
import math

import numpy as np
import pytest

from superae import numerics as nx
from superae.corpus import BOS, EOS, UNK
from superae.decode import beam_search, default_max_len, greedy_decode, greedy_decode_batch, write_generations
from superae.model import ModelConfig, SuperAE


def small_model(seed=0, vocab=7, scale=1.0):
    cfg = ModelConfig(vocab_size=vocab, embed_size=8, hidden_size=8, init_scale=scale)
    return SuperAE(cfg, seed=seed).astype(np.float64)


def replay_log_prob(model, source, tokens):
    with nx.no_grad():
        enc = model.encode_content(np.asarray(source)[None])
        state = model.init_decoder(enc.z)
        prev, total = BOS, 0.0
        for t in tokens:
            lp, state = model.decode_step([prev], state, enc, log_probs=True)
            total += float(lp.data[0, t])
            prev = t
    return total


def exhaustive_best(model, source, max_len):
    """Enumerate every sequence that ends in EOS or reaches max_len; return the best (score, tokens)."""
    V = model.config.vocab_size
    best = (-math.inf, ())
    with nx.no_grad():
        enc = model.encode_content(np.asarray(source)[None])

        def walk(prefix, state, score):
            nonlocal best
            prev = prefix[-1] if prefix else BOS
            lp, nxt = model.decode_step([prev], state, enc, log_probs=True)
            for tok in range(V):
                s, seq = score + float(lp.data[0, tok]), prefix + (tok,)
                if tok == EOS or len(seq) == max_len:
                    if (-s, seq) < (-best[0], best[1]):
                        best = (s, seq)
                else:
                    walk(seq, nxt, s)

        walk((), model.init_decoder(enc.z), 0.0)
    return best


@pytest.mark.parametrize("seed", range(4))
def test_beam_one_equals_greedy(seed):
    m = small_model(seed)
    src = [4, 5, 6, 4, 5]
    assert list(beam_search(m, src, beam_size=1).summary) == greedy_decode(m, src)


@pytest.mark.parametrize("seed", range(6))
def test_full_beam_matches_exhaustive_search(seed):
    cfg = ModelConfig(vocab_size=5, embed_size=64, hidden_size=64, init_scale=1.0)
    m = SuperAE(cfg, seed=seed).astype(np.float64)
    src = [4, 3, 4, 4]
    score, tokens = exhaustive_best(m, src, max_len=4)
    hyp = beam_search(m, src, beam_size=5 ** 4, max_len=4)
    assert hyp.tokens == tokens
    assert hyp.log_prob == pytest.approx(score, abs=1e-9)


def test_beam_is_deterministic():
    m = small_model(1)
    a = beam_search(m, [4, 6, 5], beam_size=4)
    b = beam_search(m, [4, 6, 5], beam_size=4)
    assert a.tokens == b.tokens and a.log_prob == b.log_prob


@pytest.mark.parametrize("seed", range(5))
def test_log_prob_matches_replay(seed):
    m = small_model(seed)
    src = [5, 6, 4, 4]
    hyp = beam_search(m, src, beam_size=3, max_len=6)
    assert hyp.log_prob <= 0
    assert hyp.log_prob == pytest.approx(replay_log_prob(m, src, hyp.tokens), abs=1e-5)


@pytest.mark.parametrize("seed", range(10))
def test_wider_beam_never_scores_lower(seed):
    m = small_model(seed)
    src = list(np.random.default_rng(seed).integers(4, 7, size=4))
    scores = [beam_search(m, src, k, max_len=6).log_prob for k in range(1, 9)]
    assert all(b >= a - 1e-12 for a, b in zip(scores, scores[1:]))


def forced_eos_model():
    m = small_model(2)
    m.params["decoder.out.w"].data[...] = 0.0
    m.params["decoder.out.b"].data[...] = 0.0
    m.params["decoder.out.b"].data[EOS] = 50.0
    return m


def test_forced_eos_gives_empty_summary():
    m = forced_eos_model()
    assert greedy_decode(m, [4, 5, 6]) == []
    assert beam_search(m, [4, 5, 6], beam_size=3).summary == ()


@pytest.mark.parametrize("max_len", [1, 2, 5])
def test_output_length_bounded(max_len):
    m = small_model(3)
    m.params["decoder.out.b"].data[EOS] = -50.0
    assert len(greedy_decode(m, [4, 5, 6, 4], max_len=max_len)) == max_len
    assert len(beam_search(m, [4, 5, 6, 4], beam_size=2, max_len=max_len).tokens) <= max_len


def test_default_max_len():
    assert default_max_len(4) == 6
    assert default_max_len(1) == 2
    assert default_max_len(1000) == 100


def test_suppress_unk():
    m = small_model(4)
    m.params["decoder.out.b"].data[UNK] = 50.0
    assert UNK in greedy_decode(m, [4, 5], max_len=3)
    assert UNK not in greedy_decode(m, [4, 5], max_len=3, suppress_unk=True)
    assert UNK not in beam_search(m, [4, 5], beam_size=2, max_len=3, suppress_unk=True).tokens


def test_batch_greedy_matches_single():
    m = small_model(5)
    sources = [[4, 5, 6], [6, 6], [5, 4, 4, 6, 5]]
    assert greedy_decode_batch(m, sources) == [greedy_decode(m, s) for s in sources]


def test_invalid_sizes_rejected():
    m = small_model()
    with pytest.raises(ValueError):
        beam_search(m, [4], beam_size=0)
    with pytest.raises(ValueError):
        beam_search(m, [4], max_len=0)


def test_write_generations(tmp_path):
    write_generations(tmp_path / "g.jsonl", [{"text": "今天", "generated": "天", "log_prob": -1.5, "x": 1}])
    rec = json.loads((tmp_path / "g.jsonl").read_text(encoding="utf-8"))
    assert rec == {"text": "今天", "generated": "天", "log_prob": -1.5}
