"""Character vocabulary, pair records, score filtering and padded batches."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")
PAPER_VOCAB_SIZE = 4000
DESK_VOCAB_SIZE = 200

_VOCAB_HEADER = "# superae-vocab v1: ids 0-3 are <pad> <bos> <eos> <unk>; token on line k after this header has id k+3"


class Vocab:
    """Bidirectional character <-> id map. Ids 0-3 are always the specials."""

    def __init__(self, tokens: Sequence[str] = ()):
        self.id_to_token: list[str] = list(SPECIALS)
        self.token_to_id: dict[str, int] = {}
        for tok in tokens:
            if tok in self.token_to_id:
                raise ValueError(f"duplicate vocab token {tok!r}")
            self.token_to_id[tok] = len(self.id_to_token)
            self.id_to_token.append(tok)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.id_to_token == other.id_to_token

    def decode(self, ids: Iterable[int], strip_specials: bool = True) -> str:
        out = []
        for i in ids:
            i = int(i)
            if i == EOS and strip_specials:
                break
            if i < len(SPECIALS):
                if not strip_specials:
                    out.append(SPECIALS[i])
                elif i == UNK:
                    out.append(SPECIALS[UNK])
                continue
            out.append(self.id_to_token[i])
        return "".join(out)

    def save(self, path: str | Path) -> None:
        lines = [_VOCAB_HEADER] + [_escape(t) for t in self.id_to_token[len(SPECIALS):]]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if not lines or not lines[0].startswith("# superae-vocab v1"):
            raise ValueError(f"{path}: missing vocab header line")
        body = lines[1:]
        if body and body[-1] == "":
            body = body[:-1]
        return cls([_unescape(t) for t in body])


def _escape(tok: str) -> str:
    return tok.replace("\\", "\\\\").replace("\n", "\\n").replace("\r", "\\r")


def _unescape(s: str) -> str:
    out, i = [], 0
    while i < len(s):
        if s[i] == "\\" and i + 1 < len(s):
            out.append({"\\": "\\", "n": "\n", "r": "\r"}[s[i + 1]])
            i += 2
        else:
            out.append(s[i])
            i += 1
    return "".join(out)


def build_vocab(texts: Iterable[str], max_size: int = PAPER_VOCAB_SIZE) -> Vocab:
    """Most frequent characters first, ties by code point; ``max_size`` counts the specials."""
    if max_size < 5:
        raise ValueError("max_size must be at least 5")
    counts: Counter[str] = Counter()
    for t in texts:
        counts.update(t)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], ord(kv[0])))
    keep = max_size - len(SPECIALS)
    return Vocab([ch for ch, _ in ranked[:keep]])


def encode_chars(text: str, vocab: Vocab) -> list[int]:
    return [vocab.token_to_id.get(ch, UNK) for ch in text]


@dataclass(frozen=True)
class PairExample:
    source: tuple[int, ...]
    summary: tuple[int, ...]
    score: int | None = None

    def __post_init__(self):
        if not self.source or not self.summary:
            raise ValueError("source and summary must both be nonempty")


@dataclass(frozen=True)
class TextPair:
    text: str
    summary: str
    score: int | None = None
    label: int | None = None


def read_pairs(path: str | Path) -> list[TextPair]:
    """Read a JSON-lines file of ``{"text", "summary", "score"?, "label"?}`` records."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                pairs.append(TextPair(rec["text"], rec["summary"], rec.get("score"), rec.get("label")))
            except (json.JSONDecodeError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed record ({exc})") from None
    return pairs


def write_pairs(path: str | Path, pairs: Iterable[TextPair]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            rec = {"text": p.text, "summary": p.summary}
            if p.score is not None:
                rec["score"] = p.score
            if p.label is not None:
                rec["label"] = p.label
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def filter_by_score(pairs, min_score: int = 3):
    """Keep scored pairs with score >= ``min_score``; unscored pairs always pass."""
    return [p for p in pairs if p.score is None or p.score >= min_score]


def encode_pairs(pairs: Iterable[TextPair], vocab: Vocab, max_source_len: int | None = None,
                 max_summary_len: int | None = None) -> list[PairExample]:
    out = []
    for p in pairs:
        src = encode_chars(p.text, vocab)[:max_source_len]
        summ = encode_chars(p.summary, vocab)[:max_summary_len]
        out.append(PairExample(tuple(src), tuple(summ), p.score))
    return out


@dataclass
class Batch:
    source_ids: np.ndarray      # (B, M) int64, PAD beyond length
    source_mask: np.ndarray     # (B, M) 0/1
    summary_in: np.ndarray      # (B, L+1) BOS + summary
    summary_out: np.ndarray     # (B, L+1) summary + EOS
    summary_mask: np.ndarray    # (B, L+1) 1 on real target positions (incl. EOS)

    @property
    def size(self) -> int:
        return self.source_ids.shape[0]

    @property
    def summary_ids(self) -> np.ndarray:
        """Summary tokens without framing, PAD-padded."""
        return self.summary_out[:, :-1] * (self.summary_out[:, :-1] != EOS)

    @property
    def summary_token_mask(self) -> np.ndarray:
        return self.summary_mask[:, :-1] * (self.summary_out[:, :-1] != EOS)


def collate(examples: Sequence[PairExample]) -> Batch:
    b = len(examples)
    m = max(len(e.source) for e in examples)
    n = max(len(e.summary) for e in examples) + 1
    src = np.full((b, m), PAD, dtype=np.int64)
    src_mask = np.zeros((b, m), dtype=np.float32)
    dec_in = np.full((b, n), PAD, dtype=np.int64)
    dec_out = np.full((b, n), PAD, dtype=np.int64)
    dec_mask = np.zeros((b, n), dtype=np.float32)
    for r, e in enumerate(examples):
        src[r, :len(e.source)] = e.source
        src_mask[r, :len(e.source)] = 1
        k = len(e.summary)
        dec_in[r, 0] = BOS
        dec_in[r, 1:k + 1] = e.summary
        dec_out[r, :k] = e.summary
        dec_out[r, k] = EOS
        dec_mask[r, :k + 1] = 1
    return Batch(src, src_mask, dec_in, dec_out, dec_mask)


def make_batches(pairs: Sequence[PairExample], batch_size: int, shuffle_seed: int | None = 0) -> list[Batch]:
    """Shuffle deterministically (``None`` keeps order) and pad each batch to its own lengths."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(pairs))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(pairs))
    return [collate([pairs[i] for i in order[k:k + batch_size]]) for k in range(0, len(pairs), batch_size)]
