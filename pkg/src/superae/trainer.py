"""Adam, global-norm clipping, the alternating three-part update, and the fit loop."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics as nx
from .corpus import (DESK_VOCAB_SIZE, Batch, PairExample, TextPair, Vocab, build_vocab,
                     encode_pairs, make_batches)
from .model import CONTENT, SUMMARY, ModelConfig, SuperAE, _read_blob, _write_blob, save_model
from .numerics import Value
from .objective import LossBreakdown, LossConfig, adversarial_losses_from_logits, total_loss

log = logging.getLogger(__name__)

MAIN_GROUPS = (CONTENT, SUMMARY, "decoder")
DISC_GROUPS = ("discriminator",)
ADV_GROUPS = (CONTENT, SUMMARY)


@dataclass
class TrainConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 10.0
    batch_size: int = 16
    max_steps: int = 1000
    seed: int = 0
    lam: float = 0.3
    adversarial: bool = True
    autoencoder: bool = True
    sum_over_batch: bool = False
    val_every: int = 100
    max_vocab: int = DESK_VOCAB_SIZE
    embed_size: int = 64
    hidden_size: int = 64
    layers: int = 1
    max_source_len: int | None = None
    max_summary_len: int | None = None

    def __post_init__(self):
        for name in ("lr", "beta1", "beta2", "eps", "clip_norm", "batch_size", "max_steps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")

    def loss_config(self) -> LossConfig:
        return LossConfig(lam=self.lam if self.autoencoder else 0.0, autoencoder=self.autoencoder,
                          adversarial=self.adversarial and self.autoencoder,
                          sum_over_batch=self.sum_over_batch)


TRAIN_PRESETS = {
    "desk": dict(embed_size=64, hidden_size=64, layers=1, batch_size=16, max_vocab=DESK_VOCAB_SIZE),
    "paper": dict(embed_size=512, hidden_size=512, layers=2, batch_size=64, max_vocab=4000),
}


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


class NonFiniteGradient(FloatingPointError):
    pass


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))


def clip_gradients(grads: Sequence[np.ndarray], max_norm: float, names: Sequence[str] | None = None):
    """Scale all gradients by ``max_norm / norm`` when their joint L2 norm exceeds ``max_norm``.

    Returns ``(clipped, norm_before)``.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    for k, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            name = names[k] if names else f"#{k}"
            raise NonFiniteGradient(f"non-finite gradient for parameter {name}")
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        return [g * np.asarray(scale, dtype=g.dtype) for g in grads], norm
    return list(grads), norm


def adam_step(params: Sequence[Value], grads: Sequence[np.ndarray], state: AdamState, cfg: TrainConfig) -> None:
    """Bias-corrected Adam update, in place on ``params`` and ``state``."""
    state.t += 1
    t = state.t
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for p, g in zip(params, grads):
        if g.shape != p.shape:
            raise nx.ShapeError(f"adam_step: gradient shape {g.shape} != parameter shape {p.shape} ({p.name})")
        key = p.name
        m = state.m.get(key)
        if m is None:
            m = state.m[key] = np.zeros_like(p.data)
            state.v[key] = np.zeros_like(p.data)
        v = state.v[key]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        m_hat = m / c1
        v_hat = v / c2
        p.data -= (cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)).astype(p.data.dtype)


def params_digest(model: SuperAE, groups: Sequence[str] | None = None) -> dict[str, str]:
    """sha256 of every parameter array, optionally restricted to some groups."""
    names = [n for n in model.params if groups is None or model.params.group_of(n) in groups]
    return {n: hashlib.sha256(model.params[n].data.tobytes()).hexdigest() for n in names}


@dataclass
class StepResult:
    losses: dict[str, float | None]
    grad_norm: float


class Trainer:
    """Owns the three optimizer states and performs one alternating update per batch."""

    def __init__(self, model: SuperAE, cfg: TrainConfig):
        self.model = model
        self.cfg = cfg
        self.loss_cfg = cfg.loss_config()
        self.opt = {"main": AdamState(), "discriminator": AdamState(), "adversarial": AdamState()}

    def _update(self, groups: Sequence[str], opt: AdamState) -> float:
        reg = self.model.params
        params = [p for p in reg.select(groups) if p.grad is not None]
        grads, norm = clip_gradients([p.grad for p in params], self.cfg.clip_norm, [p.name for p in params])
        adam_step(params, grads, opt, self.cfg)
        reg.zero_grad()
        return norm

    def main_substep(self, batch: Batch) -> tuple[LossBreakdown, float]:
        reg = self.model.params
        reg.zero_grad()
        lb = total_loss(self.model, batch, replace(self.loss_cfg, adversarial=False))
        nx.backward(lb.total_main)
        return lb, self._update(MAIN_GROUPS, self.opt["main"])

    def discriminator_substep(self, batch: Batch) -> float:
        reg = self.model.params
        reg.zero_grad()
        with nx.no_grad():
            z_t = self.model.encode_content(batch.source_ids, batch.source_mask).z
            z_s = self.model.encode_summary(batch.summary_ids, batch.summary_token_mask).z
        l_d, _ = adversarial_losses_from_logits(self.model.discriminator_logit(Value(z_t.data)),
                                                self.model.discriminator_logit(Value(z_s.data)))
        nx.backward(l_d)
        self._update(DISC_GROUPS, self.opt["discriminator"])
        return float(l_d.data)

    def adversarial_substep(self, batch: Batch) -> float:
        reg = self.model.params
        reg.zero_grad()
        z_t = self.model.encode_content(batch.source_ids, batch.source_mask).z
        z_s = self.model.encode_summary(batch.summary_ids, batch.summary_token_mask).z
        _, l_g = adversarial_losses_from_logits(self.model.discriminator_logit(z_t),
                                                self.model.discriminator_logit(z_s))
        nx.backward(l_g)
        for p in reg.select(DISC_GROUPS):
            p.grad = None
        self._update(ADV_GROUPS, self.opt["adversarial"])
        return float(l_g.data)

    def train_step(self, batch: Batch) -> StepResult:
        lb, norm = self.main_substep(batch)
        losses = lb.as_floats()
        if self.loss_cfg.adversarial:
            losses["l_d"] = self.discriminator_substep(batch)
            losses["l_g"] = self.adversarial_substep(batch)
        return StepResult(losses, norm)

    # ------------------------------------------------------------ persistence

    def save(self, directory: str | Path, extra: dict | None = None) -> Path:
        directory = Path(directory)
        save_model(self.model, directory, extra)
        arrays, counters = [], {}
        for opt_name, st in self.opt.items():
            counters[opt_name] = st.t
            for pname in sorted(st.m):
                arrays.append((f"{opt_name}.m.{pname}", opt_name, st.m[pname]))
                arrays.append((f"{opt_name}.v.{pname}", opt_name, st.v[pname]))
        entries = _write_blob(arrays, directory / "optimizer.bin")
        manifest = {"magic": "superae-optimizer", "version": 1, "steps": counters, "arrays": entries}
        (directory / "optimizer.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
        return directory

    def load_optimizer(self, directory: str | Path) -> None:
        directory = Path(directory)
        manifest = json.loads((directory / "optimizer.json").read_text())
        arrays = _read_blob(manifest["arrays"], directory / "optimizer.bin")
        for opt_name, st in self.opt.items():
            st.t = manifest["steps"][opt_name]
            st.m.clear()
            st.v.clear()
        for name, arr in arrays.items():
            opt_name, kind, pname = name.split(".", 2)
            getattr(self.opt[opt_name], kind)[pname] = arr.astype(self.model.dtype)


# ---------------------------------------------------------------- fit

@dataclass
class FitResult:
    model: SuperAE
    vocab: Vocab
    trainer: Trainer
    log: list[dict]
    validation: list[dict]
    best_rouge_l: float | None
    out_dir: Path | None


def _fmt(x):
    return None if x is None else float(x)


def fit(train_pairs: Sequence[TextPair], cfg: TrainConfig, val_pairs: Sequence[TextPair] = (),
        out_dir: str | Path | None = None, vocab: Vocab | None = None) -> FitResult:
    """Train from text pairs; keeps the best-validation and the final checkpoints under ``out_dir``."""
    from .decode import greedy_decode_batch
    from .rouge import corpus_rouge

    if not train_pairs:
        raise ValueError("fit: empty training set")
    if vocab is None:
        vocab = build_vocab([p.text for p in train_pairs] + [p.summary for p in train_pairs], cfg.max_vocab)
    examples: list[PairExample] = encode_pairs(train_pairs, vocab, cfg.max_source_len, cfg.max_summary_len)
    val_examples = encode_pairs(val_pairs, vocab, cfg.max_source_len, cfg.max_summary_len) if val_pairs else []

    mcfg = ModelConfig(vocab_size=len(vocab), embed_size=cfg.embed_size, hidden_size=cfg.hidden_size, layers=cfg.layers)
    model = SuperAE(mcfg, seed=cfg.seed)
    trainer = Trainer(model, cfg)

    out = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        vocab.save(out / "vocab.txt")
        log_fh = open(out / "train_log.jsonl", "w", encoding="utf-8")
    extra = {"train_config": asdict(cfg)}

    records: list[dict] = []
    validation: list[dict] = []
    best: float | None = None
    step, epoch = 0, 0
    try:
        while step < cfg.max_steps:
            for batch in make_batches(examples, cfg.batch_size, shuffle_seed=cfg.seed * 100_003 + epoch):
                t0 = time.perf_counter()
                res = trainer.train_step(batch)
                step += 1
                rec = {"step": step, **{k: _fmt(res.losses[k]) for k in ("l_seq2seq", "l_ae", "l_s", "l_d", "l_g")},
                       "grad_norm": res.grad_norm, "wall_ms": round((time.perf_counter() - t0) * 1000.0, 3)}
                records.append(rec)
                if log_fh is not None:
                    log_fh.write(json.dumps(rec) + "\n")
                if val_examples and (step % cfg.val_every == 0 or step == cfg.max_steps):
                    hyps = greedy_decode_batch(model, [e.source for e in val_examples])
                    score = corpus_rouge([(h, e.summary) for h, e in zip(hyps, val_examples)])["rouge-l"].f1
                    validation.append({"step": step, "rouge_l_f1": score})
                    log.info("step %d validation ROUGE-L F1 %.4f", step, score)
                    if best is None or score > best:
                        best = score
                        if out is not None:
                            trainer.save(out / "best", {**extra, "step": step, "rouge_l_f1": score})
                if step >= cfg.max_steps:
                    break
            epoch += 1
    finally:
        if log_fh is not None:
            log_fh.close()

    if out is not None:
        trainer.save(out / "final", {**extra, "step": step})
        if validation:
            with open(out / "val_log.jsonl", "w", encoding="utf-8") as fh:
                for v in validation:
                    fh.write(json.dumps(v) + "\n")
    return FitResult(model, vocab, trainer, records, validation, best, out)
