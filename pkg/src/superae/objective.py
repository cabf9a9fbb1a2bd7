"""Loss terms: representation supervision, adversarial pair, and the two decoding cross entropies."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .corpus import Batch
from .model import GOLD_IS_ZS, SuperAE
from .numerics import Value


@dataclass(frozen=True)
class SupervisionConfig:
    lam: float = 0.3
    n_h: int = 64

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.n_h < 1:
            raise ValueError("n_h must be >= 1")


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.3
    autoencoder: bool = True        # False trains the plain seq2seq baseline (no AE path, no supervision)
    adversarial: bool = True
    sum_over_batch: bool = False    # True: raw sums as printed; False: per-sequence sums averaged over the batch


@dataclass
class LossBreakdown:
    l_seq2seq: Value
    l_ae: Value | None
    l_s: Value | None
    l_d: Value | None
    l_g: Value | None
    total_main: Value
    z_t: Value | None = None
    z_s: Value | None = None

    def as_floats(self) -> dict[str, float | None]:
        def f(v):
            return None if v is None else float(v.data)
        return {
            "l_seq2seq": f(self.l_seq2seq), "l_ae": f(self.l_ae), "l_s": f(self.l_s),
            "l_d": f(self.l_d), "l_g": f(self.l_g), "total_main": f(self.total_main),
        }


def supervision_loss(z_t, z_s, cfg: SupervisionConfig) -> Value:
    """(lambda / N_h) * ||z_t - z_s||_2, averaged over batch rows when inputs are (B, N_h)."""
    z_t, z_s = nx.as_value(z_t), nx.as_value(z_s)
    if z_t.shape != z_s.shape:
        raise nx.ShapeError(f"supervision_loss: shapes {z_t.shape} and {z_s.shape} differ")
    dist = nx.l2norm(nx.sub(z_t, z_s), axis=-1)
    if dist.data.ndim:
        dist = nx.mean(dist)
    return nx.mul(dist, cfg.lam / cfg.n_h)


def _check_probs(*ps: Value) -> None:
    for p in ps:
        if not np.all(np.isfinite(p.data)):
            raise FloatingPointError("adversarial loss: non-finite probability")


def _log_correct(p_gold: Value, is_gold: bool) -> Value:
    return nx.log(p_gold) if is_gold else nx.log(nx.sub(1.0, p_gold))


def discriminator_loss(p_gold_on_zt, p_gold_on_zs) -> Value:
    """-log P(correct label | z_t) - log P(correct label | z_s), batch-averaged."""
    p_t, p_s = nx.as_value(p_gold_on_zt), nx.as_value(p_gold_on_zs)
    _check_probs(p_t, p_s)
    loss = nx.add(_log_correct(p_t, not GOLD_IS_ZS), _log_correct(p_s, GOLD_IS_ZS))
    return nx.mul(_batch_mean(loss), -1.0)


def generator_adversarial_loss(p_gold_on_zt, p_gold_on_zs) -> Value:
    """Same as ``discriminator_loss`` with both labels flipped."""
    p_t, p_s = nx.as_value(p_gold_on_zt), nx.as_value(p_gold_on_zs)
    _check_probs(p_t, p_s)
    loss = nx.add(_log_correct(p_t, GOLD_IS_ZS), _log_correct(p_s, not GOLD_IS_ZS))
    return nx.mul(_batch_mean(loss), -1.0)


def _batch_mean(x: Value) -> Value:
    return nx.mean(x) if x.data.ndim else x


def adversarial_losses_from_logits(logit_t: Value, logit_s: Value) -> tuple[Value, Value]:
    """(L_D, L_G) computed from discriminator logits via log-sigmoid, for numerical safety.

    log P(gold|z) = log_sigmoid(logit), log P(fake|z) = log_sigmoid(-logit).
    """
    def logp(logit, gold):
        return nx.log_sigmoid(logit if gold else nx.mul(logit, -1.0))

    l_d = nx.add(logp(logit_t, not GOLD_IS_ZS), logp(logit_s, GOLD_IS_ZS))
    l_g = nx.add(logp(logit_t, GOLD_IS_ZS), logp(logit_s, not GOLD_IS_ZS))
    return nx.mul(_batch_mean(l_d), -1.0), nx.mul(_batch_mean(l_g), -1.0)


def seq_cross_entropy(step_distributions, target_ids, mask, log_space: bool = False,
                      sum_over_batch: bool = False) -> Value:
    """Negative log-likelihood of ``target_ids`` summed over unmasked steps.

    ``step_distributions`` is (B, T, V) (or (T, V) for one sequence) holding
    probabilities, or log-probabilities when ``log_space``. Per-sequence sums
    are averaged over the batch unless ``sum_over_batch``.
    """
    d = nx.as_value(step_distributions)
    target_ids = np.asarray(target_ids, dtype=np.int64)
    if d.data.ndim == 2:
        d = nx.reshape(d, (1,) + d.shape)
        target_ids = target_ids[None]
        mask = np.asarray(mask)[None]
    if target_ids.size and (target_ids.min() < 0 or target_ids.max() >= d.shape[-1]):
        raise ValueError("seq_cross_entropy: target id out of range")
    logp = nx.pick(d if log_space else nx.log(d), target_ids)
    mask = np.asarray(mask, dtype=d.data.dtype)
    total = nx.masked_sum(logp, mask)
    scale = -1.0 if sum_over_batch else -1.0 / target_ids.shape[0]
    return nx.mul(total, scale)


def total_loss(model: SuperAE, batch: Batch, cfg: LossConfig) -> LossBreakdown:
    """All loss terms on one batch with teacher forcing on both decoding paths.

    ``total_main = L_seq2seq + L_ae + L_s``; the adversarial terms are
    returned separately because they update different parameter groups.
    """
    enc_t = model.encode_content(batch.source_ids, batch.source_mask)
    logp = model.teacher_forced_log_probs(batch.summary_in, enc_t)
    l_seq = seq_cross_entropy(logp, batch.summary_out, batch.summary_mask, log_space=True,
                              sum_over_batch=cfg.sum_over_batch)
    if not cfg.autoencoder:
        return LossBreakdown(l_seq, None, None, None, None, l_seq, z_t=enc_t.z)

    enc_s = model.encode_summary(batch.summary_ids, batch.summary_token_mask)
    logp_ae = model.teacher_forced_log_probs(batch.summary_in, enc_s)
    l_ae = seq_cross_entropy(logp_ae, batch.summary_out, batch.summary_mask, log_space=True,
                             sum_over_batch=cfg.sum_over_batch)
    l_s = supervision_loss(enc_t.z, enc_s.z, SupervisionConfig(cfg.lam, model.config.n_h))
    total = nx.add(nx.add(l_seq, l_ae), l_s)
    l_d = l_g = None
    if cfg.adversarial:
        l_d, l_g = adversarial_losses_from_logits(model.discriminator_logit(enc_t.z),
                                                  model.discriminator_logit(enc_s.z))
    return LossBreakdown(l_seq, l_ae, l_s, l_d, l_g, total, z_t=enc_t.z, z_s=enc_s.z)
