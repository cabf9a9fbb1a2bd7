"""Content encoder, summary autoencoder encoder, shared attention decoder and discriminator.

Both encoders are stacked bidirectional LSTMs with identical shapes, so the
one decoder (and its attention parameters) can run from either
representation. The representation ``z`` of a sequence is
``tanh(W [h_fwd_last; h_bwd_first] + b)`` and seeds the decoder's first layer.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .numerics import ParamRegistry, Value

CHECKPOINT_MAGIC = "superae-checkpoint"
CHECKPOINT_VERSION = 1

# Orientation of the adversarial labels: True means the summary autoencoder's
# representation is "gold" (label 1) and the content encoder's is "fake".
GOLD_IS_ZS = True

CONTENT, SUMMARY = "content_encoder", "summary_encoder"


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    embed_size: int = 64
    hidden_size: int = 64
    layers: int = 1
    attn_size: int | None = None
    init_scale: float = 0.08

    def __post_init__(self):
        for name in ("vocab_size", "embed_size", "hidden_size", "layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def n_h(self) -> int:
        """Size of the representation z and of every decoder state."""
        return self.hidden_size

    @property
    def attention_size(self) -> int:
        return self.attn_size or self.hidden_size


PRESETS = {
    "desk": dict(embed_size=64, hidden_size=64, layers=1),
    "paper": dict(embed_size=512, hidden_size=512, layers=2),
}


@dataclass
class EncoderOutput:
    annotations: Value          # (B, T, 2H)
    z: Value                    # (B, N_h)
    mask: np.ndarray            # (B, T)


@dataclass
class DecoderState:
    h: list[Value] = field(default_factory=list)
    c: list[Value] = field(default_factory=list)

    def select(self, rows) -> "DecoderState":
        """Gather batch rows (used to reorder beams)."""
        rows = np.asarray(rows)
        return DecoderState([Value(v.data[rows]) for v in self.h], [Value(v.data[rows]) for v in self.c])


def _param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    V, E, H, A = cfg.vocab_size, cfg.embed_size, cfg.hidden_size, cfg.attention_size
    shapes: list[tuple[str, tuple[int, ...]]] = []
    for enc in (CONTENT, SUMMARY):
        shapes.append((f"{enc}.embedding", (V, E)))
        for layer in range(cfg.layers):
            d_in = E if layer == 0 else 2 * H
            for direction in ("fwd", "bwd"):
                shapes.append((f"{enc}.l{layer}.{direction}.w", (d_in + H, 4 * H)))
                shapes.append((f"{enc}.l{layer}.{direction}.b", (4 * H,)))
        shapes.append((f"{enc}.proj.w", (2 * H, H)))
        shapes.append((f"{enc}.proj.b", (H,)))
    shapes.append(("decoder.embedding", (V, E)))
    for layer in range(cfg.layers):
        d_in = E if layer == 0 else H
        shapes.append((f"decoder.l{layer}.w", (d_in + H, 4 * H)))
        shapes.append((f"decoder.l{layer}.b", (4 * H,)))
    shapes += [
        ("decoder.attn.w_state", (H, A)),
        ("decoder.attn.w_annot", (2 * H, A)),
        ("decoder.attn.v", (A, 1)),
        ("decoder.combine.w", (3 * H, H)),
        ("decoder.combine.b", (H,)),
        ("decoder.out.w", (H, V)),
        ("decoder.out.b", (V,)),
        ("discriminator.l1.w", (H, H)),
        ("discriminator.l1.b", (H,)),
        ("discriminator.l2.w", (H, 1)),
        ("discriminator.l2.b", (1,)),
    ]
    return shapes


def init_params(cfg: ModelConfig, seed: int = 0, dtype=None) -> ParamRegistry:
    """Uniform(-init_scale, init_scale) weights, zero biases."""
    dtype = np.dtype(dtype or nx.default_dtype())
    rng = np.random.default_rng(seed)
    reg = ParamRegistry()
    for name, shape in _param_shapes(cfg):
        if name.endswith(".b"):
            data = np.zeros(shape, dtype=dtype)
        else:
            data = rng.uniform(-cfg.init_scale, cfg.init_scale, size=shape).astype(dtype)
        reg.add(name, data)
    return reg


class SuperAE:
    """Parameters plus the forward computations of every sub-network."""

    def __init__(self, config: ModelConfig, params: ParamRegistry | None = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_params(config, seed)
        expected = dict(_param_shapes(config))
        got = {name: v.shape for name, v in self.params.items()}
        if got != expected:
            raise ValueError("parameter registry does not match the model configuration")

    @property
    def dtype(self) -> np.dtype:
        return self.params["decoder.out.w"].data.dtype

    def astype(self, dtype) -> "SuperAE":
        return SuperAE(self.config, self.params.astype(dtype))

    # ------------------------------------------------------------ encoders

    def _encode(self, prefix: str, ids, mask) -> EncoderOutput:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None, :]
        mask = np.ones(ids.shape, dtype=self.dtype) if mask is None else np.asarray(mask, dtype=self.dtype)
        if mask.ndim == 1:
            mask = mask[None, :]
        if ids.shape[1] == 0 or np.any(mask.sum(axis=1) == 0):
            raise ValueError(f"{prefix}: empty sequence")
        if ids.max() >= self.config.vocab_size or ids.min() < 0:
            raise ValueError(f"{prefix}: token id out of range for vocab of {self.config.vocab_size}")
        p = self.params
        B, T = ids.shape
        H = self.config.hidden_size
        x = nx.embedding(p[f"{prefix}.embedding"], ids)
        inputs = [x[:, t] for t in range(T)]
        finals = None
        for layer in range(self.config.layers):
            outs = {}
            finals = []
            for direction, steps in (("fwd", range(T)), ("bwd", range(T - 1, -1, -1))):
                w, b = p[f"{prefix}.l{layer}.{direction}.w"], p[f"{prefix}.l{layer}.{direction}.b"]
                h = Value(np.zeros((B, H), dtype=self.dtype))
                c = Value(np.zeros((B, H), dtype=self.dtype))
                hs = [None] * T
                for t in steps:
                    h, c = nx.lstm_cell(inputs[t], h, c, w, b, mask[:, t])
                    hs[t] = h
                outs[direction] = hs
                finals.append(h)
            inputs = [nx.concat([f, r], axis=-1) for f, r in zip(outs["fwd"], outs["bwd"])]
        annotations = nx.stack(inputs, axis=1)
        z = nx.tanh(nx.add(nx.matmul(nx.concat(finals, axis=-1), p[f"{prefix}.proj.w"]), p[f"{prefix}.proj.b"]))
        return EncoderOutput(annotations, z, mask)

    def encode_content(self, source_ids, mask=None) -> EncoderOutput:
        return self._encode(CONTENT, source_ids, mask)

    def encode_summary(self, summary_ids, mask=None) -> EncoderOutput:
        return self._encode(SUMMARY, summary_ids, mask)

    # ------------------------------------------------------------ decoder

    def init_decoder(self, z: Value) -> DecoderState:
        if z.shape[-1] != self.config.n_h:
            raise ValueError(f"init_decoder: z has {z.shape[-1]} elements, expected {self.config.n_h}")
        zeros = np.zeros(z.shape, dtype=self.dtype)
        h = [z] + [Value(zeros) for _ in range(self.config.layers - 1)]
        c = [Value(zeros) for _ in range(self.config.layers)]
        return DecoderState(h, c)

    def attention(self, query: Value, annotations: Value, mask) -> tuple[Value, Value]:
        """Additive attention. ``query`` is (B, H) or (B, Td, H); returns (context, weights)."""
        p = self.params
        H, A = self.config.hidden_size, self.config.attention_size
        if annotations.shape[-1] != 2 * H:
            raise ValueError(f"attention: annotation width {annotations.shape[-1]} != {2 * H}")
        mask = np.asarray(mask, dtype=self.dtype)
        if np.any(mask.sum(axis=-1) == 0):
            raise ValueError("attention: every position is masked")
        single = query.data.ndim == 2
        if single:
            query = nx.reshape(query, (query.shape[0], 1, H))
        B, Td, _ = query.shape
        Ts = annotations.shape[1]
        q = nx.reshape(nx.matmul(query, p["decoder.attn.w_state"]), (B, Td, 1, A))
        k = nx.reshape(nx.matmul(annotations, p["decoder.attn.w_annot"]), (B, 1, Ts, A))
        energy = nx.tanh(nx.add(q, k))
        scores = nx.reshape(nx.matmul(energy, p["decoder.attn.v"]), (B, Td, Ts))
        bias = ((mask - 1.0) * 1e9).astype(self.dtype)[:, None, :]
        weights = nx.softmax(nx.add(scores, Value(bias)))
        context = nx.matmul(weights, annotations)
        if single:
            context = nx.reshape(context, (B, 2 * H))
            weights = nx.reshape(weights, (B, Ts))
        return context, weights

    def _lstm_stack(self, x: Value, state: DecoderState) -> tuple[Value, DecoderState]:
        p = self.params
        hs, cs = [], []
        for layer in range(self.config.layers):
            h, c = nx.lstm_cell(x, state.h[layer], state.c[layer], p[f"decoder.l{layer}.w"], p[f"decoder.l{layer}.b"])
            hs.append(h)
            cs.append(c)
            x = h
        return x, DecoderState(hs, cs)

    def _readout(self, top: Value, enc: EncoderOutput) -> Value:
        p = self.params
        context, _ = self.attention(top, enc.annotations, enc.mask)
        combined = nx.tanh(nx.add(nx.matmul(nx.concat([top, context], axis=-1), p["decoder.combine.w"]), p["decoder.combine.b"]))
        return nx.add(nx.matmul(combined, p["decoder.out.w"]), p["decoder.out.b"])

    def decode_step(self, prev_ids, state: DecoderState, enc: EncoderOutput,
                    log_probs: bool = False) -> tuple[Value, DecoderState]:
        """One decoder step for a batch of previous tokens; returns the next-token distribution."""
        prev_ids = np.atleast_1d(np.asarray(prev_ids, dtype=np.int64))
        if prev_ids.min() < 0 or prev_ids.max() >= self.config.vocab_size:
            raise ValueError(f"decode_step: token id out of range for vocab of {self.config.vocab_size}")
        x = nx.embedding(self.params["decoder.embedding"], prev_ids)
        top, state = self._lstm_stack(x, state)
        logits = self._readout(top, enc)
        return (nx.log_softmax(logits) if log_probs else nx.softmax(logits)), state

    def teacher_forced_log_probs(self, prev_ids, enc: EncoderOutput) -> Value:
        """(B, Td, V) log-distributions given ground-truth previous tokens, starting from ``enc.z``."""
        prev_ids = np.asarray(prev_ids, dtype=np.int64)
        state = self.init_decoder(enc.z)
        emb = nx.embedding(self.params["decoder.embedding"], prev_ids)
        tops = []
        for t in range(prev_ids.shape[1]):
            top, state = self._lstm_stack(emb[:, t], state)
            tops.append(top)
        return nx.log_softmax(self._readout(nx.stack(tops, axis=1), enc))

    # ------------------------------------------------------------ discriminator

    def discriminator_logit(self, z: Value) -> Value:
        if z.shape[-1] != self.config.n_h:
            raise ValueError(f"discriminate: z has {z.shape[-1]} elements, expected {self.config.n_h}")
        p = self.params
        hidden = nx.tanh(nx.add(nx.matmul(z, p["discriminator.l1.w"]), p["discriminator.l1.b"]))
        logit = nx.add(nx.matmul(hidden, p["discriminator.l2.w"]), p["discriminator.l2.b"])
        return nx.reshape(logit, logit.shape[:-1])

    def discriminate(self, z: Value) -> Value:
        """Probability that ``z`` is the gold (autoencoder) representation."""
        return nx.sigmoid(self.discriminator_logit(z))


# ---------------------------------------------------------------- checkpoints

def _write_blob(arrays: list[tuple[str, str, np.ndarray]], bin_path: Path) -> list[dict]:
    entries, offset = [], 0
    with open(bin_path, "wb") as fh:
        for name, group, arr in arrays:
            raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            entries.append({"name": name, "group": group, "shape": list(arr.shape), "offset": offset})
            fh.write(raw)
            offset += len(raw)
    return entries


def _read_blob(entries: list[dict], bin_path: Path) -> dict[str, np.ndarray]:
    blob = bin_path.read_bytes()
    out = {}
    for e in entries:
        n = int(np.prod(e["shape"], dtype=np.int64))
        out[e["name"]] = np.frombuffer(blob, dtype="<f4", count=n, offset=e["offset"]).reshape(e["shape"]).astype(np.float32)
    return out


def save_model(model: SuperAE, directory: str | Path, extra: dict | None = None) -> Path:
    """Write ``model.json`` (manifest) and ``model.bin`` (little-endian float32) into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = [(name, model.params.group_of(name), v.data) for name, v in model.params.items()]
    manifest = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "params": _write_blob(arrays, directory / "model.bin"),
    }
    if extra:
        manifest["extra"] = extra
    (directory / "model.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return directory


def load_model(directory: str | Path) -> tuple[SuperAE, dict]:
    directory = Path(directory)
    manifest_path = directory / "model.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no checkpoint manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("magic") != CHECKPOINT_MAGIC or manifest.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{manifest_path}: not a version-{CHECKPOINT_VERSION} superae checkpoint")
    cfg = ModelConfig(**manifest["config"])
    arrays = _read_blob(manifest["params"], directory / "model.bin")
    reg = ParamRegistry()
    for entry in manifest["params"]:
        reg.add(entry["name"], arrays[entry["name"]].copy())
    return SuperAE(cfg, reg), manifest.get("extra", {})
