"""Command-line entry point: train, generate, evaluate, probe, gradcheck, synth."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .corpus import Vocab, encode_chars, filter_by_score, read_pairs, write_pairs
from .model import ModelConfig, load_model

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_GRADCHECK = 0, 1, 2, 3

log = logging.getLogger("superae")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- config

def parse_config_file(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _coerce(field: dataclasses.Field, text: str):
    kind = str(field.type)
    if "bool" in kind:
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{field.name}: expected a boolean, got {text!r}")
    if text.lower() == "none" and "None" in kind:
        return None
    try:
        if "int" in kind:
            return int(text)
        if "float" in kind:
            return float(text)
    except ValueError:
        raise UsageError(f"{field.name}: cannot parse {text!r}") from None
    return text


def resolve_train_config(preset: str, config_path: str | None, overrides: dict):
    """Preset defaults, then config file, then command-line flags."""
    from .trainer import TRAIN_PRESETS, TrainConfig

    if preset not in TRAIN_PRESETS:
        raise UsageError(f"unknown preset {preset!r}")
    values: dict = dict(TRAIN_PRESETS[preset])
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    if config_path:
        for key, text in parse_config_file(config_path).items():
            key = {"lambda": "lam"}.get(key, key)
            if key not in fields:
                raise UsageError(f"{config_path}: unknown key {key!r}")
            values[key] = _coerce(fields[key], text)
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return TrainConfig(**values)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _require_file(path: str | None, what: str) -> Path:
    if path is None:
        raise UsageError(f"--{what} is required")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} file not found: {p}")
    return p


def _load_checkpoint(path: str):
    """Accept a checkpoint directory or a training output directory (prefers best/ over final/)."""
    root = Path(path)
    if not root.exists():
        raise UsageError(f"checkpoint not found: {root}")
    ckpt = root
    if not (root / "model.json").exists():
        for sub in ("best", "final"):
            if (root / sub / "model.json").exists():
                ckpt = root / sub
                break
        else:
            raise UsageError(f"no model.json under {root}")
    for cand in (ckpt / "vocab.txt", ckpt.parent / "vocab.txt"):
        if cand.exists():
            vocab = Vocab.load(cand)
            break
    else:
        raise UsageError(f"no vocab.txt next to checkpoint {ckpt}")
    model, extra = load_model(ckpt)
    return model, vocab


# ---------------------------------------------------------------- commands

def cmd_train(args) -> int:
    from .trainer import fit

    data = _require_file(args.data, "data")
    val_path = _require_file(args.val, "val") if args.val else None
    overrides = {"seed": args.seed, "lam": args.lam, "max_steps": args.steps, "batch_size": args.batch_size,
                 "val_every": args.val_every}
    if args.no_adversarial:
        overrides["adversarial"] = False
    if args.baseline:
        overrides["autoencoder"] = False
    cfg = resolve_train_config(args.preset, args.config, overrides)
    if args.out is None:
        raise UsageError("--out is required")
    train = read_pairs(data)
    val = filter_by_score(read_pairs(val_path), args.min_score) if val_path else []
    res = fit(train, cfg, val, out_dir=args.out)
    last = res.log[-1] if res.log else {}
    print(json.dumps({"steps": len(res.log), "last": last, "best_rouge_l_f1": res.best_rouge_l,
                      "out": str(res.out_dir)}))
    return EXIT_OK


def cmd_generate(args) -> int:
    from .decode import beam_search, greedy_decode, write_generations

    data = _require_file(args.data, "data")
    if args.out is None:
        raise UsageError("--out is required")
    model, vocab = _load_checkpoint(args.checkpoint)
    records = []
    for pair in read_pairs(data):
        src = encode_chars(pair.text, vocab)
        if not src:
            raise UsageError("cannot summarize an empty text")
        if args.greedy:
            toks = greedy_decode(model, src, args.max_len, args.suppress_unk)
            lp = None
        else:
            hyp = beam_search(model, src, args.beam_size, args.max_len, args.suppress_unk)
            toks, lp = hyp.summary, hyp.log_prob
        records.append({"text": pair.text, "generated": vocab.decode(toks), "log_prob": lp})
    write_generations(args.out, records)
    print(f"wrote {len(records)} generations to {args.out}")
    return EXIT_OK


def _read_texts(path: Path, keys: tuple[str, ...]) -> list[str]:
    texts = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if path.suffix == ".jsonl":
            if not line.strip():
                continue
            rec = json.loads(line)
            for k in keys:
                if k in rec:
                    texts.append(rec[k])
                    break
            else:
                raise UsageError(f"{path}:{lineno}: none of the fields {keys} present")
        else:
            texts.append(line)
    return texts


def cmd_evaluate(args) -> int:
    from .rouge import corpus_rouge, format_table, tokenize

    pred = _read_texts(_require_file(args.pred, "pred"), ("generated", "summary"))
    ref = _read_texts(_require_file(args.ref, "ref"), ("summary",))
    if len(pred) != len(ref):
        raise UsageError(f"{len(pred)} candidates but {len(ref)} references")
    if not pred:
        raise UsageError("nothing to evaluate")
    scores = corpus_rouge([(tokenize(c, args.tokens), tokenize(r, args.tokens)) for c, r in zip(pred, ref)])
    payload = {m: {"precision": round(s.precision, 6), "recall": round(s.recall, 6), "f1": round(s.f1, 6)}
               for m, s in scores.items()}
    print(format_table(scores))
    print(json.dumps(payload, sort_keys=True))
    if args.json:
        Path(args.json).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_probe(args) -> int:
    from .probe import LabeledExample, ProbeConfig, probe_accuracy, train_probe

    def labeled(path):
        out = []
        for p in read_pairs(path):
            if p.label is None:
                raise UsageError(f"{path}: record without a label")
            out.append(LabeledExample(p.text, p.label))
        return out

    train = labeled(_require_file(args.data, "data"))
    test = labeled(_require_file(args.val, "val"))
    model, vocab = _load_checkpoint(args.checkpoint)
    clf = train_probe(model, vocab, train, args.k, ProbeConfig(seed=args.seed or 0))
    acc = probe_accuracy(clf, model, vocab, test, args.k)
    print(json.dumps({"k": args.k, "accuracy": acc}))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import COMPOSITES, PRIMITIVES, check_primitive, check_total_loss
    from .trainer import TRAIN_PRESETS

    preset = TRAIN_PRESETS.get(args.preset)
    if preset is None:
        raise UsageError(f"unknown preset {args.preset!r}")
    cfg = ModelConfig(vocab_size=args.vocab_size, embed_size=preset["embed_size"],
                      hidden_size=preset["hidden_size"], layers=preset["layers"], init_scale=args.init_scale)
    results = [check_primitive(n, args.points, args.seed or 0, args.eps) for n in PRIMITIVES + COMPOSITES]
    results.append(check_total_loss(cfg, args.seed or 0, args.eps, max_coords=args.coords))
    worst = 0.0
    for r in results:
        worst = max(worst, r.max_rel_error)
        print(f"{'PASS' if r.ok else 'FAIL'} {r.name:<16} max_rel_error={r.max_rel_error:.3e} tol={r.tol:.0e} ({r.seconds:.2f}s)")
    print(f"max relative error {worst:.3e}")
    return EXIT_OK if all(r.ok for r in results) else EXIT_GRADCHECK


def cmd_synth(args) -> int:
    from .synth import generate

    kwargs = {"k": args.k} if args.task == "sentiment" else {}
    pairs = generate(args.task, args.n, args.seed or 0, **kwargs)
    if args.out:
        write_pairs(args.out, pairs)
    else:
        for p in pairs:
            rec = {"text": p.text, "summary": p.summary}
            if p.label is not None:
                rec["label"] = p.label
            print(json.dumps(rec, ensure_ascii=False))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="superae", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--preset", default="desk")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--val")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--no-adversarial", action="store_true")
    p.add_argument("--baseline", action="store_true", help="plain seq2seq: no autoencoder path")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--val-every", type=int)
    p.add_argument("--min-score", type=int, default=3)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="summarize texts with a trained model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--beam-size", type=int, default=10)
    p.add_argument("--max-len", type=int)
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--suppress-unk", action="store_true")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="ROUGE-1/2/L of candidates against references")
    p.add_argument("--pred")
    p.add_argument("--ref")
    p.add_argument("--tokens", choices=("char", "whitespace"), default="char")
    p.add_argument("--json")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("probe", help="k-class probe accuracy of a frozen content encoder")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--val")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--preset", default="desk")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--points", type=int, default=100)
    p.add_argument("--coords", type=int, default=3, help="probed coordinates per parameter array")
    p.add_argument("--vocab-size", type=int, default=12)
    # a small init leaves many loss gradients below finite-difference resolution
    p.add_argument("--init-scale", type=float, default=0.5, help="weight init range of the probed model")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="write a seeded synthetic corpus")
    p.add_argument("--task", required=True, choices=("copy", "extract-span", "sentiment"))
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--seed", type=int)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"superae {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, FloatingPointError, RuntimeError) as exc:
        print(f"superae {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
