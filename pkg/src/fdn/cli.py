"""Command-line entry point.

Subcommands: synth, train, extract, eval, sweep, gradcheck, params.
Exit codes: 0 success, 1 validation error (bad flags, config, inputs),
2 runtime error. Numeric output on stdout uses 6 significant digits; all
randomness is governed by --seed, so repeated runs produce byte-identical
primary outputs.

Model and training settings can also come from a flat ``key=value`` config
file (``--config``); explicit flags win over file values, and unknown keys
are rejected before any work starts.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .audio import generate_synthetic_corpus, read_manifest, read_wav
from .checkpoint import load_checkpoint, save_checkpoint
from .diagnostics import GRAD_TOLERANCE, run_gradient_suite
from .evaluation import (all_pairs_trials, evaluate_protocol, extract_embedding,
                         perturbation_sweep, read_trials, write_trials)
from .model import FdnNetwork, ModelConfig, count_parameters
from .training import TrainConfig, train

# Published total sizes (millions of parameters) for the full-scale light
# configuration at the reduction ratios reported for this architecture.
REFERENCE_PARAM_MILLIONS = {2: 13.33, 4: 13.15, 8: 13.06, 16: 13.01, 32: 12.99}

_MODEL_KEYS = {f.name: f.type for f in dataclasses.fields(ModelConfig)}
_TRAIN_KEYS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}


def _fmt(x) -> str:
    return f"{x:.6g}"


def read_config_file(path) -> dict:
    """Flat key=value lines; '#' starts a comment. Unknown keys are errors."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key in _MODEL_KEYS:
            typ = _MODEL_KEYS[key]
        elif key in _TRAIN_KEYS:
            typ = _TRAIN_KEYS[key]
        else:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        if key in values:
            raise ValueError(f"{path}:{lineno}: duplicate config key {key!r}")
        if typ in ("int", int):
            values[key] = int(val)
        elif typ in ("float", float):
            values[key] = float(val)
        else:
            values[key] = val
    return values


def _build_model_config(args, file_values, num_speakers=None) -> ModelConfig:
    kwargs = {k: v for k, v in file_values.items() if k in _MODEL_KEYS}
    if getattr(args, "tiny", False):
        kwargs.setdefault("channel_divisor", 16)
        kwargs.setdefault("crop_samples", 2187)
    if getattr(args, "variant", None):
        kwargs["variant"] = args.variant
    if getattr(args, "alpha", None) is not None:
        kwargs["alpha"] = args.alpha
    if getattr(args, "speakers", None) is not None:
        kwargs["num_speakers"] = args.speakers
    elif num_speakers is not None and "num_speakers" not in kwargs:
        kwargs["num_speakers"] = num_speakers
    return ModelConfig(**kwargs)


def _build_train_config(args, file_values) -> TrainConfig:
    kwargs = {k: v for k, v in file_values.items() if k in _TRAIN_KEYS}
    for flag in ("epochs", "batch_size", "seed", "checkpoint_every"):
        if getattr(args, flag, None) is not None:
            kwargs[flag] = getattr(args, flag)
    return TrainConfig(**kwargs)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    train_man, test_man = generate_synthetic_corpus(
        args.out, num_speakers=args.speakers, train_utts=args.train_utts,
        test_utts=args.test_utts, utt_samples=args.utt_len, seed=args.seed,
        sample_rate=args.sample_rate)
    print(f"speakers {args.speakers}")
    print(f"train utterances {len(train_man)} -> {Path(args.out) / 'train.tsv'}")
    if len(test_man):
        print(f"test utterances {len(test_man)} -> {Path(args.out) / 'test.tsv'}")
        trials = all_pairs_trials(test_man)
        trials_path = Path(args.out) / "trials.txt"
        write_trials(trials_path, trials)
        print(f"trials {len(trials)} -> {trials_path}")
    return 0


def cmd_train(args) -> int:
    file_values = read_config_file(args.config) if args.config else {}
    manifest = read_manifest(args.manifest, split="train")
    config = _build_model_config(args, file_values, num_speakers=len(manifest.speakers))
    tcfg = _build_train_config(args, file_values)
    model = FdnNetwork(config).initialize(tcfg.seed)
    history = train(model, manifest, tcfg, out_dir=args.out, log=print)
    print(f"checkpoint -> {Path(args.out) / 'checkpoint_final.ckpt'}")
    if history:
        print(f"final accuracy {_fmt(history[-1].accuracy)}")
    return 0


def cmd_extract(args) -> int:
    model = load_checkpoint(args.checkpoint)
    manifest = read_manifest(args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for entry in manifest.entries:
        emb = extract_embedding(model, read_wav(entry.path))
        path = out_dir / f"{entry.utterance_id}.emb"
        body = " ".join(f"{v:.17g}" for v in emb)
        path.write_text(f"{entry.utterance_id}\t{emb.size}\n{body}\n", encoding="utf-8")
    print(f"wrote {len(manifest)} embeddings to {out_dir}")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    manifest = read_manifest(args.manifest, split="test")
    trials = read_trials(args.trials)
    report = evaluate_protocol(model, manifest, trials)
    print(f"trials {report['n_trials']} (target {report['n_target']}, "
          f"nontarget {report['n_nontarget']})")
    print(f"score range [{_fmt(report['score_min'])}, {_fmt(report['score_max'])}], "
          f"target mean {_fmt(report['target_score_mean'])}, "
          f"nontarget mean {_fmt(report['nontarget_score_mean'])}")
    print(f"eer {_fmt(report['eer'])}")
    print(f"threshold {_fmt(report['threshold'])}")
    return 0


def cmd_sweep(args) -> int:
    model = load_checkpoint(args.checkpoint)
    manifest = read_manifest(args.manifest, split="test")
    trials = read_trials(args.trials)
    factors = [float(v) for v in args.factors.split(",") if v.strip()] if args.factors else []
    rows = perturbation_sweep(model, manifest, trials, factors)
    lines = [f"{_fmt(factor)}\t{_fmt(eer)}\t{_fmt(thr)}" for factor, eer, thr in rows]
    for line in lines:
        print(line)
    if args.out:
        Path(args.out).write_text("".join(l + "\n" for l in lines), encoding="utf-8")
    return 0


def cmd_gradcheck(args) -> int:
    rows = run_gradient_suite(seed=args.seed)
    for name, err in rows:
        print(f"{name}\t{err:.3e}")
    worst = max(err for _, err in rows)
    print(f"max rel-err {worst:.3e} (tolerance {GRAD_TOLERANCE:g})")
    if worst >= GRAD_TOLERANCE:
        print("FAIL", file=sys.stderr)
        return 2
    print("OK")
    return 0


def cmd_params(args) -> int:
    file_values = read_config_file(args.config) if args.config else {}
    config = _build_model_config(args, file_values)
    total = count_parameters(config)
    print(f"variant {config.variant}, alpha {config.alpha}, speakers {config.num_speakers}")
    print(f"parameters {total} ({_fmt(total / 1e6)}M)")
    full_scale = (config.variant == "light" and config.channel_divisor == 1
                  and config.front_channels == 128 and config.block1_channels == 256
                  and config.gru_hidden == 1024 and config.num_speakers == 6112)
    if full_scale and config.alpha in REFERENCE_PARAM_MILLIONS:
        ref = REFERENCE_PARAM_MILLIONS[config.alpha]
        dev = abs(total / 1e6 - ref) / ref
        print(f"reference {ref}M, deviation {_fmt(100 * dev)}%")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we use 1
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_model_flags(p):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--variant", choices=("light", "heavy"))
    p.add_argument("--alpha", type=int)
    p.add_argument("--speakers", type=int)
    p.add_argument("--tiny", action="store_true",
                   help="desk-scale preset (channel_divisor 16, crop 2187)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fdn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"fdn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic corpus with manifests and trials")
    p.add_argument("--out", required=True)
    p.add_argument("--speakers", type=int, default=8)
    p.add_argument("--train-utts", type=int, default=10)
    p.add_argument("--test-utts", type=int, default=4)
    p.add_argument("--utt-len", type=int, default=8748)
    p.add_argument("--sample-rate", type=int, default=16000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train a model on a corpus manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    p.add_argument("--seed", type=int)
    _add_model_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("extract", help="write per-utterance embedding files")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_extract)

    p = sub.add_parser("eval", help="score trials and report the EER")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--trials", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep", help="speed-perturbation robustness sweep over the trials")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--trials", required=True)
    p.add_argument("--factors", default="0.5,0.7,0.9,1.0,1.1,1.5,2.0",
                   help="comma-separated speed factors")
    p.add_argument("--out", help="also write the table to this file")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check of every backward rule")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("params", help="count trainable parameters for a configuration")
    _add_model_flags(p)
    p.set_defaults(fn=cmd_params)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help exits 0, parse errors exit 1
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RuntimeError, FloatingPointError, AssertionError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
