"""``transformer-tts`` command line: prepare, train, synth, plot, check.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline, plots
from .audio import AudioError, griffin_lim, read_features, write_features, write_wav
from .checkpoint import CheckpointError, load_checkpoint
from .config import build_configs, load_config
from .corpus import toy_corpus_dir
from .data import DataError
from .frontend import EmptyInputError, Phonemizer
from .tensor import ConfigError
from .training import NumericalError, read_metrics_log

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

logger = logging.getLogger("transformer_tts")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_prepare(args) -> int:
    corpus = Path(args.corpus) if args.corpus else toy_corpus_dir()
    report = pipeline.prepare_corpus(corpus, args.manifest)
    print(f"wrote {args.manifest}: {len(report.entries)} utterances "
          f"({report.cache_hits} cached features reused)")
    return EXIT_OK


def _train_configs(args, vocab_size: int):
    if args.config:
        model_cfg, train_cfg = load_config(args.config, vocab_size)
    else:
        model_cfg, train_cfg = build_configs({}, vocab_size)
    model_cfg = pipeline.apply_overrides(model_cfg, args.ablation, args.pe, args.layers,
                                         args.heads)
    updates = {k: v for k, v in (("seed", args.seed), ("max_frames", args.max_frames),
                                 ("stop_weight", args.stop_weight),
                                 ("total_steps", args.steps)) if v is not None}
    try:
        train_cfg = dataclasses.replace(train_cfg, **updates)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return model_cfg, train_cfg


def cmd_train(args) -> int:
    phonemizer = Phonemizer()
    model_cfg, train_cfg = _train_configs(args, len(phonemizer.inventory))
    utterances = pipeline.load_utterances(args.manifest, phonemizer)

    def report(m):
        if m["step"] % args.log_every == 0:
            print(f"step {m['step']}: mel {m['mel_loss']:.4f} stop {m['stop_loss']:.4f} "
                  f"alpha_enc {m['alpha_enc']:.4f} alpha_dec {m['alpha_dec']:.4f}", flush=True)

    trainer = pipeline.train_run(model_cfg, train_cfg, utterances, args.run_dir,
                                 resume=args.resume, callback=report)
    print(f"finished at step {trainer.opt.step_count}; run directory {args.run_dir}")
    return EXIT_OK


def _checkpoint_path(args) -> Path:
    if args.checkpoint:
        return Path(args.checkpoint)
    if args.run_dir:
        return Path(args.run_dir) / pipeline.LATEST_NAME
    raise UsageError("synth needs --checkpoint or --run-dir")


def cmd_synth(args) -> int:
    from .inference import best_head_diagonality, synthesize

    phonemizer = Phonemizer()
    tokens = phonemizer(args.text)
    model, _ = load_checkpoint(_checkpoint_path(args))
    result = synthesize(model, tokens, threshold=args.threshold, max_steps=args.max_steps)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    stem = out.with_suffix("")
    audio = griffin_lim(result.mel, iterations=args.gl_iters, seed=0)
    write_wav(out, audio)
    write_features(stem.with_suffix(".mel"), result.mel)
    cross = np.stack([w[0] for w in result.attention.decoder_cross])  # (L, H, T', T)
    np.save(stem.with_suffix(".attn.npy"), cross)
    layer, head = _best_head(cross)
    plots.attention_image(cross[layer, head], stem.with_suffix(".attn.pgm"))
    plots.mel_image(result.mel.frames, stem.with_suffix(".mel.pgm"))
    diag = {"text": args.text, "frames": result.n_frames, "tokens": len(tokens),
            "stopped_naturally": result.stopped_naturally,
            "best_head": [layer, head],
            "diagonality": best_head_diagonality(result.attention)}
    stem.with_suffix(".json").write_text(json.dumps(diag, indent=2) + "\n")
    if not result.stopped_naturally:
        print(f"warning: hit max_steps ({result.n_frames} frames) without a stop decision; "
              f"output flagged in {stem.with_suffix('.json')}", file=sys.stderr)
    print(f"wrote {out} ({result.n_frames} frames)")
    return EXIT_OK


def _best_head(cross: np.ndarray, layers=(0, 1)) -> tuple[int, int]:
    from .inference import diagonality_score

    best, arg = -1.0, (0, 0)
    for layer in layers:
        if layer >= cross.shape[0]:
            continue
        for head in range(cross.shape[1]):
            score = diagonality_score(cross[layer, head])
            if score > best:
                best, arg = score, (layer, head)
    return arg


def cmd_plot(args) -> int:
    out = Path(args.out)
    if args.kind == "pe-scale":
        rows = read_metrics_log(Path(args.input) / pipeline.METRICS_NAME
                                if Path(args.input).is_dir() else args.input)
        plots.write_pe_scale_csv(out, rows)
    elif args.kind == "bench":
        from .inference import step_time_benchmark
        from .model import ModelConfig

        plots.write_bench_csv(out, step_time_benchmark(ModelConfig.toy(), reps=args.reps))
    elif args.kind == "attention":
        cross = np.load(args.input)
        if cross.ndim == 2:
            weights = cross
        else:
            layer, head = ((args.layer, args.head) if args.layer is not None
                           else _best_head(cross))
            weights = cross[layer, head]
        plots.attention_image(weights, out)
    elif args.kind == "mel":
        plots.mel_image(read_features(args.input).frames, out)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_check(args) -> int:
    if args.mode == "grad":
        from .gradcheck import check_all_ops

        reports = check_all_ops(seeds=range(args.seeds))
        for r in reports:
            print(r)
        ok = all(r.passed for r in reports)
    elif args.mode == "causality":
        from .inference import causality_equivalence_check
        from .model import ModelConfig, TTSModel

        ok = True
        for seed in range(args.seeds):
            rng = np.random.default_rng(seed)
            model = TTSModel(ModelConfig.toy(), seed=seed)
            tokens = rng.integers(1, model.config.vocab_size, 12)
            mel = rng.standard_normal((24, model.config.n_mels))
            diff = causality_equivalence_check(model, tokens, mel)
            passed = diff < 1e-5
            ok &= passed
            print(f"{'PASS' if passed else 'FAIL'} seed {seed}: max abs diff {diff:.3e}")
    else:
        from .data import batching_sweep

        problems = batching_sweep(cases=args.cases)
        for p in problems:
            print(f"FAIL {p}")
        ok = not problems
        print(f"{'PASS' if ok else 'FAIL'} batching invariants over {args.cases} manifests")
    return EXIT_OK if ok else EXIT_NUMERICAL


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="transformer-tts", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", help="phonemize transcripts and cache mel features")
    p.add_argument("--corpus", help="directory with <utt>.wav and transcript.tsv "
                                    "(default: bundled toy corpus)")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model inside a run directory")
    p.add_argument("--config")
    p.add_argument("--manifest", required=True)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--ablation", choices=sorted(pipeline.ABLATIONS), default="none")
    p.add_argument("--pe", choices=["scaled", "fixed"])
    p.add_argument("--layers", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--max-frames", type=int)
    p.add_argument("--stop-weight", type=float)
    p.add_argument("--steps", type=int, help="total optimizer steps")
    p.add_argument("--resume", action="store_true", help="continue from latest checkpoint")
    p.add_argument("--log-every", type=int, default=50)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synth", help="text to WAV with mel and attention artifacts")
    p.add_argument("--checkpoint")
    p.add_argument("--run-dir")
    p.add_argument("--text", required=True)
    p.add_argument("--out", required=True, help="output WAV path")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--gl-iters", type=int, default=60)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("plot", help="emit PGM images or CSV tables")
    p.add_argument("kind", choices=["attention", "mel", "pe-scale", "bench"])
    p.add_argument("--input", help="run directory, metrics log, .attn.npy or .mel file")
    p.add_argument("--out", required=True)
    p.add_argument("--layer", type=int)
    p.add_argument("--head", type=int)
    p.add_argument("--reps", type=int, default=10)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("check", help="run an invariant suite")
    p.add_argument("mode", choices=["grad", "causality", "batching"])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--cases", type=int, default=100)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "plot" and args.kind != "bench" and not args.input:
        parser.error(f"plot {args.kind} needs --input")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, EmptyInputError, AudioError, CheckpointError, FileNotFoundError,
            KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
