"""Command-line front door: ``altkit <subcommand> [--config PATH] [--output DIR] ...``.

Exit codes: 0 success, 1 unexpected error, 2 invalid config or arguments,
3 missing input, 4 graph error, 5 vocabulary mismatch, 6 lattice error,
7 decode error, 8 bad audio or data file.
"""

import argparse
import json
import logging
import os
import sys

from . import pipeline
from .config import ConfigFileError, RunConfig, load_config, resolve_output, validate, with_overrides
from .features import WavError
from .lm.ngram import OOVError

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_MISSING, EXIT_DATA = 0, 1, 2, 3, 8

log = logging.getLogger("altkit")


def _common(p):
    p.add_argument("--config", metavar="PATH", help="INI run configuration")
    p.add_argument("--output", metavar="DIR", help="run directory (overrides $ALT_OUTPUT_DIR and the config)")
    p.add_argument("--jobs", type=int, metavar="N", help="worker processes for per-utterance stages")
    p.add_argument("--seed", type=int, metavar="N", help="override the config seed")
    p.add_argument("-q", "--quiet", action="store_true", help="only print errors")


def build_parser():
    parser = argparse.ArgumentParser(prog="altkit", description="Desk-scale lyrics transcription pipeline")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", help="generate the synthetic corpus")
    _common(p)
    p = sub.add_parser("features", help="log-mel features, speed perturbation, CMVN, speaker embeddings")
    _common(p)
    p = sub.add_parser("train-am", help="train CTDNN_SA (and the CTDNN baseline)")
    _common(p)
    p.add_argument("--model", choices=["ctdnn_sa", "ctdnn", "both"], default=None,
                   help="which acoustic model(s) to train (default: per config)")
    p = sub.add_parser("train-lm", help="train 3G/4G (+unk) n-gram LMs and the RNNLM")
    _common(p)
    p = sub.add_parser("decode", help="first-pass decoding with the 3G LMs")
    _common(p)
    p.add_argument("--split", choices=["dev", "test", "both"], default="both")
    p = sub.add_parser("rescore", help="4G and RNNLM lattice rescoring")
    _common(p)
    p = sub.add_parser("score", help="WER of run hypotheses, or of --hyp against --ref")
    _common(p)
    p.add_argument("--ref", metavar="PATH", help="reference text (<utt>\\t<words>)")
    p.add_argument("--hyp", metavar="PATH", help="hypothesis text (<utt>\\t<words>)")
    p = sub.add_parser("analyze-attention", help="attention profile CSV/SVG and report")
    _common(p)
    p.add_argument("--model", metavar="CKPT", help="acoustic model checkpoint (default: run's CTDNN_SA)")
    p.add_argument("--split", default="dev", choices=["train", "dev", "test"])
    p = sub.add_parser("params-report", help="parameter counts for CTDNN and CTDNN_SA head sweeps")
    _common(p)
    p = sub.add_parser("run-all", help="every stage, ending in results.csv")
    _common(p)
    return parser


def _config(args):
    cfg = load_config(args.config) if args.config else validate(RunConfig())
    cfg = with_overrides(cfg, seed=args.seed, jobs=args.jobs)
    return cfg


def _progress(epoch, it, total, train_loss, valid_loss):
    if valid_loss == valid_loss:
        log.info("epoch %d iteration %d/%d train %.4f valid %.4f", epoch + 1, it, total, train_loss, valid_loss)


def _score_files(ref, hyp):
    from .scoring import read_text_file, score_dataset
    report = score_dataset(read_text_file(ref), dict(read_text_file(hyp)))
    print(report.summary())
    return EXIT_OK


def run_command(args):
    if args.command == "score" and (args.ref or args.hyp):
        if not (args.ref and args.hyp):
            raise ConfigFileError("--ref and --hyp go together")
        return _score_files(args.ref, args.hyp)
    cfg = _config(args)
    run = pipeline.Run(cfg, resolve_output(cfg, args.output), cfg.jobs)
    cmd = args.command
    if cmd == "synth":
        files = pipeline.stage_synth(run)
    elif cmd == "features":
        files = pipeline.stage_features(run)
    elif cmd == "train-am":
        which = {"both": ("ctdnn_sa", "ctdnn"), None: None}.get(args.model, (args.model,))
        files = pipeline.stage_train_am(run, which, progress=_progress)
    elif cmd == "train-lm":
        files = pipeline.stage_train_lm(run)
    elif cmd == "decode":
        splits = ("dev", "test") if args.split == "both" else (args.split,)
        files = pipeline.stage_decode(run, splits=splits)
    elif cmd == "rescore":
        files = pipeline.stage_rescore(run)
    elif cmd == "score":
        files = pipeline.stage_score(run)
        with open(files[0], encoding="utf-8") as f:
            print(f.read(), end="")
    elif cmd == "analyze-attention":
        files = pipeline.stage_analyze_attention(run, args.model, args.split)
    elif cmd == "params-report":
        files = pipeline.stage_params_report(run)
    elif cmd == "run-all":
        results, timings = pipeline.run_all(run, progress=_progress)
        with open(results, encoding="utf-8") as f:
            print(f.read(), end="")
        print(json.dumps(timings))
        files = [results]
    else:  # pragma: no cover - argparse rejects unknown commands
        raise ConfigFileError(f"unknown command {cmd}")
    for p in files:
        log.info("wrote %s", os.path.relpath(p))
    return EXIT_OK


def exit_code_for(exc):
    code = getattr(exc, "exit_code", None)
    if code is not None:
        return code
    if isinstance(exc, FileNotFoundError):
        return EXIT_MISSING
    if isinstance(exc, (WavError, OOVError)):
        return EXIT_DATA
    return EXIT_ERROR


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", datefmt="%H:%M:%S")
    try:
        return run_command(args)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes below
        code = exit_code_for(exc)
        if code == EXIT_ERROR:
            log.exception("unexpected error")
        print(f"altkit: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
