"""
Command-line entry point: gen, train, eval, predict, gradcheck.

    uv run python -m cli.main gen --out data/log.jsonl --sessions 20000
    uv run python -m cli.main train --data data/log.jsonl --out-dir runs/late --variant late
    uv run python -m cli.main eval --checkpoint runs/late/model.ckpt --data runs/late/valid.jsonl
"""

import argparse
import json
import logging
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence
import sys
import os

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from action_rnn import checkpoint
from action_rnn.config import RunConfig, process_defaults, read_config_file, validated
from action_rnn.datapipe import (
    Vocabulary, build_vocab, encode, parse_log, prepare, read_log, split, step_mask, write_log,
)
from action_rnn.errors import ConfigError, ContractViolation, DataError, NumericError
from action_rnn.evaluation import CSV_HEADER, evaluate, precision_table, write_report_csv
from action_rnn.grad import FD_TOLERANCE, backward, fd_check, random_case
from action_rnn.model import predict_next
from action_rnn.numkernel import make_rng, topk
from action_rnn.synth import SynthConfig, generate, write_truth
from action_rnn.training import TrainConfig, require_click_steps, train

logger = logging.getLogger("action_rnn.cli")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

GRADCHECK_SIZES = {"V_x": 50, "d": 8, "k": 8, "T": 6}

# generator/trainer fields that are spelled differently in the run config
_SYNTH_FIELDS = {"V": "catalog_size", "n_sessions": "sessions", "len_range": "session_len_max"}
_TRAIN_FIELDS = {"d": "embed_dim", "k": "hidden_dim"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _config_flags(parser: argparse.ArgumentParser):
    group = parser.add_argument_group("config overrides")
    for name in RunConfig.model_fields:
        flags = ["--" + name.replace("_", "-")]
        if name == "top_k":
            flags.insert(0, "--k")
        group.add_argument(*flags, dest=name, default=argparse.SUPPRESS, metavar="VALUE")
    group.add_argument("--config", dest="config_file", default=None, help="key=value config file")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="action-rnn", description="Action-conditional session RNN")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a synthetic log")
    p.add_argument("--out", required=True, help="log file to write")
    p.add_argument("--truth", default=None, help="truth sidecar (default: <out>.truth)")
    _config_flags(p)

    p = sub.add_parser("train", help="preprocess, split and train one variant")
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    _config_flags(p)

    p = sub.add_parser("eval", help="Precision@K report for one or more checkpoints")
    p.add_argument("--checkpoint", nargs="+", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", default=None, help="default: vocab.tsv next to the first checkpoint")
    p.add_argument("--report", default=None, help="CSV file to write (default: CSV on stdout)")
    _config_flags(p)

    p = sub.add_parser("predict", help="top-K next items for one session read from stdin")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", default=None)
    _config_flags(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    p.add_argument("--corrupt-grad", action="store_true", help=argparse.SUPPRESS)
    _config_flags(p)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values: Dict[str, object] = {}
    values.update(process_defaults())
    if args.config_file:
        values.update(read_config_file(args.config_file))
    for name in RunConfig.model_fields:
        if hasattr(args, name):
            values[name] = getattr(args, name)
    return validated(RunConfig, **values)


def _renamed(err: ConfigError, names: Dict[str, str]) -> ConfigError:
    if err.field in names:
        return ConfigError(str(err).split(": ", 1)[-1], field=names[err.field])
    return err


def synth_config(cfg: RunConfig) -> SynthConfig:
    try:
        return validated(
            SynthConfig,
            V=cfg.catalog_size, n_sessions=cfg.sessions,
            len_range=(cfg.session_len_min, cfg.session_len_max),
            zipf_s=cfg.zipf_s, n_clusters=cfg.n_clusters, p_intra=cfg.p_intra,
            rec_rate=cfg.rec_rate, slate_size=cfg.slate_size, p_follow=cfg.p_follow,
            seed=cfg.seed,
        )
    except ConfigError as e:
        raise _renamed(e, _SYNTH_FIELDS) from e


def train_config(cfg: RunConfig) -> TrainConfig:
    try:
        return validated(
            TrainConfig,
            variant=cfg.variant, d=cfg.embed_dim, k=cfg.hidden_dim, batch_size=cfg.batch_size,
            iterations=cfg.iterations, lr_start=cfg.lr_start, lr_end=cfg.lr_end, seed=cfg.seed,
            mask_mode=cfg.mask_mode or "all", eval_every=cfg.eval_every, log_every=cfg.log_every,
            threads=cfg.resolved_threads(),
        )
    except ConfigError as e:
        raise _renamed(e, _TRAIN_FIELDS) from e


def cmd_gen(cfg: RunConfig, out_path: str, truth_path: Optional[str] = None) -> int:
    sessions, truth = generate(synth_config(cfg))
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="\n") as f:
        write_log(sessions, f)
    truth_file = Path(truth_path) if truth_path else out.with_name(out.name + ".truth")
    with open(truth_file, "w", encoding="utf-8", newline="\n") as f:
        write_truth(truth, f)
    print(f"✓ {len(sessions)} sessions written to {out}", file=sys.stderr)
    return EXIT_OK


def cmd_train(cfg: RunConfig, data_path: str, out_dir: str) -> int:
    tcfg = train_config(cfg)
    sessions = read_log(data_path)
    if not sessions:
        raise DataError(f"{data_path}: no sessions")
    train_raw, valid_raw = split(sessions, cfg.valid_fraction, make_rng(cfg.seed))
    vocab = build_vocab(train_raw, cfg.min_count)
    train_seqs = prepare(train_raw, vocab, cfg.max_len, cfg.max_recs)
    valid_seqs = prepare(valid_raw, vocab, cfg.max_len, cfg.max_recs)
    if not train_seqs:
        raise DataError(f"{data_path}: no training sequence with 2 or more events")
    require_click_steps(tcfg, train_seqs)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.tsv")
    with open(out / "valid.jsonl", "w", encoding="utf-8", newline="\n") as f:
        write_log(valid_raw, f)
    # unset optional keys are left out so the file can be fed back through --config
    lines = [line for line in cfg.echo().splitlines() if not line.endswith("=None")]
    (out / "run_config.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    clock = time.perf_counter if cfg.record_time else None
    started = time.perf_counter()
    params, history = train(
        tcfg, train_seqs, valid_seqs, V_x=vocab.size, checkpoint_dir=out, clock=clock
    )
    history.to_csv(out / "history.csv")
    logger.info("trained %d iterations in %.1fs", tcfg.iterations, time.perf_counter() - started)
    print(f"✓ checkpoint, vocabulary and history written to {out}", file=sys.stderr)

    if valid_seqs:
        _, report = evaluate(
            params, tcfg.variant, valid_seqs, K=cfg.top_k, n_boot=cfg.n_boot, level=cfg.ci_level,
            rng=make_rng(cfg.seed), threads=cfg.resolved_threads(),
        )
        print(f"validation Precision@{cfg.top_k}: {report.precision_global:.4f}")
    return EXIT_OK


def _vocab_for(checkpoint_path: str, vocab_path: Optional[str]) -> Vocabulary:
    return Vocabulary.load(vocab_path or Path(checkpoint_path).with_name("vocab.tsv"))


def cmd_eval(
    cfg: RunConfig,
    checkpoints: Sequence[str],
    data_path: str,
    vocab_path: Optional[str] = None,
    report_path: Optional[str] = None,
) -> int:
    vocab = _vocab_for(checkpoints[0], vocab_path)
    sequences = prepare(read_log(data_path), vocab, cfg.max_len, cfg.max_recs)
    if not sequences:
        raise DataError(f"{data_path}: no sequence with 2 or more events")

    rows = []
    for path in checkpoints:
        params, variant = checkpoint.load(path)
        if params.V_x != vocab.size:
            raise DataError(f"{path}: checkpoint has V_x={params.V_x}, vocabulary has {vocab.size}")
        _, report = evaluate(
            params, variant, sequences, K=cfg.top_k, n_boot=cfg.n_boot, level=cfg.ci_level,
            rng=make_rng(cfg.seed), threads=cfg.resolved_threads(),
        )
        name = variant if variant not in [r[0] for r in rows] else f"{variant}:{Path(path).stem}"
        rows.append((name, report))
        print(report.to_text(name), file=sys.stderr)

    if report_path:
        write_report_csv(report_path, rows)
        print(precision_table(rows))
    else:
        print(",".join(CSV_HEADER))
        for name, report in rows:
            print(",".join(report.to_csv_row(name)))
    return EXIT_OK


def _read_stdin_session(stream) -> List:
    text = stream.read().strip()
    if not text:
        raise DataError("no session on standard input")
    try:
        record = json.loads(text.splitlines()[0])
    except json.JSONDecodeError as e:
        raise DataError(f"standard input is not a JSON record: {e.msg}", line=1) from e
    if isinstance(record, dict):
        record.setdefault("user_id", "stdin")
    return parse_log([json.dumps(record)])


def cmd_predict(
    cfg: RunConfig, checkpoint_path: str, vocab_path: Optional[str] = None, stdin=None
) -> int:
    params, variant = checkpoint.load(checkpoint_path)
    vocab = _vocab_for(checkpoint_path, vocab_path)
    sessions = _read_stdin_session(stdin if stdin is not None else sys.stdin)
    if not sessions:
        raise DataError("session on standard input has no events")
    seq = encode(sessions[0], vocab, cfg.max_len, cfg.max_recs)
    probs = predict_next(params, seq, variant)
    for idx in topk(probs, cfg.top_k):
        print(f"{vocab.id_of[idx]}\t{probs[idx]:.6f}")
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, corrupt: bool = False) -> int:
    mask_mode = cfg.mask_mode or "all"
    params, seq = random_case(cfg.seed, **GRADCHECK_SIZES)

    def corrupted(p, s, v, m):
        loss, g = backward(p, s, v, m)
        g.W_out[0, 0] += 1e-2
        return loss, g

    err = fd_check(
        params, seq, cfg.variant, step_mask(seq, mask_mode),
        backward_fn=corrupted if corrupt else None,
    )
    print(f"{cfg.variant} seed={cfg.seed} mask={mask_mode}: max relative error {err:.3e}")
    return EXIT_OK if err < FD_TOLERANCE else EXIT_NUMERIC


def _setup_logging(level: str):
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        _setup_logging(cfg.log_level)
        logger.info("resolved config:\n%s", cfg.echo())
        print("\n".join(f"# {line}" for line in cfg.echo().splitlines()), file=sys.stderr)

        if args.command == "gen":
            return cmd_gen(cfg, args.out, args.truth)
        if args.command == "train":
            return cmd_train(cfg, args.data, args.out_dir)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint, args.data, args.vocab, args.report)
        if args.command == "predict":
            return cmd_predict(cfg, args.checkpoint, args.vocab)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg, args.corrupt_grad)
        raise UsageError(f"unknown command {args.command!r}")

    except (UsageError, ConfigError, ContractViolation) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
