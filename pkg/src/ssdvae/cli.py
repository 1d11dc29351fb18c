"""Batch command-line front end.

    ssdvae COMMAND [--config FILE] [--seed N] [--section.key VALUE ...] [command flags]

Any dotted config key can be given as a flag; precedence is flags > config
file > defaults, and ``--seed`` sets both ``train.seed`` and ``synth.seed``.
Exit status: 0 success, 1 invalid input or usage, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import torch

from .config import ConfigError, ModelConfig, load_config
from .data.corpus import CorpusFormatError, read_corpus, write_corpus
from .data.inc import build_inc, read_inc, write_inc
from .data.synth import default_spec, sample_documents, synth_generate
from .data.vocab import build_vocab
from .diffcore import ContractViolation
from .evaluate import (EvalReport, cluster_report, frame_classification, inc_accuracy,
                       perplexity, frame_names)
from .model import FrameVAE, generate_script
from .rng import numpy_rng, torch_rng
from .trainer import (CheckpointError, build_model, fit, load_checkpoint, save_checkpoint,
                      toy_config, toy_gradcheck)

log = logging.getLogger("ssdvae")

COMMANDS = ("train", "eval-ppl", "eval-inc", "eval-frames", "generate", "synth", "build-inc",
            "clusters", "gradcheck")
VALIDATION_ERRORS = (ConfigError, ContractViolation, CorpusFormatError, CheckpointError,
                     FileNotFoundError, IsADirectoryError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ssdvae", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cmd(name, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="key = value config file")
        s.add_argument("--seed", type=int, help="master seed (train.seed and synth.seed)")
        return s

    s = cmd("train", "train a model; writes OUT/model.ckpt, OUT/train.log, OUT/config.cfg")
    s.add_argument("--out", required=True)
    s = cmd("eval-ppl", "per-word perplexity of a corpus")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--out")
    s = cmd("eval-inc", "inverse narrative cloze accuracy")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--inc", required=True)
    s.add_argument("--out")
    s = cmd("eval-frames", "frame classification on single-event documents")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--out")
    s = cmd("generate", "sample a script from a seed event")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--seed-event", required=True, help='four tokens, e.g. "v01 s03 o07 None"')
    s.add_argument("--events", type=int, default=5)
    s.add_argument("--out")
    s = cmd("synth", "write a synthetic corpus (train/valid/test, INC, single-event frames)")
    s.add_argument("--out", required=True)
    s = cmd("build-inc", "build INC samples from a corpus")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--num", type=int, default=2000)
    s = cmd("clusters", "beta_enc / beta_dec top-k cluster report")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--out")
    s = cmd("gradcheck", "finite-difference check on a toy model")
    s.add_argument("--max-entries", type=int)
    s.add_argument("--out")
    return p


def parse_overrides(rest: list[str]) -> dict[str, str]:
    out, i = {}, 0
    while i < len(rest):
        arg = rest[i]
        if not arg.startswith("--") or "." not in arg:
            raise UsageError(f"unrecognized argument {arg!r}")
        key, eq, value = arg[2:].partition("=")
        if not eq:
            if i + 1 >= len(rest):
                raise UsageError(f"flag {arg} needs a value")
            value = rest[i + 1]
            i += 1
        out[key] = value
        i += 1
    return out


def resolve_config(args, rest: list[str]) -> ModelConfig:
    cfg = load_config(args.config, parse_overrides(rest))
    if args.seed is not None:
        cfg.train.seed = args.seed
        cfg.synth.seed = args.seed
    return cfg


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _report(report: EvalReport, out: str | None) -> None:
    _emit(report.to_text(), out)
    if out:
        Path(out + ".json").write_text(report.to_json() + "\n", encoding="utf-8")


def _need(path: str, key: str) -> str:
    if not path:
        raise ConfigError(f"{key} is required (set it in the config file or as --{key})")
    return path


# ---------------------------------------------------------------- commands

def cmd_train(args, cfg: ModelConfig) -> None:
    train = read_corpus(_need(cfg.data.train, "data.train"))
    valid = read_corpus(_need(cfg.data.valid, "data.valid"))
    vocab = build_vocab(train, cfg.model.vocab_size, cfg.model.frames)
    model = build_model(cfg, vocab)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(cfg.to_text(), encoding="utf-8")
    with open(out / "train.log", "w", encoding="utf-8") as fh:
        ckpt = fit(model, train, valid, vocab, cfg, log_file=fh)
    save_checkpoint(ckpt, out / "model.ckpt")
    log.info("best epoch %d, validation %.4f", ckpt.epoch, ckpt.best_metric)


def _load(path: str, cfg: ModelConfig, rest_keys):
    ckpt = load_checkpoint(path)
    # evaluation-time keys may be overridden; the model's own settings stay as trained
    for key in rest_keys:
        if key.startswith("eval."):
            ckpt.config.set(key, cfg.get(key))
    return ckpt, ckpt.model()


def cmd_eval_ppl(args, cfg, keys):
    ckpt, model = _load(args.ckpt, cfg, keys)
    seed = cfg.train.seed if args.seed is not None else ckpt.config.train.seed
    docs = read_corpus(args.corpus)
    ppl = perplexity(model, docs, ckpt.vocab, seed, ckpt.config.eval.samples, ckpt.config.model.tup)
    _report(EvalReport("ppl", {"ppl": ppl}, config=ckpt.config.to_dict(), seed=seed), args.out)


def cmd_eval_inc(args, cfg, keys):
    ckpt, model = _load(args.ckpt, cfg, keys)
    seed = cfg.train.seed if args.seed is not None else ckpt.config.train.seed
    samples, problems = read_inc(args.inc)
    for msg in problems:
        print(msg, file=sys.stderr)
    res = inc_accuracy(model, samples, ckpt.vocab, seed, skipped=len(problems),
                       n_chains=ckpt.config.eval.samples)
    rows = [[i, s.gold, p] for i, (s, p) in enumerate(zip(samples, res.predictions))]
    _report(EvalReport("inc", {"accuracy": res.accuracy, "samples": float(res.total),
                               "ties": float(res.ties), "skipped": float(res.skipped)},
                       ["sample", "gold", "predicted"], rows, ckpt.config.to_dict(), seed), args.out)


def cmd_eval_frames(args, cfg, keys):
    ckpt, model = _load(args.ckpt, cfg, keys)
    docs = read_corpus(args.corpus)
    metrics = frame_classification(model, docs, ckpt.vocab)
    _report(EvalReport("frames", metrics, config=ckpt.config.to_dict(),
                       seed=ckpt.config.train.seed), args.out)


def cmd_generate(args, cfg, keys):
    ckpt, model = _load(args.ckpt, cfg, keys)
    if not isinstance(model, FrameVAE):
        raise ContractViolation("generation needs an ssdvae checkpoint")
    seed_tokens = args.seed_event.split()
    if len(seed_tokens) != 4:
        raise ContractViolation("--seed-event takes exactly four tokens")
    vocab = ckpt.vocab
    seed = cfg.train.seed if args.seed is not None else ckpt.config.train.seed
    script = generate_script(model, [vocab.index(t) for t in seed_tokens], args.events,
                             torch_rng(seed, "generate"), ckpt.config.eval.temperature)
    names = frame_names(vocab, model.n_frames)
    lines = [f"[{names[script.seed_frame]}] " + " ".join(seed_tokens)]
    lines += [f"[{names[f]}] " + " ".join(vocab.tokens[t] for t in toks) for f, toks in script.events]
    _emit("\n".join(lines) + "\n", args.out)


def cmd_synth(args, cfg):
    spec = default_spec(cfg.synth)
    out = Path(args.out)
    splits = synth_generate(spec, out)
    inc_docs = sample_documents(spec, max(cfg.synth.valid, 6), numpy_rng(spec.seed, "synth-inc-docs"),
                                events=cfg.synth.inc_events)
    write_inc(build_inc(inc_docs, cfg.synth.inc_samples, numpy_rng(spec.seed, "synth-inc")),
              out / "inc.txt")
    for i, name in enumerate(("frames_train", "frames_test")):
        n = cfg.synth.train if name == "frames_train" else cfg.synth.test
        write_corpus(sample_documents(spec, n, numpy_rng(spec.seed, "synth-frames", i), events=1),
                     out / f"{name}.txt")
    log.info("wrote %d/%d/%d documents to %s", *(len(splits[k]) for k in splits), out)


def cmd_build_inc(args, cfg):
    docs = read_corpus(args.corpus)
    write_inc(build_inc(docs, args.num, numpy_rng(cfg.train.seed, "inc")), args.out)


def cmd_clusters(args, cfg, keys):
    ckpt, model = _load(args.ckpt, cfg, keys)
    if not isinstance(model, FrameVAE):
        raise ContractViolation("cluster reports need an ssdvae checkpoint")
    docs = read_corpus(args.corpus)
    rep = cluster_report(model, docs, ckpt.vocab, ckpt.config.eval.topk, ckpt.config.eval.aggregate,
                         ckpt.config.train.seed)
    _emit(rep.to_text(), args.out)


def cmd_gradcheck(args, cfg) -> int:
    toy = toy_config(cfg.model.attention, cfg.train.seed)
    rep = toy_gradcheck(toy, max_entries=args.max_entries)
    lines = ["parameter\tmax_rel_error"] + [f"{k}\t{v:.3e}" for k, v in rep.max_rel_error.items()]
    lines.append(f"worst\t{rep.worst:.3e}\ttolerance\t{rep.tolerance:g}\t"
                 f"{'PASS' if rep.passed else 'FAIL'}")
    _emit("\n".join(lines) + "\n", args.out)
    return 0 if rep.passed else 2


def run(argv: list[str] | None = None) -> int:
    try:
        args, rest = make_parser().parse_known_args(argv)
        keys = list(parse_overrides(rest))
        cfg = resolve_config(args, rest)
        torch.set_num_threads(max(1, int(os.environ.get("SSDVAE_THREADS", "1"))))
        c = args.command
        if c == "train":
            cmd_train(args, cfg)
        elif c == "eval-ppl":
            cmd_eval_ppl(args, cfg, keys)
        elif c == "eval-inc":
            cmd_eval_inc(args, cfg, keys)
        elif c == "eval-frames":
            cmd_eval_frames(args, cfg, keys)
        elif c == "generate":
            cmd_generate(args, cfg, keys)
        elif c == "synth":
            cmd_synth(args, cfg)
        elif c == "build-inc":
            cmd_build_inc(args, cfg)
        elif c == "clusters":
            cmd_clusters(args, cfg, keys)
        elif c == "gradcheck":
            return cmd_gradcheck(args, cfg)
        return 0
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure: keep the traceback in the log
        log.exception("command failed")
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    logging.basicConfig(level=os.environ.get("SSDVAE_LOGLEVEL", "INFO"),
                        format="%(levelname)s %(name)s: %(message)s")
    sys.exit(run())


if __name__ == "__main__":
    main()
