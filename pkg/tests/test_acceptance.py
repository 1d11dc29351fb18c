"""Acceptance suite: one PASS/FAIL line per criterion, printed to the terminal.

The trend criteria train small models on the default synthetic corpus for
three seeds; runs are cached for the session so criteria sharing a run do
not retrain. Expect roughly an hour on one core.
"""
import itertools
import math
import statistics
import time
from functools import lru_cache

import numpy as np
import pytest
import torch

from ssdvae.config import ModelConfig
from ssdvae.data.corpus import parse_line, read_corpus, serialize_document, write_corpus
from ssdvae.data.inc import build_inc
from ssdvae.data.synth import (SyntheticSpec, default_spec, document_loglik, hmm_oracle_ppl,
                               sample_documents, slot_token_names, synth_generate)
from ssdvae.data.vocab import build_vocab
from ssdvae.diffcore import DTYPE, ParameterSet
from ssdvae.encoder import inject_observation
from ssdvae.evaluate import (classification_metrics, cluster_report, frame_classification,
                             inc_accuracy, perplexity)
from ssdvae.gumbel import gumbel_noise, gumbel_softmax_sample
from ssdvae.rng import numpy_rng, torch_rng
from ssdvae.trainer import build_model, fit, load_checkpoint, save_checkpoint, toy_gradcheck

SEEDS = (0, 1, 2)
# desk-scale model; corpus is the default synthetic spec (10 frames, 5k/500/500 docs)
BASE = {"model.frames": 10, "model.vocab_size": 300, "model.embed_dim": 32,
        "model.frame_dim": 32, "model.enc_layers": 1, "model.enc_hidden": 32,
        "model.dec_layers": 1, "model.dec_hidden": 64, "train.max_epochs": 40}


@pytest.fixture
def say(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}", flush=True)
    return emit


def config(seed, kind="ssdvae", epsilon=0.0, **kw):
    cfg = ModelConfig()
    for k, v in {**BASE, "model.kind": kind, "train.epsilon": epsilon, "train.seed": seed,
                 "synth.seed": seed, **kw}.items():
        cfg.set(k, v)
    return cfg


@lru_cache(maxsize=None)
def corpus(seed):
    spec = default_spec(config(seed).synth)
    splits = synth_generate(spec)
    vocab = build_vocab(splits["train"], BASE["model.vocab_size"], BASE["model.frames"])
    inc_docs = sample_documents(spec, 500, numpy_rng(seed, "synth-inc-docs"), events=6)
    frames = {name: sample_documents(spec, n, numpy_rng(seed, "synth-frames", i), events=1)
              for i, (name, n) in enumerate([("train", 5000), ("test", 500), ("valid", 500)])}
    return {"spec": spec, "vocab": vocab, **splits,
            "oracle": hmm_oracle_ppl(spec, splits["test"]),
            "inc": build_inc(inc_docs, 2000, numpy_rng(seed, "synth-inc")),
            "frames": frames}


def trained(seed, kind, epsilon=0.0, attention="additive"):
    """Fit one variant; returns (model, seconds)."""
    # one cache key per variant however the defaults are spelled
    return _trained(seed, kind, float(epsilon), attention)


@lru_cache(maxsize=None)
def _trained(seed, kind, epsilon, attention):
    data = corpus(seed)
    cfg = config(seed, kind, epsilon, **{"model.attention": attention})
    t0 = time.perf_counter()
    ck = fit(build_model(cfg, data["vocab"]), data["train"], data["valid"], data["vocab"], cfg)
    return ck.model(), time.perf_counter() - t0


@lru_cache(maxsize=None)
def heldout_ppl(seed, kind, epsilon=0.0, attention="additive"):
    model, _ = trained(seed, kind, epsilon, attention)
    data = corpus(seed)
    return perplexity(model, data["test"], data["vocab"], seed)


@lru_cache(maxsize=None)
def frame_f1(seed, epsilon):
    data = corpus(seed)["frames"]
    cfg = config(seed, "ssdvae", epsilon, **{"model.events": 1})
    vocab = build_vocab(data["train"], BASE["model.vocab_size"], BASE["model.frames"])
    ck = fit(build_model(cfg, vocab), data["train"], data["valid"], vocab, cfg)
    return frame_classification(ck.model(), data["test"], vocab)["macro_f1"]


def fmt(xs):
    return "[" + ", ".join(f"{x:.3f}" for x in xs) + "]"


# ---------------------------------------------------------------- exact properties

def test_criterion_1_gradient_soundness(say):
    t0 = time.perf_counter()
    rep = toy_gradcheck()
    seconds = time.perf_counter() - t0
    ok = rep.passed and seconds < 60
    say(1, ok, f"toy F=5 V=20 M=3: worst rel error {rep.worst:.2e} over {rep.entries_checked} "
               f"entries (tol 1e-4), {seconds:.1f}s (limit 60s)")
    assert ok


def entropy(p):
    return float(-(p * p.log()).sum())


def test_criterion_2_simplex_and_entropy(say):
    t0 = time.perf_counter()
    gen = torch_rng(0, "accept-simplex")
    bad = {"sum": 0, "positive": 0, "argmax": 0, "entropy": 0}
    n = 10_000
    for _ in range(n):
        F = int(torch.randint(2, 12, (1,), generator=gen))
        pi = torch.randn(F, generator=gen, dtype=DTYPE) * 3
        g = gumbel_noise(F, gen)
        ents = []
        for tau in (0.1, 0.5, 1.0, 5.0):
            out = gumbel_softmax_sample(pi, tau, g)
            bad["sum"] += abs(out.sum().item() - 1) > 1e-9
            bad["positive"] += not bool((out > 0).all())
            bad["argmax"] += int(out.argmax()) != int((pi + g).argmax())
            ents.append(entropy(out))
        bad["entropy"] += any(a > b for a, b in zip(ents, ents[1:]))
    seconds = time.perf_counter() - t0
    ok = not any(bad.values()) and seconds < 60
    say(2, ok, f"{n} draws, violations {bad}, {seconds:.1f}s (limit 60s)")
    assert ok


def test_criterion_3_gumbel_max_frequencies(say):
    pi = torch.tensor([math.log(2), 0.0, 0.0], dtype=DTYPE)
    g = gumbel_noise((100_000, 3), torch_rng(0, "accept-gumbel-max"))
    freq = np.bincount(gumbel_softmax_sample(pi, 0.1, g).argmax(-1).numpy(), minlength=3) / 1e5
    dev = float(np.abs(freq - [0.5, 0.25, 0.25]).max())
    ok = dev <= 0.01
    say(3, ok, f"frequencies {fmt(freq)} vs [0.5, 0.25, 0.25], max deviation {dev:.4f} (tol 0.01)")
    assert ok


def test_criterion_4_injection(say):
    gen = torch_rng(0, "accept-inject")
    increased = interior = 0
    n = 1000
    for _ in range(n):
        F = int(torch.randint(2, 20, (1,), generator=gen))
        # std in (0.01, 3); past a logit gap of ~37 float64 softmax rounds to exactly 1
        gp = torch.randn(F, generator=gen, dtype=DTYPE) * float(torch.rand(1, generator=gen) * 3 + 0.01)
        k = int(torch.randint(0, F, (1,), generator=gen))
        obs = torch.zeros(F, dtype=DTYPE)
        obs[k] = 1
        before = torch.softmax(gp, -1)
        after = torch.softmax(inject_observation(gp, obs), -1)
        increased += bool(after[k] > before[k])
        interior += bool(((after > 0) & (after < 1)).all())
    ok = increased == n and interior == n
    say(4, ok, f"{n} random gamma' (F in 2..19, std up to 3): observed probability increased in {increased}, "
               f"all probabilities strictly inside (0,1) in {interior}")
    assert ok


# ---------------------------------------------------------------- trends

EPS_RUNS = [("ssdvae", 0.9), ("ssdvae", 0.5), ("ssdvae", 0.0), ("rnnlm", 0.0)]


def test_criterion_5_epsilon_trend(say):
    table = {r: [heldout_ppl(s, *r) for s in SEEDS] for r in EPS_RUNS}
    seconds = sum(trained(s, *r)[1] for s in SEEDS for r in EPS_RUNS)
    med = {r: statistics.median(v) for r, v in table.items()}
    p9, p5, p0, lm = (med[r] for r in EPS_RUNS)
    ok = p9 < p5 < p0 < lm and seconds < 3600
    say(5, ok, f"median test ppl eps0.9={p9:.3f} eps0.5={p5:.3f} eps0.0={p0:.3f} RNNLM={lm:.3f} "
               f"(need 0.9 < 0.5 < 0.0 < RNNLM); per seed 0.9 {fmt(table[EPS_RUNS[0]])} "
               f"0.5 {fmt(table[EPS_RUNS[1]])} 0.0 {fmt(table[EPS_RUNS[2]])} "
               f"RNNLM {fmt(table[EPS_RUNS[3]])}; training {seconds / 60:.1f} min (limit 60)")
    assert ok


def brute_force_matches_forward():
    rng = np.random.default_rng(0)
    S = 4
    spec = SyntheticSpec(rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(3), size=3),
                         rng.dirichlet(np.ones(S), size=(3, 4)), slot_token_names(S), events=2)
    docs = sample_documents(spec, 50, numpy_rng(0, "accept-enum"))
    index = spec.slot_index()
    worst = 0.0
    for doc, ll in zip(docs, document_loglik(spec, docs)):
        total = 0.0
        for chain in itertools.product(range(3), repeat=2):
            p = spec.initial[chain[0]] * spec.transitions[chain[0], chain[1]]
            for m, k in enumerate(chain):
                for s, tok in enumerate(doc.events[m]):
                    p *= spec.emissions[k, s, index[s][tok]]
            total += p
        worst = max(worst, abs(ll - math.log(total)))
    return worst


def test_criterion_6_oracle_bound(say):
    oracle = {s: corpus(s)["oracle"] for s in SEEDS}
    ratios = {r: [heldout_ppl(s, *r) / oracle[s] for s in SEEDS] for r in EPS_RUNS}
    lowest = min(min(v) for v in ratios.values())
    high = statistics.median(ratios[("ssdvae", 0.9)])
    enum = brute_force_matches_forward()
    ok = lowest >= 0.98 and high <= 1.5 and enum <= 1e-10
    say(6, ok, f"oracle ppl {fmt(oracle.values())}; lowest model/oracle ratio {lowest:.4f} "
               f"(need >= 0.98); median eps0.9 ratio {high:.4f} (need <= 1.5); "
               f"forward vs enumeration max |diff| {enum:.1e} (need <= 1e-10)")
    assert ok


def test_criterion_7_inverse_narrative_cloze(say):
    acc = {}
    for r in [("ssdvae", 0.4), ("rnnlm", 0.0)]:
        acc[r] = [inc_accuracy(trained(s, *r)[0], corpus(s)["inc"], corpus(s)["vocab"], s).accuracy
                  for s in SEEDS]
    vae, lm = (statistics.median(acc[r]) for r in acc)
    floor = 1 / 6 + 0.10
    ok = vae >= lm and vae >= floor and lm >= floor
    say(7, ok, f"median INC accuracy eps0.4={vae:.4f} RNNLM={lm:.4f} (need eps0.4 >= RNNLM, "
               f"both >= {floor:.4f}); per seed eps0.4 {fmt(acc[('ssdvae', 0.4)])} "
               f"RNNLM {fmt(acc[('rnnlm', 0.0)])}")
    assert ok


def test_criterion_8_frame_classification(say):
    hand = classification_metrics([1, 1, 2], [1, 2, 2])
    hand_ok = (hand["accuracy"] == 2 / 3 and hand["macro_precision"] == 0.75
               and abs(hand["macro_f1"] - 2 / 3) < 1e-12)
    hi = [frame_f1(s, 0.9) for s in SEEDS]
    lo = [frame_f1(s, 0.2) for s in SEEDS]
    gap = statistics.median(hi) - statistics.median(lo)
    ok = hand_ok and gap >= 0.10
    say(8, ok, f"median macro F1 eps0.9={statistics.median(hi):.4f} eps0.2={statistics.median(lo):.4f}, "
               f"gap {100 * gap:.1f} points (need >= 10); per seed 0.9 {fmt(hi)} 0.2 {fmt(lo)}; "
               f"hand confusion example exact: {hand_ok}")
    assert ok


def test_criterion_9_additive_vs_concat(say):
    add = [heldout_ppl(s, "ssdvae", 0.9) for s in SEEDS]
    cat = [heldout_ppl(s, "ssdvae", 0.9, "concat") for s in SEEDS]
    a, c = statistics.median(add), statistics.median(cat)
    rel = (a - c) / c
    # stretch criterion: a deficit inside the +-2% noise band is reported, not failed
    ok = rel <= 0.02
    note = ("additive <= concat" if a <= c else
            f"additive worse by {100 * rel:.2f}%, within the 2% noise band (reported)" if ok else
            f"additive worse by {100 * rel:.2f}%, outside the 2% band")
    say(9, ok, f"median eps0.9 test ppl additive={a:.3f} concat={c:.3f}: {note}; "
               f"per seed additive {fmt(add)} concat {fmt(cat)}")
    assert ok


# ---------------------------------------------------------------- determinism

def test_criterion_10_determinism_and_round_trips(say, tmp_path):
    spec = default_spec(config(0).synth)
    train = sample_documents(spec, 300, numpy_rng(0, "accept-det-train"))
    valid = sample_documents(spec, 60, numpy_rng(0, "accept-det-valid"))
    vocab = build_vocab(train, 300, 10)
    cfg = config(0, "ssdvae", 0.7, **{"train.max_epochs": 2})
    logs, cks = [], []
    for i in range(2):
        path = tmp_path / f"log{i}.txt"
        with open(path, "w") as fh:
            cks.append(fit(build_model(cfg, vocab), train, valid, vocab, cfg, log_file=fh))
        # the last column is wall-clock seconds
        logs.append([l.rsplit("\t", 1)[0] for l in path.read_text().splitlines()])
    logs_ok = logs[0] == logs[1] and all(torch.equal(cks[0].params[k], cks[1].params[k])
                                         for k in cks[0].params)
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(cks[0], a)
    save_checkpoint(load_checkpoint(a), b)
    ckpt_ok = a.read_bytes() == b.read_bytes()
    c1, c2 = tmp_path / "c1.txt", tmp_path / "c2.txt"
    write_corpus(train, c1)
    write_corpus(read_corpus(c1), c2)
    corpus_ok = (c1.read_bytes() == c2.read_bytes() and
                 all(serialize_document(parse_line(l)) == l for l in c1.read_text().splitlines()))
    model = load_checkpoint(a).model()
    before = ParameterSet.from_module(model).snapshot()
    p1 = perplexity(model, valid, vocab, 0)
    p2 = perplexity(model, valid, vocab, 0)
    after = ParameterSet.from_module(model).snapshot()
    eval_ok = p1 == p2 and all(torch.equal(before[k], after[k]) for k in before)
    ok = logs_ok and ckpt_ok and corpus_ok and eval_ok
    say(10, ok, f"training logs bitwise equal: {logs_ok}; checkpoint save/load/save identical: "
                f"{ckpt_ok}; corpus round trip exact: {corpus_ok}; evaluation leaves "
                f"parameters unchanged and repeats exactly: {eval_ok}")
    assert ok


# ---------------------------------------------------------------- cluster sanity

def test_clusters_recover_synthetic_frames():
    """Top tokens of a frame are mostly that synthetic frame's preferred tokens."""
    seed = 0
    data = corpus(seed)
    model, _ = trained(seed, "ssdvae", 0.9)
    k = 5
    rep = cluster_report(model, data["valid"], data["vocab"], k=k)
    cfg = config(seed).synth
    spec = data["spec"]
    overlaps = []
    for name, row in rep.frame_tokens.items():
        f = int(name[5:])
        own = {spec.slot_tokens[s][(f * cfg.own_tokens + j) % cfg.slot_vocab]
               for s in range(4) for j in range(cfg.own_tokens)}
        overlaps.append(sum(tok in own for tok, _ in row) / k)
    assert statistics.mean(overlaps) >= 0.6, overlaps
