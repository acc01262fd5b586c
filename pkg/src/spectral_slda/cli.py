"""Command-line entry point: ``slda-spectral {generate,recover,eval,sweep,...}``.

Exit codes: 0 success, 2 usage or invalid input, 10 rank-deficient second
moment, 11 negative tensor eigenvalue, 12 file or format error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .corpus_io import (CorpusFormatError, read_corpus, read_docword, read_model,
                        read_responses, write_docword, write_model,
                        write_moment_dump, write_responses)
from .evaluation import evaluate, parameter_errors
from .model import ModelValidationError, generate_corpus, random_model
from .moments import estimate_moments
from .recovery import RecoveryConfig, recover
from .spectral import NegativeEigenvalueError, RankDeficientError, robust_tpm

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RANK = 10
EXIT_NEGATIVE = 11
EXIT_IO = 12

OUTPUT_ENV = "SLDA_OUTPUT_DIR"
SWEEP_SCHEMA = "# slda-sweep-csv/1"
SWEEP_FIELDS = ("method", "num_docs", "seed", "status", "l1_alpha", "l1_eta",
                "l1_mu", "mse", "seconds", "message")

log = logging.getLogger("spectral_slda")


class Run:
    """Collects timings and writes the run manifest."""

    def __init__(self, args, argv):
        self.args = args
        self.argv = list(argv)
        self.timings = {}
        self.outputs = {}
        self.inputs = {}

    @contextmanager
    def stage(self, name):
        start = time.perf_counter()
        yield
        self.timings[name] = time.perf_counter() - start

    def write(self, out_dir: Path):
        config = {k: v for k, v in vars(self.args).items() if k != "func"}
        manifest = {
            "command": self.args.command,
            "argv": self.argv,
            "config": config,
            "seed": getattr(self.args, "seed", None),
            "inputs": self.inputs,
            "outputs": self.outputs,
            "version": __version__,
            "timings_seconds": self.timings,
        }
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(manifest, indent=1, default=str) + "\n")
        return path


def positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def nonneg_float(text):
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative number, got {text}")
    return value


def positive_float(text):
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return value


def size_list(text):
    try:
        sizes = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad size list {text!r}") from None
    if not sizes or min(sizes) < 1:
        raise argparse.ArgumentTypeError("sizes must be positive integers")
    return sizes


def method_name(text):
    return text.replace("-", "_")


def _out_dir(args) -> Path:
    out = args.out or os.environ.get(OUTPUT_ENV) or "slda-out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _add_recovery_flags(p, methods_plural=False):
    if methods_plural:
        p.add_argument("--methods", default="two-stage,joint",
                       help="comma list of two-stage, joint")
    else:
        p.add_argument("--method", type=method_name, choices=["two_stage", "joint"],
                       default="two_stage")
    p.add_argument("--alpha0", type=positive_float, required=not methods_plural,
                   default=None if not methods_plural else 1.0)
    p.add_argument("--sigma", type=nonneg_float,
                   default=None if methods_plural else 0.0,
                   help="assumed response noise (joint method)"
                   + ("; defaults to --true-sigma" if methods_plural else ""))
    p.add_argument("--scale", type=positive_float, default=100.0,
                   help="word-vector scaling constant (joint method)")
    p.add_argument("--whitening", choices=["exact", "randomized"], default="exact")
    p.add_argument("--oversample", type=positive_int, default=10)
    p.add_argument("--restarts", type=positive_int, default=100)
    p.add_argument("--iters", type=positive_int, default=100)
    p.add_argument("--rank-tol", type=positive_float, default=1e-10)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slda-spectral",
        description="Spectral parameter recovery for supervised LDA")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./slda-out)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=positive_int, default=os.cpu_count() or 1)

    p = sub.add_parser("generate", help="sample a synthetic corpus and ground-truth model")
    p.add_argument("--vocab", type=positive_int, required=True)
    p.add_argument("--topics", type=positive_int, required=True)
    p.add_argument("--docs", type=positive_int, required=True)
    p.add_argument("--doc-len", type=positive_int, required=True)
    p.add_argument("--alpha0", type=positive_float, default=1.0)
    p.add_argument("--sigma", type=nonneg_float, default=0.0)
    p.add_argument("--test-docs", type=int, default=0,
                   help="also write a held-out test split of this size")
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("recover", help="recover model parameters from a corpus")
    p.add_argument("--docs", required=True, help="docword file")
    p.add_argument("--responses", required=True)
    p.add_argument("--topics", type=positive_int, required=True)
    _add_recovery_flags(p)
    p.add_argument("--dump-moments", action="store_true",
                   help="also write first/second-order moments as text")
    common(p)
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("eval", help="evaluate a model on held-out documents")
    p.add_argument("--model", required=True)
    p.add_argument("--test-docs", required=True)
    p.add_argument("--test-responses", required=True)
    p.add_argument("--truth")
    p.add_argument("--burnin", type=int, default=200)
    p.add_argument("--samples", type=positive_int, default=200)
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="recovery error against corpus size")
    p.add_argument("--sizes", type=size_list, required=True)
    p.add_argument("--vocab", type=positive_int, default=100)
    p.add_argument("--topics", type=positive_int, default=5)
    p.add_argument("--doc-len", type=positive_int, default=200)
    p.add_argument("--true-sigma", type=nonneg_float, default=0.5)
    p.add_argument("--trials", type=positive_int, default=1)
    p.add_argument("--test-docs", type=int, default=0,
                   help="held-out docs for MSE (0 skips prediction)")
    _add_recovery_flags(p, methods_plural=True)
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("decompose", help="robust tensor power method on a .npy tensor")
    p.add_argument("--tensor", required=True)
    p.add_argument("--topics", type=positive_int, required=True)
    p.add_argument("--reference", help=".npy orientation vector for eigenvector signs")
    p.add_argument("--restarts", type=positive_int, default=100)
    p.add_argument("--iters", type=positive_int, default=100)
    common(p)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("stats", help="corpus statistics")
    p.add_argument("--docs", required=True)
    common(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("rerun", help="repeat the run recorded in a manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_rerun)
    return parser


def cmd_generate(args, run: Run):
    out = _out_dir(args)
    with run.stage("model"):
        truth = random_model(args.vocab, args.topics, args.alpha0, args.sigma,
                             seed=args.seed)
    with run.stage("sample"):
        total = args.docs + max(args.test_docs, 0)
        corpus = generate_corpus(truth, total, args.doc_len, seed=args.seed)
    with run.stage("write"):
        train = corpus.subset(np.arange(args.docs))
        write_docword(train, out / "docword.txt")
        write_responses(train.responses, out / "responses.txt")
        write_model(truth, out / "truth.json")
        run.outputs.update(docs="docword.txt", responses="responses.txt",
                           model="truth.json")
        if args.test_docs > 0:
            test = corpus.subset(np.arange(args.docs, total))
            write_docword(test, out / "test_docword.txt")
            write_responses(test.responses, out / "test_responses.txt")
            run.outputs.update(test_docs="test_docword.txt",
                               test_responses="test_responses.txt")
    return out


def _config_from(args, method, k, sigma=None):
    return RecoveryConfig(
        method=method, alpha0=args.alpha0, k=k, restarts=args.restarts,
        iters=args.iters, sigma_assumed=args.sigma if sigma is None else sigma, scale=args.scale,
        whitening=args.whitening, oversample=args.oversample, seed=args.seed,
        rank_tol=args.rank_tol, threads=args.threads)


def cmd_recover(args, run: Run):
    out = _out_dir(args)
    run.inputs.update(docs=args.docs, responses=args.responses)
    with run.stage("read"):
        corpus = read_corpus(args.docs, args.responses)
    cfg = _config_from(args, args.method, args.topics)
    with run.stage("recover"):
        result = recover(corpus, corpus.responses, cfg)
    write_model(result.model, out / "model.json")
    (out / "provenance.json").write_text(json.dumps(result.provenance(), indent=1) + "\n")
    run.outputs.update(model="model.json", provenance="provenance.json")
    if args.dump_moments:
        write_moment_dump(estimate_moments(corpus, None, args.alpha0), out / "moments.txt")
        run.outputs["moments"] = "moments.txt"
    return out


def cmd_eval(args, run: Run):
    out = _out_dir(args)
    run.inputs.update(model=args.model, test_docs=args.test_docs,
                      test_responses=args.test_responses, truth=args.truth)
    model = read_model(args.model)
    truth = read_model(args.truth) if args.truth else None
    corpus = read_docword(args.test_docs)
    y = read_responses(args.test_responses, corpus.num_docs)
    with run.stage("evaluate"):
        report = evaluate(model, corpus, y, truth=truth, burnin=args.burnin,
                          samples=args.samples, seed=args.seed, threads=args.threads)
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "report.csv").write_text(report.to_csv())
    run.outputs.update(report="report.json", csv="report.csv")
    return out


def cmd_sweep(args, run: Run):
    out = _out_dir(args)
    methods = [method_name(m.strip()) for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in ("two_stage", "joint"):
            raise ValueError(f"unknown method {m!r}")
    sigma = args.true_sigma if args.sigma is None else args.sigma
    rows = []
    for trial in range(args.trials):
        seed = args.seed + trial
        truth = random_model(args.vocab, args.topics, args.alpha0, args.true_sigma,
                             seed=seed)
        n_max = max(args.sizes)
        with run.stage(f"generate[{seed}]"):
            full = generate_corpus(truth, n_max + max(args.test_docs, 0), args.doc_len,
                                   seed=seed)
        test = full.subset(np.arange(n_max, full.num_docs)) if args.test_docs > 0 else None
        for n in args.sizes:
            train = full.subset(np.arange(n))
            for method in methods:
                row = {"method": method, "num_docs": n, "seed": seed}
                start = time.perf_counter()
                try:
                    cfg = _config_from(args, method, args.topics, sigma)
                    result = recover(train, train.responses, cfg)
                    l1a, l1e, l1m, _ = parameter_errors(truth, result.model)
                    row.update(status="ok", l1_alpha=l1a, l1_eta=l1e, l1_mu=l1m)
                    if test is not None:
                        rep = evaluate(result.model, test, test.responses,
                                       seed=seed, threads=args.threads)
                        row["mse"] = rep.mse
                except (RankDeficientError, NegativeEigenvalueError, ValueError) as exc:
                    row.update(status="failed", message=f"{type(exc).__name__}: {exc}")
                row["seconds"] = time.perf_counter() - start
                rows.append(row)
                log.info("sweep %s N=%d seed=%d: %s", method, n, seed, row["status"])
    path = out / "sweep.csv"
    with open(path, "w", newline="") as fh:
        fh.write(SWEEP_SCHEMA + "\n")
        writer = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _csv_value(row.get(k)) for k in SWEEP_FIELDS})
    run.outputs["csv"] = "sweep.csv"
    return out


def _csv_value(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def cmd_decompose(args, run: Run):
    out = _out_dir(args)
    t = np.load(args.tensor)
    ref = np.load(args.reference) if args.reference else None
    run.inputs.update(tensor=args.tensor, reference=args.reference)
    with run.stage("decompose"):
        eig = robust_tpm(t, args.topics, args.restarts, args.iters, args.seed,
                         sign_reference=ref)
    (out / "eigen.json").write_text(json.dumps({
        "lambdas": eig.lambdas.tolist(),
        "omegas": eig.omegas.T.tolist(),
        "residual_norm": eig.residual_norm,
    }, indent=1) + "\n")
    run.outputs["eigen"] = "eigen.json"
    return out


def cmd_stats(args, run: Run):
    out = _out_dir(args)
    stats = read_docword(args.docs).stats()
    print(json.dumps(stats))
    (out / "stats.json").write_text(json.dumps(stats, indent=1) + "\n")
    run.outputs["stats"] = "stats.json"
    return out


def cmd_rerun(args, run: Run):
    manifest = json.loads(Path(args.manifest).read_text())
    return main(manifest["argv"])


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    run = Run(args, argv)
    try:
        out = args.func(args, run)
    except RankDeficientError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RANK
    except NegativeEigenvalueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NEGATIVE
    except (OSError, CorpusFormatError, ModelValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command == "rerun":
        return out
    run.write(out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
