"""Command-line entry point: ``groupenc {preprocess,train,embed,eval,benchmark}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or file-format error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .benchmark import BenchmarkPlan, load_plan, run_benchmark
from .data import PreprocessConfig, load_matrix, preprocess, save_matrix, save_pca
from .errors import ConfigError, FormatError, GroupEncError
from .models import DEFAULT_KL_WEIGHT, ModelConfig, embed
from .nn import AdamConfig
from .rnx import evaluate
from .trainer import TrainConfig, load_checkpoint, resume, train

log = logging.getLogger("groupenc")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(GroupEncError):
    pass


def _write_matrix(path: str, m) -> None:
    fmt = "raw_binary" if Path(path).suffix in (".gmtx", ".bin") else "delimited_text"
    save_matrix(path, m, fmt)


def cmd_preprocess(args) -> int:
    config = PreprocessConfig(
        row_normalize=not args.no_norm,
        log1p=not args.no_log,
        scale_clip=None if args.no_scale else args.clip,
        pca_components=args.pca or None,
        skip_row_normalize_and_log=args.skip_norm_log,
    )
    m = load_matrix(args.input)
    out, pca = preprocess(m, config)
    _write_matrix(args.output, out)
    if pca is not None:
        pca_path = args.pca_out or str(Path(args.output).with_suffix(".gpca"))
        save_pca(pca_path, pca)
    print(f"wrote {out.shape[0]}x{out.shape[1]} matrix to {args.output}")
    return EXIT_OK


def cmd_train(args) -> int:
    if args.model == "vae" and args.gamma is not None:
        raise UsageError("--gamma only applies to --model groupenc")
    if args.model == "vae" and args.strategy is not None:
        raise UsageError("--strategy only applies to --model groupenc")
    data = load_matrix(args.data)
    tc = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        adam=AdamConfig(learning_rate=args.lr),
        seed=args.seed,
        log_every=args.log_every,
        checkpoint_path=args.output,
    )
    if args.resume:
        try:
            ckpt = load_checkpoint(args.resume)
        except FormatError:
            raise
        params, history = resume(ckpt, tc, data)
    else:
        mc = ModelConfig(
            kind=args.model,
            input_dim=data.shape[1],
            latent_dim=args.dim,
            gamma=(args.gamma if args.gamma is not None else 4) if args.model == "groupenc" else None,
            kl_weight=args.kl_weight,
            group_strategy=args.strategy or "headed",
        )
        params, history = train(mc, tc, data)
    log_path = args.log or str(Path(args.output).with_suffix(".log.csv"))
    Path(log_path).write_text(history.to_csv())
    last = history.records[-1].loss if history.records else None
    if last is not None:
        print(f"epochs={len(history)} total={last.total:.6g} primary={last.primary_term:.6g} "
              f"kl={last.kl_term:.6g} seconds={history.total_seconds:.2f}")
    return EXIT_OK


def cmd_embed(args) -> int:
    config, params, _, _, _ = load_checkpoint(args.checkpoint)
    data = load_matrix(args.data)
    if data.shape[1] != config.input_dim:
        raise FormatError(f"data has {data.shape[1]} columns, checkpoint expects {config.input_dim}")
    z = embed(params, data, config)
    save_matrix(args.output, z, "delimited_text")
    print(f"wrote {z.shape[0]}x{z.shape[1]} embedding to {args.output}")
    return EXIT_OK


def cmd_eval(args) -> int:
    hd = load_matrix(args.hd)
    ld = load_matrix(args.ld)
    if hd.shape[0] != ld.shape[0]:
        raise FormatError(f"{args.hd} has {hd.shape[0]} rows, {args.ld} has {ld.shape[0]}")
    result = evaluate(hd, ld, subsample=args.subsample, seed=args.seed)
    prefix = args.output
    Path(f"{prefix}.curve.csv").write_text(result.curve_csv())
    Path(f"{prefix}.scores.txt").write_text(result.scores_text())
    print(f"local_sp={result.local_sp:.6f} global_sp={result.global_sp:.6f} n={result.n}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    if args.plan:
        plan = load_plan(args.plan)
    elif args.synthetic:
        plan = BenchmarkPlan()
    else:
        raise UsageError("benchmark needs a plan file or --synthetic")
    overrides = {}
    if args.output:
        overrides["output"] = args.output
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.seeds:
        overrides["seeds"] = tuple(int(s) for s in args.seeds.split(","))
    if overrides:
        plan = BenchmarkPlan(**{**plan.__dict__, **overrides})
    jobs = args.jobs
    env = os.environ.get("GROUPENC_THREADS")
    if env:
        jobs = min(jobs, max(1, int(env)))
    records = run_benchmark(plan, jobs=jobs)
    failed = sum(r.status != "ok" for r in records)
    print(f"{len(records)} runs, {failed} failed; results in {plan.output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="groupenc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("preprocess", help="normalise, log1p, scale and PCA a count matrix")
    s.add_argument("input")
    s.add_argument("-o", "--output", required=True, help=".gmtx for binary, otherwise CSV")
    s.add_argument("--pca", type=int, default=50, help="components to keep; 0 disables PCA")
    s.add_argument("--pca-out", help="where to store the PCA model (default: <output>.gpca)")
    s.add_argument("--clip", type=float, default=10.0)
    s.add_argument("--no-norm", action="store_true")
    s.add_argument("--no-log", action="store_true")
    s.add_argument("--no-scale", action="store_true")
    s.add_argument("--skip-norm-log", action="store_true", help="input is already scaled")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", help="train a GroupEnc or VAE model")
    s.add_argument("data")
    s.add_argument("-o", "--output", required=True, help="checkpoint path")
    s.add_argument("--log", help="training log CSV (default: <output>.log.csv)")
    s.add_argument("--model", choices=("groupenc", "vae"), default="groupenc")
    s.add_argument("--dim", type=int, default=2)
    s.add_argument("--gamma", type=int)
    s.add_argument("--kl-weight", type=float, default=DEFAULT_KL_WEIGHT)
    s.add_argument("--strategy", choices=("headed", "disjoint"))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--epochs", type=int, default=500)
    s.add_argument("--batch-size", type=int, default=512)
    s.add_argument("--lr", type=float, default=0.001)
    s.add_argument("--log-every", type=int, default=0)
    s.add_argument("--resume", help="continue from this checkpoint up to --epochs")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("embed", help="embed data with a trained model (posterior means)")
    s.add_argument("checkpoint")
    s.add_argument("data")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("eval", help="R_NX curve and Local/Global SP of an embedding")
    s.add_argument("hd")
    s.add_argument("ld")
    s.add_argument("-o", "--output", required=True, help="prefix for .curve.csv and .scores.txt")
    s.add_argument("--subsample", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("benchmark", help="run the models x dims x gammas x seeds protocol")
    s.add_argument("plan", nargs="?")
    s.add_argument("--synthetic", action="store_true", help="use the built-in Gaussian mixture")
    s.add_argument("-o", "--output")
    s.add_argument("--epochs", type=int)
    s.add_argument("--seeds", help="comma-separated seed list")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_benchmark)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"groupenc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, ConfigError) as exc:
        print(f"groupenc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        print(f"groupenc: failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
