"""``uniqa`` command line.

Exit status: 0 success, 1 usage error, 2 data or config error, 3 transport
error.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from . import plotting
from .adapter import AdapterParams, finetune, group_text_features, predict
from .captioning import generate_corpus, make_client
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, resolve_groups
from .corpus import atomic_write, generate_synthetic, load_manifest, merge, save_manifest
from .encoders import embed_images
from .errors import ConfigError, UniqaError
from .evaluation import parse_mode, plcc, retrieve, run_protocol, save_report, srcc
from .pretrain import pretrain_aes, pretrain_run, save_loss_curve
from .purification import purify, save_audit

log = logging.getLogger("uniqa")

COMMANDS = ("gen-data", "caption", "purify", "pretrain", "pretrain-aes", "finetune", "eval", "zeroshot", "retrieve")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def need(args, name: str):
    value = getattr(args, name.replace("-", "_"))
    if value is None:
        raise ConfigError(f"missing required flag --{name}")
    return value


def _train_overrides(cfg: RunConfig, args) -> None:
    cfg.override("train", epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=args.seed)


def _write_training_outputs(result, args, stem: str) -> None:
    if args.loss_csv:
        save_loss_curve(result.history, args.loss_csv)
    if args.figures:
        plotting.loss_curve(result.history, Path(args.figures) / f"{stem}_loss.png", title=f"{stem} loss")


# ---------------------------------------------------------------- commands


def cmd_gen_data(args, cfg: RunConfig) -> None:
    out = need(args, "out")
    cfg.override("synthetic", authentic_min=args.authentic_min, authentic_max=args.authentic_max)
    corpus = generate_synthetic(need(args, "n"), args.seed if args.seed is not None else 0, cfg.synthetic(),
                                name=Path(out).stem)
    save_manifest(corpus, out)
    log.info("wrote %d images, %d captions to %s", len(corpus.images), len(corpus.captions), out)


def cmd_caption(args, cfg: RunConfig) -> None:
    corpus = load_manifest(need(args, "corpus"))
    out = need(args, "out")
    cc = cfg["captioner"]
    client = make_client(args.url or cc["url"], timeout=cc["timeout"], backoff=cc["backoff"])
    result = generate_corpus(corpus, args.task, client, max_workers=args.workers or cc["max_workers"],
                             use_observed_range=cc["observed_range"])
    save_manifest(result, out)


def cmd_pretrain(args, cfg: RunConfig, aes: bool = False) -> None:
    corpus = load_manifest(need(args, "corpus"))
    out = need(args, "out")
    _train_overrides(cfg, args)
    result = (pretrain_aes if aes else pretrain_run)(corpus, cfg.train())
    save_checkpoint(result.checkpoint, out)
    _write_training_outputs(result, args, "clip_aes" if aes else "uniqa")
    means = result.epoch_means()
    log.info("epoch mean loss %.4f -> %.4f", means[0], means[-1])


def cmd_purify(args, cfg: RunConfig) -> None:
    corpus = load_manifest(need(args, "corpus"))
    encoder = load_checkpoint(need(args, "encoder"))
    out = need(args, "out")
    cfg.override("purification", k=args.k, alpha=args.alpha, beta=args.beta)
    result = purify(corpus, encoder, cfg.purification())
    if args.audit:
        save_audit(result, args.audit)
    if args.only_purified:
        unified = result.corpus
    else:
        others = corpus.filter_sources(["gen_iqa", "gen_iaa"])
        unified = merge([others, result.corpus], name=Path(out).stem)
    save_manifest(unified, out)
    kept = sum(r.kept for r in result.audit)
    log.info("kept %d of %d authentic captions", kept, len(result.audit))


def cmd_finetune(args, cfg: RunConfig) -> None:
    ckpt = load_checkpoint(need(args, "checkpoint"))
    corpus = load_manifest(need(args, "corpus"))
    out = need(args, "out")
    cfg.override("adapter", epochs=args.epochs, lr=args.lr, seed=args.seed, groups=args.groups)
    acfg = cfg.adapter()
    result = finetune(ckpt, corpus, acfg)
    prov = {"adapter": {"groups": [g.prompts for g in acfg.groups], "epochs": acfg.epochs, "lr": acfg.lr,
                        "seed": acfg.seed, "mse": result.mse_history, "corpus": corpus.name}}
    save_checkpoint(ckpt.with_tensors(result.adapter.to_arrays(), prov), out)
    log.info("train MSE %.5f -> %.5f", result.mse_history[0], result.mse_history[-1])


def cmd_eval(args, cfg: RunConfig) -> None:
    ckpt = load_checkpoint(need(args, "checkpoint"))
    corpus = load_manifest(need(args, "corpus"))
    out = need(args, "out")
    ec = cfg["eval"]
    cfg.override("adapter", epochs=args.epochs, lr=args.lr)
    mode, k = parse_mode(args.mode, args.k if args.k is not None else (ec["k"] if args.mode == "few_label" else None))
    acfg = cfg.adapter()
    if args.groups:
        groups = resolve_groups(args.groups)
    elif mode == "full":
        groups = acfg.groups
    else:
        groups = resolve_groups(ec["zero_shot_groups"])
    report = run_protocol(ckpt, corpus, mode, repeats=args.repeats or ec["repeats"], k=k,
                          seed=args.seed if args.seed is not None else ec["seed"], ratio=ec["ratio"],
                          adapter_config=acfg, groups=groups)
    save_report(report, out)
    if args.figures:
        fig_dir = Path(args.figures)
        stem = Path(out).stem
        mos = {im.id: im.mos for im in corpus.images}
        mid = sorted(range(len(report.repeats)), key=lambda i: report.repeats[i].srcc)[len(report.repeats) // 2]
        rep = report.repeats[mid]
        plotting.prediction_scatter(rep.predictions, [mos[i] for i in rep.test_ids], fig_dir / f"{stem}_scatter.png",
                                    title=f"{report.mode}, repeat {mid + 1}")
        plotting.repeat_bars(report, fig_dir / f"{stem}_repeats.png")
    print(f"{report.mode}: median SRCC {report.median_srcc:.4f}, median PLCC {report.median_plcc:.4f}")


def cmd_zeroshot(args, cfg: RunConfig) -> None:
    ckpt = load_checkpoint(need(args, "checkpoint"))
    corpus = load_manifest(need(args, "corpus"))
    out = need(args, "out")
    groups = resolve_groups(args.groups or cfg["eval"]["zero_shot_groups"])
    encoder = ckpt.encoder()
    adapter = None
    if args.use_adapter:
        if not ckpt.has_adapter():
            raise ConfigError("--use-adapter given but the checkpoint carries no adapter")
        adapter = AdapterParams.from_checkpoint(ckpt)
    feats = embed_images(corpus.images, encoder)
    scores = predict(feats, adapter, group_text_features(groups, encoder), encoder.tau)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["image_id", "score", "mos"])
    for im, s in zip(corpus.images, scores):
        w.writerow([im.id, repr(float(s)), repr(im.mos)])
    atomic_write(out, buf.getvalue())
    mos = np.array([im.mos for im in corpus.images])
    if len(mos) >= 2 and np.ptp(mos) > 0:
        print(f"SRCC {srcc(scores, mos):.4f}, PLCC {plcc(scores, mos):.4f} over {len(mos)} images")
    if args.figures:
        plotting.prediction_scatter(scores, mos, Path(args.figures) / f"{Path(out).stem}_scatter.png",
                                    title="zero-shot" if adapter is None else "adapter")


def cmd_retrieve(args, cfg: RunConfig) -> None:
    ckpt = load_checkpoint(need(args, "checkpoint"))
    corpus = load_manifest(need(args, "corpus"))
    query = need(args, "query")
    ranked = retrieve(ckpt, query, corpus, args.k)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rank", "image_id", "similarity"])
    for r, (image_id, sim) in enumerate(ranked, start=1):
        w.writerow([r, image_id, repr(sim)])
    if args.out:
        atomic_write(args.out, buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    if args.figures:
        lookup = corpus.by_id()
        slug = "_".join(query.lower().split())[:40]
        plotting.retrieval_strip([lookup[i] for i, _ in ranked], [s for _, s in ranked],
                                 Path(args.figures) / f"retrieve_{slug}.png", query)


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="uniqa", description="Quality/aesthetics vision-language pre-training at desk scale.")
    p.add_argument("--config", help="JSON run configuration; flags override it")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    s = sub.add_parser("gen-data", help="generate a synthetic corpus")
    s.add_argument("--n", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--authentic-min", type=int)
    s.add_argument("--authentic-max", type=int)
    s.add_argument("--out")

    s = sub.add_parser("caption", help="attach MOS-guided generated captions")
    s.add_argument("--corpus")
    s.add_argument("--out")
    s.add_argument("--task", choices=("iqa", "iaa", "both"), default="both")
    s.add_argument("--url", help="captioner base URL or mock://<seed>")
    s.add_argument("--workers", type=int)

    for name, helptext in (("pretrain", "unified contrastive pre-training"),
                           ("pretrain-aes", "pre-train the aesthetics encoder on gen_iaa captions")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--corpus")
        s.add_argument("--out")
        s.add_argument("--epochs", type=int)
        s.add_argument("--batch-size", type=int)
        s.add_argument("--lr", type=float)
        s.add_argument("--seed", type=int)
        s.add_argument("--loss-csv")
        s.add_argument("--figures", help="directory for the loss-curve figure")

    s = sub.add_parser("purify", help="select Top-K authentic captions by AIR")
    s.add_argument("--corpus")
    s.add_argument("--encoder", help="aesthetics encoder checkpoint")
    s.add_argument("--out")
    s.add_argument("--k", type=int)
    s.add_argument("--alpha", type=float)
    s.add_argument("--beta", type=float)
    s.add_argument("--audit", help="JSON Lines audit of every caption's scores and ranks")
    s.add_argument("--only-purified", action="store_true", help="write only the kept authentic captions")

    s = sub.add_parser("finetune", help="fit the adapter with frozen encoders")
    s.add_argument("--checkpoint")
    s.add_argument("--corpus")
    s.add_argument("--out")
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--groups", help="base | ensemble | agiqa | prompt-group file")

    s = sub.add_parser("eval", help="repeated split evaluation")
    s.add_argument("--checkpoint")
    s.add_argument("--corpus")
    s.add_argument("--out")
    s.add_argument("--mode", default="zero_shot", help="zero_shot | few_label | full")
    s.add_argument("--k", type=int, help="label budget for few_label")
    s.add_argument("--repeats", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--epochs", type=int, help="adapter epochs per repeat")
    s.add_argument("--lr", type=float, help="adapter learning rate")
    s.add_argument("--groups")
    s.add_argument("--figures", help="directory for scatter and per-repeat figures")

    s = sub.add_parser("zeroshot", help="score every image with prompts only")
    s.add_argument("--checkpoint")
    s.add_argument("--corpus")
    s.add_argument("--out")
    s.add_argument("--groups")
    s.add_argument("--use-adapter", action="store_true")
    s.add_argument("--figures")

    s = sub.add_parser("retrieve", help="rank images for a text query")
    s.add_argument("--checkpoint")
    s.add_argument("--corpus")
    s.add_argument("--query")
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--out")
    s.add_argument("--figures")
    return p


HANDLERS = {
    "gen-data": cmd_gen_data,
    "caption": cmd_caption,
    "purify": cmd_purify,
    "pretrain": cmd_pretrain,
    "pretrain-aes": lambda a, c: cmd_pretrain(a, c, aes=True),
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "zeroshot": cmd_zeroshot,
    "retrieve": cmd_retrieve,
}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.command is None:
        print(parser.format_usage(), file=sys.stderr, end="")
        return 1
    if not logging.getLogger().handlers:
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config)
        HANDLERS[args.command](args, cfg)
    except UniqaError as exc:
        print(f"uniqa {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, KeyError, ValueError, TypeError) as exc:
        print(f"uniqa {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
