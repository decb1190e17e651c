"""Command-line entry point.

Subcommands: ``gen-data`` (write a synthetic dataset), ``train`` (run the
optimization loop), ``eval`` (linear probe / retrieval on a checkpoint),
``gradcheck`` (verify loss gradients). Exit codes are stable: 0 success,
1 usage or parameter problems, 2 I/O and file-format problems, 3 numeric
failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .checks import gradcheck_losses
from .config import (
    DEFAULTS,
    load_config_file,
    merge_config,
    render_config,
    train_config_from_flat,
)
from .errors import (
    CycleContrastError,
    FormatError,
    NonFiniteLossError,
    NumericError,
    ParameterError,
)
from .evaluate import embed_dataset, knn_retrieval, linear_probe
from .trainer import Trainer
from .videos import generate, read_dataset, write_dataset

GRADCHECK_TOLERANCE = 1e-4


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are exit code 1, not argparse's 2
        raise ParameterError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="cyclecontrast", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="write a synthetic video dataset")
    gen.add_argument("--out", required=True, help="output dataset path")
    gen.add_argument("--videos", type=int, default=2000)
    gen.add_argument("--frames", type=int, default=4)
    gen.add_argument("--classes", type=int, default=10)
    gen.add_argument("--size", type=int, default=32, help="frame height and width")
    gen.add_argument("--seed", type=int, default=0)

    train = sub.add_parser("train", help="train an encoder")
    train.add_argument("--config", help="key = value configuration file")
    train.add_argument("--data", help="dataset path (overrides config)")
    train.add_argument("--out", help="output directory (overrides config)")
    train.add_argument(
        "--loss", choices=("intra-image", "intra-video", "full"),
        help="objective preset (overrides config)",
    )
    train.add_argument("--seed", type=int, help="seed (overrides config)")
    train.add_argument("--epochs", type=int, help="epochs (overrides config)")

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", required=True, help="query / test dataset")
    ev.add_argument("--train-data", help="gallery / probe-train dataset (default: --data)")
    ev.add_argument("--mode", choices=("probe", "retrieve"), required=True)
    ev.add_argument("--k", default="1,5,10", help="comma-separated k list for retrieval")
    ev.add_argument("--space", choices=("backbone", "video_head", "cycle_head"),
                    default="backbone")
    ev.add_argument("--probe-epochs", type=int, default=200)
    ev.add_argument("--probe-lr", type=float, default=0.1)
    ev.add_argument("--out", help="directory for the results file")
    ev.add_argument("--verbose", action="store_true",
                    help="also write per-query ranks CSV (retrieval)")

    gc = sub.add_parser("gradcheck", help="verify loss gradients")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--trials", type=int, default=20)
    return parser


def _cmd_gen_data(args) -> int:
    dataset = generate(args.videos, args.frames, args.classes,
                       args.size, args.size, args.seed)
    write_dataset(dataset, args.out)
    print(
        f"wrote {args.out}: {dataset.num_videos} videos x "
        f"{dataset.frames_per_video} frames x {dataset.height}x{dataset.width}, "
        f"{dataset.num_classes} classes, seed {dataset.seed}"
    )
    return 0


def _cmd_train(args) -> int:
    file_values = load_config_file(args.config) if args.config else {}
    overrides: dict[str, str] = {}
    if args.data is not None:
        overrides["data"] = args.data
    if args.out is not None:
        overrides["out"] = args.out
    if args.loss is not None:
        overrides["loss"] = args.loss
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.epochs is not None:
        overrides["epochs"] = str(args.epochs)
    flat = merge_config(file_values, overrides)
    if not flat["data"]:
        raise ParameterError("no dataset given: set --data or the 'data' config key")
    if not flat["out"]:
        raise ParameterError("no output dir given: set --out or the 'out' config key")

    dataset = read_dataset(flat["data"])
    cfg = train_config_from_flat(flat, dataset.height, dataset.width)
    out = Path(flat["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective.cfg").write_text(render_config(flat), encoding="utf-8")

    trainer = Trainer(cfg, dataset)
    try:
        result = trainer.run(out)
    except NonFiniteLossError as exc:
        diag = out / "diagnostic.txt"
        diag.write_text(
            f"non-finite loss\nstep = {exc.step}\nbatch_seed = {exc.batch_seed}\n"
            f"config echo: {out / 'effective.cfg'}\n",
            encoding="utf-8",
        )
        print(f"error: {exc} (diagnostic written to {diag})", file=sys.stderr)
        return 3
    # fold the effective config into the run summary
    summary = json.loads(result.summary_path.read_text(encoding="utf-8"))
    summary["config"] = flat
    result.summary_path.write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"metrics:    {result.metrics_path}")
    print(f"summary:    {result.summary_path}")
    return 0


def _cmd_eval(args) -> int:
    query_ds = read_dataset(args.data)
    gallery_ds = read_dataset(args.train_data) if args.train_data else query_ds
    query = embed_dataset(args.ckpt, query_ds, args.space)
    gallery = embed_dataset(args.ckpt, gallery_ds, args.space)

    lines: list[str] = [f"space = {args.space}", f"mode = {args.mode}"]
    if args.mode == "probe":
        acc = linear_probe(gallery, query, epochs=args.probe_epochs, lr=args.probe_lr)
        lines.append(f"probe_top1 = {acc:.6f}")
    else:
        try:
            ks = [int(k) for k in args.k.split(",") if k.strip()]
        except ValueError as exc:
            raise ParameterError(f"--k expects integers, got {args.k!r}") from exc
        rates = knn_retrieval(query, gallery, ks)
        for k in sorted(rates):
            lines.append(f"top{k}_hit_rate = {rates[k]:.6f}")
    for line in lines:
        print(line)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "results.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
        if args.verbose and args.mode == "retrieve":
            _write_rank_csv(out / "ranks.csv", query, gallery)
    return 0


def _write_rank_csv(path: Path, query, gallery) -> None:
    import numpy as np

    id_order = np.lexsort((gallery.frame_ids, gallery.video_ids))
    g_rows = gallery.rows[id_order]
    g_labels = gallery.labels[id_order]
    g_vids = gallery.video_ids[id_order]
    g_fids = gallery.frame_ids[id_order]
    with open(path, "w", newline="") as fh:
        fh.write("query_index,video_id,frame_id,label,first_hit_rank\n")
        for i in range(query.rows.shape[0]):
            sims = g_rows @ query.rows[i]
            same = (g_vids == query.video_ids[i]) & (g_fids == query.frame_ids[i])
            sims = np.where(same, -np.inf, sims)
            order = np.argsort(-sims, kind="stable")
            matches = np.nonzero(g_labels[order] == query.labels[i])[0]
            rank = int(matches[0]) + 1 if matches.size else -1
            fh.write(
                f"{i},{query.video_ids[i]},{query.frame_ids[i]},"
                f"{query.labels[i]},{rank}\n"
            )


def _cmd_gradcheck(args) -> int:
    worst = gradcheck_losses(args.seed, args.trials)
    failed = False
    for name, err in worst.items():
        status = "ok" if err <= GRADCHECK_TOLERANCE else "FAIL"
        print(f"{name}: worst relative error {err:.3e} [{status}]")
        failed = failed or err > GRADCHECK_TOLERANCE
    return 3 if failed else 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "gen-data":
            return _cmd_gen_data(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "gradcheck":
            return _cmd_gradcheck(args)
        raise ParameterError(f"unknown command {args.command!r}")
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CycleContrastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
