"""Command-line entry points: train, eval, serve.

Exit codes: 0 success, 2 invalid arguments/config, 3 non-finite loss,
4 checkpoint version mismatch, 5 port bind failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import evaluation as E
from . import figures
from .config import ConfigError, TrainConfig, load_config, resolve_datasets, \
    resolve_likelihood
from .imaging import tile_grid, write_png
from .training import NonFiniteLoss, VersionMismatch, fit, load_checkpoint

EVAL_SUITES = ("accuracy", "confusion", "swaps", "diversity", "traversal",
               "generate")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="revae",
        description="Train, evaluate, and serve label-characteristic VAEs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a JSON config")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--seed", type=int, default=None,
                         help="override the config seed")
    p_train.add_argument("--out", default="runs/latest")

    p_eval = sub.add_parser("eval", help="run an evaluation suite")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--suite", required=True)
    p_eval.add_argument("--n", type=int, default=100)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--out", default=None,
                        help="results dir (default: <ckpt dir>/eval_<suite>)")

    p_serve = sub.add_parser("serve", help="serve a checkpoint over HTTP")
    p_serve.add_argument("--ckpt", required=True)
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--cors", action="store_true")

    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0

    try:
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "serve":
            return _cmd_serve(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except VersionMismatch as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except NonFiniteLoss as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    return 2


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = TrainConfig(**{**cfg.to_json(), "seed": args.seed})
    out = Path(args.out)

    def log(rec):
        acc = "-" if rec["accuracy"] is None else f"{rec['accuracy']:.4f}"
        print(f"epoch {rec['epoch']:3d}  bound {rec['bound']:10.3f}  "
              f"accuracy {acc}  ({rec['wall_time']:.1f}s)", flush=True)

    final, best, history = fit(cfg, out_dir=out, log=log)
    figures.training_curves(history, out / "training_curves.png")
    print(f"wrote {out}/final.ckpt, best.ckpt, metrics.jsonl")
    return 0


def _load_eval_context(args):
    ckpt = load_checkpoint(args.ckpt)
    model = ckpt.build_model()
    cfg = TrainConfig.from_json(ckpt.config)
    train, test = resolve_datasets(cfg)
    if resolve_likelihood(cfg) == "bernoulli":
        train = train.binarized()
        test = test.binarized() if test is not None else None
    return ckpt, model, cfg, train, test


def _write_outputs(out: Path, name: str, doc: dict, rows: list) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"{name}.json", "w") as f:
        json.dump(doc, f, indent=2)
    with open(out / "summary.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["metric", "value", "std_error", "n"])
        writer.writerows(rows)


def _external_classifier(train, seed=9999):
    print("training external classifier (20 epochs, independent seed)...",
          flush=True)
    return E.train_external_classifier(train, epochs=20, seed=seed)


def _cmd_eval(args) -> int:
    if args.suite not in EVAL_SUITES:
        print(f"error: unknown suite '{args.suite}' "
              f"(choose from {', '.join(EVAL_SUITES)})", file=sys.stderr)
        return 2
    ckpt, model, cfg, train, test = _load_eval_context(args)
    if test is None:
        print("error: config's test dataset is unavailable", file=sys.stderr)
        return 2
    out = Path(args.out) if args.out else Path(args.ckpt).parent / f"eval_{args.suite}"
    rng = np.random.default_rng(args.seed)
    chash = E.config_hash(ckpt.config)
    multilabel_only = ("confusion", "swaps", "diversity")
    if args.suite in multilabel_only and model.layout.is_multiclass:
        print(f"error: suite '{args.suite}' needs a multi-label model",
              file=sys.stderr)
        return 2

    if args.suite == "accuracy":
        acc = E.classification_accuracy(model, test, cfg.eval_k, args.seed)
        doc = E.metric_document("accuracy", chash, acc, n=test.n,
                                extra={"K": cfg.eval_k})
        _write_outputs(out, "accuracy", doc,
                       [["accuracy", acc, "", test.n]])

    elif args.suite == "confusion":
        ext = _external_classifier(train)
        mat, cond = E.intervention_confusion(model, ext, test, args.n, rng)
        dom = E.diagonal_dominance(mat)
        doc = E.metric_document(
            "intervention_confusion", chash, mat.tolist(), n=args.n,
            extra={"condition_number": cond, "diagonal_dominance": dom,
                   "labels": model.layout.labels})
        _write_outputs(out, "confusion", doc, [
            ["condition_number", cond, "", args.n],
            ["diagonal_dominance", dom, "", args.n]])
        figures.confusion_heatmap(mat, model.layout.labels, cond,
                                  out / "confusion.png")

    elif args.suite == "swaps":
        ext = _external_classifier(train)
        flat = test.flat_images()
        pairs = [(flat[2 * i], flat[2 * i + 1])
                 for i in range(min(args.n, test.n // 2))]
        res = E.swap_logprob_diff(model, ext, pairs)
        doc = E.metric_document("swap_logprob_diff", chash, res["mean"],
                                res["std_error"], res["n"],
                                extra={"per_label": res["per_label"]})
        _write_outputs(out, "swaps", doc,
                       [["swap_logprob_diff", res["mean"],
                         res["std_error"], res["n"]]])
        demo = []
        for x_a, x_b in pairs[:4]:
            h, w = model.cfg.image_shape
            demo += [x_a.reshape(h, w), x_b.reshape(h, w),
                     E.characteristic_swap(model, x_a, x_b)]
        write_png(tile_grid(demo, cols=3), out / "swap_examples.png")

    elif args.suite == "diversity":
        flat = test.flat_images()
        maps, ratios = {}, {}
        from .data import SyntheticSpec
        spec = (SyntheticSpec.from_json(cfg.dataset["spec"])
                if "spec" in cfg.dataset else SyntheticSpec())
        for i, name in enumerate(model.layout.labels):
            maps[name] = E.diversity_map(model, flat[i % test.n], i,
                                         max(args.n, 2), rng)
            if name in spec.attributes:
                mask = spec.region_mask(name)
                inside = maps[name][mask].mean()
                outside = maps[name][~mask].mean()
                ratios[name] = float(inside / outside) if outside > 0 else float("inf")
        doc = E.metric_document("diversity_variance_ratio", chash, ratios,
                                n=args.n)
        _write_outputs(out, "diversity", doc,
                       [[f"variance_ratio/{k}", v, "", args.n]
                        for k, v in ratios.items()])
        figures.diversity_panel(maps, out / "diversity.png")

    elif args.suite == "traversal":
        flat = test.flat_images()
        dim_j = 1 % max(model.layout.L, 1)
        grid = E.TraversalGrid(image=flat[0], dim_i=0, dim_j=dim_j, g=8)
        cells = E.traverse(model, grid)
        tiled = tile_grid([cells[r, c] for r in range(grid.g)
                           for c in range(grid.g)], cols=grid.g)
        doc = E.metric_document("traversal", chash, None,
                                extra={"dims": [grid.dim_i, grid.dim_j],
                                       "lo": grid.lo, "hi": grid.hi,
                                       "grid": grid.g})
        _write_outputs(out, "traversal", doc,
                       [["traversal_grid", grid.g, "", 1]])
        write_png(tiled, out / "traversal.png")

    elif args.suite == "generate":
        if model.layout.is_multiclass:
            y = np.array([rng.integers(model.layout.num_classes)])
            y_doc = int(y[0])
        else:
            y = (rng.random(model.layout.L) < 0.5).astype(np.float64)
            y_doc = y.tolist()
        imgs = E.conditional_generate(model, y, max(args.n, 1), rng,
                                      fix_znotc=True)
        doc = E.metric_document("conditional_generation", chash, None,
                                n=len(imgs), extra={"y": y_doc})
        _write_outputs(out, "generate", doc, [["generated", len(imgs), "", 1]])
        write_png(tile_grid(list(imgs), cols=min(8, len(imgs))),
                  out / "generated.png")

    print(f"wrote results to {out}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceState, build_app
    ckpt = load_checkpoint(args.ckpt)
    app = build_app(ServiceState(ckpt), cors=args.cors, log_requests=True)
    try:
        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    except (OSError, SystemExit) as e:
        print(f"error: could not bind {args.host}:{args.port} ({e})",
              file=sys.stderr)
        return 5
    return 0


if __name__ == "__main__":
    sys.exit(main())
