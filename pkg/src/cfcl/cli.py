"""Command line entry point: simulate, make-data, eval, dump-embeddings."""
import argparse
import json
import logging
import os
import sys

import numpy as np

from .config import STRATEGIES, ConfigError, dump_config, load_config
from .data import IdxError, assemble_data, quantize, read_idx, synthetic_pool, write_idx_file
from .federation import run_simulation
from .metrics import linear_probe
from .model import EncoderModel, embed
from .output import write_charts, write_embeddings, write_run

log = logging.getLogger("cfcl")


class CliError(Exception):
    def __init__(self, kind, message, key=None):
        super().__init__(message)
        self.kind = kind
        self.key = key


def _load(args):
    if not os.path.isfile(args.config):
        raise CliError("io", f"config not found: {args.config}")
    cfg = load_config(args.config)
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "strategy", None) is not None:
        over["strategy"] = args.strategy
    return cfg.replace(**over).validate() if over else cfg


def cmd_simulate(args):
    cfg = _load(args)
    os.makedirs(args.out, exist_ok=True)
    history, fed = run_simulation(cfg, return_federation=True)
    write_run(history, args.out, fed.topology)
    history.global_model.save(os.path.join(args.out, "model.npz"))
    dump_config(cfg, os.path.join(args.out, "config.yaml"))
    if args.svg:
        write_charts(history, args.out, cfg.strategy)
    final = history.eval_log[-1]
    print(f"accuracy={final['accuracy']:.4f} delay_s={final['cumulative_delay_s']:.4f} out={args.out}")
    return 0


def cmd_make_data(args):
    cfg = _load(args)
    os.makedirs(args.out, exist_ok=True)
    if args.images:
        images, labels = read_idx(args.images), read_idx(args.labels)
        if len(images) != len(labels):
            raise CliError("io", "image and label counts differ")
        n = len(images) if args.limit is None else min(args.limit, len(images))
        files = {"idx_images": ("images-idx", images[:n]), "idx_labels": ("labels-idx", labels[:n])}
    else:
        pool, held = synthetic_pool(cfg)
        lo = min(pool.points.min(), held.points.min())
        hi = max(pool.points.max(), held.points.max())
        files = {
            "idx_images": ("train-images-idx", quantize(pool.points, lo, hi)),
            "idx_labels": ("train-labels-idx", pool.labels.astype(np.uint8)),
            "eval_idx_images": ("eval-images-idx", quantize(held.points, lo, hi)),
            "eval_idx_labels": ("eval-labels-idx", held.labels.astype(np.uint8)),
        }
    paths = {}
    for key, (name, arr) in files.items():
        suffix = f"{arr.ndim}-ubyte"
        path = os.path.abspath(os.path.join(args.out, f"{name}{suffix}"))
        write_idx_file(path, arr)
        paths[key] = path
    dim = int(np.prod(files["idx_images"][1].shape[1:]))
    fields = {"eval_idx_images": None, "eval_idx_labels": None, **paths}
    dump_config(cfg.replace(source="idx", dim=dim, **fields),
                os.path.join(args.out, "config.yaml"))
    print(f"wrote {len(paths)} idx files to {args.out}")
    return 0


def _model(args):
    if not os.path.isfile(args.model):
        raise CliError("io", f"model not found: {args.model}")
    return EncoderModel.load(args.model)


def cmd_eval(args):
    cfg = _load(args)
    model = _model(args)
    _, train, test = assemble_data(cfg)
    res = linear_probe(embed(model, train.points), train.labels, embed(model, test.points), test.labels,
                       cfg.probe_iters, np.random.default_rng([cfg.seed, 6]), cfg.probe_lr, cfg.probe_batch)
    print(f"accuracy={res.accuracy:.4f}")
    return 0


def cmd_dump_embeddings(args):
    cfg = _load(args)
    model = _model(args)
    parts, train, test = assemble_data(cfg)
    if args.split == "devices":
        points = np.concatenate([p.points for p in parts])
        labels = np.concatenate([p.labels for p in parts])
    else:
        points = np.concatenate([train.points, test.points])
        labels = np.concatenate([train.labels, test.labels])
    out = args.out
    if os.path.dirname(out):
        os.makedirs(os.path.dirname(out), exist_ok=True)
    write_embeddings(out, embed(model, points), labels)
    print(f"wrote {len(points)} embeddings to {out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="cfcl", description="Cooperative federated contrastive learning simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one federation and write CSV logs")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--strategy", choices=STRATEGIES)
    s.add_argument("--out", required=True)
    s.add_argument("--svg", action="store_true", help="also write SVG accuracy charts")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("make-data", help="write synthetic data as IDX, or re-pack existing IDX files")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--images", help="existing IDX image file to re-pack")
    s.add_argument("--labels", help="existing IDX label file to re-pack")
    s.add_argument("--limit", type=int, help="keep only the first N records when re-packing")
    s.set_defaults(func=cmd_make_data)

    s = sub.add_parser("eval", help="linear probe on a saved model")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--model", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("dump-embeddings", help="write embeddings and labels as CSV")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--model", required=True)
    s.add_argument("--split", choices=("probe", "devices"), default="probe")
    s.add_argument("--out", required=True, help="CSV file path")
    s.set_defaults(func=cmd_dump_embeddings)
    return p


def _fail(kind, message, key=None):
    rec = {"error": kind, "message": message}
    if key is not None:
        rec["key"] = key
    print(json.dumps(rec), file=sys.stderr)
    return 2


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "make-data" and bool(args.images) != bool(args.labels):
        return _fail("usage", "--images and --labels must be given together")
    try:
        return args.func(args)
    except CliError as e:
        return _fail(e.kind, str(e), e.key)
    except ConfigError as e:
        return _fail("config", str(e), e.key)
    except IdxError as e:
        return _fail("idx", str(e))
    except (OSError, ValueError) as e:
        return _fail("io" if isinstance(e, OSError) else "value", str(e))


if __name__ == "__main__":
    sys.exit(main())
