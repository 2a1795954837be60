"""Command-line entry point.

Every subcommand reads a JSON config (``--config``); ``--seed`` overrides the
config's seed.  Exit codes: 0 success, 1 runtime failure, 2 usage or
configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path


from . import harness as H
from . import labelspace as ls
from . import motiongen as mg
from .skeleform import SkeletonError
from .textbank import BankError, load_bank, save_bank, synth_bank

log = logging.getLogger("hetskel")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _emit(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text + "\n")
    else:
        print(text)


def _config(args) -> dict:
    conf = H.read_json(args.config)
    if not isinstance(conf, dict):
        raise H.ConfigError("config must be a JSON object")
    if args.seed is not None:
        conf["seed"] = args.seed
    return conf


def _path(base, p):
    return H._resolve(Path(base).parent, p)


# subcommands

def cmd_gen(args):
    """Config: GenSpec fields (``classes`` optional) plus ``out_dir`` and optional ``registry``."""
    conf = _config(args)
    out_dir = _path(args.config, conf.pop("out_dir", "corpus"))
    registry = conf.pop("registry", None)
    per_class = conf.pop("samples_per_class", 200)
    if "classes" not in conf:
        spec = mg.GenSpec.default(conf.pop("formats"), per_class, **conf)
    else:
        spec = mg.GenSpec(samples_per_class=per_class, **conf)
    from .skeleform import default_formats, load_registry

    formats = load_registry(_path(args.config, registry)) if registry else default_formats()
    corpus = mg.generate(spec, formats)
    man = mg.write(corpus, out_dir)
    with open(out_dir / "samples.jsonl", "w") as fh:
        for row in mg.sample_manifest(corpus):
            fh.write(json.dumps(row) + "\n")
    print(f"wrote {sum(man['counts'])} samples x {len(man['formats'])} formats to {out_dir}")


def cmd_embed_synth(args):
    """Config: ``names`` (list) or ``manifest`` (gen manifest), ``dim``, ``unseen`` names or ids, ``out``."""
    conf = _config(args)
    if "names" in conf:
        names = list(conf["names"])
    elif "manifest" in conf:
        names = H.read_json(_path(args.config, conf["manifest"]), "manifest")["class_names"]
    else:
        raise H.ConfigError("embed-synth needs 'names' or 'manifest'")
    unseen = [names.index(u) if isinstance(u, str) else int(u) for u in conf.get("unseen", [])]
    bank = synth_bank(names, dim=int(conf.get("dim", 256)), seed=int(conf.get("seed", 0)), unseen=unseen)
    out = _path(args.config, conf.get("out", "bank.json"))
    save_bank(out, bank)
    print(f"wrote {len(bank)} labels (dim {bank.dim}) to {out}")


def _read_samples(path):
    rows = []
    try:
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    r = json.loads(line)
                    rows.append((r["sample_id"], [int(x) for x in r["label_ids"]]))
    except FileNotFoundError:
        raise H.ConfigError(f"sample manifest not found: {path}") from None
    return rows


def cmd_cluster(args):
    """Config: ``bank``, ``k``, ``out``, optional ``max_iter``."""
    conf = _config(args)
    bank = load_bank(_path(args.config, conf["bank"]))
    space = ls.balanced_kmeans(bank.vectors, int(conf["k"]), seed=int(conf.get("seed", 0)),
                               max_iter=int(conf.get("max_iter", 100)), label_ids=list(bank.ids))
    _emit(space.to_dict(), _path(args.config, conf.get("out", "clusters.json")))
    print(f"clustered {len(bank)} labels into {space.k} (sizes {sorted(set(space.sizes().tolist()))})")


def cmd_split(args):
    """Config: ``samples`` (JSONL manifest), optional ``clusters``, ``frac``, ``out``."""
    conf = _config(args)
    samples = _read_samples(_path(args.config, conf["samples"]))
    assignment = None
    if conf.get("clusters"):
        assignment = ls.ClusteredLabelSpace.from_dict(H.read_json(_path(args.config, conf["clusters"]), "clusters")).assignment
        samples = [(s, sorted({assignment[l] for l in labels})) for s, labels in samples]
    spec = ls.stratified_split(samples, float(conf.get("frac", 0.70)), seed=int(conf.get("seed", 0)))
    train = set(spec.train_ids)
    spec.strata = H.frequency_strata([s for s in samples if s[0] in train])
    _emit(spec.to_dict(), _path(args.config, conf.get("out", "split.json")))
    print(f"train {len(spec.train_ids)} / test {len(spec.test_ids)}")


def cmd_train(args):
    cfg = H.load_run_config(args.config, args.seed)
    res = H.train(cfg, resume=args.resume)
    print(json.dumps({"final": str(res.final_path), "best": str(res.best_path), "best_val": res.best_val,
                      "last_loss": res.last_loss}))


def _ckpt(args, cfg):
    return args.checkpoint or str(Path(cfg.out_dir) / "best.ckpt")


def cmd_eval(args):
    cfg = H.load_run_config(args.config, args.seed)
    rep = H.run_eval(cfg, _ckpt(args, cfg), args.gamma)
    print(rep.table())
    if args.out:
        _emit(rep.to_dict(), args.out)
    if args.per_class:
        Path(args.per_class).write_text(rep.per_class_csv())


def cmd_sweep_gamma(args):
    cfg = H.load_run_config(args.config, args.seed)
    if args.step <= 0 or args.to < args.from_:
        raise H.ConfigError("need --step > 0 and --to >= --from")
    n = int(round((args.to - args.from_) / args.step))
    gammas = [round(args.from_ + i * args.step, 10) for i in range(n + 1)]
    rows = H.run_sweep(cfg, _ckpt(args, cfg), gammas)
    _emit(rows, args.out)


def cmd_gradcheck(args):
    """Config: optional K, T, batch, D_a, encoder, loss, step, tol, seed."""
    conf = _config(args)
    allowed = {"K", "T", "batch", "D_a", "encoder", "loss", "seed", "step", "tol"}
    unknown = set(conf) - allowed
    if unknown:
        raise H.ConfigError(f"gradcheck: unknown keys {sorted(unknown)}")
    rep = H.gradcheck_model(**conf)
    print(f"max_rel_err {rep.max_rel_err:.3e} over {rep.n_checked} entries, {rep.n_refined} re-measured at kinks "
          f"(tol {rep.tol:g}): "
          f"{'PASS' if rep.passed else 'FAIL'}")
    return EXIT_OK if rep.passed else EXIT_RUNTIME


def build_parser():
    p = _Parser(prog="hetskel", description="Heterogeneous-skeleton open-vocabulary action recognition")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True)
        sp.add_argument("--seed", type=int)
        sp.set_defaults(fn=fn)
        return sp

    add("gen", cmd_gen, "generate a synthetic multi-format corpus")
    add("cluster", cmd_cluster, "balanced k-means over a label bank")
    add("split", cmd_split, "stratified 70/30 split with frequency strata")
    add("embed-synth", cmd_embed_synth, "synthesise a label-embedding bank")
    tr = add("train", cmd_train, "train the motion encoder")
    tr.add_argument("--resume", action="store_true")
    ev = add("eval", cmd_eval, "evaluate a checkpoint")
    ev.add_argument("--checkpoint")
    ev.add_argument("--gamma", type=float)
    ev.add_argument("--out")
    ev.add_argument("--per-class")
    sw = add("sweep-gamma", cmd_sweep_gamma, "GZSL calibration sweep")
    sw.add_argument("--checkpoint")
    sw.add_argument("--from", dest="from_", type=float, default=0.0)
    sw.add_argument("--to", type=float, default=0.5)
    sw.add_argument("--step", type=float, default=0.1)
    sw.add_argument("--out")
    add("gradcheck", cmd_gradcheck, "finite-difference check of the full objective")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        code = args.fn(args)
    except (H.ConfigError, KeyError, BankError, mg.GenError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (H.TrainingError, SkeletonError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK if code is None else int(code)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
