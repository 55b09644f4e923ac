"""Command-line entry point: synth, complete, eval, gradcheck.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

import argparse
import logging
import sys

import numpy as np

from . import fileio
from .checks import SIZES, gradient_suite
from .objective import HyperParams
from .optimizer import export_trace, run
from .tasks import cross_validate, mask_generate, synth_dataset

log = logging.getLogger("tagcomplete")


def _config(path) -> HyperParams:
    return fileio.read_config(path) if path else HyperParams()


def _dataset(manifest_path, hp):
    man = fileio.read_manifest(manifest_path)
    return man, fileio.load_patches(man, hp.window, hp.stride)


def cmd_synth(args):
    out = fileio.ensure_dir(args.out)
    fileio.ensure_dir(out / "patches")
    patches, T_full, _ = synth_dataset(args.images, args.tags, args.dim, args.patches,
                                       args.clusters, args.noise, args.seed)
    entries = []
    for pm in patches:
        rel = f"patches/{pm.image_id}.txt"
        fileio.write_matrix(out / rel, pm.data, comment=f"patch matrix of {pm.image_id} (d x n_patches)")
        entries.append((pm.image_id, "patches", rel))
    fileio.write_tags(out / "tags_full.txt", T_full, np.ones_like(T_full))
    man = fileio.DatasetManifest(entries, "tags_full.txt", args.tags, args.images, args.dim)
    fileio.write_manifest(out / "manifest.txt", man)
    if args.rho is not None:
        T_hat, Phi = mask_generate(T_full, args.rho, args.seed)
        fileio.write_tags(out / "tags_observed.txt", T_hat, Phi)
    print(f"wrote {args.images} images, {args.tags} tags to {out}")
    return 0


def cmd_complete(args):
    hp = _config(args.config)
    man, patches = _dataset(args.manifest, hp)
    tag_path = args.tags or man.resolve(man.tag_path)
    T_hat, Phi, m, n = fileio.read_tags(tag_path)
    if n != len(patches):
        raise ValueError(f"tag file has {n} images, manifest has {len(patches)}")
    ts = run(patches, T_hat, Phi, hp, args.seed)
    fileio.write_matrix(args.out, ts.state.T, comment="completed tag scores (m x n)")
    if args.trace:
        fileio.write_trace(args.trace, export_trace(ts))
    if args.model:
        fileio.save_model(args.model, ts.bank, ts.pred, hp)
    last = ts.trace[-1]
    print(f"{len(ts.trace) - 1} outer steps, final objective {last.total:.6g}")
    return 0


def cmd_eval(args):
    hp = _config(args.config)
    _, patches = _dataset(args.manifest, hp)
    T_full, Phi, m, n = fileio.read_tags(args.fulltags)
    if not np.all(Phi == 1):
        raise ValueError("the ground-truth tag file must declare every entry")
    metric = args.metric.lower()
    if metric.startswith("precision@"):
        try:
            K = int(metric.split("@", 1)[1])
        except ValueError:
            K = 0
        if K < 1:
            print(f"bad metric {args.metric!r}: K must be a positive integer", file=sys.stderr)
            return 2
    elif metric == "pos@top":
        K = 5
    else:
        print(f"unknown metric {args.metric!r}", file=sys.stderr)
        return 2
    reports = cross_validate(patches, T_full, args.folds, args.rho, hp, args.seed, K)
    rep = reports[metric]
    for f, v in enumerate(rep.per_fold):
        print(f"fold {f}\t{rep.metric}\t{v:.6f}")
    print(f"mean\t{rep.metric}\t{rep.mean:.6f}")
    return 0


def cmd_gradcheck(args):
    rows = gradient_suite(args.seed, args.instances, args.size)
    worst = {}
    for _, block, err, _ in rows:
        worst[block] = max(worst.get(block, 0.0), err)
    print("block\tmax_rel_err")
    for block in ("T", "U", "b", "W"):
        print(f"{block}\t{worst[block]:.3e}")
    ok = all(r[3] for r in rows)
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def build_parser():
    p = argparse.ArgumentParser(prog="tagcomplete", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic clustered dataset")
    s.add_argument("--images", type=int, required=True)
    s.add_argument("--tags", type=int, required=True)
    s.add_argument("--dim", type=int, required=True)
    s.add_argument("--clusters", type=int, required=True)
    s.add_argument("--noise", type=float, default=0.1)
    s.add_argument("--patches", type=int, default=8, help="patches per image")
    s.add_argument("--rho", type=float, default=None,
                   help="also write tags_observed.txt with this fraction of positives hidden")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    c = sub.add_parser("complete", help="complete a tag matrix")
    c.add_argument("--manifest", required=True)
    c.add_argument("--tags", help="observed tag file (default: the manifest's)")
    c.add_argument("--config")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True)
    c.add_argument("--trace")
    c.add_argument("--model")
    c.set_defaults(func=cmd_complete)

    e = sub.add_parser("eval", help="k-fold annotation / retrieval evaluation")
    e.add_argument("--manifest", required=True)
    e.add_argument("--fulltags", required=True)
    e.add_argument("--metric", default="precision@5", help="precision@K or pos@top")
    e.add_argument("--folds", type=int, default=4)
    e.add_argument("--rho", type=float, default=0.3)
    e.add_argument("--config")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--size", choices=sorted(SIZES), default="small")
    g.add_argument("--instances", type=int, default=20)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
