"""Command-line interface: gen-scenes, train, eval, sweep, report.

Exit codes: 0 success, 1 usage/input error, 2 numerical failure.  Every
command prints an effective-config header sufficient to reproduce it.
Science parameters live in the config JSON; the only environment override
is COOPBEV_WORKERS (sweep worker processes).
"""

import argparse
import hashlib
import json
import os
import sys

from .config import config_to_dict, default_config, load_config
from .errors import CoopBevError, ConfigError, NumericalError
from .evaluator import evaluate_cell, sweep, _packs_cached
from .formats import atomic_write_text, read_checkpoint
from .model import load_model
from .policies import POLICY_NAMES
from .report import write_report
from .scene import SPLIT_OFFSETS, generate_scene, save_scene
from .trainer import train_one_seed
from . import evaluator


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # argparse exits 2 by default; 2 is reserved for numerical failure
        raise ConfigError(message)


def _header(cmd, args_doc, cfg=None):
    print(f"[coopbev] command={cmd} " + " ".join(f"{k}={v}" for k, v in args_doc.items()))
    if cfg is not None:
        print("[coopbev] config=" + json.dumps(config_to_dict(cfg), sort_keys=True))


def _load_cfg(path):
    return load_config(path) if path else default_config()


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def cmd_gen_scenes(args):
    cfg = _load_cfg(args.config)
    _header("gen-scenes", {"split": args.split, "seed": args.seed, "out": args.out}, cfg)
    split_dir = os.path.join(args.out, args.split)
    if os.path.isdir(split_dir) and os.listdir(split_dir) and not args.force:
        raise ConfigError(f"{split_dir} is not empty; pass --force to overwrite")
    os.makedirs(split_dir, exist_ok=True)
    n = cfg.train.splits[args.split]
    offset = SPLIT_OFFSETS[args.split]
    files = {}
    for i in range(n):
        scene = generate_scene(cfg.scene, args.seed, offset + i)
        for path in save_scene(scene, split_dir):
            files[os.path.basename(path)] = _sha256(path)
    manifest = {
        "split": args.split,
        "seed": args.seed,
        "config": config_to_dict(cfg),
        "files": dict(sorted(files.items())),
    }
    body = json.dumps(manifest, indent=1, sort_keys=True) + "\n"
    mpath = os.path.join(split_dir, "manifest.json")
    atomic_write_text(mpath, body)
    digest = hashlib.sha256(body.encode()).hexdigest()
    print(f"[coopbev] wrote {n} scenes to {split_dir}")
    print(f"[coopbev] manifest {mpath} sha256={digest}")
    return 0


def cmd_train(args):
    cfg = _load_cfg(args.config)
    _header("train", {"scenes": args.scenes, "seed": args.seed, "out": args.out}, cfg)

    def progress(epoch, val_ap):
        print(f"[coopbev] epoch {epoch} val_ap={val_ap:.4f}", flush=True)

    summary = train_one_seed(cfg, args.scenes, args.seed, args.out, progress=progress)
    print(f"[coopbev] done: best_val_ap={summary['best_val_ap']:.4f} "
          f"(epoch {summary['best_epoch']}), checkpoints at {args.out}")
    return 0


def _check_policy(name):
    if name not in POLICY_NAMES:
        raise ConfigError(f"invalid policy {name!r}; valid: {', '.join(POLICY_NAMES)}")


def cmd_eval(args):
    _check_policy(args.policy)
    _header("eval", {"ckpt": args.ckpt, "scenes": args.scenes, "policy": args.policy,
                     "budget": args.budget, "occlusion": args.occlusion, "drop": args.drop})
    model = load_model(args.ckpt)
    packs = _packs_cached(args.scenes, args.occlusion)
    occ = args.occlusion or packs[0].scene.config.occlusion_level
    record = evaluate_cell(model, packs, args.policy, args.budget, occ, args.drop)
    evaluator.write_records(args.out, [record])
    print(f"[coopbev] policy={record.policy} budget={record.budget:g} occlusion={record.occlusion} "
          f"drop={record.drop_rate:g} seed={record.seed} ap={record.ap!r} bytes={record.bytes}")
    print(f"[coopbev] wrote {args.out}")
    return 0


def _checkpoints_by_seed(ckpt_dir, seeds):
    paths = sorted(f for f in os.listdir(ckpt_dir) if f.endswith(".r2tc")
                   and not f.endswith(".final.r2tc"))
    by_seed = {}
    for name in paths:
        p = os.path.join(ckpt_dir, name)
        try:
            arrays = read_checkpoint(p)
            seed = int(arrays["meta.seed"][0])
        except (CoopBevError, KeyError):
            print(f"[coopbev] warning: skipping unreadable checkpoint {p}")
            continue
        by_seed.setdefault(seed, p)
    return {s: by_seed[s] for s in seeds if s in by_seed}, [s for s in seeds if s not in by_seed]


def cmd_sweep(args):
    cfg = _load_cfg(args.config)
    _header("sweep", {"ckpt_dir": args.ckpt_dir, "scenes": args.scenes,
                      "axes": args.axes, "out": args.out}, cfg)
    found, missing = _checkpoints_by_seed(args.ckpt_dir, list(cfg.train.seeds))
    for seed in missing:
        print(f"[coopbev] warning: no checkpoint for seed {seed}; skipping")
    if not found:
        raise ConfigError(f"no usable checkpoints under {args.ckpt_dir}")
    workers = int(os.environ.get("COOPBEV_WORKERS", "1"))
    records, _ = sweep(found, args.scenes, args.axes, args.out, workers=workers)
    print(f"[coopbev] wrote {len(records)} records to {args.out}/{args.axes}_records.csv")
    return 1 if missing else 0


def cmd_report(args):
    _header("report", {"in": ",".join(args.inputs), "out": args.out})
    text = write_report(args.inputs, args.out)
    print(text, end="")
    print(f"[coopbev] report written to {args.out}")
    return 0


def build_parser():
    p = _Parser(prog="coopbev",
                description="bandwidth-constrained cooperative BEV perception testbed")
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen-scenes", help="generate a scene split")
    g.add_argument("--config", default=None)
    g.add_argument("--out", required=True)
    g.add_argument("--split", required=True, choices=sorted(SPLIT_OFFSETS))
    g.add_argument("--seed", required=True, type=int)
    g.add_argument("--force", action="store_true")
    g.set_defaults(fn=cmd_gen_scenes)

    t = sub.add_parser("train", help="train one seed end to end")
    t.add_argument("--config", default=None)
    t.add_argument("--scenes", required=True, help="root dir holding train/ and val/ splits")
    t.add_argument("--seed", required=True, type=int)
    t.add_argument("--out", required=True, help="best-checkpoint path (.r2tc)")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate one (policy, budget, occlusion, drop) cell")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--scenes", required=True)
    e.add_argument("--policy", required=True)
    e.add_argument("--budget", required=True, type=float)
    e.add_argument("--occlusion", default=None, choices=("low", "medium", "high"))
    e.add_argument("--drop", default=0.0, type=float)
    e.add_argument("--out", required=True)
    e.set_defaults(fn=cmd_eval)

    s = sub.add_parser("sweep", help="run one experiment axis over all seeds")
    s.add_argument("--config", default=None)
    s.add_argument("--ckpt-dir", required=True)
    s.add_argument("--scenes", required=True, help="test split directory")
    s.add_argument("--axes", required=True, choices=("bandwidth", "occlusion", "drop"))
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_sweep)

    r = sub.add_parser("report", help="summarize record CSVs into tables")
    r.add_argument("--in", dest="inputs", required=True, nargs="+")
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except NumericalError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except CoopBevError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
