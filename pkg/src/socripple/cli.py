"""Command line entry point: ``socripple <command> [--config F] [--seed S] [--out D]``.

Artifacts live under ``--out`` (``world/``, ``model.npz``, ``dropoutnet.npz``,
``user_embeddings.txt``, ``index.npz``, ``reports/``, ``state/``) unless
overridden with ``paths.*`` keys.
"""
from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import time

from . import config as cfgmod
from . import pipeline, simgen
from .annindex import UnknownUserError
from .snapshot import SnapshotError

log = logging.getLogger("socripple")


def _overrides(args) -> dict:
    over = {}
    for item in args.set or ():
        if "=" not in item:
            raise cfgmod.ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        over[k.strip()] = v.strip()
    if args.seed is not None:
        over["seed"] = args.seed
    if args.out is not None:
        over["out"] = args.out
    for key, attr in (("serve.host", "host"), ("serve.port", "port")):
        if getattr(args, attr, None) is not None:
            over[key] = getattr(args, attr)
    return over


def _print_report(rep, buckets) -> None:
    variants = list(dict.fromkeys(r["variant"] for r in rep.rows))
    print("variant      " + " ".join(f"<={b}h".rjust(8) for b in buckets))
    for v in variants:
        print(f"{v:12s} " + " ".join(f"{rep.value(v, b):8.4f}" for b in buckets))


def cmd_gen(cfg, args) -> None:
    t = time.perf_counter()
    w = pipeline.gen(cfg)
    print(f"world: {w.num_users} users, {len(w.catalog)} items, {w.graph.num_edges()} follows, "
          f"{len(w.events)} events -> {cfg.path('world')} ({time.perf_counter() - t:.1f}s)")


def cmd_train(cfg, args) -> None:
    model, _ = pipeline.train(cfg)
    print(f"two-tower epoch losses: {' '.join(f'{x:.4f}' for x in model.history)}")
    print(f"wrote {cfg.path('model')}, {cfg.path('embeddings')}, {cfg.path('dropoutnet')}")


def cmd_index(cfg, args) -> None:
    idx = pipeline.index(cfg)
    print(f"{idx.mode} index over {len(idx)} users -> {cfg.path('index')}")


def cmd_eval(cfg, args) -> None:
    rep = pipeline.evaluate(cfg)
    _print_report(rep, cfg.buckets)
    print(f"wrote {cfg.path('reports') / 'table1.csv'}")


def cmd_ablate(cfg, args) -> None:
    rep = pipeline.ablate(cfg)
    _print_report(rep, (24,))
    print(f"wrote {cfg.path('reports') / 'table2.csv'}")


def cmd_sweep(cfg, args) -> None:
    grid = pipeline.sweep(cfg)
    print(grid.heatmap())
    print(f"wrote {cfg.path('reports') / 'sweep.csv'}")


def cmd_retrieve(cfg, args) -> None:
    cands = pipeline.retrieve(cfg, args.user, args.now, args.n)
    if args.json:
        print(json.dumps([{"item": c.item, "score": c.score, "source": c.source} for c in cands]))
        return
    for rank, c in enumerate(cands, 1):
        score = "-" if c.score is None else f"{c.score:.4f}"
        print(f"{rank:4d} {c.item:8d} {c.source:7s} {score}")


def _interrupt(signum, frame):
    raise KeyboardInterrupt


def cmd_serve(cfg, args) -> None:
    from .service import RetrievalService, make_server

    world = pipeline.load_world(cfg)
    state_dir = cfg.path("state")
    if args.restore:
        svc = RetrievalService.restore(state_dir, world.graph, world.catalog, cfg.ripple)
        print(f"restored state from {state_dir}")
    else:
        until = cfg.replay_until if cfg.replay_until >= 0 else world.config.split_time
        buf, ilog = pipeline.replayed_state(world, cfg, until)
        svc = RetrievalService(world.graph, world.catalog, pipeline.load_index(cfg), cfg.ripple, buf, ilog)
        print(f"warm start: replayed events before t={until:.0f}s")
    srv = make_server(svc, cfg.host, cfg.port)
    signal.signal(signal.SIGTERM, _interrupt)
    print(f"serving on http://{srv.server_address[0]}:{srv.server_address[1]}", flush=True)
    try:
        srv.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        srv.server_close()
        if args.save_state:
            print(f"snapshot -> {svc.snapshot(state_dir)}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int, help="seed for every component (overrides the config)")
    common.add_argument("--out", help="artifact directory (overrides the config)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="socripple", description="Two-stage cold-start candidate retrieval.")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")
    for name, fn, help_ in [
        ("gen", cmd_gen, "generate a synthetic world"),
        ("train", cmd_train, "train the two-tower model and DropoutNet"),
        ("index", cmd_index, "build the user-embedding index"),
        ("eval", cmd_eval, "recall@k of SocRipple and baselines per item-age bucket"),
        ("ablate", cmd_ablate, "Stage 1 / social-graph expansion / full ablation"),
        ("sweep", cmd_sweep, "recall over the K x M grid"),
        ("serve", cmd_serve, "run the HTTP retrieval service"),
        ("retrieve", cmd_retrieve, "print the candidate list for one user"),
    ]:
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=fn)
        if name == "retrieve":
            sp.add_argument("--user", type=int, required=True)
            sp.add_argument("--now", type=float, required=True, help="request time in seconds")
            sp.add_argument("--n", type=int, help="number of candidates")
            sp.add_argument("--json", action="store_true")
        if name == "serve":
            sp.add_argument("--host")
            sp.add_argument("--port", type=int)
            sp.add_argument("--restore", action="store_true", help="start from the saved state snapshot")
            sp.add_argument("--save-state", action="store_true", help="snapshot the state on shutdown")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = cfgmod.load(args.config, _overrides(args))
    except (cfgmod.ConfigError, simgen.ConfigError) as exc:
        print(f"socripple: config error: {exc}", file=sys.stderr)
        return 2
    try:
        args.func(cfg, args)
    except (pipeline.PipelineError, SnapshotError, UnknownUserError, ValueError, OSError) as exc:
        print(f"socripple {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
