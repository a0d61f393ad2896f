"""Library form of every CLI step. Each function reads and writes the
artifact paths named in a RunConfig, so the CLI adds nothing but argument
parsing and printing."""
from __future__ import annotations

import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import annindex, baselines, evalharness, ripple, simgen, twotower
from .config import RunConfig
from .engagement import EngagementBuffer, ImpressionLog

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    """A required artifact is missing or unreadable."""


def _need(path: Path, what: str) -> Path:
    if not path.exists():
        raise PipelineError(f"{what} file not found: {path}")
    return path


def load_world(cfg: RunConfig) -> simgen.World:
    p = cfg.path("world")
    if not (p / "world.json").exists():
        raise PipelineError(f"world file not found: {p / 'world.json'} (run gen first)")
    return simgen.World.load(p)


def load_model(cfg: RunConfig) -> twotower.ModelParams:
    return twotower.ModelParams.load(_need(cfg.path("model"), "model"))


def load_index(cfg: RunConfig) -> annindex.UserIndex:
    return annindex.UserIndex.load(_need(cfg.path("index"), "index"))


def gen(cfg: RunConfig) -> simgen.World:
    world = simgen.gen_world(cfg.world)
    world.save(cfg.path("world"))
    return world


def train(cfg: RunConfig) -> tuple[twotower.ModelParams, baselines.DropoutNetParams]:
    """Two-tower on train-period positives, then DropoutNet on top of it."""
    world = load_world(cfg)
    tr, _ = simgen.split(world)
    pos = tr.take(np.flatnonzero(tr.positive_mask()))
    model = twotower.train(pos, cfg.train, num_users=world.num_users, num_items=len(world.catalog))
    cfg.path("model").parent.mkdir(parents=True, exist_ok=True)
    model.save(cfg.path("model"))
    twotower.save_embeddings(cfg.path("embeddings"), twotower.export_user_embeddings(model))
    dn = baselines.dropoutnet_train(pos, world.catalog.content, model, cfg.dropoutnet)
    dn.save(cfg.path("dropoutnet"))
    return model, dn


def index(cfg: RunConfig) -> annindex.UserIndex:
    model = load_model(cfg)
    idx = annindex.build(twotower.export_user_embeddings(model), cfg.index_mode, cfg.index)
    idx.save(cfg.path("index"))
    return idx


def context(cfg: RunConfig) -> evalharness.EvalContext:
    model = load_model(cfg)
    idx = load_index(cfg)
    world = load_world(cfg)
    dn = baselines.DropoutNetParams.load(_need(cfg.path("dropoutnet"), "dropoutnet model"))
    return evalharness.prepare(world, cfg.train, cfg.index_mode, model=model, index=idx, dropoutnet=dn,
                               ripple_config=cfg.ripple)


def _max_users(cfg):
    return cfg.max_users or None


def evaluate(cfg: RunConfig, ctx=None) -> evalharness.RecallReport:
    """Baselines vs SocRipple per age bucket; writes ``reports/table1.csv``."""
    ctx = ctx or context(cfg)
    return evalharness.run_table1(ctx, cfg.k, cfg.path("reports") / "table1.csv", _max_users(cfg), cfg.buckets)


def ablate(cfg: RunConfig, ctx=None) -> evalharness.RecallReport:
    ctx = ctx or context(cfg)
    return evalharness.run_table2(ctx, cfg.k, cfg.path("reports") / "table2.csv", _max_users(cfg))


def sweep(cfg: RunConfig, ctx=None) -> evalharness.SweepGrid:
    ctx = ctx or context(cfg)
    return evalharness.run_sweep(ctx, cfg.sweep_K, cfg.sweep_M, cfg.k, max(cfg.buckets),
                                 cfg.path("reports") / "sweep.csv", _max_users(cfg))


def replayed_state(world: simgen.World, cfg: RunConfig, until: float) -> tuple[EngagementBuffer, ImpressionLog]:
    buf = EngagementBuffer(cfg.ripple.max_item_age, cfg.ripple.max_item_age)
    ilog = ImpressionLog()
    simgen.replay(world, until, buf, ilog)
    return buf, ilog


def retrieve(cfg: RunConfig, user: int, now: float, n: int | None = None) -> list[ripple.Candidate]:
    """Candidates for ``user`` at ``now`` given every logged event before ``now``."""
    world = load_world(cfg)
    if not 0 <= user < world.num_users:
        raise PipelineError(f"unknown user {user}")
    idx = load_index(cfg)
    buf, ilog = replayed_state(world, cfg, now)
    rc = cfg.ripple if n is None else replace(cfg.ripple, N_out=n)
    return ripple.retrieve_scored(user, now, world.graph, world.catalog, idx, buf, ilog, rc)
