"""Run configuration: a flat ``key = value`` text file plus flag overrides.

Keys are dotted by component, e.g.::

    # experiment provenance lives in this file
    seed = 7
    out = runs/seed7
    world.num_users = 10000
    train.epochs = 10
    ripple.K = 70
    ripple.w_freshness = 0.5
    eval.buckets = 6,12,24
    serve.port = 8080

``seed`` drives every component seed (world, two-tower, DropoutNet, index),
so component ``*.seed`` keys are rejected. Unknown keys are errors.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .annindex import BuildParams
from .baselines import DropoutNetConfig
from .ripple import RippleConfig, ScoreWeights
from .simgen import WorldConfig
from .twotower import TrainConfig


class ConfigError(ValueError):
    pass


def _coerce(raw: str, like, key: str):
    try:
        if isinstance(like, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
        if isinstance(like, tuple):
            return tuple(int(x) for x in raw.split(",") if x.strip())
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(like).__name__}") from None


def parse_text(text: str, origin: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {line!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise ConfigError(f"{origin}:{lineno}: empty key")
        if k in out:
            raise ConfigError(f"{origin}:{lineno}: duplicate key {k!r}")
        out[k] = v
    return out


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out: Path = Path("run")
    world: WorldConfig = field(default_factory=WorldConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    dropoutnet: DropoutNetConfig = field(default_factory=DropoutNetConfig)
    ripple: RippleConfig = field(default_factory=RippleConfig)
    index_mode: str = "exact"
    index: BuildParams = field(default_factory=BuildParams)
    k: int = 200
    buckets: tuple = (6, 12, 24)
    max_users: int = 0  # 0 evaluates every test user
    sweep_K: tuple = tuple(range(10, 101, 10))
    sweep_M: tuple = tuple(range(5, 41, 5))
    host: str = "127.0.0.1"
    port: int = 8080
    replay_until: float = -1.0  # service warm start; negative means the split time
    paths: dict = field(default_factory=dict)

    # -- derived paths --------------------------------------------------
    def path(self, name: str) -> Path:
        defaults = {"world": "world", "model": "model.npz", "dropoutnet": "dropoutnet.npz",
                    "embeddings": "user_embeddings.txt", "index": "index.npz", "reports": "reports",
                    "state": "state"}
        if name not in defaults:
            raise KeyError(name)
        p = Path(self.paths.get(name, defaults[name]))
        return p if p.is_absolute() else Path(self.out) / p

    def validate(self) -> None:
        self.world.validate()
        self.train.validate()
        self.dropoutnet.validate()
        self.ripple.validate()
        if self.index_mode not in ("exact", "approximate"):
            raise ConfigError(f"index.mode must be exact or approximate, got {self.index_mode!r}")
        if self.k < 1 or not self.buckets or min(self.buckets) < 1:
            raise ConfigError("eval.k and eval.buckets must be positive")
        if self.max_users < 0:
            raise ConfigError("eval.max_users must be >= 0")
        if not self.sweep_K or not self.sweep_M or min(self.sweep_K + self.sweep_M) < 1:
            raise ConfigError("sweep.K and sweep.M must be non-empty positive lists")
        if not 0 <= self.port < 65536:
            raise ConfigError("serve.port out of range")


_PATH_KEYS = ("world", "model", "dropoutnet", "embeddings", "index", "reports", "state")
_FLAT = {"eval.k": "k", "eval.buckets": "buckets", "eval.max_users": "max_users", "sweep.K": "sweep_K",
         "sweep.M": "sweep_M", "serve.host": "host", "serve.port": "port",
         "serve.replay_until": "replay_until", "index.mode": "index_mode"}
_SECTIONS = {"world": WorldConfig, "train": TrainConfig, "dropoutnet": DropoutNetConfig,
             "ripple": RippleConfig, "index": BuildParams}
_WEIGHTS = {f.name for f in fields(ScoreWeights)}


def known_keys() -> list[str]:
    keys = ["seed", "out", *_FLAT, *(f"paths.{p}" for p in _PATH_KEYS)]
    for sec, cls in _SECTIONS.items():
        for f in fields(cls):
            if f.name == "seed" or f.name == "weights":
                continue
            keys.append(f"{sec}.{f.name}")
    keys += [f"ripple.{w}" for w in sorted(_WEIGHTS)]
    return sorted(keys)


def build(raw: dict[str, str]) -> RunConfig:
    """Turn parsed key/value strings into a validated RunConfig."""
    base = RunConfig()
    top: dict = {}
    sec_kw: dict[str, dict] = {s: {} for s in _SECTIONS}
    w_kw: dict = {}
    paths: dict = {}
    for key, val in raw.items():
        if key == "seed":
            top["seed"] = _coerce(val, 0, key)
        elif key == "out":
            top["out"] = Path(val)
        elif key in _FLAT:
            attr = _FLAT[key]
            top[attr] = _coerce(val, getattr(base, attr), key)
        elif key.startswith("paths.") and key[6:] in _PATH_KEYS:
            paths[key[6:]] = val
        elif "." in key:
            sec, name = key.split(".", 1)
            if sec == "ripple" and name in _WEIGHTS:
                w_kw[name] = _coerce(val, getattr(ScoreWeights(), name), key)
                continue
            cls = _SECTIONS.get(sec)
            names = {f.name for f in fields(cls)} - {"seed", "weights"} if cls else set()
            if name not in names:
                raise ConfigError(f"unknown config key {key!r}")
            sec_kw[sec][name] = _coerce(val, getattr(cls(), name), key)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    seed = top.get("seed", base.seed)
    rip = sec_kw["ripple"]
    if w_kw:
        rip["weights"] = replace(ScoreWeights(), **w_kw)
    cfg = replace(
        base, **top, paths=paths,
        world=WorldConfig(**sec_kw["world"], seed=seed),
        train=TrainConfig(**sec_kw["train"], seed=seed),
        dropoutnet=DropoutNetConfig(**sec_kw["dropoutnet"], seed=seed),
        ripple=RippleConfig(**rip),
        index=BuildParams(**sec_kw["index"], seed=seed),
    )
    try:
        cfg.validate()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load(path=None, overrides: dict | None = None) -> RunConfig:
    """Read ``path`` (optional), apply ``overrides`` (flags win), build."""
    raw: dict[str, str] = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        raw = parse_text(p.read_text(), str(p))
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = str(v)
    return build(raw)


def dump(cfg: RunConfig) -> str:
    """Render every key; ``build(parse_text(dump(c))) == c``."""
    lines = [f"seed = {cfg.seed}", f"out = {cfg.out}"]
    for key, attr in _FLAT.items():
        v = getattr(cfg, attr)
        lines.append(f"{key} = {','.join(map(str, v)) if isinstance(v, tuple) else v}")
    for sec in _SECTIONS:
        obj = getattr(cfg, sec)
        for f in fields(obj):
            if f.name in ("seed", "weights"):
                continue
            lines.append(f"{sec}.{f.name} = {getattr(obj, f.name)!r}".replace("'", ""))
    for w in fields(ScoreWeights):
        lines.append(f"ripple.{w.name} = {getattr(cfg.ripple.weights, w.name)!r}")
    for k, v in sorted(cfg.paths.items()):
        lines.append(f"paths.{k} = {v}")
    return "\n".join(lines) + "\n"
