"""Experiment configuration: JSON in, resolved fleets out."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

from .markov import MarkovSource, default_robot_path, source_from_dict
from .mdp import Arm
from .penalty import SAFETY_LOSS, LossMatrix, build_penalty_table, default_delta_max, loss_from_dict
from .policies import POLICIES

FILL = "fill"

DEFAULTS = {
    "M": 10,
    "N": 20,
    "groups": [
        {"name": "robot", "count": 5,
         "source": {"type": "deterministic", "path": [list(c) for c in default_robot_path()], "success_prob": 0.95}},
        {"name": "scanner", "count": FILL,
         "source": {"type": "gridworld", "rows": 5, "cols": 12, "vertical_prob": 0.05,
                    "row_danger": ["safe", "safe", "safe", "cautious", "dangerous"], "success_prob": 0.95}},
    ],
    "loss": None,
    "policies": ["periodic", "randomized", "netgain"],
    "n_sweep": [5, 10, 15, 20, 25, 30],
    "gammas": [1, 2, 4],
    "horizon": 100_000,
    "warmup": None,
    "reps": 10,
    "seed": 0,
    "buffer": 20,
    "delta_max": None,
    "dual": {"beta": 1.0, "mode": "expected", "max_rounds": 20_000, "window": 200, "range_tol": 1e-3},
    "penalty_curve": {"group": "scanner",
                      "states": [[[1, 3], "right"], [[2, 3], "down"], [[3, 3], "down"], [[4, 3], "down"]]},
    "max_arms": 1000,
}


class ConfigError(ValueError):
    pass


@dataclass
class Group:
    name: str
    source: MarkovSource
    count: int | str
    delta_max: int | None
    doc: dict  # source definition as resolved (inline)


@dataclass
class Fleet:
    arms: list
    names: list  # group name per arm
    classes: list  # (group name, Arm, member indices)
    M: int


@dataclass
class ExperimentConfig:
    raw: dict
    groups: list
    loss: LossMatrix
    base: Path = field(default=Path("."))
    _tables: dict = field(default_factory=dict, repr=False)

    def __getattr__(self, key):
        raw = self.__dict__.get("raw")
        if raw is not None and key in raw:
            return raw[key]
        raise AttributeError(key)

    def group(self, name: str) -> Group:
        for g in self.groups:
            if g.name == name:
                return g
        raise ConfigError(f"no fleet group named {name!r}")

    def table(self, g: Group):
        # one table per group so arms of a group share solver work
        if g.name not in self._tables:
            D = g.delta_max or self.raw["delta_max"] or default_delta_max(g.source)
            self._tables[g.name] = build_penalty_table(g.source, self.loss, delta_max=int(D))
        return self._tables[g.name]

    def counts(self, N: int | None = None) -> list[int]:
        fill = [g for g in self.groups if g.count == FILL]
        if N is None:
            if fill:
                N = int(self.raw["N"])
            else:
                return [int(g.count) for g in self.groups]
        left = N
        out = []
        for g in self.groups:
            if g.count == FILL:
                out.append(None)
            else:
                k = min(int(g.count), left)
                out.append(k)
                left -= k
        if fill:
            out[self.groups.index(fill[0])] = left
        elif left:
            raise ConfigError(f"fleet groups hold {N - left} arms; cannot make N={N} without a 'fill' group")
        return out

    def fleet(self, N: int | None = None, gamma: int = 1) -> Fleet:
        counts = self.counts(N)
        arms, names, classes = [], [], []
        for g, k in zip(self.groups, counts):
            k *= gamma
            if k == 0:
                continue
            arm = Arm(g.source, self.table(g))
            start = len(arms)
            arms += [arm] * k
            names += [g.name] * k
            classes.append((g.name, arm, list(range(start, start + k))))
        if not arms:
            raise ConfigError("fleet is empty")
        if len(arms) > int(self.raw["max_arms"]):
            raise ConfigError(f"fleet of {len(arms)} arms exceeds max_arms={self.raw['max_arms']}")
        return Fleet(arms, names, classes, int(self.raw["M"]) * gamma)

    def resolved(self) -> dict:
        """Fully inlined configuration, enough to replay a run."""
        doc = copy.deepcopy(self.raw)
        doc["groups"] = [{"name": g.name, "count": g.count, "delta_max": self.table(g).delta_max, "source": g.doc}
                         for g in self.groups]
        doc["loss"] = self.loss.to_dict()
        return doc


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _read_ref(ref, base: Path) -> dict:
    if isinstance(ref, dict):
        return ref
    if isinstance(ref, str):
        path = Path(ref)
        if not path.is_absolute():
            path = base / path
        if not path.exists():
            raise ConfigError(f"referenced file not found: {path}")
        with open(path) as fh:
            return json.load(fh)
    raise ConfigError(f"expected an inline object or a file path, got {ref!r}")


def from_dict(doc: dict, base: Path | str = ".") -> ExperimentConfig:
    base = Path(base)
    unknown = set(doc) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    raw = _merge(DEFAULTS, doc)
    if "groups" in doc:
        raw["groups"] = doc["groups"]
    loss = SAFETY_LOSS if raw["loss"] is None else loss_from_dict(_read_ref(raw["loss"], base))
    groups = []
    seen = set()
    for i, gd in enumerate(raw["groups"]):
        name = gd.get("name", f"group{i}")
        if name in seen:
            raise ConfigError(f"duplicate group name {name!r}")
        seen.add(name)
        count = gd.get("count", 1)
        if count != FILL and (not isinstance(count, int) or count < 0):
            raise ConfigError(f"group {name!r}: count must be a non-negative integer or 'fill'")
        sdoc = _read_ref(gd["source"], base)
        try:
            src = source_from_dict(sdoc)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"group {name!r}: bad source: {exc}") from exc
        groups.append(Group(name, src, count, gd.get("delta_max"), sdoc))
    if sum(g.count == FILL for g in groups) > 1:
        raise ConfigError("at most one group may use count 'fill'")
    if not groups:
        raise ConfigError("no fleet groups")
    for p in raw["policies"]:
        if p not in POLICIES:
            raise ConfigError(f"unknown policy {p!r}")
    if not raw["n_sweep"] or not raw["gammas"] or not raw["policies"]:
        raise ConfigError("n_sweep, gammas and policies must be non-empty")
    if any(int(g) != g or g < 1 for g in raw["gammas"]):
        raise ConfigError("gammas must be integers >= 1")
    if int(raw["M"]) < 1:
        raise ConfigError("M must be >= 1")
    if int(raw["reps"]) < 1 or int(raw["horizon"]) < 1:
        raise ConfigError("reps and horizon must be positive")
    return ExperimentConfig(raw, groups, loss, base)


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    doc: dict = {}
    base = Path(".")
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            doc = json.load(fh)
        base = path.parent
    for k, v in (overrides or {}).items():
        if v is not None:
            doc[k] = v
    return from_dict(doc, base)
