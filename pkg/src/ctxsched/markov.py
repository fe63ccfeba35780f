"""Finite-state Markov sources: explicit chains, gridworld robots, fixed-path robots."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Hashable, NamedTuple, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

DANGER_LEVELS = ("safe", "cautious", "dangerous")

_MOVES = {"up": (-1, 0), "down": (1, 0), "left": (0, -1), "right": (0, 1)}


class StationaryError(RuntimeError):
    """Power iteration did not settle (periodic or reducible chain)."""


class Csr(NamedTuple):
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    cum: np.ndarray  # per-row cumulative probabilities, last entry of each row forced to 1


def _freeze(state):
    if isinstance(state, list):
        return tuple(_freeze(s) for s in state)
    return state


@dataclass(frozen=True, eq=False)
class MarkovSource:
    """A finite Markov chain whose states map to danger labels.

    Instances hash by identity, which is what arm grouping relies on: arms
    built from the same source object share penalty tables and solver work.
    """

    states: tuple
    transition: np.ndarray
    danger: tuple
    success_prob: float = 1.0
    name: str = ""
    labels: tuple = DANGER_LEVELS
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        n = len(self.states)
        if P.shape != (n, n):
            raise ValueError(f"transition must be {n}x{n}, got {P.shape}")
        if n == 0:
            raise ValueError("source needs at least one state")
        if P.min() < 0 or P.max() > 1:
            raise ValueError("transition entries must lie in [0, 1]")
        if np.abs(P.sum(axis=1) - 1).max() > 1e-12:
            raise ValueError("transition rows must sum to 1")
        if len(self.danger) != n:
            raise ValueError("danger map must cover every state")
        if len(set(self.labels)) != len(self.labels) or not self.labels:
            raise ValueError("danger labels must be distinct and non-empty")
        unknown = set(self.danger) - set(self.labels)
        if unknown:
            raise ValueError(f"danger map uses unknown labels {sorted(unknown)}")
        if not 0 < self.success_prob <= 1:
            raise ValueError("success_prob must lie in (0, 1]")
        P.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "states", tuple(_freeze(s) for s in self.states))
        object.__setattr__(self, "danger", tuple(self.danger))
        object.__setattr__(self, "labels", tuple(self.labels))
        index = {}
        for i, s in enumerate(self.states):
            if s in index:
                raise ValueError(f"duplicate state {s!r}")
            index[s] = i
        self._cache["index"] = index
        self._cache["powers"] = [np.eye(n)]

    @property
    def n_states(self) -> int:
        return len(self.states)

    def index(self, state) -> int:
        """Position of ``state``; integers are accepted as positions already."""
        idx = self._cache["index"]
        key = _freeze(state)
        if key in idx:
            return idx[key]
        if isinstance(state, (int, np.integer)) and not isinstance(state, bool) and 0 <= state < self.n_states:
            return int(state)
        raise KeyError(f"unknown state {state!r} in source {self.name!r}")

    def state_label(self, i: int) -> str:
        s = self.states[i]
        if isinstance(s, tuple) and len(s) == 2 and isinstance(s[0], tuple):
            (r, c), d = s
            return f"({r},{c}),{d}"
        return str(s)

    @property
    def csr(self) -> Csr:
        if "csr" not in self._cache:
            m = csr_matrix(self.transition)
            m.eliminate_zeros()
            m.sort_indices()
            data = m.data.astype(float)
            cum = np.empty_like(data)
            for i in range(self.n_states):
                lo, hi = m.indptr[i], m.indptr[i + 1]
                cum[lo:hi] = np.cumsum(data[lo:hi])
                cum[hi - 1] = 1.0
            self._cache["csr"] = Csr(m.indptr.astype(np.int64), m.indices.astype(np.int64), data, cum)
        return self._cache["csr"]

    def danger_onehot(self, labels: Sequence[str] | None = None) -> np.ndarray:
        """(n_states, |labels|) indicator of each state's danger label."""
        labels = tuple(labels) if labels is not None else self.labels
        col = {lab: j for j, lab in enumerate(labels)}
        missing = set(self.danger) - set(col)
        if missing:
            raise ValueError(f"labels {sorted(missing)} not covered by {labels}")
        out = np.zeros((self.n_states, len(labels)))
        out[np.arange(self.n_states), [col[d] for d in self.danger]] = 1.0
        return out

    def power(self, steps: int) -> np.ndarray:
        if steps < 0:
            raise ValueError("steps must be >= 0")
        powers = self._cache["powers"]
        while len(powers) <= steps:
            nxt = powers[-1] @ self.transition
            nxt.setflags(write=False)
            powers.append(nxt)
        return powers[steps]


def step_distribution(source: MarkovSource, x, steps: int) -> np.ndarray:
    """Distribution of the state ``steps`` slots after being in ``x``."""
    i = source.index(x)
    return source.power(steps)[i]


def _recurrent_classes(P: np.ndarray) -> list[np.ndarray]:
    n, comp = connected_components(csr_matrix(P > 0), directed=True, connection="strong")
    classes = []
    for c in range(n):
        members = np.flatnonzero(comp == c)
        outside = np.ones(P.shape[0], dtype=bool)
        outside[members] = False
        if not (P[np.ix_(members, np.flatnonzero(outside))] > 0).any():
            classes.append(members)
    return classes


def stationary_distribution(source: MarkovSource, tol: float = 1e-13, max_iter: int = 10_000,
                            average: bool = False) -> np.ndarray:
    """Stationary law by power iteration.

    Periodic chains never settle; ``average=True`` iterates the lazy chain
    (P + I)/2 instead, whose iterates are binomially averaged iterates of P
    and share its stationary law.
    """
    P = source.transition
    if len(_recurrent_classes(P)) != 1:
        raise StationaryError(f"source {source.name!r} has more than one recurrent class")
    if average:
        P = 0.5 * (P + np.eye(P.shape[0]))
    pi = _power_iterate(P, tol, max_iter)
    if pi is None:
        raise StationaryError(f"power iteration did not converge in {max_iter} steps")
    return pi


def _power_iterate(P, tol, max_iter):
    # iterate with P^1024 so slowly mixing chains still reach machine precision;
    # convergence is judged on the one-step residual
    A = P.copy()
    for _ in range(10):
        A = A @ A
    pi = np.zeros(P.shape[0])
    pi[0] = 1.0
    for _ in range(max_iter):
        nxt = pi @ A
        nxt /= nxt.sum()
        if np.abs(nxt - pi).max() <= tol and np.abs(nxt @ P - nxt).max() <= tol:
            return nxt
        pi = nxt
    return None


def sample_step(source: MarkovSource, x, rng: np.random.Generator) -> int:
    """Draw the successor index of ``x`` from its transition row."""
    i = source.index(x)
    csr = source.csr
    lo, hi = csr.indptr[i], csr.indptr[i + 1]
    u = rng.random()
    j = lo + int(np.searchsorted(csr.cum[lo:hi], u, side="right"))
    return int(csr.indices[min(j, hi - 1)])


@dataclass(frozen=True)
class GridworldSpec:
    rows: int = 5
    cols: int = 12
    vertical_prob: float = 0.05
    horizontal_prob: float = 0.95
    row_danger: tuple = ("safe", "safe", "safe", "cautious", "dangerous")

    def __post_init__(self):
        if self.rows < 2 or self.cols < 1:
            raise ValueError("gridworld needs rows >= 2 and cols >= 1")
        for pr in (self.vertical_prob, self.horizontal_prob):
            if not 0 <= pr <= 1:
                raise ValueError("move probabilities must lie in [0, 1]")
        if abs(self.vertical_prob + self.horizontal_prob - 1) > 1e-12:
            raise ValueError("vertical_prob + horizontal_prob must equal 1")
        if len(self.row_danger) != self.rows:
            raise ValueError("row_danger needs one label per row")


def _directions(spec: GridworldSpec, row: int) -> list[str]:
    dirs = []
    if row > 1:
        dirs.append("up")
    if row < spec.rows:
        dirs.append("down")
    dirs += ["left", "right"]
    return dirs


def _direction_probs(spec: GridworldSpec, row: int) -> dict[str, float]:
    dirs = _directions(spec, row)
    vertical = [d for d in dirs if d in ("up", "down")]
    probs = {}
    for d in dirs:
        if d in ("up", "down"):
            probs[d] = spec.vertical_prob / len(vertical)
        else:
            probs[d] = spec.horizontal_prob / 2
    return probs


def build_gridworld(spec: GridworldSpec | None = None, success_prob: float = 0.95,
                    name: str = "gridworld") -> MarkovSource:
    """Robot walking a grid; state = ((row, col), direction), rows and cols 1-based.

    The direction held in the state is applied on the next step; the robot then
    draws a fresh direction at its new cell.
    """
    spec = spec or GridworldSpec()
    states = [((r, c), d) for r in range(1, spec.rows + 1) for c in range(1, spec.cols + 1)
              for d in _directions(spec, r)]
    index = {s: i for i, s in enumerate(states)}
    P = np.zeros((len(states), len(states)))
    for i, ((r, c), d) in enumerate(states):
        dr, dc = _MOVES[d]
        nr, nc = r + dr, c + dc
        if not 1 <= nc <= spec.cols:
            nc = c
        if not 1 <= nr <= spec.rows:
            raise ValueError(f"direction {d} leaves the grid from row {r}")
        for nd, pr in _direction_probs(spec, nr).items():
            P[i, index[((nr, nc), nd)]] += pr
    danger = [spec.row_danger[r - 1] for ((r, _c), _d) in states]
    return MarkovSource(tuple(states), P, tuple(danger), success_prob, name)


def build_deterministic_robot(path: Sequence, success_prob: float = 0.95,
                              name: str = "deterministic") -> MarkovSource:
    """Robot cycling along ``path``; states are path indices, always safe."""
    if len(path) == 0:
        raise ValueError("path must be non-empty")
    n = len(path)
    P = np.zeros((n, n))
    P[np.arange(n), (np.arange(n) + 1) % n] = 1.0
    src = MarkovSource(tuple(range(n)), P, ("safe",) * n, success_prob, name)
    src._cache["path"] = [tuple(p) if isinstance(p, (list, tuple)) else p for p in path]
    return src


def default_robot_path(cols: int = 12) -> list[tuple[int, int]]:
    return [(1, c) for c in range(1, cols + 1)]


def source_from_dict(doc: dict[str, Any]) -> MarkovSource:
    """Build a source from its JSON form (gridworld, deterministic or explicit)."""
    kind = doc.get("type")
    p = float(doc.get("success_prob", 0.95))
    name = doc.get("name", kind or "")
    if kind == "gridworld":
        rows = int(doc.get("rows", 5))
        v = float(doc.get("vertical_prob", 0.05))
        default_danger = GridworldSpec().row_danger if rows == 5 else None
        row_danger = tuple(doc.get("row_danger", default_danger or ()))
        spec = GridworldSpec(rows, int(doc.get("cols", 12)), v, float(doc.get("horizontal_prob", 1 - v)),
                             row_danger)
        return build_gridworld(spec, p, name)
    if kind == "deterministic":
        path = doc.get("path") or default_robot_path()
        return build_deterministic_robot([tuple(q) for q in path], p, name)
    if kind == "explicit":
        labels = tuple(doc.get("labels", DANGER_LEVELS))
        danger = list(doc["danger"])
        for d in danger:
            if d not in labels:
                labels = labels + (d,)
        return MarkovSource(tuple(doc["states"]), np.asarray(doc["matrix"], float), tuple(danger), p, name,
                            labels)
    raise ValueError(f"unknown source type {kind!r}")


def source_to_dict(source: MarkovSource) -> dict[str, Any]:
    return {
        "type": "explicit",
        "name": source.name,
        "states": [_jsonable(s) for s in source.states],
        "matrix": source.transition.tolist(),
        "danger": list(source.danger),
        "labels": list(source.labels),
        "success_prob": source.success_prob,
    }


def _jsonable(s: Hashable):
    if isinstance(s, tuple):
        return [_jsonable(v) for v in s]
    return s


def load_source(path) -> MarkovSource:
    with open(path) as fh:
        return source_from_dict(json.load(fh))


def two_state_chain(flip: float, success_prob: float = 1.0) -> MarkovSource:
    """Symmetric binary chain whose danger label is the state itself."""
    P = np.array([[1 - flip, flip], [flip, 1 - flip]])
    return MarkovSource(("0", "1"), P, ("0", "1"), success_prob, f"flip{flip}", labels=("0", "1"))


def random_source(rng: np.random.Generator, n_states: int, success_prob: float | None = None,
                  labels: tuple = DANGER_LEVELS, concentration: float = 0.5) -> MarkovSource:
    """Dense random chain (ergodic and aperiodic) with random danger labels."""
    P = rng.dirichlet(np.full(n_states, concentration), size=n_states)
    P = np.maximum(P, 1e-3)
    P /= P.sum(axis=1, keepdims=True)
    danger = tuple(labels[k] for k in rng.integers(0, len(labels), n_states))
    p = float(rng.uniform(0.5, 1.0)) if success_prob is None else success_prob
    return MarkovSource(tuple(range(n_states)), P, danger, p, f"random{n_states}", labels)
