"""Tabular MDPs, policies, occupancy measures and gridworld builders.

Occupancies are normalized: rho sums to one, i.e. the discounted visitation
scaled by (1 - gamma).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.special import logsumexp

ROW_TOL = 1e-12

# (d_row, d_col) for up, down, left, right, noop
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1), (0, 0))
ACTION_NAMES = ("up", "down", "left", "right", "noop")


def _frozen(a, dtype=np.float64) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class TabularMdp:
    transition: np.ndarray
    initial_dist: np.ndarray
    gamma: float
    name: str = "mdp"

    def __post_init__(self):
        p = _frozen(self.transition)
        mu = _frozen(self.initial_dist)
        if p.ndim != 3 or p.shape[0] != p.shape[2] or p.shape[0] == 0 or p.shape[1] == 0:
            raise ValueError(f"transition must have shape [S][A][S], got {p.shape}")
        if mu.shape != (p.shape[0],):
            raise ValueError("initial_dist length must equal n_states")
        if (p < 0).any() or np.abs(p.sum(axis=2) - 1.0).max() > ROW_TOL:
            raise ValueError("transition rows must be nonnegative and sum to 1")
        if (mu < 0).any() or abs(mu.sum() - 1.0) > ROW_TOL:
            raise ValueError("initial_dist must be nonnegative and sum to 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "initial_dist", mu)
        object.__setattr__(self, "gamma", float(self.gamma))
        flat = p.reshape(-1, p.shape[0])
        rows, cols = np.nonzero(flat)
        row_ptr = np.zeros(flat.shape[0] + 1, dtype=np.int64)
        np.add.at(row_ptr, rows + 1, 1)
        object.__setattr__(self, "_csr", (
            _frozen(np.cumsum(row_ptr), np.int64),
            _frozen(cols, np.int64),
            _frozen(flat[rows, cols]),
        ))
        object.__setattr__(self, "_reachable", _frozen(self._reach(), bool))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def csr(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(row_ptr, cols, probs) with one row per (s, a) pair."""
        return self._csr

    @property
    def reachable(self) -> np.ndarray:
        """States reachable from the support of mu0 under some action sequence."""
        return self._reachable

    def _reach(self) -> np.ndarray:
        adj = self.transition.max(axis=1) > 0
        seen = self.initial_dist > 0
        frontier = seen.copy()
        while frontier.any():
            nxt = adj[frontier].any(axis=0) & ~seen
            seen |= nxt
            frontier = nxt
        return seen


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    """pi(a|s). Pass ``log_probs`` for Boltzmann policies whose smallest
    probabilities underflow; KL and entropy are then computed in log space."""

    probs: np.ndarray = None
    log_probs: np.ndarray = None

    def __post_init__(self):
        if self.log_probs is not None:
            lp = _frozen(self.log_probs)
            if np.isnan(lp).any() or (lp > 1e-12).any():
                raise ValueError("log_probs must be <= 0 and not NaN")
            p = _frozen(np.exp(lp))
        elif self.probs is not None:
            p = _frozen(self.probs)
            with np.errstate(divide="ignore", invalid="ignore"):
                lp = _frozen(np.log(p))
        else:
            raise ValueError("probs or log_probs required")
        if p.ndim != 2 or (p < 0).any() or np.abs(p.sum(axis=1) - 1.0).max() > ROW_TOL:
            raise ValueError("policy rows must be nonnegative and sum to 1")
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "log_probs", lp)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "TabularPolicy":
        return cls(log_probs=np.full((n_states, n_actions), -math.log(n_actions)))

    def greedy(self) -> np.ndarray:
        """argmax per state; numpy picks the lowest index on ties."""
        return np.argmax(self.log_probs, axis=1)


@dataclass(frozen=True, eq=False)
class Occupancy:
    rho: np.ndarray

    def __post_init__(self):
        rho = _frozen(self.rho)
        if rho.ndim != 2 or (rho < 0).any() or abs(rho.sum() - 1.0) > 1e-10:
            raise ValueError("occupancy must be a nonnegative [S][A] table summing to 1")
        object.__setattr__(self, "rho", rho)

    @property
    def state_marginal(self) -> np.ndarray:
        return self.rho.sum(axis=1)


def policy_matrix(mdp: TabularMdp, policy: TabularPolicy) -> np.ndarray:
    """State-to-state kernel P_pi[s, s']."""
    return np.einsum("sa,sat->st", policy.probs, mdp.transition)


def state_occupancy(mdp: TabularMdp, policy: TabularPolicy, method: str = "solve") -> np.ndarray:
    """Normalized discounted state visitation d with d = (1-g) mu0 + g P_pi^T d."""
    g = mdp.gamma
    d = np.zeros(mdp.n_states)
    live = mdp.reachable
    if method == "solve":
        ppi = policy_matrix(mdp, policy)[np.ix_(live, live)]
        a = np.eye(ppi.shape[0]) - g * ppi.T
        d[live] = np.linalg.solve(a, (1.0 - g) * mdp.initial_dist[live])
    elif method == "power":
        ppi = policy_matrix(mdp, policy)
        src = (1.0 - g) * mdp.initial_dist
        for _ in range(10**7):
            nxt = src + g * (ppi.T @ d)
            if np.abs(nxt - d).max() <= 1e-12 * (1.0 - g):
                d = nxt
                break
            d = nxt
    else:
        raise ValueError(f"unknown occupancy method {method!r}")
    return np.maximum(d, 0.0)


def compute_occupancy(mdp: TabularMdp, policy: TabularPolicy, method: str | None = None) -> Occupancy:
    if method is None:
        method = "solve" if mdp.n_states * mdp.n_actions <= 10**4 else "power"
    d = state_occupancy(mdp, policy, method)
    rho = d[:, None] * policy.probs
    return Occupancy(rho / rho.sum())


def policy_from_occupancy(occ: Occupancy) -> TabularPolicy:
    rho = occ.rho
    marg = rho.sum(axis=1, keepdims=True)
    n_a = rho.shape[1]
    safe = np.where(marg > 0, marg, 1.0)
    probs = np.where(marg > 0, rho / safe, 1.0 / n_a)
    return TabularPolicy(probs / probs.sum(axis=1, keepdims=True))


def _policy_kl_per_state(pi_new: TabularPolicy, pi_old: TabularPolicy) -> np.ndarray:
    p = pi_new.probs
    live = p > 0
    if (live & np.isneginf(pi_old.log_probs)).any():
        return None
    diff = np.where(live, pi_new.log_probs - np.where(live, pi_old.log_probs, 0.0), 0.0)
    return (p * diff).sum(axis=1)


def expected_policy_kl(mdp: TabularMdp, pi_new: TabularPolicy, pi_old: TabularPolicy) -> float:
    """E_{s ~ rho_new}[KL(pi_new(.|s) || pi_old(.|s))]; inf if pi_new is not
    absolutely continuous w.r.t. pi_old."""
    if pi_new is pi_old or np.array_equal(pi_new.log_probs, pi_old.log_probs):
        return 0.0
    per_state = _policy_kl_per_state(pi_new, pi_old)
    if per_state is None:
        return math.inf
    d = state_occupancy(mdp, pi_new)
    return max(0.0, float(d @ per_state))


def entropy_of(mdp: TabularMdp, policy: TabularPolicy) -> float:
    """Discounted causal entropy under the normalized occupancy."""
    p = policy.probs
    h = -np.where(p > 0, p * np.where(p > 0, policy.log_probs, 0.0), 0.0).sum(axis=1)
    return float(state_occupancy(mdp, policy) @ h)


def boltzmann_policy(q: np.ndarray) -> TabularPolicy:
    # shift by the row max first so large values keep full relative precision
    z = q - q.max(axis=1, keepdims=True)
    return TabularPolicy(log_probs=np.minimum(z - logsumexp(z, axis=1, keepdims=True), 0.0))


# ---------------------------------------------------------------- gridworlds

Cell = tuple[int, int]


@dataclass(frozen=True)
class GridworldSpec:
    width: int
    height: int
    walls: frozenset = frozenset()
    goal_cells: frozenset = frozenset()
    start_cells: frozenset = frozenset({(0, 0)})
    slip_prob: float = 0.1
    n_actions: int = 5
    terminal_self_loop: bool = True
    gamma: float = 0.99
    name: str = "gridworld"

    def __post_init__(self):
        for key in ("walls", "goal_cells", "start_cells"):
            object.__setattr__(self, key, frozenset(tuple(map(int, c)) for c in getattr(self, key)))
        if self.width < 1 or self.height < 1:
            raise ValueError("width and height must be positive")
        if self.n_actions not in (4, 5):
            raise ValueError("n_actions must be 4 (cardinal) or 5 (cardinal + noop)")
        if not 0.0 <= self.slip_prob < 1.0:
            raise ValueError("slip_prob must lie in [0, 1)")
        if self.walls & self.goal_cells:
            raise ValueError("goal and wall cells overlap")
        for c in self.walls | self.goal_cells | self.start_cells:
            if not (0 <= c[0] < self.height and 0 <= c[1] < self.width):
                raise ValueError(f"cell {c} outside the grid")
        if not (self.start_cells - self.walls):
            raise ValueError("no non-wall start cell: reachable set is empty")

    def state(self, cell: Cell) -> int:
        """Row-major index."""
        return cell[0] * self.width + cell[1]

    def cell(self, state: int) -> Cell:
        return divmod(int(state), self.width)

    def mirrored(self) -> "GridworldSpec":
        """Left-right mirror image of the layout."""
        flip = lambda cells: frozenset((r, self.width - 1 - c) for r, c in cells)  # noqa: E731
        return GridworldSpec(
            self.width, self.height, flip(self.walls), flip(self.goal_cells), flip(self.start_cells),
            self.slip_prob, self.n_actions, self.terminal_self_loop, self.gamma, self.name + "-flipped",
        )

    def mirror_permutations(self) -> tuple[np.ndarray, np.ndarray]:
        """(state_perm, action_perm) mapping indices to their mirror images."""
        sp = np.array([self.state((r, self.width - 1 - c)) for r, c in map(self.cell, range(self.width * self.height))])
        ap = np.array([0, 1, 3, 2, 4][: self.n_actions])
        return sp, ap


def build_gridworld(spec: GridworldSpec) -> TabularMdp:
    n_s = spec.width * spec.height
    n_a = spec.n_actions
    p = np.zeros((n_s, n_a, n_s))
    for s in range(n_s):
        cell = spec.cell(s)
        if cell in spec.walls or (spec.terminal_self_loop and cell in spec.goal_cells):
            p[s, :, s] = 1.0
            continue
        for a in range(n_a):
            for b in range(n_a):
                if n_a == 1:
                    w = 1.0
                elif a == b:
                    w = 1.0 - spec.slip_prob
                else:
                    w = spec.slip_prob / (n_a - 1)
                if w == 0.0:
                    continue
                r, c = cell[0] + MOVES[b][0], cell[1] + MOVES[b][1]
                if not (0 <= r < spec.height and 0 <= c < spec.width) or (r, c) in spec.walls:
                    r, c = cell
                p[s, a, spec.state((r, c))] += w
    mu = np.zeros(n_s)
    starts = sorted(spec.start_cells - spec.walls)
    for c in starts:
        mu[spec.state(c)] = 1.0 / len(starts)
    return TabularMdp(p, mu, spec.gamma, spec.name)


def corridor(n_actions: int = 2, gamma: float = 0.9) -> TabularMdp:
    """1x2 corridor with deterministic left/right moves."""
    p = np.zeros((2, n_actions, 2))
    p[:, 0, 0] = 1.0
    p[:, 1, 1] = 1.0
    return TabularMdp(p, np.array([1.0, 0.0]), gamma, "corridor")


# ------------------------------------------------------------- environments

@dataclass(frozen=True)
class ExpertSpec:
    """Soft-optimal expert for a goal reward with small per-action costs.

    The reward is ``scale * (goal_reward * [s in goals] - action_costs[a])``
    plus seeded uniform noise of width ``noise * scale``."""

    goal_reward: float = 1.0
    action_costs: tuple = (0.0, 0.01, 0.02, 0.03, 0.05)
    scale: float = 5.0
    noise: float = 0.02


@dataclass(frozen=True, eq=False)
class Environment:
    name: str
    mdp: TabularMdp
    grid: GridworldSpec | None = None
    expert: ExpertSpec | None = None
    expert_policy: np.ndarray | None = None
    raw: dict = field(default_factory=dict)

    def expert_reward(self, seed: int = 0) -> np.ndarray:
        e = self.expert
        if self.grid is None or e is None:
            raise ValueError(f"environment {self.name!r} has no reward-defined expert")
        n_s, n_a = self.mdp.n_states, self.mdp.n_actions
        goal = np.zeros(n_s)
        for c in self.grid.goal_cells:
            goal[self.grid.state(c)] = 1.0
        costs = np.asarray(e.action_costs[:n_a], dtype=float)
        r = e.goal_reward * goal[:, None] - costs[None, :]
        rng = np.random.default_rng(seed)
        r = r + e.noise * rng.uniform(-0.5, 0.5, size=r.shape)
        return e.scale * r

    def mirrored(self) -> "Environment":
        if self.grid is None:
            raise ValueError("only gridworlds can be mirrored")
        g = self.grid.mirrored()
        return Environment(g.name, build_gridworld(g), g, self.expert, None, self.raw)


def _cells(xs: Iterable) -> frozenset:
    return frozenset(tuple(int(v) for v in c) for c in xs)


GRID_KEYS = {"kind", "name", "width", "height", "walls", "goals", "start", "slip", "actions",
             "terminal_self_loop", "gamma", "expert"}
TABULAR_KEYS = {"kind", "name", "transition", "initial_dist", "gamma", "expert_policy"}
EXPERT_KEYS = {"goal_reward", "action_costs", "scale", "noise"}


def environment_from_dict(d: dict) -> Environment:
    kind = d.get("kind", "gridworld")
    allowed = GRID_KEYS if kind == "gridworld" else TABULAR_KEYS
    if kind not in ("gridworld", "tabular"):
        raise ValueError(f"env key 'kind': unknown value {kind!r}")
    for key in d:
        if key not in allowed:
            raise ValueError(f"env key {key!r} not recognized for kind {kind!r}")
    name = d.get("name", kind)
    if kind == "tabular":
        mdp = TabularMdp(np.asarray(d["transition"], float), np.asarray(d["initial_dist"], float),
                         float(d["gamma"]), name)
        pol = np.asarray(d["expert_policy"], float)
        TabularPolicy(pol)
        return Environment(name, mdp, expert_policy=pol, raw=d)
    spec = GridworldSpec(
        width=int(d["width"]), height=int(d["height"]), walls=_cells(d.get("walls", [])),
        goal_cells=_cells(d.get("goals", [])), start_cells=_cells(d.get("start", [[0, 0]])),
        slip_prob=float(d.get("slip", 0.1)), n_actions=int(d.get("actions", 5)),
        terminal_self_loop=bool(d.get("terminal_self_loop", True)), gamma=float(d.get("gamma", 0.99)),
        name=name,
    )
    ex = d.get("expert", {})
    for key in ex:
        if key not in EXPERT_KEYS:
            raise ValueError(f"env key 'expert.{key}' not recognized")
    expert = ExpertSpec(**{k: (tuple(v) if k == "action_costs" else float(v)) for k, v in ex.items()})
    return Environment(name, build_gridworld(spec), spec, expert, raw=d)


ENV_DIR = Path(__file__).with_name("envs")


def shipped_environments() -> list[str]:
    return sorted(p.stem for p in ENV_DIR.glob("*.json"))


def load_environment(name_or_path: str | Path) -> Environment:
    """Load a shipped environment by name or any JSON file by path."""
    path = Path(name_or_path)
    if not path.suffix:
        path = ENV_DIR / f"{name_or_path}.json"
    if not path.exists():
        raise FileNotFoundError(f"environment {str(name_or_path)!r} not found")
    with open(path) as fh:
        return environment_from_dict(json.load(fh))


def load_gridworld(path: str | Path) -> GridworldSpec:
    env = load_environment(path)
    if env.grid is None:
        raise ValueError(f"{path} is not a gridworld")
    return env.grid
