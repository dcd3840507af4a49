"""Synthetic 2D multi-modal imitation benchmarks.

Three families: "avoiding" (several homotopy-distinct corridors around
circular obstacles), "crossing" (one state, two opposite unit actions; the
minimal mode-averaging failure case), and "twotask" (two goals reachable
in either order). States are 2D positions, actions are per-step
displacements, everything normalized to [-1, 1].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import SchemaError

Array = np.ndarray

DATASET_SCHEMA = "vfp-dataset-v1"

Circle = tuple[float, float, float]  # cx, cy, radius


@dataclass
class Env2D:
    kind: str                      # avoiding | crossing | twotask
    obstacles: tuple[Circle, ...]
    start: tuple[float, float]
    start_radius: float
    goals: tuple[Circle, ...]
    horizon: int
    max_step: float

    def __post_init__(self):
        if not self.goals:
            raise ValueError("environment needs at least one goal")
        for cx, cy, r in self.obstacles:
            if np.hypot(self.start[0] - cx, self.start[1] - cy) <= r + self.start_radius:
                raise ValueError("start region intersects an obstacle")

    def segment_collides(self, p: Array, q: Array) -> bool:
        """True if the segment p->q comes within any obstacle radius."""
        p = np.asarray(p, dtype=np.float64)
        q = np.asarray(q, dtype=np.float64)
        d = q - p
        dd = float(d @ d)
        for cx, cy, r in self.obstacles:
            c = np.array([cx, cy])
            if dd == 0.0:
                closest = p
            else:
                s = float(np.clip((c - p) @ d / dd, 0.0, 1.0))
                closest = p + s * d
            if np.hypot(*(closest - c)) < r:
                return True
        return False

    def in_goal(self, p: Array, goal_index: int) -> bool:
        cx, cy, r = self.goals[goal_index]
        return np.hypot(p[0] - cx, p[1] - cy) <= r

    def goals_hit(self, p: Array) -> list[int]:
        return [i for i in range(len(self.goals)) if self.in_goal(p, i)]

    def is_success(self, visited: set[int]) -> bool:
        if self.kind == "twotask":
            return len(visited) == len(self.goals)
        if self.kind == "crossing":
            return len(visited) > 0
        return 0 in visited  # avoiding: reach the finish region


@dataclass
class Trajectory:
    states: Array          # (T+1, 2); states[k+1] == states[k] + actions[k]
    actions: Array         # (T, 2)
    mode: int | None = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        if self.states.shape[0] != self.actions.shape[0] + 1:
            raise ValueError("need exactly one more state than actions")

    def __len__(self) -> int:
        return self.actions.shape[0]


@dataclass
class Dataset:
    trajectories: list[Trajectory]
    state_dim: int = 2
    action_dim: int = 2

    def flat_states(self) -> Array:
        return np.concatenate([t.states[:-1] for t in self.trajectories])

    def flat_actions(self) -> Array:
        return np.concatenate([t.actions for t in self.trajectories])

    def flat_modes(self) -> Array | None:
        if any(t.mode is None for t in self.trajectories):
            return None
        return np.concatenate([
            np.full(len(t), t.mode, dtype=np.int64) for t in self.trajectories
        ])

    @property
    def n_modes(self) -> int:
        modes = {t.mode for t in self.trajectories if t.mode is not None}
        return len(modes)

    def save_jsonl(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps({"schema": DATASET_SCHEMA,
                                 "state_dim": self.state_dim,
                                 "action_dim": self.action_dim}) + "\n")
            for i, traj in enumerate(self.trajectories):
                for k in range(len(traj)):
                    fh.write(json.dumps({
                        "traj": i,
                        "t_index": k,
                        "state": traj.states[k].tolist(),
                        "action": traj.actions[k].tolist(),
                        "mode": traj.mode,
                    }) + "\n")

    @classmethod
    def load_jsonl(cls, path: str) -> "Dataset":
        with open(path) as fh:
            header = json.loads(fh.readline())
            if header.get("schema") != DATASET_SCHEMA:
                raise SchemaError(
                    f"expected dataset schema {DATASET_SCHEMA!r}, "
                    f"got {header.get('schema')!r}")
            rows: dict[int, list[dict]] = {}
            for line in fh:
                rec = json.loads(line)
                rows.setdefault(rec["traj"], []).append(rec)
        trajectories = []
        for tid in sorted(rows):
            recs = sorted(rows[tid], key=lambda r: r["t_index"])
            states = [np.asarray(r["state"], dtype=np.float64) for r in recs]
            actions = [np.asarray(r["action"], dtype=np.float64) for r in recs]
            states.append(states[-1] + actions[-1])
            trajectories.append(Trajectory(
                states=np.stack(states),
                actions=np.stack(actions),
                mode=recs[0]["mode"],
            ))
        return cls(trajectories,
                   state_dim=header["state_dim"],
                   action_dim=header["action_dim"])


# ---------------------------------------------------------------------------
# demonstration generators
# ---------------------------------------------------------------------------

def _resample_polyline(waypoints: Array, n_steps: int) -> Array:
    """n_steps+1 points equally spaced by arclength along the polyline."""
    waypoints = np.asarray(waypoints, dtype=np.float64)
    seg = np.diff(waypoints, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    targets = np.linspace(0.0, cum[-1], n_steps + 1)
    points = np.empty((n_steps + 1, 2))
    for i, s in enumerate(targets):
        j = min(np.searchsorted(cum, s, side="right") - 1, len(seg) - 1)
        frac = (s - cum[j]) / seg_len[j] if seg_len[j] > 0 else 0.0
        points[i] = waypoints[j] + frac * seg[j]
    return points


def _demo_from_positions(positions: Array, mode: int, rest_steps: int = 0) -> Trajectory:
    actions = np.diff(positions, axis=0)
    if rest_steps:
        # zero-action padding at the goal teaches the policy to stop there
        actions = np.concatenate([actions, np.zeros((rest_steps, 2))])
    # rebuild states by sequential addition so states[k+1] == states[k] + a[k]
    states = [positions[0]]
    for a in actions:
        states.append(states[-1] + a)
    return Trajectory(states=np.stack(states), actions=actions, mode=mode)


def validate_demo(env: Env2D, traj: Trajectory) -> None:
    """Generator self-check: collision-free, in-goal terminal, bounded steps."""
    visited: set[int] = set()
    for k in range(len(traj)):
        if env.segment_collides(traj.states[k], traj.states[k + 1]):
            raise ValueError(f"demonstration collides at step {k}")
        visited.update(env.goals_hit(traj.states[k + 1]))
    if np.any(np.linalg.norm(traj.actions, axis=1) > env.max_step + 1e-12):
        raise ValueError("demonstration action exceeds the step bound")
    if not env.is_success(visited):
        raise ValueError("demonstration does not reach the goal")


def _noisy_demo(env: Env2D, base: Array, mode: int, noise: float,
                rng: np.random.Generator, tries: int = 25,
                rest_steps: int = 2) -> Trajectory:
    for _ in range(tries):
        positions = base.copy()
        if noise > 0:
            positions[1:-1] += rng.normal(0.0, noise, positions[1:-1].shape)
        traj = _demo_from_positions(positions, mode, rest_steps=rest_steps)
        try:
            validate_demo(env, traj)
        except ValueError:
            continue
        return traj
    raise ValueError("could not draw a collision-free demonstration; "
                     "corridors are too narrow for the noise level")


def avoiding_env(n_modes: int = 4) -> tuple[Env2D, list[Array]]:
    """Corridor geometry plus the canonical (noise-free) path per mode."""
    if n_modes < 2:
        raise ValueError("avoiding needs at least two modes")
    span = 1.32
    lanes = np.linspace(-span / 2, span / 2, n_modes)
    gap = span / (n_modes - 1)
    radius = 0.32 * gap
    obstacles = tuple((0.0, float((lanes[i] + lanes[i + 1]) / 2), float(radius))
                      for i in range(n_modes - 1))
    env = Env2D(
        kind="avoiding",
        obstacles=obstacles,
        start=(-0.85, 0.0),
        start_radius=0.03,
        goals=((0.85, 0.0, 0.05),),
        horizon=60,
        max_step=0.15,
    )
    paths = [np.array([[-0.85, 0.0], [-0.35, y], [0.35, y], [0.85, 0.0]])
             for y in lanes]
    return env, paths


def gen_avoiding(n_modes: int = 4, n_per_mode: int = 25, noise: float = 0.02,
                 seed: int = 0, n_steps: int = 26) -> tuple[Env2D, Dataset]:
    env, paths = avoiding_env(n_modes)
    gap = 1.32 / (n_modes - 1)
    corridor = gap / 2 - 0.32 * gap
    if noise > 0 and corridor <= 3 * noise:
        raise ValueError(
            f"corridor half-width {corridor:.3f} is narrower than 3*noise")
    rng = np.random.default_rng(seed)
    trajectories = []
    for mode, path in enumerate(paths):
        base = _resample_polyline(path, n_steps)
        for _ in range(n_per_mode):
            trajectories.append(_noisy_demo(env, base, mode, noise, rng))
    return env, Dataset(trajectories)


def crossing_env() -> Env2D:
    return Env2D(
        kind="crossing",
        obstacles=(),
        start=(0.0, 0.0),
        start_radius=0.0,
        goals=((1.0, 0.0, 0.05), (-1.0, 0.0, 0.05)),
        horizon=1,
        max_step=2.0,
    )


def gen_crossing(seed: int = 0, n_trajs: int = 200) -> tuple[Env2D, Dataset]:
    env = crossing_env()
    rng = np.random.default_rng(seed)
    trajectories = []
    for _ in range(n_trajs):
        mode = int(rng.integers(0, 2))
        a1 = np.array([1.0, 0.0]) if mode == 0 else np.array([-1.0, 0.0])
        trajectories.append(Trajectory(
            states=np.stack([np.zeros(2), a1]),
            actions=a1[None, :],
            mode=mode,
        ))
    return env, Dataset(trajectories)


def twotask_env() -> tuple[Env2D, list[Array]]:
    env = Env2D(
        kind="twotask",
        obstacles=(),
        start=(0.0, -0.7),
        start_radius=0.03,
        goals=((-0.55, 0.45, 0.05), (0.55, 0.45, 0.05)),
        horizon=70,
        max_step=0.15,
    )
    a = np.array(env.goals[0][:2])
    b = np.array(env.goals[1][:2])
    start = np.array(env.start)
    paths = [np.stack([start, a, b]), np.stack([start, b, a])]
    return env, paths


def gen_twotask(seed: int = 0, n_per_mode: int = 25,
                noise: float = 0.02, n_steps: int = 30) -> tuple[Env2D, Dataset]:
    env, paths = twotask_env()
    rng = np.random.default_rng(seed)
    trajectories = []
    for mode, path in enumerate(paths):
        base = _resample_polyline(path, n_steps)
        for _ in range(n_per_mode):
            trajectories.append(_noisy_demo(env, base, mode, noise, rng))
    return env, Dataset(trajectories)


GENERATORS: dict[str, Callable[..., tuple[Env2D, Dataset]]] = {
    "avoiding": gen_avoiding,
    "crossing": gen_crossing,
    "twotask": gen_twotask,
}


# ---------------------------------------------------------------------------
# rollouts and metrics
# ---------------------------------------------------------------------------

@dataclass
class RolloutResult:
    states: Array
    success: bool
    collided: bool
    mode: int | None
    steps: int
    clipped: bool = False


def frechet_distance(p: Array, q: Array) -> float:
    """Discrete Fréchet distance between two point sequences."""
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    n, m = p.shape[0], q.shape[0]
    dist = np.linalg.norm(p[:, None, :] - q[None, :, :], axis=2)
    table = np.empty((n, m))
    table[0, 0] = dist[0, 0]
    for i in range(1, n):
        table[i, 0] = max(table[i - 1, 0], dist[i, 0])
    for j in range(1, m):
        table[0, j] = max(table[0, j - 1], dist[0, j])
    for i in range(1, n):
        for j in range(1, m):
            reach = min(table[i - 1, j], table[i, j - 1], table[i - 1, j - 1])
            table[i, j] = max(reach, dist[i, j])
    return float(table[-1, -1])


def mode_medoids(dataset: Dataset) -> dict[int, Array]:
    """Per mode, the member trajectory minimizing summed Fréchet distance."""
    by_mode: dict[int, list[Array]] = {}
    for traj in dataset.trajectories:
        if traj.mode is None:
            raise ValueError("mode medoids require labeled trajectories")
        by_mode.setdefault(traj.mode, []).append(traj.states)
    medoids = {}
    for mode, members in by_mode.items():
        if len(members) == 1:
            medoids[mode] = members[0]
            continue
        dists = np.zeros((len(members), len(members)))
        for i in range(len(members)):
            for j in range(i + 1, len(members)):
                dists[i, j] = dists[j, i] = frechet_distance(members[i], members[j])
        medoids[mode] = members[int(np.argmin(dists.sum(axis=1)))]
    return medoids


def assign_mode(states: Array, mode_refs: dict[int, Array]) -> int:
    return min(mode_refs, key=lambda m: frechet_distance(states, mode_refs[m]))


def rollout(policy: Callable[[Array, np.random.Generator], Array], env: Env2D,
            rng: np.random.Generator, mode_refs: dict[int, Array] | None = None,
            horizon: int | None = None) -> RolloutResult:
    """Run a policy closure until goal, collision, or the horizon."""
    pos = np.asarray(env.start, dtype=np.float64)
    states = [pos]
    visited: set[int] = set()
    collided = False
    clipped = False
    steps = 0
    for _ in range(horizon if horizon is not None else env.horizon):
        action = np.asarray(policy(pos, rng), dtype=np.float64)
        norm = float(np.linalg.norm(action))
        if norm > env.max_step:
            action = action * (env.max_step / norm)
            clipped = True
        new_pos = pos + action
        steps += 1
        if env.segment_collides(pos, new_pos):
            states.append(new_pos)
            collided = True
            break
        pos = new_pos
        states.append(pos)
        visited.update(env.goals_hit(pos))
        if env.is_success(visited):
            break
    traj = np.stack(states)
    success = env.is_success(visited) and not collided
    mode = assign_mode(traj, mode_refs) if mode_refs else None
    return RolloutResult(states=traj, success=success, collided=collided,
                         mode=mode, steps=steps, clipped=clipped)


def evaluate(policy, env: Env2D, n_episodes: int, seeds: Sequence[int],
             mode_refs: dict[int, Array] | None = None,
             n_modes: int | None = None) -> dict:
    """Success, mode coverage/entropy, and collision rate over seeded episodes."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    per_seed = []
    mode_counts: dict[int, int] = {}
    collisions = 0
    rollouts = []
    for seed in seeds:
        streams = np.random.SeedSequence(seed).spawn(n_episodes)
        wins = 0
        for stream in streams:
            result = rollout(policy, env, np.random.Generator(np.random.PCG64(stream)),
                             mode_refs=mode_refs)
            rollouts.append(result)
            if result.success:
                wins += 1
                if result.mode is not None:
                    mode_counts[result.mode] = mode_counts.get(result.mode, 0) + 1
            if result.collided:
                collisions += 1
        per_seed.append(wins / n_episodes)
    total = n_episodes * len(seeds)
    n_modes = n_modes or (len(mode_refs) if mode_refs else 1)
    coverage = len(mode_counts) / n_modes if n_modes else 0.0
    counts = np.array(list(mode_counts.values()), dtype=np.float64)
    if counts.size:
        probs = counts / counts.sum()
        entropy = float(-(probs * np.log(probs)).sum())
    else:
        entropy = 0.0
    return {
        "success_rate": float(np.mean(per_seed)),
        "success_std": float(np.std(per_seed)),
        "per_seed_success": per_seed,
        "mode_coverage": coverage,
        "mode_entropy": entropy,
        "collision_rate": collisions / total,
        "episodes": total,
        "rollouts": rollouts,
    }
