"""Byte-deterministic SVG rendering of environments, demos, and rollouts.

No plotting library: output must be reproducible byte-for-byte for a
given scene, so elements are emitted with fixed formatting and ordering.
"""

from __future__ import annotations

import numpy as np

from .envs import Dataset, Env2D

Array = np.ndarray

SIZE = 520
MARGIN = 30

# one color per expert index, reused cyclically past ten experts
EXPERT_PALETTE = (
    "#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e",
    "#17becf", "#e377c2", "#bcbd22", "#8c564b", "#7f7f7f",
)


def _to_px(p) -> tuple[float, float]:
    scale = (SIZE - 2 * MARGIN) / 2.0
    x = MARGIN + (p[0] + 1.0) * scale
    y = SIZE - (MARGIN + (p[1] + 1.0) * scale)
    return x, y


def _fmt(value: float) -> str:
    return f"{value:.2f}"


def _polyline(points: Array, color: str, width: float, opacity: float) -> str:
    coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in map(_to_px, points))
    return (f'<polyline points="{coords}" fill="none" stroke="{color}" '
            f'stroke-width="{_fmt(width)}" stroke-opacity="{_fmt(opacity)}"/>')


def _circle(cx: float, cy: float, r: float, fill: str, opacity: float) -> str:
    px, py = _to_px((cx, cy))
    pr = r * (SIZE - 2 * MARGIN) / 2.0
    return (f'<circle cx="{_fmt(px)}" cy="{_fmt(py)}" r="{_fmt(pr)}" '
            f'fill="{fill}" fill-opacity="{_fmt(opacity)}"/>')


def render_svg(env: Env2D, demos: Dataset | None = None,
               rollouts: list[tuple[Array, int | None]] | None = None) -> str:
    """Scene as an SVG string: obstacles, goals, grey demos, colored rollouts.

    Each rollout is (states, expert_index); expert_index selects the stroke
    color (grey when None).
    """
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" '
        f'height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">',
        f'<rect width="{SIZE}" height="{SIZE}" fill="#ffffff"/>',
    ]
    for cx, cy, r in env.obstacles:
        parts.append(_circle(cx, cy, r, "#555555", 0.85))
    for cx, cy, r in env.goals:
        parts.append(_circle(cx, cy, r, "#2ca02c", 0.45))
    sx, sy = _to_px(env.start)
    parts.append(f'<circle cx="{_fmt(sx)}" cy="{_fmt(sy)}" r="4.00" '
                 f'fill="#000000" fill-opacity="1.00"/>')
    if demos is not None:
        for traj in demos.trajectories:
            parts.append(_polyline(traj.states, "#aaaaaa", 1.0, 0.5))
    for states, expert in (rollouts or []):
        color = ("#888888" if expert is None
                 else EXPERT_PALETTE[expert % len(EXPERT_PALETTE)])
        parts.append(_polyline(states, color, 2.0, 0.9))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def save_svg(path: str, env: Env2D, demos: Dataset | None = None,
             rollouts: list[tuple[Array, int | None]] | None = None) -> None:
    with open(path, "w") as fh:
        fh.write(render_svg(env, demos, rollouts))
