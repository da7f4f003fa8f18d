"""Room layouts, line-of-sight tests and billiard mobility.

Coordinates are meters. Outline walls reflect UEs but never block radio
links; interior panels do both.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np

ROOM_NAMES = ("A", "B", "C", "D", "E")

_HIT_EPS = 1e-12
_CORNER_TOL = 1e-9
_MAX_BOUNCES = 64
_MAX_REDRAWS = 16
_CLAMP_INSET = 1e-6


class LayoutError(ValueError):
    """Raised for malformed or geometrically invalid room documents."""


@dataclass(frozen=True)
class RoomLayout:
    name: str
    outline: np.ndarray  # (V, 2), implicitly closed
    panels: np.ndarray  # (P, 2, 2)
    height: float
    cells: np.ndarray  # (M, 3)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def edges(self) -> np.ndarray:
        """Outline edges as (V, 2, 2) segments."""
        return np.stack([self.outline, np.roll(self.outline, -1, axis=0)], axis=1)

    @property
    def walls(self) -> np.ndarray:
        """Every reflecting segment: outline edges followed by panels."""
        return np.concatenate([self.edges, self.panels.reshape(-1, 2, 2)], axis=0)

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        lo = self.outline.min(axis=0)
        hi = self.outline.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    def area(self) -> float:
        x, y = self.outline[:, 0], self.outline[:, 1]
        return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return points_in_polygon(pts, self.outline)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "outline": self.outline.tolist(),
            "panels": self.panels.tolist(),
            "height": self.height,
            "cells": self.cells.tolist(),
        }


@dataclass(frozen=True)
class MobilityConfig:
    n_ues: int = 30
    speed: float = 0.5
    offset_sigma: float = 0.5
    ue_height: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_ues < 1:
            raise ValueError(f"n_ues must be >= 1, got {self.n_ues}")
        if not self.speed > 0:
            raise ValueError(f"speed must be > 0, got {self.speed}")
        if self.offset_sigma < 0:
            raise ValueError(f"offset_sigma must be >= 0, got {self.offset_sigma}")


@dataclass
class Trajectory:
    positions: np.ndarray = field(repr=False)  # (steps, 3)

    def __len__(self) -> int:
        return len(self.positions)


# ---------------------------------------------------------------------------
# primitive predicates

def _cross(ax, ay, bx, by):
    return ax * by - ay * bx


def points_in_polygon(pts: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd containment test; points exactly on an edge are unspecified."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    px, py = pts[:, 0:1], pts[:, 1:2]
    x1, y1 = poly[:, 0], poly[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    crosses = (y1 > py) != (y2 > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
    hits = crosses & (px < xint)
    return (np.count_nonzero(hits, axis=1) % 2) == 1


def point_segment_distance(pts: np.ndarray, segs: np.ndarray) -> np.ndarray:
    """Distances (K, S) from points (K, 2) to segments (S, 2, 2)."""
    pts = np.atleast_2d(pts)
    a = segs[:, 0][None]
    d = (segs[:, 1] - segs[:, 0])[None]
    rel = pts[:, None, :] - a
    L2 = np.einsum("ksi,ksi->ks", d, d)
    u = np.clip(np.einsum("ksi,ksi->ks", rel, d) / L2, 0.0, 1.0)
    closest = a + u[..., None] * d
    return np.linalg.norm(pts[:, None, :] - closest, axis=-1)


def segments_intersect(p1, p2, q1, q2) -> np.ndarray:
    """Closed segment intersection test, broadcasting over leading axes.

    Touching at an endpoint and collinear overlap both count as
    intersecting.
    """
    p1, p2, q1, q2 = (np.asarray(v, dtype=float) for v in (p1, p2, q1, q2))
    rx, ry = p2[..., 0] - p1[..., 0], p2[..., 1] - p1[..., 1]
    sx, sy = q2[..., 0] - q1[..., 0], q2[..., 1] - q1[..., 1]
    o1 = _cross(rx, ry, q1[..., 0] - p1[..., 0], q1[..., 1] - p1[..., 1])
    o2 = _cross(rx, ry, q2[..., 0] - p1[..., 0], q2[..., 1] - p1[..., 1])
    o3 = _cross(sx, sy, p1[..., 0] - q1[..., 0], p1[..., 1] - q1[..., 1])
    o4 = _cross(sx, sy, p2[..., 0] - q1[..., 0], p2[..., 1] - q1[..., 1])
    s1, s2, s3, s4 = np.sign(o1), np.sign(o2), np.sign(o3), np.sign(o4)
    general = (s1 * s2 <= 0) & (s3 * s4 <= 0)
    collinear = (s1 == 0) & (s2 == 0) & (s3 == 0) & (s4 == 0)
    # collinear case: need overlapping extents on both axes
    overlap = (
        (np.maximum(p1[..., 0], p2[..., 0]) >= np.minimum(q1[..., 0], q2[..., 0]))
        & (np.maximum(q1[..., 0], q2[..., 0]) >= np.minimum(p1[..., 0], p2[..., 0]))
        & (np.maximum(p1[..., 1], p2[..., 1]) >= np.minimum(q1[..., 1], q2[..., 1]))
        & (np.maximum(q1[..., 1], q2[..., 1]) >= np.minimum(p1[..., 1], p2[..., 1]))
    )
    return np.where(collinear, overlap, general)


# ---------------------------------------------------------------------------
# line of sight

def has_los(a, b, layout: RoomLayout) -> bool:
    """True iff the floor projection of a-b crosses no interior panel.

    A segment that merely touches a panel endpoint is blocked.
    """
    return bool(los_matrix(np.asarray(a)[None], np.asarray(b)[None], layout.panels)[0, 0])


def los_matrix(src: np.ndarray, dst: np.ndarray, panels: np.ndarray) -> np.ndarray:
    """(S, D) boolean LoS matrix between point sets; only x, y are used."""
    src = np.asarray(src, dtype=float)[:, :2]
    dst = np.asarray(dst, dtype=float)[:, :2]
    if len(panels) == 0:
        return np.ones((len(src), len(dst)), dtype=bool)
    p1 = src[:, None, None, :]
    p2 = dst[None, :, None, :]
    q1 = panels[None, None, :, 0, :]
    q2 = panels[None, None, :, 1, :]
    blocked = segments_intersect(p1, p2, q1, q2).any(axis=-1)
    return ~blocked


# ---------------------------------------------------------------------------
# billiard mobility

def _reflect(v: np.ndarray, seg: np.ndarray) -> np.ndarray:
    d = seg[..., 1, :] - seg[..., 0, :]
    n = np.stack([-d[..., 1], d[..., 0]], axis=-1)
    n = n / np.linalg.norm(n, axis=-1, keepdims=True)
    return v - 2.0 * np.sum(v * n, axis=-1, keepdims=True) * n


def billiard_move(pos: np.ndarray, vel: np.ndarray, walls: np.ndarray):
    """Advance many points one step with specular reflection off ``walls``.

    ``pos`` and ``vel`` are (K, 2). A simultaneous hit on two walls (a
    corner) reverses the velocity. Returns new (pos, vel) arrays.
    """
    pos = np.array(pos, dtype=float)
    vel = np.array(vel, dtype=float)
    rem = np.ones(len(pos))
    active = np.ones(len(pos), dtype=bool)
    a = walls[:, 0]
    e = walls[:, 1] - walls[:, 0]
    for _ in range(_MAX_BOUNCES):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        p, v = pos[idx], vel[idx]
        den = _cross(v[:, None, 0], v[:, None, 1], e[None, :, 0], e[None, :, 1])
        ax = a[None, :, 0] - p[:, None, 0]
        ay = a[None, :, 1] - p[:, None, 1]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            t = _cross(ax, ay, e[None, :, 0], e[None, :, 1]) / den
            u = _cross(ax, ay, v[:, None, 0], v[:, None, 1]) / den
        ok = (np.abs(den) > 1e-15) & (t > _HIT_EPS) & (u >= 0.0) & (u <= 1.0)
        t = np.where(ok, t, np.inf)
        tmin = t.min(axis=1)
        hit = tmin <= rem[idx]

        free = idx[~hit]
        pos[free] += vel[free] * rem[free, None]
        active[free] = False

        hidx = idx[hit]
        if hidx.size == 0:
            continue
        th = tmin[hit]
        pos[hidx] += vel[hidx] * th[:, None]
        rem[hidx] -= th
        th_rows = t[hit]
        n_near = np.count_nonzero(th_rows <= th[:, None] * (1 + _CORNER_TOL) + _CORNER_TOL, axis=1)
        wall = np.argmin(th_rows, axis=1)
        reflected = _reflect(vel[hidx], walls[wall])
        corner = n_near > 1
        reflected[corner] = -vel[hidx][corner]
        vel[hidx] = reflected
    return pos, vel


def billiard_step(pos, vel, layout: RoomLayout):
    """Single-point convenience wrapper around :func:`billiard_move`."""
    new_pos, new_vel = billiard_move(np.asarray(pos, float)[None], np.asarray(vel, float)[None], layout.walls)
    return new_pos[0], new_vel[0]


# ---------------------------------------------------------------------------
# trajectories

def sample_interior(layout: RoomLayout, n: int, rng: np.random.Generator) -> np.ndarray:
    x0, y0, x1, y1 = layout.bbox
    out = np.empty((0, 2))
    for _ in range(1000):
        cand = rng.uniform([x0, y0], [x1, y1], size=(max(2 * n, 16), 2))
        out = np.concatenate([out, cand[layout.contains(cand)]])
        if len(out) >= n:
            return out[:n]
    raise LayoutError(f"room {layout.name!r} has no usable interior")


def _nearest_interior(pts: np.ndarray, anchors: np.ndarray, layout: RoomLayout) -> np.ndarray:
    edges = layout.edges
    a = edges[:, 0][None]
    d = (edges[:, 1] - edges[:, 0])[None]
    u = np.clip(np.einsum("ksi,ksi->ks", pts[:, None] - a, d) / np.einsum("ksi,ksi->ks", d, d), 0, 1)
    closest = a + u[..., None] * d
    dist = np.linalg.norm(pts[:, None] - closest, axis=-1)
    proj = closest[np.arange(len(pts)), dist.argmin(axis=1)]
    inward = anchors - proj
    norm = np.linalg.norm(inward, axis=1, keepdims=True)
    norm[norm == 0] = 1.0
    moved = proj + _CLAMP_INSET * inward / norm
    inside = layout.contains(moved)
    return np.where(inside[:, None], moved, anchors)


def jitter(points: np.ndarray, layout: RoomLayout, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Add N(0, sigma) offsets to x and y, keeping every point in the room.

    Offsets landing outside are redrawn a bounded number of times; any
    point still outside is clamped just inside the nearest outline edge.
    """
    points = np.asarray(points, dtype=float)
    if sigma == 0:
        return points.copy()
    out = points + rng.normal(0.0, sigma, size=points.shape)
    bad = ~layout.contains(out)
    for _ in range(_MAX_REDRAWS):
        if not bad.any():
            return out
        idx = np.flatnonzero(bad)
        out[idx] = points[idx] + rng.normal(0.0, sigma, size=(idx.size, 2))
        bad[idx] = ~layout.contains(out[idx])
    if bad.any():
        idx = np.flatnonzero(bad)
        out[idx] = _nearest_interior(out[idx], points[idx], layout)
    return out


def generate_trajectories(layout: RoomLayout, cfg: MobilityConfig, steps: int) -> list[Trajectory]:
    """Billiard base paths plus independent per-step Gaussian jitter."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if layout.area() <= 0:
        raise LayoutError(f"room {layout.name!r} has an empty interior")
    rng = np.random.default_rng(cfg.seed)
    base = sample_interior(layout, cfg.n_ues, rng)
    heading = rng.uniform(0.0, 2 * np.pi, cfg.n_ues)
    vel = cfg.speed * np.column_stack([np.cos(heading), np.sin(heading)])
    walls = layout.walls
    xy = np.empty((steps, cfg.n_ues, 2))
    for t in range(steps):
        xy[t] = jitter(base, layout, cfg.offset_sigma, rng)
        if t + 1 < steps:
            base, vel = billiard_move(base, vel, walls)
    z = np.full((steps, cfg.n_ues, 1), cfg.ue_height)
    full = np.concatenate([xy, z], axis=2)
    return [Trajectory(positions=full[:, k].copy()) for k in range(cfg.n_ues)]


def stack_trajectories(trajs: list[Trajectory]) -> np.ndarray:
    """(steps, n_ues, 3) array view of a trajectory list."""
    return np.stack([tr.positions for tr in trajs], axis=1)


# ---------------------------------------------------------------------------
# layout documents

def _as_array(doc: Mapping[str, Any], key: str, shape_tail: tuple[int, ...]) -> np.ndarray:
    try:
        arr = np.asarray(doc[key], dtype=float)
    except KeyError:
        raise LayoutError(f"layout document is missing key {key!r}") from None
    except (TypeError, ValueError) as exc:
        raise LayoutError(f"layout key {key!r} is not numeric: {exc}") from None
    if arr.size == 0:
        return arr.reshape((0,) + shape_tail)
    if arr.shape[1:] != shape_tail:
        raise LayoutError(f"layout key {key!r} has shape {arr.shape}, expected (n, {', '.join(map(str, shape_tail))})")
    if not np.all(np.isfinite(arr)):
        raise LayoutError(f"layout key {key!r} contains non-finite values")
    return arr


def _on_or_inside(pts: np.ndarray, layout: RoomLayout, tol: float = 1e-9) -> np.ndarray:
    near = point_segment_distance(pts, layout.edges).min(axis=1) <= tol
    return near | layout.contains(pts)


def validate_layout(layout: RoomLayout) -> RoomLayout:
    outline = layout.outline
    if len(outline) < 3:
        raise LayoutError(f"room {layout.name!r}: outline needs at least 3 vertices")
    edges = layout.edges
    lengths = np.linalg.norm(edges[:, 1] - edges[:, 0], axis=1)
    if np.any(lengths == 0):
        raise LayoutError(f"room {layout.name!r}: outline has a zero-length edge")
    n = len(edges)
    for i in range(n):
        for j in range(i + 1, n):
            adjacent = j == i + 1 or (i == 0 and j == n - 1)
            if adjacent:
                # adjacent edges may only share their common vertex
                shared = edges[i, 1] if j == i + 1 else edges[i, 0]
                other_i = edges[i, 0] if j == i + 1 else edges[i, 1]
                other_j = edges[j, 1] if j == i + 1 else edges[j, 0]
                d_i = point_segment_distance(other_i[None], edges[j][None])[0, 0]
                d_j = point_segment_distance(other_j[None], edges[i][None])[0, 0]
                if d_i == 0 or d_j == 0:
                    raise LayoutError(f"room {layout.name!r}: outline edges {i} and {j} overlap near {shared.tolist()}")
            elif segments_intersect(edges[i, 0], edges[i, 1], edges[j, 0], edges[j, 1]):
                raise LayoutError(f"room {layout.name!r}: outline is self-intersecting (edges {i} and {j})")
    if layout.area() <= 0:
        raise LayoutError(f"room {layout.name!r}: outline encloses no area")
    if not layout.height > 0:
        raise LayoutError(f"room {layout.name!r}: height must be positive")

    for k, seg in enumerate(layout.panels):
        if np.allclose(seg[0], seg[1], atol=0):
            raise LayoutError(f"room {layout.name!r}: panel {k} has zero length")
        probes = np.linspace(seg[0], seg[1], 33)
        if not np.all(_on_or_inside(probes, layout)):
            raise LayoutError(f"room {layout.name!r}: panel {k} {seg.tolist()} leaves the outline")

    if len(layout.cells) == 0:
        raise LayoutError(f"room {layout.name!r}: at least one cell is required")
    inside = layout.contains(layout.cells[:, :2])
    for k, cell in enumerate(layout.cells):
        if not inside[k]:
            raise LayoutError(f"room {layout.name!r}: cell {k} at {cell.tolist()} is outside the outline")
        if not (0 < cell[2] <= layout.height):
            raise LayoutError(f"room {layout.name!r}: cell {k} height {cell[2]} not in (0, {layout.height}]")
    return layout


def layout_from_dict(doc: Mapping[str, Any]) -> RoomLayout:
    if not isinstance(doc, Mapping):
        raise LayoutError("layout document must be a JSON object")
    for key in ("name", "outline", "height", "cells"):
        if key not in doc:
            raise LayoutError(f"layout document is missing key {key!r}")
    try:
        height = float(doc["height"])
    except (TypeError, ValueError):
        raise LayoutError(f"layout height {doc['height']!r} is not a number") from None
    layout = RoomLayout(
        name=str(doc["name"]),
        outline=_as_array(doc, "outline", (2,)),
        panels=_as_array({"panels": doc.get("panels", [])}, "panels", (2, 2)),
        height=height,
        cells=_as_array(doc, "cells", (3,)),
    )
    return validate_layout(layout)


def shipped_room_path(name: str) -> Path:
    key = name.strip().lower().removeprefix("room_").removeprefix("room")
    if key.upper() not in ROOM_NAMES:
        raise LayoutError(f"unknown room {name!r}; shipped rooms are {', '.join(ROOM_NAMES)}")
    return Path(str(resources.files("fedcell") / "data" / "rooms" / f"room_{key}.json"))


def load_layout(source) -> RoomLayout:
    """Load a room from a mapping, a JSON file path, or a shipped room name ("A".."E")."""
    if isinstance(source, RoomLayout):
        return source
    if isinstance(source, Mapping):
        return layout_from_dict(source)
    text_source = str(source)
    path = Path(text_source)
    if not path.suffix and not path.exists():
        path = shipped_room_path(text_source)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise LayoutError(f"layout file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise LayoutError(f"{path}: malformed JSON at line {exc.lineno}: {exc.msg}") from None
    return layout_from_dict(doc)
