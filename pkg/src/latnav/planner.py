"""Latent-space geodesics: straight-line start, midpoint gradient descent,
and a k-nearest-neighbour frame graph searched with Dijkstra as a reference.

A *decoder* here is any object with ``__call__(z) -> image vector`` and
``vjp(z, v) -> J(z)^T v``; ``VaeDecoder`` wraps a trained model.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import numerics as nm
from .errors import ConfigError, DisconnectedError, FormatError, PlanningError

log = logging.getLogger(__name__)


class IdentityDecoder:
    def __call__(self, z):
        return np.array(z, dtype=np.float64)

    def batch(self, zs):
        return np.array(zs, dtype=np.float64)

    def vjp(self, z, v):
        return np.array(v, dtype=np.float64)


class FunctionDecoder:
    """Decoder from an explicit map ``f`` and its Jacobian ``jac``."""

    def __init__(self, f, jac):
        self.f, self.jac = f, jac

    def __call__(self, z):
        return np.asarray(self.f(np.asarray(z, dtype=np.float64)), dtype=np.float64)

    def vjp(self, z, v):
        return self.jac(np.asarray(z, dtype=np.float64)).T @ v


class VaeDecoder:
    """Decoder of a trained model, specialised for one latent vector at a time.

    Recent forward passes are memoised by the bytes of ``z`` so the
    vector-Jacobian product at an already decoded point skips the forward.
    """

    MEMO_SIZE = 4096

    def __init__(self, params):
        self.params = params
        self.spec = params.config.decoder_spec
        nm.check_params(self.spec, params.decoder)
        if self.spec.hidden_activation != "tanh" or self.spec.output_activation != "sigmoid":
            raise ConfigError("decoder", "VaeDecoder expects tanh hidden layers and a sigmoid output")
        self.weights = params.decoder[0::2]
        self.biases = params.decoder[1::2]
        self._memo = {}

    def _forward(self, z):
        z = np.asarray(z, dtype=np.float64)
        key = z.tobytes()
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        hidden = [z]
        h = z
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = w @ h + b
            h = expit(a) if k == last else np.tanh(a)
            hidden.append(h)
        if len(self._memo) >= self.MEMO_SIZE:
            self._memo.clear()
        self._memo[key] = hidden
        return hidden

    def __call__(self, z):
        return self._forward(z)[-1]

    def vjp(self, z, v):
        hidden = self._forward(z)
        h = hidden[-1]
        g = v * h * (1.0 - h)
        for k in range(len(self.weights) - 1, -1, -1):
            g = self.weights[k].T @ g
            if k > 0:
                h = hidden[k]
                g = g * (1.0 - h * h)
        return g


@dataclass(frozen=True)
class PlannerConfig:
    points: int = 50
    alpha: float = 0.05
    max_sweeps: int = 500
    tol: float = 1e-6
    norm_eps: float = 1e-12
    squared: bool = False
    backtrack: bool = True

    def __post_init__(self):
        if self.points < 2:
            raise ConfigError("points", f"must be >= 2, got {self.points}")
        if not self.alpha > 0:
            raise ConfigError("alpha", f"must be positive, got {self.alpha}")
        if self.max_sweeps < 1:
            raise ConfigError("max_sweeps", f"must be >= 1, got {self.max_sweeps}")
        if self.tol < 0:
            raise ConfigError("tol", f"must be >= 0, got {self.tol}")
        if not self.norm_eps > 0:
            raise ConfigError("norm_eps", f"must be positive, got {self.norm_eps}")


@dataclass
class LatentPath:
    points: np.ndarray  # (N, J)
    length_history: list = field(default_factory=list)
    monotone: bool = True
    sweeps: int = 0

    def __len__(self):
        return len(self.points)


def init_straight_path(z_s, z_d, n: int) -> LatentPath:
    z_s, z_d = np.asarray(z_s, dtype=np.float64), np.asarray(z_d, dtype=np.float64)
    if z_s.shape != z_d.shape or z_s.ndim != 1:
        raise ConfigError("endpoints", f"endpoint shapes differ: {z_s.shape} vs {z_d.shape}")
    if n < 2:
        raise ConfigError("points", f"must be >= 2, got {n}")
    t = (np.arange(n) / (n - 1))[:, None]
    pts = z_s + t * (z_d - z_s)
    # exact endpoints regardless of rounding in the interpolation
    pts[0], pts[-1] = z_s, z_d
    return LatentPath(pts)


def _segment_lengths(images, squared=False):
    d = np.diff(images, axis=0)
    s = np.sum(d * d, axis=1)
    return s if squared else np.sqrt(s)


def path_length(path, decoder, squared: bool = False) -> float:
    """Sum over consecutive points of ||g(z_n) - g(z_n+1)||."""
    pts = path.points if isinstance(path, LatentPath) else np.asarray(path)
    images = np.stack([decoder(z) for z in pts])
    return float(np.sum(_segment_lengths(images, squared)))


def local_objective(z_prev, z, z_next, decoder, squared: bool = False) -> float:
    g = decoder(z)
    a, b = g - decoder(z_prev), g - decoder(z_next)
    if squared:
        return float(a @ a + b @ b)
    return float(np.linalg.norm(a) + np.linalg.norm(b))


def _local_gradient_images(z, g, g_prev, g_next, decoder, norm_eps, squared):
    a, b = g - g_prev, g - g_next
    if squared:
        v = 2.0 * (a + b)
    else:
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        v = np.zeros_like(g)
        # degenerate segments contribute nothing
        if na > norm_eps:
            v += a / na
        if nb > norm_eps:
            v += b / nb
    return decoder.vjp(z, v)


def local_gradient(z_prev, z, z_next, decoder, norm_eps: float = 1e-12, squared: bool = False):
    """Gradient in ``z`` of ||g(z_prev) - g(z)|| + ||g(z) - g(z_next)||."""
    return _local_gradient_images(
        np.asarray(z, dtype=np.float64), decoder(z), decoder(z_prev), decoder(z_next), decoder, norm_eps, squared
    )


def _local_value(g, g_prev, g_next, squared):
    a, b = g - g_prev, g - g_next
    if squared:
        return a @ a + b @ b
    return math.sqrt(a @ a) + math.sqrt(b @ b)


def _decode_rows(decoder, zs):
    batch = getattr(decoder, "batch", None)
    if batch is not None:
        return batch(zs)
    return np.stack([decoder(z) for z in zs])


HALVINGS = 31


def plan_geodesic(z_s, z_d, decoder, cfg: PlannerConfig = PlannerConfig()) -> LatentPath:
    """Refine the straight line by sweeping interior points in ascending order.

    Each interior point takes ``z <- z - alpha * grad`` in place. With
    ``cfg.backtrack`` the step is halved (at most ``HALVINGS`` times) until
    the local objective does not increase, so the total length cannot grow;
    a point with no acceptable step stays put.
    """
    path = init_straight_path(z_s, z_d, cfg.points)
    pts = path.points
    images = _decode_rows(decoder, pts)
    current = float(np.sum(_segment_lengths(images, cfg.squared)))
    scales = cfg.alpha * 0.5 ** np.arange(HALVINGS + 1)
    for sweep in range(cfg.max_sweeps):
        for i in range(1, len(pts) - 1):
            grad = _local_gradient_images(pts[i], images[i], images[i - 1], images[i + 1], decoder, cfg.norm_eps, cfg.squared)
            if not np.all(np.isfinite(grad)):
                raise PlanningError(f"non-finite gradient at sweep {sweep}, point {i}", sweep=sweep, index=i)
            if not np.any(grad):
                continue
            before = _local_value(images[i], images[i - 1], images[i + 1], cfg.squared)
            accepted = None
            for step in scales:
                cand = pts[i] - step * grad
                g = decoder(cand)
                if not cfg.backtrack or _local_value(g, images[i - 1], images[i + 1], cfg.squared) <= before:
                    accepted = (cand, g)
                    break
            if accepted is None:
                continue
            cand, g = accepted
            if not (np.all(np.isfinite(cand)) and np.all(np.isfinite(g))):
                raise PlanningError(f"non-finite point at sweep {sweep}, point {i}", sweep=sweep, index=i)
            pts[i], images[i] = cand, g
        new = float(np.sum(_segment_lengths(images, cfg.squared)))
        path.length_history.append(new)
        path.sweeps = sweep + 1
        if new > current + 1e-12:
            path.monotone = False
            log.warning("path length rose at sweep %d (%.6g -> %.6g); alpha may be too large", sweep, current, new)
        decrease = current - new
        current = new
        if decrease < cfg.tol:
            break
    return path


# -- path file ------------------------------------------------------------

def format_path(path: LatentPath) -> str:
    pts = path.points
    lines = [f"# latentpath v1 N={len(pts)} J={pts.shape[1]}"]
    lines += [" ".join(f"{v:.17g}" for v in z) for z in pts]
    return "\n".join(lines) + "\n"


def parse_path(text: str) -> LatentPath:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("# latentpath v1"):
        raise FormatError("missing '# latentpath v1' header")
    try:
        fields = dict(tok.split("=") for tok in lines[0].split()[3:])
        n, j = int(fields["N"]), int(fields["J"])
        pts = np.array([[float(v) for v in ln.split()] for ln in lines[1:]], dtype=np.float64)
    except (KeyError, ValueError) as exc:
        raise FormatError(f"malformed path file: {exc}") from exc
    if pts.shape != (n, j):
        raise FormatError(f"header declares {n}x{j} points, file holds {pts.shape}")
    return LatentPath(pts)


def save_path(path: LatentPath, filename) -> None:
    Path(filename).write_text(format_path(path))


def load_path(filename) -> LatentPath:
    return parse_path(Path(filename).read_text())


# -- graph search reference ------------------------------------------------

@dataclass
class FrameGraph:
    latents: np.ndarray
    adjacency: list  # adjacency[i] = {j: weight}

    def __len__(self):
        return len(self.adjacency)

    def weight(self, a, b) -> float:
        return self.adjacency[a][b]


def knn_indices(points, k: int) -> np.ndarray:
    """Row i lists the k nearest other points (ties by lower index)."""
    pts = np.asarray(points, dtype=np.float64)
    diff = pts[:, None, :] - pts[None, :, :]
    d = np.sum(diff * diff, axis=2)
    np.fill_diagonal(d, np.inf)
    return np.argsort(d, axis=1, kind="stable")[:, :k]


def ring_knn_indices(positions, k: int) -> np.ndarray:
    """Row i lists the k frames nearest along the tour ring (ties by lower index)."""
    pos = np.asarray(positions, dtype=np.float64)
    d = np.abs(pos[:, None] - pos[None, :]) % 1.0
    d = np.minimum(d, 1.0 - d)
    np.fill_diagonal(d, np.inf)
    return np.argsort(d, axis=1, kind="stable")[:, :k]


def build_frame_graph(latents, images, k: int, positions=None) -> FrameGraph:
    """Symmetric kNN graph over frames, weighted by image distance.

    Neighbours are the k nearest posterior means, or, when ``positions`` is
    given, the k nearest frames in tour order. ``images`` may be raw frames
    or decoded means.
    """
    latents = np.asarray(latents, dtype=np.float64)
    flat = np.asarray(images, dtype=np.float64).reshape(len(latents), -1)
    n = len(latents)
    if not 1 <= k < n:
        raise ConfigError("k", f"must satisfy 1 <= k < {n}, got {k}")
    nbr_table = knn_indices(latents, k) if positions is None else ring_knn_indices(positions, k)
    adjacency = [dict() for _ in range(n)]
    for i, nbrs in enumerate(nbr_table):
        for j in nbrs:
            j = int(j)
            w = float(np.sqrt(np.sum((flat[i] - flat[j]) ** 2)))
            adjacency[i][j] = w
            adjacency[j][i] = w
    return FrameGraph(latents, adjacency)


def oracle_shortest_path(graph: FrameGraph, start: int, end: int):
    """Dijkstra with deterministic ties; returns ``(nodes, total_weight)``."""
    n = len(graph)
    for name, v in (("start", start), ("end", end)):
        if not 0 <= v < n:
            raise ConfigError(name, f"node {v} not in graph of {n} nodes")
    dist = {start: 0.0}
    prev = {}
    done = set()
    heap = [(0.0, start)]
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == end:
            break
        for v in sorted(graph.adjacency[u]):
            if v in done:
                continue
            nd = d + graph.adjacency[u][v]
            if v not in dist or nd < dist[v] or (nd == dist[v] and u < prev.get(v, -1)):
                dist[v], prev[v] = nd, u
                heapq.heappush(heap, (nd, v))
    if end not in done:
        raise DisconnectedError(f"disconnected: node {end} unreachable from node {start}")
    nodes = [end]
    while nodes[-1] != start:
        nodes.append(prev[nodes[-1]])
    return nodes[::-1], dist[end]
