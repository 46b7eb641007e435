"""Routes over training frames and the statistics used to judge them."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import vae
from .errors import ConfigError, FormatError, NoGroundTruthError
from .numerics import Rng
from .planner import LatentPath

SOURCES = ("geodesic", "manual", "oracle")


@dataclass
class Route:
    indices: list
    source: str = "geodesic"

    def __post_init__(self):
        self.indices = [int(i) for i in self.indices]
        if self.source not in SOURCES:
            raise ConfigError("source", f"must be one of {SOURCES}, got {self.source!r}")

    def __len__(self):
        return len(self.indices)

    def images(self, dataset) -> np.ndarray:
        return dataset.images[self.indices]


def nearest_frames(images, frames) -> np.ndarray:
    """Index of the frame nearest (squared Euclidean) to each image; lowest index wins ties."""
    images = np.atleast_2d(np.asarray(images, dtype=np.float64))
    frames = np.asarray(frames, dtype=np.float64).reshape(len(frames), -1)
    if images.shape[1] != frames.shape[1]:
        raise ConfigError("image", f"decoded images have {images.shape[1]} pixels, frames have {frames.shape[1]}")
    out = np.empty(len(images), dtype=np.int64)
    for k, img in enumerate(images):
        d = frames - img
        out[k] = int(np.argmin(np.sum(d * d, axis=1)))
    return out


def match_route(path: LatentPath, decoder, dataset) -> Route:
    if len(dataset) == 0:
        raise ConfigError("dataset", "dataset is empty")
    decoded = np.stack([decoder(z) for z in path.points])
    return Route(nearest_frames(decoded, dataset.flat()).tolist(), "geodesic")


def path_from_route(route: Route, params: vae.ModelParams, dataset) -> LatentPath:
    """Posterior means of the route's frames."""
    if len(route) == 0:
        raise ConfigError("route", "route is empty")
    mu = vae.encode(params, dataset.flat()[route.indices]).mu
    return LatentPath(np.array(mu))


def category_count(route: Route) -> tuple[int, int]:
    if len(route) == 0:
        raise ConfigError("route", "route is empty")
    return len(set(route.indices)), len(route)


def format_ratio(counts) -> str:
    return f"{counts[0]}/{counts[1]}"


def neighbor_random_diffs(sequence, reference, seed: int) -> list[float]:
    """d(v_i, v_i+1) - d(v_i, r_i) with r_i a fresh uniform draw from ``reference``."""
    seq = np.asarray(sequence, dtype=np.float64).reshape(len(sequence), -1)
    ref = np.asarray(reference, dtype=np.float64).reshape(len(reference), -1)
    if len(seq) < 2:
        raise ConfigError("sequence", "need at least 2 entries")
    if len(ref) == 0:
        raise ConfigError("reference", "reference collection is empty")
    picks = Rng(seed).integers(len(ref), len(seq) - 1)
    out = []
    for i, r in enumerate(picks):
        near = np.linalg.norm(seq[i] - seq[i + 1])
        rand = np.linalg.norm(seq[i] - ref[r])
        out.append(float(near - rand))
    return out


def neighbor_distances(sequence) -> np.ndarray:
    seq = np.asarray(sequence, dtype=np.float64).reshape(len(sequence), -1)
    return np.sqrt(np.sum(np.diff(seq, axis=0) ** 2, axis=1))


def neighbor_distance_hist(sequence, bins: int = 10) -> dict:
    """Equal-width histogram of consecutive distances over [0, max]."""
    if bins < 1:
        raise ConfigError("bins", f"must be >= 1, got {bins}")
    d = neighbor_distances(sequence)
    hi = float(d.max()) if d.size and d.max() > 0 else 1.0
    counts, edges = np.histogram(d, bins=bins, range=(0.0, hi))
    return {"edges": edges.tolist(), "counts": counts.astype(int).tolist()}


def ring_distance(a, b) -> float:
    d = abs(a - b) % 1.0
    return min(d, 1.0 - d)


def continuity_gap(route: Route, dataset) -> float:
    """Largest ring distance between consecutive route frames."""
    if dataset.provenance != "generated":
        raise NoGroundTruthError(f"dataset provenance is {dataset.provenance!r}; positions are not ground truth")
    pos = dataset.positions[route.indices]
    return max((ring_distance(a, b) for a, b in zip(pos[:-1], pos[1:])), default=0.0)


@dataclass
class RouteStats:
    name: str
    distinct: int
    total: int
    ratio: str
    image_diffs: list
    latent_diffs: list
    route_hist: dict
    path_hist: dict
    max_geo_gap: float | None = None


@dataclass
class EvalReport:
    routes: list = field(default_factory=list)
    category_ratio: str = ""
    seed: int = 0
    bins: int = 10

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1) + "\n"


def evaluate_route(name, route: Route, params, dataset, seed: int, bins: int = 10) -> RouteStats:
    """Statistics for one route; the latent path is the route's posterior means."""
    images = dataset.flat()[route.indices]
    path = path_from_route(route, params, dataset)
    latents_all = vae.encode(params, dataset.flat()).mu
    d, n = category_count(route)
    image_diffs = neighbor_random_diffs(images, dataset.flat(), seed) if n > 1 else []
    latent_diffs = neighbor_random_diffs(path.points, latents_all, seed) if n > 1 else []
    gap = continuity_gap(route, dataset) if dataset.provenance == "generated" else None
    return RouteStats(
        name, d, n, format_ratio((d, n)), image_diffs, latent_diffs,
        neighbor_distance_hist(images, bins), neighbor_distance_hist(path.points, bins), gap,
    )


def evaluate(routes: dict, params, dataset, seed: int = 0, bins: int = 10) -> EvalReport:
    """Report for named routes, e.g. ``{"geodesic": r1, "oracle": r2}``.

    ``category_ratio`` is distinct frames of the first route over distinct
    frames of the second, when two are given.
    """
    report = EvalReport(seed=seed, bins=bins)
    for name, route in routes.items():
        report.routes.append(evaluate_route(name, route, params, dataset, seed, bins))
    if len(report.routes) >= 2:
        report.category_ratio = f"{report.routes[0].distinct}/{report.routes[1].distinct}"
    return report


# -- route file -------------------------------------------------------------

def format_route(route: Route) -> str:
    return f"# route v1 n={len(route)} source={route.source}\n" + "".join(f"{i}\n" for i in route.indices)


def parse_route(text: str) -> Route:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("# route v1"):
        raise FormatError("missing '# route v1' header")
    fields = dict(tok.split("=", 1) for tok in lines[0].split()[3:] if "=" in tok)
    try:
        n = int(fields["n"])
        indices = [int(ln) for ln in lines[1:]]
    except (KeyError, ValueError) as exc:
        raise FormatError(f"malformed route file: {exc}") from exc
    if len(indices) != n:
        raise FormatError(f"header declares {n} frames, file lists {len(indices)}")
    return Route(indices, fields.get("source", "geodesic"))


def save_route(route: Route, filename) -> None:
    Path(filename).write_text(format_route(route))


def load_route(filename) -> Route:
    return parse_route(Path(filename).read_text())


def check_route(route: Route, dataset) -> None:
    bad = [i for i in route.indices if not 0 <= i < len(dataset)]
    if bad:
        raise ConfigError("route", f"frame index {bad[0]} outside dataset of {len(dataset)} frames")
