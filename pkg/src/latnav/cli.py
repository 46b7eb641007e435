"""Command-line entry point: ``latnav <command> [options]``.

Every command computes all of its outputs in memory first and only then
writes them, through temporary files renamed into place, so a failing
command leaves no partial output behind.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import gradcheck, imageio, planner, routing, vae, worldgen
from .errors import LatnavError

log = logging.getLogger("latnav")

DATASET_NAME = "dataset.json"
CHECKPOINT_NAME = "model.ckpt"
LOSS_NAME = "loss.txt"
SLICE_NAME = "slice.ppm"
PATH_NAME = "path.txt"
PATH_HISTORY_NAME = "path_history.txt"
ROUTE_NAME = "route.txt"
ORACLE_NAME = "oracle_route.txt"
DECODED_STRIP = "strip_decoded.ppm"
MATCHED_STRIP = "strip_matched.ppm"
REPORT_NAME = "report.json"


def write_outputs(files: dict) -> None:
    """Write ``{path: bytes}`` atomically; on failure remove what was written."""
    done = []
    try:
        for path, data in files.items():
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
            done.append(path)
    except BaseException:
        for p in done:
            p.unlink(missing_ok=True)
        raise


def _load_cfg(args, overrides=None) -> cfgmod.RunConfig:
    return cfgmod.load_config(getattr(args, "config", None), overrides)


def _seed_override(args, key):
    return {key: args.seed} if getattr(args, "seed", None) is not None else {}


def _model_for_dataset(cfg: cfgmod.RunConfig, ds: worldgen.TourDataset) -> vae.ModelConfig:
    h, w, c = ds.shape
    m = cfg.model
    return vae.ModelConfig(m.latent_dim, h, w, c, m.encoder_hidden, m.decoder_hidden, m.likelihood)


def _check_index(name, value, n):
    if not 0 <= value < n:
        raise cfgmod.ConfigError(name, f"frame index {value} outside dataset of {n} frames")


def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args, _seed_override(args, "world.seed"))
    ds = worldgen.generate_tour(cfg.world)
    files = worldgen.dataset_files(ds, Path(args.out) / DATASET_NAME)
    write_outputs(files)
    raw = files[(Path(args.out) / DATASET_NAME).with_suffix(".raw")]
    print(f"frames: {len(ds)}")
    print(f"sha256: {hashlib.sha256(raw).hexdigest()}")
    return 0


def cmd_ingest(args) -> int:
    ds = worldgen.ingest_frames(args.frames, args.height, args.width)
    write_outputs(worldgen.dataset_files(ds, Path(args.out) / DATASET_NAME))
    print(f"frames: {len(ds)}")
    return 0


def format_loss_history(history) -> str:
    return "# epoch mean_loss\n" + "".join(f"{i} {v:.17g}\n" for i, v in enumerate(history))


def cmd_train(args) -> int:
    cfg = _load_cfg(args, _seed_override(args, "train.seed"))
    ds = worldgen.load_dataset(args.dataset)
    model_cfg = _model_for_dataset(cfg, ds)
    params = vae.init_model(model_cfg, cfg.train.seed)

    def progress(epoch, loss):
        if epoch % 10 == 0 or epoch == cfg.train.epochs - 1:
            log.info("epoch %d mean loss %.4f", epoch, loss)

    params, report = vae.train(params, ds.flat(), cfg.train, callback=progress)
    out = Path(args.out)
    write_outputs({
        out / CHECKPOINT_NAME: vae.checkpoint_bytes(params),
        out / LOSS_NAME: format_loss_history(report.history).encode(),
    })
    if report.history:
        print(f"first epoch loss: {report.history[0]:.6f}")
        print(f"final epoch loss: {report.history[-1]:.6f}")
    print(f"params sha256: {report.checksum}")
    return 0


def slice_grid(params: vae.ModelParams, dims, grid: int, lo: float, hi: float, fixed: float):
    """Latent codes and decoded tiles of a G x G slice, in row-major tile order.

    Rows follow ``dims[0]``, columns follow ``dims[1]``.
    """
    j = params.config.latent_dim
    a, b = dims
    if not 0 <= a < b < j:
        raise cfgmod.ConfigError("slice.dims", f"need 0 <= a < b < {j}, got {dims}")
    values = np.linspace(lo, hi, grid)
    codes = []
    for va in values:
        for vb in values:
            z = np.full(j, fixed, dtype=np.float64)
            z[a], z[b] = va, vb
            codes.append(z)
    tiles = [vae.decode_image(params, z) for z in codes]
    return codes, tiles


def cmd_slice(args) -> int:
    overrides = {}
    for key in ("grid", "lo", "hi", "fixed"):
        if getattr(args, key) is not None:
            overrides[f"slice.{key}"] = getattr(args, key)
    if args.dims is not None:
        overrides["slice.dims"] = list(args.dims)
    cfg = _load_cfg(args, overrides)
    params, mc = vae.load_checkpoint(args.checkpoint)
    dims = cfg.slice.dims or (mc.latent_dim - 2, mc.latent_dim - 1)
    _, tiles = slice_grid(params, dims, cfg.slice.grid, cfg.slice.lo, cfg.slice.hi, cfg.slice.fixed)
    montage = imageio.tile(tiles, cfg.slice.grid, cfg.slice.grid)
    target = Path(args.out) / SLICE_NAME
    write_outputs({target: imageio.encode_pnm(montage)})
    print(f"wrote {target} ({montage.shape[0]}x{montage.shape[1]})")
    return 0


def _latents(params, ds):
    return vae.encode(params, ds.flat()).mu


def format_history(history) -> str:
    return "# sweep path_length\n" + "".join(f"{i} {v:.17g}\n" for i, v in enumerate(history))


def cmd_plan(args) -> int:
    cfg = _load_cfg(args, {"planner.points": args.points} if args.points else None)
    params, _ = vae.load_checkpoint(args.checkpoint)
    ds = worldgen.load_dataset(args.dataset)
    _check_index("start", args.start, len(ds))
    _check_index("end", args.end, len(ds))
    mu = _latents(params, ds)
    path = planner.plan_geodesic(mu[args.start], mu[args.end], planner.VaeDecoder(params), cfg.planner)
    out = Path(args.out)
    write_outputs({
        out / PATH_NAME: planner.format_path(path).encode(),
        out / PATH_HISTORY_NAME: format_history(path.length_history).encode(),
    })
    final = path.length_history[-1] if path.length_history else 0.0
    print(f"sweeps: {path.sweeps}  length: {final:.6f}  monotone: {path.monotone}")
    return 0 if path.monotone else 3


def cmd_route(args) -> int:
    params, _ = vae.load_checkpoint(args.checkpoint)
    ds = worldgen.load_dataset(args.dataset)
    path = planner.load_path(args.path)
    if path.points.shape[1] != params.config.latent_dim:
        raise cfgmod.ConfigError("path", f"path has J={path.points.shape[1]}, model has {params.config.latent_dim}")
    dec = planner.VaeDecoder(params)
    route = routing.match_route(path, dec, ds)
    h, w, c = ds.shape
    decoded = [dec(z).reshape(h, w, c) for z in path.points]
    matched = list(route.images(ds))
    out = Path(args.out)
    write_outputs({
        out / ROUTE_NAME: routing.format_route(route).encode(),
        out / DECODED_STRIP: imageio.encode_pnm(imageio.tile(decoded, 1, len(decoded))),
        out / MATCHED_STRIP: imageio.encode_pnm(imageio.tile(matched, 1, len(matched))),
    })
    print(f"route: {routing.format_ratio(routing.category_count(route))} distinct frames")
    return 0


def cmd_oracle(args) -> int:
    overrides = {"oracle.k": args.k} if args.k is not None else {}
    if args.neighbors:
        overrides["oracle.neighbors"] = args.neighbors
    cfg = _load_cfg(args, overrides)
    params, _ = vae.load_checkpoint(args.checkpoint)
    ds = worldgen.load_dataset(args.dataset)
    _check_index("start", args.start, len(ds))
    _check_index("end", args.end, len(ds))
    mu = _latents(params, ds)
    images = ds.flat() if cfg.oracle.weights == "raw" else vae.decode(params, mu)
    positions = ds.positions if cfg.oracle.neighbors == "tour" else None
    graph = planner.build_frame_graph(mu, images, cfg.oracle.k, positions)
    nodes, weight = planner.oracle_shortest_path(graph, args.start, args.end)
    route = routing.Route(nodes, "oracle")
    write_outputs({Path(args.out) / ORACLE_NAME: routing.format_route(route).encode()})
    print(f"oracle route: {len(nodes)} frames, weight {weight:.6f}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_cfg(args, _seed_override(args, "eval.seed"))
    params, _ = vae.load_checkpoint(args.checkpoint)
    ds = worldgen.load_dataset(args.dataset)
    routes = {}
    for k, fname in enumerate(args.routes):
        route = routing.load_route(fname)
        routing.check_route(route, ds)
        routes[f"{k}:{route.source}:{Path(fname).name}"] = route
    report = routing.evaluate(routes, params, ds, cfg.eval.seed, cfg.eval.bins)
    write_outputs({Path(args.out) / REPORT_NAME: report.to_json().encode()})
    for r in report.routes:
        gap = f"  max_geo_gap {r.max_geo_gap:.6f}" if r.max_geo_gap is not None else ""
        print(f"{r.name}: {r.ratio}{gap}")
    if report.category_ratio:
        print(f"category ratio: {report.category_ratio}")
    return 0


def cmd_gradcheck(args) -> int:
    seed = args.seed if args.seed is not None else 0
    results = gradcheck.run_all(seed=seed, corrupt=args.corrupt_gradient)
    for r in results:
        print(f"{r.name}: {'PASS' if r.passed else 'FAIL'} trials={r.trials} worst_rel_err={r.worst:.3e}")
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latnav", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True, seed=True):
        if config:
            p.add_argument("--config", help="JSON run configuration")
        if seed:
            p.add_argument("--seed", type=int)
        p.add_argument("--out", default=".", help="output directory")
        return p

    p = common(sub.add_parser("gen-data", help="render the synthetic tour"))
    p.set_defaults(func=cmd_gen_data)

    p = common(sub.add_parser("ingest", help="import a folder of PPM/PGM frames"), config=False, seed=False)
    p.add_argument("--frames", required=True)
    p.add_argument("--height", type=int, default=16)
    p.add_argument("--width", type=int, default=16)
    p.set_defaults(func=cmd_ingest)

    p = common(sub.add_parser("train", help="train the VAE"))
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("slice", help="decode a 2-D grid of latent codes"), seed=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dims", type=int, nargs=2)
    p.add_argument("--grid", type=int)
    p.add_argument("--lo", type=float)
    p.add_argument("--hi", type=float)
    p.add_argument("--fixed", type=float)
    p.set_defaults(func=cmd_slice)

    p = common(sub.add_parser("plan", help="plan a latent geodesic between two frames"), seed=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--start", type=int, required=True)
    p.add_argument("--end", type=int, required=True)
    p.add_argument("--points", type=int)
    p.set_defaults(func=cmd_plan)

    p = common(sub.add_parser("route", help="match a latent path to training frames"), config=False, seed=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--path", required=True)
    p.set_defaults(func=cmd_route)

    p = common(sub.add_parser("eval", help="route statistics as JSON"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--routes", nargs="+", required=True)
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("oracle", help="graph shortest path between two frames"), seed=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--start", type=int, required=True)
    p.add_argument("--end", type=int, required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--neighbors", choices=("latent", "tour"))
    p.set_defaults(func=cmd_oracle)

    p = common(sub.add_parser("gradcheck", help="finite-difference gradient self-check"))
    p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (LatnavError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
