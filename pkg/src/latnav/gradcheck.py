"""Finite-difference checks of the analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from . import vae

FD_STEP = 1e-5
TOLERANCE = 1e-5


@dataclass
class SuiteResult:
    name: str
    trials: int
    worst: float

    @property
    def passed(self) -> bool:
        return self.worst < TOLERANCE


def reference_mlp(spec: nm.MlpSpec, params, x, dtype=np.longdouble):
    """Layer-by-layer forward pass in ``dtype``, independent of ``mlp_forward``."""
    acts = {
        "tanh": np.tanh,
        "relu": lambda a: np.where(a > 0, a, dtype(0)),
        "sigmoid": lambda a: 1 / (1 + np.exp(-a)),
        "identity": lambda a: a,
    }
    h = np.asarray(x, dtype=dtype)
    for k in range(spec.n_layers):
        w = np.asarray(params[2 * k], dtype=dtype)
        b = np.asarray(params[2 * k + 1], dtype=dtype)
        act = spec.output_activation if k == spec.n_layers - 1 else spec.hidden_activation
        h = acts[act](w @ h + b)
    return h


def mlp_suite(trials: int = 24, seed: int = 7, corrupt: bool = False) -> SuiteResult:
    """Random small networks over every activation pairing, loss = <r, output>."""
    rng = nm.Rng(seed)
    worst = 0.0
    combos = [(h, o) for h in nm.HIDDEN_ACTIVATIONS for o in nm.OUTPUT_ACTIVATIONS]
    for t in range(trials):
        hidden, out = combos[t % len(combos)]
        depth = 2 + int(rng.integers(3, 1)[0])
        sizes = tuple(int(s) + 1 for s in rng.integers(10, depth))
        spec = nm.MlpSpec(sizes, hidden, out)
        params = nm.init_params(spec, rng)
        params = [p + 0.1 * rng.normal(p.size).reshape(p.shape) for p in params]
        x = rng.normal(sizes[0])
        r = rng.normal(sizes[-1])
        shapes = spec.param_shapes()

        y, cache = nm.mlp_forward(spec, params, x)
        grads, gx = nm.mlp_backward(spec, params, cache, r)
        if corrupt:
            grads[0] = grads[0] * 1.01
        analytic = nm.flatten(grads + [gx])

        n_p = sum(int(np.prod(s)) for s in shapes)

        def f(flat):
            return reference_mlp(spec, nm.unflatten(flat[:n_p], shapes), flat[n_p:]) @ r

        fd = nm.finite_diff_gradient(f, np.concatenate([nm.flatten(params), x]), FD_STEP)
        worst = max(worst, nm.max_relative_error(analytic, fd))
    return SuiteResult("mlp", trials, worst)


def random_small_model(rng: nm.Rng, likelihood: str) -> vae.ModelConfig:
    h, w, c = (int(v) + 1 for v in rng.integers(3, 3))
    j = int(rng.integers(4, 1)[0]) + 1
    enc = tuple(int(v) + 2 for v in rng.integers(7, 1))
    dec = tuple(int(v) + 2 for v in rng.integers(7, 1))
    return vae.ModelConfig(j, h, w, c, enc, dec, likelihood)


def reference_loss(params: vae.ModelParams, x, eps, dtype=np.longdouble):
    """Mean negative ELBO written out layer by layer, evaluated in ``dtype``.

    Separate from ``vae.loss_and_grads`` on purpose; extended precision keeps
    the central-difference roundoff well below the gradients being checked.
    """
    cfg = params.config
    j = cfg.latent_dim
    enc = [np.asarray(a, dtype=dtype) for a in params.encoder]
    dec = [np.asarray(a, dtype=dtype) for a in params.decoder]
    x = np.asarray(x, dtype=dtype)
    eps = np.asarray(eps, dtype=dtype)
    total = dtype(0)
    for xi, ei in zip(x, eps):
        h = xi
        for k in range(0, len(enc) - 2, 2):
            h = np.tanh(enc[k] @ h + enc[k + 1])
        head = enc[-2] @ h + enc[-1]
        mu, lv = head[:j], head[j:]
        kl = -0.5 * np.sum(1 + lv - mu**2 - np.exp(lv))
        recon = dtype(0)
        for e in ei:
            h = mu + np.exp(lv / 2) * e
            for k in range(0, len(dec), 2):
                a = dec[k] @ h + dec[k + 1]
                h = np.tanh(a) if k < len(dec) - 2 else 1 / (1 + np.exp(-a))
            if cfg.likelihood == "bernoulli":
                p = np.clip(h, vae.BERNOULLI_CLAMP, 1 - vae.BERNOULLI_CLAMP)
                recon += np.sum(xi * np.log(p) + (1 - xi) * np.log(1 - p))
            else:
                recon += -0.5 * np.sum((xi - h) ** 2) - 0.5 * len(xi) * np.log(2 * np.pi, dtype=dtype)
        total += kl - recon / len(ei)
    return total / len(x)


def vae_case(cfg: vae.ModelConfig, rng: nm.Rng, batch: int = 2, samples: int = 2, corrupt: bool = False) -> float:
    """Worst relative error of loss_and_grads against central differences."""
    params = vae.init_model(cfg, int(rng.next_u64(1)[0]))
    params = params.with_arrays([a + 0.1 * rng.normal(a.size).reshape(a.shape) for a in params.arrays()])
    x = rng.uniform(batch * cfg.pixels).reshape(batch, cfg.pixels)
    eps = rng.normal(batch * samples * cfg.latent_dim).reshape(batch, samples, cfg.latent_dim)
    _, grads = vae.loss_and_grads(params, x, eps)
    analytic = nm.flatten(grads.arrays())
    if corrupt:
        analytic = analytic * 1.01
    shapes = [a.shape for a in params.arrays()]

    def f(flat):
        return reference_loss(params.with_arrays(nm.unflatten(flat, shapes)), x, eps)

    fd = nm.finite_diff_gradient(f, nm.flatten(params.arrays()), FD_STEP)
    return nm.max_relative_error(analytic, fd)


def vae_suite(trials: int = 20, seed: int = 11, corrupt: bool = False) -> SuiteResult:
    """Negative-ELBO gradients on random models of at most 2,000 parameters."""
    rng = nm.Rng(seed)
    worst = 0.0
    for t in range(trials):
        cfg = random_small_model(rng, vae.LIKELIHOODS[t % 2])
        assert vae.zero_model(cfg).n_params() <= 2000
        worst = max(worst, vae_case(cfg, rng, corrupt=corrupt))
    return SuiteResult("vae", trials, worst)


def run_all(seed: int = 0, corrupt: bool = False) -> list[SuiteResult]:
    return [mlp_suite(seed=seed + 7, corrupt=corrupt), vae_suite(seed=seed + 11, corrupt=corrupt)]
