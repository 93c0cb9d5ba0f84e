"""Independent oracles shared by unit and acceptance tests."""
import numpy as np
import torch

from orpco.nn import MlpSpec, forward, grad_input, init_params

ACTS = ("relu", "tanh", "softplus", "sigmoid")


def rel_err(a, b):
    a, b = np.asarray(a, float).ravel(), np.asarray(b, float).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def central_diff(f, p, h=1e-5):
    """Central finite differences of scalar ``f`` at float64 vector ``p``."""
    p = np.asarray(p, float)
    out = np.empty_like(p)
    for k in range(p.size):
        e = np.zeros_like(p)
        e[k] = h
        out[k] = (f(p + e) - f(p - e)) / (2 * h)
    return out


def random_spec(rng, max_in=4, max_hidden=6):
    depth = int(rng.integers(1, 3))
    return MlpSpec(int(rng.integers(1, max_in + 1)),
                   tuple(int(h) for h in rng.integers(2, max_hidden + 1, size=depth)),
                   int(rng.integers(1, 3)),
                   hidden_activation=ACTS[int(rng.integers(len(ACTS)))])


def random_params(spec, rng):
    g = torch.Generator().manual_seed(int(rng.integers(2**31)))
    return init_params(spec, g, dtype=torch.float64) * 2.0


def penalty_norm(spec, params, x):
    """Mean input-gradient norm of a scalar network, as a function of params."""
    return grad_input(spec, params, x, create_graph=True).norm(dim=1).mean()


def scalar_loss(spec, params, x):
    out = forward(spec, params, x)
    return (out ** 2).sum() + out.sum()


def hellinger_mc(mu1, c1, mu2, c2, n, rng):
    """Randomised quasi-Monte-Carlo squared Hellinger distance ``1 - BC``.

    Half the ``n`` draws come from each Gaussian (scrambled Sobol points pushed
    through the normal quantile) and the Bhattacharyya integrand is weighted
    against the equal mixture, so every term lies in ``[0, 1]``.
    """
    from scipy.linalg import solve_triangular
    from scipy.special import ndtri
    from scipy.stats import qmc

    d = len(mu1)
    half = n // 2
    chols = [np.linalg.cholesky(c) for c in (c1, c2)]
    logdets = [np.log(np.diag(L)).sum() for L in chols]
    means = [np.asarray(mu1, float), np.asarray(mu2, float)]
    total = 0.0
    for own in (0, 1):
        other = 1 - own
        u = qmc.Sobol(d, scramble=True, seed=rng).random(half)
        z = ndtri(np.clip(u, 1e-16, 1 - 1e-16))
        x = means[own] + z @ chols[own].T
        w = solve_triangular(chols[other], (x - means[other]).T, lower=True)
        l_own = -0.5 * (z * z).sum(1) - logdets[own]
        l_other = -0.5 * (w * w).sum(0) - logdets[other]
        hi = np.maximum(l_own, l_other)
        terms = np.exp(0.5 * (l_own + l_other) - hi) / (0.5 * (np.exp(l_own - hi) + np.exp(l_other - hi)))
        total += terms.mean()
    return float(1.0 - total / 2)


def hellinger_quad_1d(m1, v1, m2, v2):
    from scipy.integrate import quad
    from scipy.stats import norm
    s1, s2 = np.sqrt(v1), np.sqrt(v2)
    lo = min(m1 - 12 * s1, m2 - 12 * s2)
    hi = max(m1 + 12 * s1, m2 + 12 * s2)
    bc, _ = quad(lambda t: np.sqrt(norm.pdf(t, m1, s1) * norm.pdf(t, m2, s2)), lo, hi,
                 points=[m1, m2], limit=400, epsabs=1e-12)
    return 1.0 - bc
