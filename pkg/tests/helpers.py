import numpy as np

from resetreplay.losses import Triple
from resetreplay.policy import PolicyParams, init_params

SMALL_DIMS = (5, 3, 4, 2)


def random_params(seed, dims=SMALL_DIMS, scale=1.0):
    p = init_params(seed, dims)
    rng = np.random.default_rng(seed + 1000)
    return p.map(lambda name, a: a * scale + 0.1 * rng.standard_normal(a.shape))


def random_batch(rng, V, bos_id, n_pairs=3, max_len=3, allow_equal=False):
    """Random triples over token ids excluding ``bos_id``."""
    ids = [i for i in range(V) if i != bos_id]

    def seq(lo):
        return [int(t) for t in rng.choice(ids, size=int(rng.integers(lo, max_len + 1)))]

    batch = []
    for _ in range(n_pairs):
        prompt = seq(1)
        w = seq(1)
        l = list(w) if (allow_equal and rng.random() < 0.3) else seq(1)
        batch.append(Triple(prompt, w, l))
    return batch


def fd_grad(f, params: PolicyParams, h=1e-5):
    """Central finite differences of scalar ``f`` over every parameter."""
    flat = params.flat()
    out = np.empty_like(flat)
    for i in range(flat.size):
        up, dn = flat.copy(), flat.copy()
        up[i] += h
        dn[i] -= h
        out[i] = (f(PolicyParams.from_flat(up, params.dims))
                  - f(PolicyParams.from_flat(dn, params.dims))) / (2 * h)
    return out


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-8)
