"""Random problem generators shared by unit and acceptance tests."""
import numpy as np


def random_retrieval(rng, n_q=None, n_g=None, n_ids=4):
    """Distances with deliberate ties plus (id, cam, clothes) rows for both sides."""
    n_q = n_q or int(rng.integers(2, 7))
    n_g = n_g or int(rng.integers(5, 16))
    dist = rng.integers(0, 6, size=(n_q, n_g)).astype(np.float64) / 2.0

    def meta(n):
        ids = rng.integers(0, n_ids, size=n)
        cams = rng.integers(0, 2, size=n)
        clothes = ids * 10 + rng.integers(0, 2, size=n)
        return ids, cams, clothes

    q, g = meta(n_q), meta(n_g)
    # guarantee at least one positive survives the strictest filters for query 0
    g[0][0], g[1][0], g[2][0] = q[0][0], 1 - q[1][0], q[2][0] + 1
    g[0][1], g[1][1], g[2][1] = q[0][0], 1 - q[1][0], q[2][0]
    return dist, q, g


def rows(meta):
    return list(zip(*(m.tolist() for m in meta)))
