"""Brute-force reference implementations used as test oracles.

Everything here is plain Python loops over numpy arrays. None of it
imports the package, so a bug in the vectorised code cannot leak in.
"""
import math

import numpy as np


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def relu(x):
    return x if x > 0 else 0.0


def conv1x1(x, weight, bias):
    """x: C x H x W, weight: O x C, bias: O -> O x H x W."""
    C, H, W = x.shape
    O = weight.shape[0]
    out = np.zeros((O, H, W))
    for o in range(O):
        for h in range(H):
            for w in range(W):
                acc = bias[o]
                for c in range(C):
                    acc += weight[o, c] * x[c, h, w]
                out[o, h, w] = acc
    return out


def linear(v, weight, bias):
    out = np.zeros(weight.shape[0])
    for o in range(weight.shape[0]):
        acc = bias[o]
        for c in range(weight.shape[1]):
            acc += weight[o, c] * v[c]
        out[o] = acc
    return out


def channel_attention(x, w1, b1, w2, b2):
    C, H, W = x.shape
    pooled = np.array([sum(x[c, h, w] for h in range(H) for w in range(W)) / (H * W) for c in range(C)])
    hidden = [relu(v) for v in linear(pooled, w1, b1)]
    return np.array([sigmoid(v) for v in linear(np.array(hidden), w2, b2)])


def spatial_attention(x, w1, b1, w2, b2):
    hidden = conv1x1(x, w1, b1)
    hidden = np.vectorize(relu)(hidden)
    out = conv1x1(hidden, w2, b2)[0]
    return np.vectorize(sigmoid)(out)


def cam_output(x, params, spatial=None):
    """Residual fusion evaluated one element at a time."""
    C, H, W = x.shape
    ca = channel_attention(x, *params["ca"])
    scaled = np.zeros_like(x)
    for c in range(C):
        for h in range(H):
            for w in range(W):
                scaled[c, h, w] = x[c, h, w] * ca[c]
    sa = spatial_attention(scaled, *params["sa"]) if spatial is None else spatial
    y = np.zeros_like(x)
    for c in range(C):
        for h in range(H):
            for w in range(W):
                y[c, h, w] = x[c, h, w] + sa[h, w] * scaled[c, h, w]
    return y, sa, scaled


def grid_max(x, n):
    """x: H x W; adaptive n x n grid, row-major list of maxima."""
    H, W = x.shape
    out = []
    for i in range(n):
        y0, y1 = (i * H) // n, -((-(i + 1) * H) // n)
        for j in range(n):
            x0, x1 = (j * W) // n, -((-(j + 1) * W) // n)
            best = -math.inf
            for h in range(y0, y1):
                for w in range(x0, x1):
                    best = max(best, x[h, w])
            out.append(best)
    return out


def multiscale_pool(x):
    """C x H x W -> C x 21."""
    return np.array([grid_max(x[c], 1) + grid_max(x[c], 2) + grid_max(x[c], 4) for c in range(x.shape[0])])


def hm_loss(raw, erased):
    """raw/erased: lists over blocks of N x C x 21 arrays."""
    N = raw[0].shape[0]
    total = 0.0
    for n in range(N):
        for fr, fb in zip(raw, erased):
            sq = 0.0
            count = 0
            for v in np.nditer(fr[n] - fb[n]):
                sq += float(v) ** 2
                count += 1
            total += sq / count
    return total / N


def cc_loss(z, labels):
    """Literal double/triple loop over anchors, positives and negatives."""
    N = len(labels)
    zn = [z[i] / math.sqrt(sum(v * v for v in z[i])) for i in range(N)]

    def dot(a, b):
        return sum(float(p) * float(q) for p, q in zip(a, b))

    terms = []
    for i in range(N):
        n_pos = sum(1 for j in range(N) if j != i and labels[j] == labels[i])
        if n_pos == 0:
            continue
        acc = 0.0
        for j in range(N):
            if j == i or labels[j] != labels[i]:
                continue
            s_ij = dot(zn[i], zn[j])
            D = math.exp(s_ij)
            for k in range(N):
                if k != i and labels[k] != labels[i]:
                    D += math.exp(dot(zn[i], zn[k]))
            acc += math.log(math.exp(s_ij) / D)
        terms.append(acc / n_pos)
    return -sum(terms) / len(terms) if terms else 0.0


def cross_entropy(logits, labels):
    total = 0.0
    for row, y in zip(logits, labels):
        m = max(row)
        lse = m + math.log(sum(math.exp(v - m) for v in row))
        total += lse - row[y]
    return total / len(labels)


def euclid(a, b):
    return math.sqrt(sum((float(p) - float(q)) ** 2 for p, q in zip(a, b)))


def triplet_loss(x, labels, margin):
    """Exhaustive enumeration of positives/negatives per anchor."""
    N = len(labels)
    total = 0.0
    for i in range(N):
        d_pos = max(euclid(x[i], x[j]) for j in range(N) if j != i and labels[j] == labels[i])
        d_neg = min(euclid(x[i], x[k]) for k in range(N) if labels[k] != labels[i])
        total += max(margin + d_pos - d_neg, 0.0)
    return total / N


def total_loss(id_terms, tri_terms, cc_terms, hm, sc, lambda1, lambda2):
    out = lambda1 * (hm + sc)
    for s in ("r", "b"):
        out += lambda2 * cc_terms[s] + id_terms[s] + tri_terms[s]
    return out


def supervision_signal(G_r, G_b, label):
    _, H, W = G_r.shape
    g = np.zeros((H, W))
    for h in range(H):
        for w in range(W):
            g[h, w] = max(G_r[label, h, w], G_b[label, h, w])
    return g


def saliency(E):
    C, H, W = E.shape
    out = np.zeros((H, W))
    for h in range(H):
        for w in range(W):
            out[h, w] = sum(E[c, h, w] for c in range(C)) / C
    return out


def sc_loss(g, S_r, S_b):
    """g, S_r, S_b: N x H x W."""
    N, H, W = g.shape
    total = 0.0
    for n in range(N):
        a = sum((g[n, h, w] - S_r[n, h, w]) ** 2 for h in range(H) for w in range(W)) / (H * W)
        b = sum((g[n, h, w] - S_b[n, h, w]) ** 2 for h in range(H) for w in range(W)) / (H * W)
        total += a + b
    return total / N


def distance_matrix(q, g):
    return np.array([[euclid(a, b) for b in g] for a in q])


def gallery_valid(q, g, setting):
    """Truth table for one (query, gallery) metadata pair of (id, cam, clothes)."""
    q_id, q_cam, q_cl = q
    g_id, g_cam, g_cl = g
    if g_id != q_id:
        return True
    if g_cam == q_cam:
        return False
    if setting == "cloth_changing":
        return g_cl != q_cl
    if setting == "same_clothes":
        return g_cl == q_cl
    return True


def cmc_map(dist, q_meta, g_meta, setting):
    """Loop implementation: returns (cmc list over len(gallery) ranks, mAP, retained, dropped)."""
    n_g = len(g_meta)
    cmc_counts = [0] * n_g
    aps = []
    dropped = 0
    for qi, q in enumerate(q_meta):
        ranked = sorted(range(n_g), key=lambda j: (dist[qi][j], j))
        ranked = [j for j in ranked if gallery_valid(q, g_meta[j], setting)]
        hits = [g_meta[j][0] == q[0] for j in ranked]
        if not any(hits):
            dropped += 1
            continue
        first = hits.index(True)
        for k in range(first, n_g):
            cmc_counts[k] += 1
        found, precisions = 0, []
        for rank, hit in enumerate(hits, start=1):
            if hit:
                found += 1
                precisions.append(found / rank)
        aps.append(sum(precisions) / len(precisions))
    retained = len(aps)
    return [c / retained for c in cmc_counts], sum(aps) / retained, retained, dropped
