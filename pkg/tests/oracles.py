"""Independent reference implementations used to check the package.

Everything in this module is written against plain Python lists and the
standard library only; nothing imports vflkit. Where a check demands
bit-identical results (the centralized SGD comparison), the oracle mirrors
the documented evaluation order: inner products accumulate in ascending
index order, partial predictions fold member0, member1, ..., master last,
and every random draw comes from a sha256-derived substream of the run
seed. The arithmetic itself is reimplemented from the math.
"""

import hashlib
import math
import random


# ---------------------------------------------------------------------------
# seeding scheme (shared contract: sha256 over base + 0x1f-joined tags)

def derive_seed(base, *tags):
    h = hashlib.sha256()
    h.update(str(int(base)).encode("utf-8"))
    for tag in tags:
        h.update(b"\x1f")
        h.update(str(tag).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little")


def substream(base, *tags):
    return random.Random(derive_seed(base, *tags))


def init_weights(d, fan_in, rng):
    """Uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] column, drawn in order."""
    bound = 1.0 / math.sqrt(fan_in)
    return [rng.uniform(-bound, bound) for _ in range(d)]


def epoch_batches(n_rows, seed, batch_size, epoch):
    perm = list(range(n_rows))
    substream(seed, "batch-perm", epoch).shuffle(perm)
    return [perm[i:i + batch_size] for i in range(0, n_rows, batch_size)]


# ---------------------------------------------------------------------------
# scalar pieces

def sigmoid(z):
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def dot_row(row, w):
    acc = 0.0
    for k in range(len(w)):
        acc += row[k] * w[k]
    return acc


# ---------------------------------------------------------------------------
# centralized SGD over a vertical partition
#
# blocks: list of (party_name, rows) pairs in fold order -- members by
# ascending index first, the master's block last. Each rows value is a
# list of per-sample feature lists, already in the shared row order.
# The master block must NOT include the bias column; it is appended here,
# exactly as the trained system does.

def centralized_sgd(blocks, labels, epochs, batch_size, lr, seed,
                    residual_fn):
    names = [name for name, _ in blocks]
    mats = [[list(row) for row in rows] for _, rows in blocks]
    for row in mats[-1]:
        row.append(1.0)

    weights = {}
    for name, mat in zip(names, mats):
        d = len(mat[0])
        weights[name] = init_weights(d, d, substream(seed, "init", name))

    n = len(labels)
    for epoch in range(epochs):
        for idx in epoch_batches(n, seed, batch_size, epoch):
            partials = [
                [dot_row(mat[i], weights[name]) for i in idx]
                for name, mat in zip(names, mats)
            ]
            z = list(partials[0])
            for part in partials[1:]:
                for i in range(len(idx)):
                    z[i] = z[i] + part[i]
            d_vec = [residual_fn(zi, labels[i]) for zi, i in zip(z, idx)]
            alpha = -lr / len(idx)
            for name, mat in zip(names, mats):
                w = weights[name]
                for k in range(len(w)):
                    g = 0.0
                    for pos, i in enumerate(idx):
                        g += mat[i][k] * d_vec[pos]
                    w[k] = alpha * g + w[k]
    return weights


def linreg_residual(z, y):
    return z - y


def logreg_residual(z, y):
    return sigmoid(z) - y


def taylor_residual(z, y):
    return 0.25 * z + (0.5 - y)


# ---------------------------------------------------------------------------
# metrics

def auc_pairs(scores, labels):
    """AUC by direct positive/negative pair counting, ties worth 1/2."""
    pos = [s for s, y in zip(scores, labels) if y >= 0.5]
    neg = [s for s, y in zip(scores, labels) if y < 0.5]
    if not pos or not neg:
        return 0.5
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


# ---------------------------------------------------------------------------
# record matching

def intersect_sets(id_lists):
    common = set(id_lists[0])
    for ids in id_lists[1:]:
        common = common & set(ids)
    return sorted(common)
