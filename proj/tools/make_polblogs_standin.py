#!/usr/bin/env python3
"""Generate a featureless two-community blog-network bundle with the
Polblogs largest-component statistics (1222 nodes, 16714 edges, 2 classes).

The original political-blogs graph is not redistributable from a package
mirror, so this script builds a deterministic stand-in with the same shape:
a degree-corrected stochastic block model with heavy-tailed node
propensities and strong homophily, grown on a preferential-attachment tree so
the whole graph is one connected component.

    python3 tools/make_polblogs_standin.py data/polblogs
"""

import argparse
import json
import pathlib

import numpy as np

NUM_NODES = 1222
NUM_EDGES = 16714
CLASS_SIZES = (586, 636)
HOMOPHILY = 0.91
PROPENSITY_EXPONENT = 2.2


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out_dir")
    ap.add_argument("--seed", type=int, default=2020)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    labels = np.array([0] * CLASS_SIZES[0] + [1] * CLASS_SIZES[1])
    rng.shuffle(labels)
    # Pareto propensities, capped so the largest hub stays near the real maximum degree.
    theta = (1.0 - rng.random(NUM_NODES)) ** (-1.0 / (PROPENSITY_EXPONENT - 1.0))
    theta = np.minimum(theta, 60.0)
    members = [np.flatnonzero(labels == c) for c in (0, 1)]
    weights = [theta[m] / theta[m].sum() for m in members]

    def pick(cls, pool=None):
        if pool is None:
            return int(rng.choice(members[cls], p=weights[cls]))
        w = theta[pool] / theta[pool].sum()
        return int(rng.choice(pool, p=w))

    edges = set()
    order = rng.permutation(NUM_NODES)
    seen_by_class = {0: [], 1: []}
    for k, node in enumerate(order):
        node = int(node)
        if k > 0:
            same = labels[node]
            cls = same if (seen_by_class[same] and rng.random() < HOMOPHILY) else 1 - same
            if not seen_by_class[cls]:
                cls = same
            other = pick(cls, np.array(seen_by_class[cls]))
            edges.add((min(node, other), max(node, other)))
        seen_by_class[labels[node]].append(node)

    node_weights = theta / theta.sum()
    while len(edges) < NUM_EDGES:
        u = int(rng.choice(NUM_NODES, p=node_weights))
        cls = labels[u] if rng.random() < HOMOPHILY else 1 - labels[u]
        v = pick(cls)
        if u != v:
            edges.add((min(u, v), max(u, v)))

    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "edges.tsv", "w") as f:
        for u, v in sorted(edges):
            f.write(f"{u}\t{v}\n")
    with open(out / "labels.tsv", "w") as f:
        for i, c in enumerate(labels):
            f.write(f"{i}\t{c}\n")
    meta = {"name": "polblogs", "num_nodes": NUM_NODES, "num_classes": 2, "feature_dim": 0}
    (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    deg = np.zeros(NUM_NODES, dtype=int)
    for u, v in edges:
        deg[u] += 1
        deg[v] += 1
    intra = sum(labels[u] == labels[v] for u, v in edges) / len(edges)
    print(f"polblogs stand-in: {NUM_NODES} nodes, {len(edges)} edges, "
          f"max degree {deg.max()}, min degree {deg.min()}, intra-class edge share {intra:.3f}")


if __name__ == "__main__":
    main()
