"""Network builders shared by the test modules."""

import numpy as np

from mixedroute.network import Link, ODPair, build_network


def parallel_links(t0=(10.0, 10.0), cap=(100.0, 100.0), demand=100.0, length=5.0):
    links = [Link(i + 1, 1, 2, t, c, length) for i, (t, c) in enumerate(zip(t0, cap))]
    net = build_network(links)
    return net, [ODPair(1, 2, demand)]


def random_network(rng, max_nodes=10, max_links=20, max_ods=5):
    """Random strongly connected BPR network: a ring plus random chords."""
    n = int(rng.integers(3, max_nodes + 1))
    pairs = [(i, i % n + 1) for i in range(1, n + 1)]
    extra = int(rng.integers(0, max_links - n + 1))
    seen = set(pairs)
    for _ in range(extra * 3):
        if len(pairs) >= n + extra:
            break
        a, b = (int(v) for v in rng.choice(np.arange(1, n + 1), 2, replace=False))
        if (a, b) not in seen:
            seen.add((a, b))
            pairs.append((a, b))
    links = [Link(i + 1, a, b, float(rng.uniform(1, 10)), float(rng.uniform(200, 800)),
                  float(rng.uniform(0.5, 5))) for i, (a, b) in enumerate(pairs)]
    net = build_network(links)
    ods = []
    used = set()
    for _ in range(int(rng.integers(1, max_ods + 1))):
        o, d = (int(v) for v in rng.choice(np.arange(1, n + 1), 2, replace=False))
        if (o, d) in used:
            continue
        used.add((o, d))
        ods.append(ODPair(o, d, float(rng.uniform(100, 1500))))
    return net, ods
