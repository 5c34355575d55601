"""Random graphs for encoder property tests."""

import torch


def random_graph(rng, n):
    parents = [(int(rng.integers(0, i)), i) for i in range(1, n)]
    cfg = [(int(rng.integers(0, n)), int(rng.integers(0, n))) for _ in range(n)]
    to_t = lambda e: torch.tensor(e, dtype=torch.long).reshape(-1, 2).T
    return (torch.tensor(rng.integers(0, 10, n)), torch.tensor(rng.integers(0, 20, n)), to_t(parents), to_t(cfg))


def permute(perm, kinds, toks, ea, ec):
    inv = torch.empty_like(perm)
    inv[perm] = torch.arange(len(perm))
    return kinds[perm], toks[perm], inv[ea], inv[ec]
