"""Structure branch: node embeddings and two GAT stacks over AST and CFG edges."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn


def add_self_loops(edge_index: torch.Tensor, num_nodes: int, undirected: bool = False) -> torch.Tensor:
    """Drop existing self loops, optionally mirror edges, then add one loop per node."""
    edge_index = edge_index.reshape(2, -1).long()
    if edge_index.numel() and (edge_index.min() < 0 or edge_index.max() >= num_nodes):
        raise IndexError(f"edge index outside [0, {num_nodes})")
    keep = edge_index[0] != edge_index[1]
    edge_index = edge_index[:, keep]
    if undirected and edge_index.numel():
        edge_index = torch.cat([edge_index, edge_index.flip(0)], dim=1)
        edge_index = torch.unique(edge_index, dim=1)
    loops = torch.arange(num_nodes, device=edge_index.device).expand(2, -1)
    return torch.cat([edge_index, loops], dim=1)


def gat_attention(x_i, neighbors, W, a, negative_slope: float = 0.2):
    """Attention weights of node ``i`` over its neighbourhood (single head).

    ``x_i`` is ``(d,)``, ``neighbors`` is ``(k, d)`` (including ``i`` itself when
    self loops are used), ``W`` is ``(d_out, d)`` and ``a`` is ``(2 * d_out,)``.
    """
    neighbors = torch.as_tensor(neighbors)
    if neighbors.ndim != 2 or neighbors.shape[0] == 0:
        raise ValueError("attention needs a non-empty neighbourhood")
    wi = W @ x_i
    wj = neighbors @ W.T
    d_out = wi.shape[0]
    logits = F.leaky_relu(a[:d_out] @ wi + wj @ a[d_out:], negative_slope)
    return torch.softmax(logits, dim=0)


def segment_softmax(logits: torch.Tensor, index: torch.Tensor, num_segments: int) -> torch.Tensor:
    """Softmax of ``logits`` (E, H) within groups sharing the same ``index``."""
    idx = index.unsqueeze(-1).expand_as(logits)
    # the shift only stabilises exp; softmax is invariant to it
    seg_max = torch.full((num_segments, logits.shape[1]), float("-inf"), dtype=logits.dtype, device=logits.device)
    seg_max = seg_max.scatter_reduce(0, idx, logits.detach(), reduce="amax", include_self=True)
    w = torch.exp(logits - seg_max.gather(0, idx))
    denom = torch.zeros_like(seg_max).index_add_(0, index, w)
    return w / denom.gather(0, idx)


class GATLayer(nn.Module):
    """Multi-head graph attention; heads are concatenated then projected back to ``out_dim``.

    With ``heads=1`` there is no projection and the layer computes
    ``act(sum_j alpha_ij W x_j)`` directly.
    """

    def __init__(self, in_dim: int, out_dim: int, heads: int = 4, negative_slope: float = 0.2,
                 activation=F.elu, dropout: float = 0.0):
        super().__init__()
        self.heads = heads
        self.out_dim = out_dim
        self.negative_slope = negative_slope
        self.activation = activation
        self.W = nn.Linear(in_dim, heads * out_dim, bias=False)
        self.att_dst = nn.Parameter(torch.empty(heads, out_dim))
        self.att_src = nn.Parameter(torch.empty(heads, out_dim))
        self.proj = nn.Linear(heads * out_dim, out_dim) if heads > 1 else None
        self.dropout = nn.Dropout(dropout)
        nn.init.xavier_uniform_(self.W.weight)
        nn.init.xavier_uniform_(self.att_dst)
        nn.init.xavier_uniform_(self.att_src)

    def forward(self, x: torch.Tensor, edge_index: torch.Tensor, return_attention: bool = False):
        """``edge_index`` rows are (source, target); messages flow source -> target.

        The caller is responsible for self loops.
        """
        n = x.shape[0]
        if edge_index.numel() and (edge_index.min() < 0 or edge_index.max() >= n):
            raise IndexError(f"edge index outside [0, {n})")
        src, dst = edge_index[0], edge_index[1]
        h = self.W(x).view(n, self.heads, self.out_dim)
        logits = (h[dst] * self.att_dst).sum(-1) + (h[src] * self.att_src).sum(-1)
        logits = F.leaky_relu(logits, self.negative_slope)
        alpha = segment_softmax(logits, dst, n)
        msg = self.dropout(alpha).unsqueeze(-1) * h[src]
        out = torch.zeros_like(h).index_add_(0, dst, msg).reshape(n, self.heads * self.out_dim)
        if self.proj is not None:
            out = self.proj(out)
        out = self.activation(out)
        return (out, alpha) if return_attention else out


class GAT(nn.Module):
    def __init__(self, in_dim: int, out_dim: int, layers: int = 2, heads: int = 4,
                 negative_slope: float = 0.2, dropout: float = 0.0):
        super().__init__()
        dims = [in_dim] + [out_dim] * layers
        self.layers = nn.ModuleList(
            GATLayer(dims[i], dims[i + 1], heads, negative_slope, dropout=dropout) for i in range(layers)
        )

    def forward(self, x, edge_index, return_attention: bool = False):
        attn = []
        for layer in self.layers:
            x, a = layer(x, edge_index, return_attention=True)
            attn.append(a)
        return (x, attn) if return_attention else x


class StructureEncoder(nn.Module):
    """``F_s = f_A(X, E_A) + f_C(X, E_C)`` with ``X = kind_emb + token_emb``.

    Both GATs read the same embedding tables. ``share_gat`` makes ``f_C`` the
    same module as ``f_A`` (only used by tests of the additive merge).
    """

    def __init__(self, n_kinds: int, n_tokens: int, node_dim: int = 128, out_dim: int = 128,
                 layers: int = 2, heads: int = 4, negative_slope: float = 0.2, dropout: float = 0.0,
                 undirected: bool = True, share_gat: bool = False):
        super().__init__()
        self.kind_emb = nn.Embedding(n_kinds, node_dim)
        self.token_emb = nn.Embedding(n_tokens, node_dim)
        self.undirected = undirected
        self.gat_ast = GAT(node_dim, out_dim, layers, heads, negative_slope, dropout)
        self.gat_cfg = self.gat_ast if share_gat else GAT(node_dim, out_dim, layers, heads, negative_slope, dropout)
        self.out_dim = out_dim

    def embed_nodes(self, kind_ids: torch.Tensor, token_ids: torch.Tensor) -> torch.Tensor:
        # ids beyond the table fall back to UNK (index 0 for kinds, 1 for tokens)
        kind_ids = torch.where(kind_ids < self.kind_emb.num_embeddings, kind_ids, torch.zeros_like(kind_ids))
        token_ids = torch.where(token_ids < self.token_emb.num_embeddings, token_ids, torch.ones_like(token_ids))
        return self.kind_emb(kind_ids) + self.token_emb(token_ids)

    def forward(self, kind_ids, token_ids, ast_edges, cfg_edges, return_attention: bool = False):
        x = self.embed_nodes(kind_ids, token_ids)
        n = x.shape[0]
        ea = add_self_loops(ast_edges, n, self.undirected)
        ec = add_self_loops(cfg_edges, n, self.undirected)
        fa, attn_a = self.gat_ast(x, ea, return_attention=True)
        fc, attn_c = self.gat_cfg(x, ec, return_attention=True)
        out = fa + fc
        if return_attention:
            return out, {"ast": (ea, attn_a), "cfg": (ec, attn_c)}
        return out
