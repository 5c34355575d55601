"""Cross-modal fusion: contrastive alignment, bidirectional cross-attention, merge, contextualizer."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


def masked_mean(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean over axis -2 of ``x`` (B, S, d) restricted to ``mask`` (B, S)."""
    m = mask.to(x.dtype)
    denom = m.sum(-1, keepdim=True)
    if (denom == 0).any():
        raise ValueError("mask selects no positions")
    x = torch.where(mask.unsqueeze(-1), x, torch.zeros_like(x))
    return x.sum(-2) / denom


def align_loss(g: torch.Tensor, c: torch.Tensor, tau: float = 0.07, symmetric: bool = False) -> torch.Tensor:
    """In-batch contrastive loss pairing ``g[i]`` with ``c[i]`` (cosine similarity / ``tau``).

    Only the g -> c direction is used unless ``symmetric`` is set.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if g.ndim != 2 or g.shape != c.shape or g.shape[0] < 1:
        raise ValueError(f"g and c must be matching non-empty (B, d) matrices, got {tuple(g.shape)} and {tuple(c.shape)}")
    gn = g.norm(dim=-1, keepdim=True)
    cn = c.norm(dim=-1, keepdim=True)
    if (gn == 0).any() or (cn == 0).any():
        raise ValueError("cosine similarity undefined for zero-norm rows")
    sim = (g / gn) @ (c / cn).T / tau
    target = torch.arange(g.shape[0], device=g.device)
    loss = F.cross_entropy(sim, target)
    if symmetric:
        loss = 0.5 * (loss + F.cross_entropy(sim.T, target))
    return loss


def _attend(q, k, v, key_mask, scale):
    scores = q @ k.transpose(-1, -2) / scale
    if key_mask is not None:
        scores = scores.masked_fill(~key_mask.unsqueeze(-2), float("-inf"))
    attn = torch.softmax(scores, dim=-1)
    return attn @ v, attn


class CrossAttention(nn.Module):
    """Single-head attention in both directions with separate projections."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.q_s = nn.Linear(dim, dim, bias=False)
        self.k_t = nn.Linear(dim, dim, bias=False)
        self.v_t = nn.Linear(dim, dim, bias=False)
        self.q_t = nn.Linear(dim, dim, bias=False)
        self.k_s = nn.Linear(dim, dim, bias=False)
        self.v_s = nn.Linear(dim, dim, bias=False)

    def forward(self, F_s, F_t, node_mask=None, token_mask=None, return_attention=False):
        if F_s.shape[-1] != self.dim or F_t.shape[-1] != self.dim:
            raise ValueError(f"feature width mismatch: {F_s.shape[-1]}, {F_t.shape[-1]} vs {self.dim}")
        if F_s.shape[-2] == 0 or F_t.shape[-2] == 0:
            raise ValueError("cross-attention needs non-empty inputs")
        scale = math.sqrt(self.dim)
        H_s, a_s = _attend(self.q_s(F_s), self.k_t(F_t), self.v_t(F_t), token_mask, scale)
        H_t, a_t = _attend(self.q_t(F_t), self.k_s(F_s), self.v_s(F_s), node_mask, scale)
        if return_attention:
            return H_s, H_t, a_s, a_t
        return H_s, H_t


class Merge(nn.Module):
    """``H = tanh(W_m [H_t || mean(H_s)])`` with the node mean broadcast over tokens."""

    def __init__(self, dim: int):
        super().__init__()
        self.W_m = nn.Linear(2 * dim, dim, bias=False)

    def forward(self, H_t, H_s, node_mask=None):
        if H_s.shape[-2] == 0:
            raise ValueError("cannot merge an empty structural sequence")
        if node_mask is None:
            node_mask = torch.ones(H_s.shape[:-1], dtype=torch.bool, device=H_s.device)
        h_bar = masked_mean(H_s, node_mask)
        h_bar = h_bar.unsqueeze(-2).expand_as(H_t)
        return torch.tanh(self.W_m(torch.cat([H_t, h_bar], dim=-1)))


class ConcatFusion(nn.Module):
    """Ablation stand-in: concatenate tokens with the mean node vector and apply an MLP."""

    def __init__(self, dim: int):
        super().__init__()
        self.mlp = nn.Sequential(nn.Linear(2 * dim, dim), nn.ReLU(), nn.Linear(dim, dim), nn.Tanh())

    def forward(self, F_t, F_s, node_mask):
        s_bar = masked_mean(F_s, node_mask).unsqueeze(-2).expand_as(F_t)
        return self.mlp(torch.cat([F_t, s_bar], dim=-1))


class Contextualizer(nn.Module):
    """``K = out(f_T(W_a H))``: a Transformer encoder between two affine maps.

    Padding is excluded from attention through ``src_key_padding_mask``.
    """

    def __init__(self, in_dim: int = 128, hidden: int = 128, out_dim: int = 256, layers: int = 2,
                 heads: int = 4, max_len: int = 512, dropout: float = 0.1):
        super().__init__()
        self.max_len = max_len
        self.W_a = nn.Linear(in_dim, hidden)
        self.pos = nn.Embedding(max_len, hidden)
        layer = nn.TransformerEncoderLayer(hidden, heads, dim_feedforward=4 * hidden, dropout=dropout,
                                           activation="gelu", batch_first=True)
        self.encoder = nn.TransformerEncoder(layer, layers, enable_nested_tensor=False)
        self.out = nn.Linear(hidden, out_dim)

    def forward(self, H, mask=None):
        squeeze = H.ndim == 2
        if squeeze:
            H = H.unsqueeze(0)
            mask = None if mask is None else mask.unsqueeze(0)
        M = H.shape[1]
        if M > self.max_len:
            raise ValueError(f"sequence length {M} exceeds contextualizer budget {self.max_len}")
        x = self.W_a(H) + self.pos(torch.arange(M, device=H.device))
        pad = None if mask is None else ~mask
        K = self.out(self.encoder(x, src_key_padding_mask=pad))
        return K.squeeze(0) if squeeze else K
