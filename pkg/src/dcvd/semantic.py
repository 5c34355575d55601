"""Semantic branch: shared token embedding, explanation pooling and injection."""

from __future__ import annotations

import torch
from torch import nn

from .tokenization import PAD_ID


def pool_explanation(T: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Masked mean over the sequence axis.

    ``T`` is ``(L, d)`` or ``(B, L, d)``; ``mask`` matches its leading dims.
    """
    T = torch.as_tensor(T)
    mask = torch.as_tensor(mask).to(T.dtype)
    denom = mask.sum(-1, keepdim=True)
    if (denom == 0).any():
        raise ValueError("explanation mask selects no tokens")
    # zero padded rows explicitly so non-finite pad content cannot leak through 0 * x
    masked = torch.where(mask.unsqueeze(-1) > 0, T, torch.zeros_like(T))
    return masked.sum(-2) / denom


class SemanticEncoder(nn.Module):
    """``F_t = tanh(proj(C + t_bar))`` where ``C`` and ``T`` come from one embedding table."""

    def __init__(self, vocab_size: int, embed_dim: int = 128, out_dim: int = 128):
        super().__init__()
        self.embedding = nn.Embedding(vocab_size, embed_dim, padding_idx=PAD_ID)
        self.proj = nn.Linear(embed_dim, out_dim)
        self.out_dim = out_dim

    def load_embedding_weights(self, weight: torch.Tensor) -> None:
        """Copy a pre-trained token embedding table (rows must follow this vocabulary)."""
        if weight.shape != self.embedding.weight.shape:
            raise ValueError(f"expected embedding of shape {tuple(self.embedding.weight.shape)}, got {tuple(weight.shape)}")
        with torch.no_grad():
            self.embedding.weight.copy_(weight)

    def embed(self, ids: torch.Tensor) -> torch.Tensor:
        ids = torch.where(ids < self.embedding.num_embeddings, ids, torch.ones_like(ids))
        return self.embedding(ids)

    def inject(self, C: torch.Tensor, t_bar: torch.Tensor) -> torch.Tensor:
        return torch.tanh(self.proj(C + t_bar.unsqueeze(-2)))

    def forward(self, code_ids, expl_ids, expl_mask):
        C = self.embed(code_ids)
        T = self.embed(expl_ids)
        t_bar = pool_explanation(T, expl_mask)
        return self.inject(C, t_bar)
