"""The assembled DCVD network and its training objective."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .config import TrainConfig
from .features import Batch
from .fusion import ConcatFusion, Contextualizer, CrossAttention, Merge, align_loss, masked_mean
from .semantic import SemanticEncoder
from .structure import StructureEncoder
from .supervisor import FunctionHead, LossBreakdown, StatementHead, flaw_target, statement_kl, total_loss


@dataclass
class ModelOutput:
    fn_logit: torch.Tensor                  # (B,)
    seq_mask: torch.Tensor                  # (B, S)
    K: torch.Tensor                         # (B, S, d_k)
    line_scores: torch.Tensor | None = None   # (B, L)
    line_scored: torch.Tensor | None = None   # (B, L)
    g: torch.Tensor | None = None
    c: torch.Tensor | None = None

    @property
    def fn_prob(self) -> torch.Tensor:
        return torch.sigmoid(self.fn_logit)


def to_padded(x: torch.Tensor, node_batch: torch.Tensor, node_pos: torch.Tensor, node_mask: torch.Tensor):
    out = x.new_zeros(*node_mask.shape, x.shape[-1])
    out[node_batch, node_pos] = x
    return out


class DCVD(nn.Module):
    def __init__(self, cfg: TrainConfig, vocab_size: int, n_kinds: int):
        super().__init__()
        self.cfg = cfg
        self.variant = cfg.variant
        d = cfg.d_model
        if self.uses_structure:
            self.structure = StructureEncoder(
                n_kinds, vocab_size, cfg.node_dim, d, cfg.gat_layers, cfg.gat_heads,
                cfg.gat_negative_slope, dropout=0.0, undirected=cfg.gat_undirected)
        if self.uses_semantic:
            self.semantic = SemanticEncoder(vocab_size, cfg.embed_dim, d)
        if self.uses_alignment:
            self.cross = CrossAttention(d)
            self.merge = Merge(d)
        if self.variant == "wo_fusion":
            self.concat = ConcatFusion(d)
        self.contextualizer = Contextualizer(d, cfg.ctx_hidden, cfg.d_k, cfg.ctx_layers, cfg.ctx_heads,
                                             cfg.max_seq, cfg.dropout)
        self.function_head = FunctionHead(cfg.d_k)
        if self.uses_statement:
            self.statement_head = StatementHead(cfg.d_k, cfg.stmt_heads, dropout=0.0)

    @property
    def uses_structure(self) -> bool:
        return self.variant != "wo_structure"

    @property
    def uses_semantic(self) -> bool:
        return self.variant != "wo_semantic"

    @property
    def uses_alignment(self) -> bool:
        return self.variant in ("full", "wo_multitask")

    @property
    def uses_statement(self) -> bool:
        return self.variant != "wo_multitask"

    def forward(self, batch: Batch) -> ModelOutput:
        return self.head_forward(*self.encode(batch), batch)

    def encode(self, batch: Batch) -> tuple[torch.Tensor | None, torch.Tensor | None]:
        """Branch features: padded node states F_s (B, N, d) and token states F_t (B, M, d)."""
        F_s = F_t = None
        if self.uses_structure:
            flat = self.structure(batch.kind_ids, batch.node_tok_ids, batch.ast_edges, batch.cfg_edges)
            F_s = to_padded(flat, batch.node_batch, batch.node_pos, batch.node_mask)
        if self.uses_semantic:
            F_t = self.semantic(batch.code_ids, batch.expl_ids, batch.expl_mask)
        return F_s, F_t

    def head_forward(self, F_s, F_t, batch: Batch) -> ModelOutput:
        """Fusion, contextualizer and both heads, starting from branch features."""
        g = c = None
        if self.variant == "wo_semantic":
            # node sequence stands in for tokens; graph nodes carry their own lines
            S = min(F_s.shape[1], self.cfg.max_seq)
            H, seq_mask, pos_line = F_s[:, :S], batch.node_mask[:, :S], batch.node_lines[:, :S]
        else:
            seq_mask, pos_line = batch.code_mask, batch.token_line
            if self.variant == "wo_structure":
                H = F_t
            elif self.variant == "wo_fusion":
                H = self.concat(F_t, F_s, batch.node_mask)
            else:
                g = masked_mean(F_s, batch.node_mask)
                c = masked_mean(F_t, batch.code_mask)
                H_s, H_t = self.cross(F_s, F_t, batch.node_mask, batch.code_mask)
                H = self.merge(H_t, H_s, batch.node_mask)

        K = self.contextualizer(H, seq_mask)
        out = ModelOutput(self.function_head(K, seq_mask), seq_mask, K, g=g, c=c)
        if self.uses_statement:
            out.line_scores, out.line_scored = self.statement_head(K, seq_mask, pos_line, batch.max_lines)
        return out

    def loss(self, out: ModelOutput, batch: Batch) -> tuple[torch.Tensor, LossBreakdown]:
        cfg = self.cfg
        y = batch.y.to(out.fn_logit.dtype)
        L_f = F.binary_cross_entropy_with_logits(out.fn_logit, y)
        L_align = None
        if self.uses_alignment:
            L_align = align_loss(out.g, out.c, cfg.tau, cfg.symmetric_align)
        L_s = None
        if self.uses_statement:
            L_s = statement_objective(out.line_scores, out.line_scored, batch)
        total = total_loss(L_f, L_s, L_align, cfg.alpha, cfg.beta)
        breakdown = LossBreakdown(
            L_f.item(), None if L_s is None else L_s.item(), None if L_align is None else L_align.item(),
            total.item(), cfg.alpha, cfg.beta)
        return total, breakdown


def statement_objective(s: torch.Tensor, scored: torch.Tensor, batch: Batch) -> torch.Tensor:
    """Mean KL over vulnerable functions with at least one scored flaw line."""
    targets, rows = [], []
    for b in range(len(batch)):
        if not batch.y[b] or not batch.flaw_lines[b]:
            continue
        t = flaw_target(batch.flaw_lines[b], scored[b], strict=False)
        if t.sum() > 0:
            targets.append(t)
            rows.append(b)
    if not rows:
        return s.sum() * 0.0
    idx = torch.tensor(rows)
    kl = statement_kl(s[idx], scored[idx], torch.stack(targets).to(s.dtype))
    return kl.mean()
