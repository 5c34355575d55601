"""Turn CodeFunctions into model-ready tensors and collate them into batches."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import torch

from .dataset import CodeFunction
from .explain import Explainer
from .graphs import GraphExtractionError, extract_graph, kind_index, kind_vocabulary
from .tokenization import PAD_ID, CodeTokenizer, Vocab, lex, map_tokens_to_lines

logger = logging.getLogger(__name__)


@dataclass
class Sample:
    id: str
    y_f: int
    flaw_lines: frozenset[int]
    n_lines: int
    kind_ids: torch.Tensor | None = None
    node_tok_ids: torch.Tensor | None = None
    ast_edges: torch.Tensor | None = None
    cfg_edges: torch.Tensor | None = None
    node_lines: torch.Tensor | None = None
    code_ids: torch.Tensor | None = None
    token_line: torch.Tensor | None = None
    expl_ids: torch.Tensor | None = None
    n_truncated: int = 0


@dataclass
class Batch:
    ids: list[str]
    y: torch.Tensor
    n_lines: list[int]
    flaw_lines: list[frozenset[int]]
    # structure inputs (disjoint union of graphs)
    kind_ids: torch.Tensor | None = None
    node_tok_ids: torch.Tensor | None = None
    ast_edges: torch.Tensor | None = None
    cfg_edges: torch.Tensor | None = None
    node_batch: torch.Tensor | None = None
    node_pos: torch.Tensor | None = None
    node_lines: torch.Tensor | None = None      # (B, N_max), -1 on padding
    node_mask: torch.Tensor | None = None       # (B, N_max)
    # semantic inputs
    code_ids: torch.Tensor | None = None
    code_mask: torch.Tensor | None = None
    token_line: torch.Tensor | None = None
    expl_ids: torch.Tensor | None = None
    expl_mask: torch.Tensor | None = None

    def __len__(self):
        return len(self.ids)

    @property
    def max_lines(self) -> int:
        return max(self.n_lines)


def build_vocab(functions: Sequence[CodeFunction], explanations: dict[str, str] | None = None,
                min_freq: int = 1, max_size: int | None = None) -> Vocab:
    """Vocabulary over code lexemes, graph node lexemes and explanation words."""
    streams = [[t for t, _, _ in lex(fn.source)] for fn in functions]
    if explanations:
        streams += [[t for t, _, _ in lex(text)] for text in explanations.values()]
    return Vocab.build(streams, min_freq=min_freq, max_size=max_size)


class Featurizer:
    """Featurizes functions for one model variant.

    ``graph_calls`` and ``explain_calls`` count front-end invocations, so the
    ablation wiring can be checked from the outside.
    """

    def __init__(self, vocab: Vocab, max_seq: int = 512, explainer: Explainer | None = None,
                 use_structure: bool = True, use_semantic: bool = True):
        self.vocab = vocab
        self.tokenizer = CodeTokenizer(vocab, max_seq)
        self.explainer = explainer
        self.use_structure = use_structure
        self.use_semantic = use_semantic
        self.graph_calls = 0
        self.explain_calls = 0

    def __call__(self, fn: CodeFunction) -> Sample:
        sample = Sample(fn.id, fn.y_f, fn.flaw_lines, fn.n_lines)
        if self.use_structure:
            self.graph_calls += 1
            try:
                graph = extract_graph(fn.source)
            except GraphExtractionError as exc:
                raise GraphExtractionError(f"{fn.id}: {exc}") from exc
            sample.kind_ids = torch.tensor([kind_index(n.kind) for n in graph.nodes], dtype=torch.long)
            sample.node_tok_ids = torch.tensor([self.vocab[n.token] for n in graph.nodes], dtype=torch.long)
            sample.ast_edges = torch.tensor(graph.ast_edges, dtype=torch.long).reshape(-1, 2).T
            sample.cfg_edges = torch.tensor(graph.cfg_edges, dtype=torch.long).reshape(-1, 2).T
            sample.node_lines = torch.tensor([n.line for n in graph.nodes], dtype=torch.long)
        if self.use_semantic:
            if self.explainer is None:
                raise RuntimeError("semantic branch needs an explainer")
            self.explain_calls += 1
            record = self.explainer.explain(fn.source, fn.id)
            enc = self.tokenizer.encode(fn.source)
            if enc.n_truncated:
                logger.info("%s: code truncated by %d tokens", fn.id, enc.n_truncated)
            sample.n_truncated = enc.n_truncated
            sample.code_ids = torch.tensor(enc.ids, dtype=torch.long)
            sample.token_line = torch.tensor(map_tokens_to_lines(fn.source, enc.offsets), dtype=torch.long)
            sample.expl_ids = torch.tensor(self.tokenizer.encode(record.text).ids, dtype=torch.long)
        return sample

    def featurize(self, functions: Sequence[CodeFunction], skip_unparseable: bool = False) -> list[Sample]:
        out = []
        for fn in functions:
            try:
                out.append(self(fn))
            except GraphExtractionError:
                if not skip_unparseable:
                    raise
                logger.warning("skipping %s: graph extraction failed", fn.id)
        return out


def n_kinds() -> int:
    return len(kind_vocabulary())


def _pad(seqs: Sequence[torch.Tensor], value: int) -> torch.Tensor:
    width = max(len(s) for s in seqs)
    out = torch.full((len(seqs), width), value, dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


def collate(samples: Sequence[Sample]) -> Batch:
    if not samples:
        raise ValueError("empty batch")
    batch = Batch(
        ids=[s.id for s in samples],
        y=torch.tensor([s.y_f for s in samples], dtype=torch.float32),
        n_lines=[s.n_lines for s in samples],
        flaw_lines=[s.flaw_lines for s in samples],
    )
    first = samples[0]
    if first.kind_ids is not None:
        offset = 0
        ast, cfg, nb, pos = [], [], [], []
        for b, s in enumerate(samples):
            n = len(s.kind_ids)
            ast.append(s.ast_edges + offset)
            cfg.append(s.cfg_edges + offset)
            nb.append(torch.full((n,), b, dtype=torch.long))
            pos.append(torch.arange(n))
            offset += n
        batch.kind_ids = torch.cat([s.kind_ids for s in samples])
        batch.node_tok_ids = torch.cat([s.node_tok_ids for s in samples])
        batch.ast_edges = torch.cat(ast, dim=1)
        batch.cfg_edges = torch.cat(cfg, dim=1)
        batch.node_batch = torch.cat(nb)
        batch.node_pos = torch.cat(pos)
        batch.node_lines = _pad([s.node_lines for s in samples], -1)
        batch.node_mask = batch.node_lines >= 0
    if first.code_ids is not None:
        batch.code_ids = _pad([s.code_ids for s in samples], PAD_ID)
        batch.code_mask = _pad([torch.ones(len(s.code_ids), dtype=torch.long) for s in samples], 0).bool()
        batch.token_line = _pad([s.token_line for s in samples], -1)
        batch.expl_ids = _pad([s.expl_ids for s in samples], PAD_ID)
        batch.expl_mask = _pad([torch.ones(len(s.expl_ids), dtype=torch.long) for s in samples], 0).bool()
    return batch
