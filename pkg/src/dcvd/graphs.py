"""AST + CFG extraction over a single shared node set.

Nodes are the named tree-sitter nodes of the first function definition in
the source, plus one synthetic exit node. AST edges follow the parse tree
(parent -> child). CFG edges connect the statement-bearing nodes of that
same list in execution order.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from functools import lru_cache

import tree_sitter_c
from tree_sitter import Language, Node, Parser

UNK_KIND = "UNK"
EXIT_KIND = "CFG_EXIT"
MAX_TOKEN_CHARS = 40

_LANGUAGE = Language(tree_sitter_c.language())
_local = threading.local()


class GraphExtractionError(ValueError):
    pass


@lru_cache(maxsize=1)
def kind_vocabulary() -> tuple[str, ...]:
    """Every named node kind the C grammar can emit, plus the reserved tags.

    Index 0 is ``UNK``.
    """
    names = {
        _LANGUAGE.node_kind_for_id(i)
        for i in range(_LANGUAGE.node_kind_count)
        if _LANGUAGE.node_kind_is_named(i) and _LANGUAGE.node_kind_is_visible(i)
    }
    names.update({"ERROR", EXIT_KIND})
    names.discard(UNK_KIND)
    return (UNK_KIND, *sorted(names))


def kind_index(kind: str) -> int:
    table = _kind_table()
    return table.get(kind, 0)


@lru_cache(maxsize=1)
def _kind_table() -> dict[str, int]:
    return {k: i for i, k in enumerate(kind_vocabulary())}


@dataclass(frozen=True)
class GraphNode:
    index: int
    kind: str
    token: str
    line: int

    def __post_init__(self):
        if self.kind not in _kind_table():
            object.__setattr__(self, "kind", UNK_KIND)


@dataclass
class CodeGraph:
    nodes: list[GraphNode]
    ast_edges: list[tuple[int, int]] = field(default_factory=list)
    cfg_edges: list[tuple[int, int]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "nodes": [{"kind": n.kind, "token": n.token, "line": n.line} for n in self.nodes],
            "ast_edges": [list(e) for e in self.ast_edges],
            "cfg_edges": [list(e) for e in self.cfg_edges],
        }

    def to_json(self, indent: int | None = None) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, data: dict) -> "CodeGraph":
        nodes = [GraphNode(i, n["kind"], n["token"], n["line"]) for i, n in enumerate(data["nodes"])]
        return cls(
            nodes,
            [tuple(e) for e in data["ast_edges"]],
            [tuple(e) for e in data["cfg_edges"]],
        )

    def validate(self, n_lines: int | None = None) -> None:
        n = len(self.nodes)
        if n == 0:
            raise GraphExtractionError("graph has no nodes")
        for name, edges in (("ast", self.ast_edges), ("cfg", self.cfg_edges)):
            for s, d in edges:
                if not (0 <= s < n and 0 <= d < n):
                    raise GraphExtractionError(f"{name} edge ({s}, {d}) outside node range {n}")
        if n_lines is not None:
            for node in self.nodes:
                if not 0 <= node.line < n_lines:
                    raise GraphExtractionError(f"node {node.index} line {node.line} outside [0, {n_lines})")

    def successors(self, idx: int, kind: str = "cfg") -> list[int]:
        edges = self.cfg_edges if kind == "cfg" else self.ast_edges
        return [d for s, d in edges if s == idx]


def node_count(graph: CodeGraph) -> int:
    return len(graph.nodes)


def _parser() -> Parser:
    # tree-sitter parsers are not shared between threads
    p = getattr(_local, "parser", None)
    if p is None:
        p = _local.parser = Parser(_LANGUAGE)
    return p


def _find_function(node: Node) -> Node | None:
    stack = [node]
    while stack:
        cur = stack.pop()
        if cur.type == "function_definition":
            return cur
        stack.extend(reversed(cur.children))
    return None


def _leading_lexeme(node: Node) -> str:
    cur = node
    while cur.child_count:
        cur = cur.children[0]
    text = cur.text.decode("utf-8", errors="replace") if cur.text is not None else ""
    text = text.split()[0] if text.split() else ""
    return text[:MAX_TOKEN_CHARS]


_LOOPS = {"while_statement", "for_statement", "do_statement"}
_SKIP_IN_BLOCK = {"comment", "{", "}"}


class _CFGBuilder:
    """Statement-level control flow over AST node ids."""

    def __init__(self, ids: dict[int, int], exit_idx: int):
        self.ids = ids
        self.exit = exit_idx
        self.edges: list[tuple[int, int]] = []
        self._seen: set[tuple[int, int]] = set()
        # stacks of (break_sink, continue_target)
        self.break_sinks: list[list[int]] = []
        self.continue_targets: list[int | None] = []

    def idx(self, node: Node) -> int:
        return self.ids[node.id]

    def link(self, preds, dst: int) -> None:
        for p in preds:
            e = (p, dst)
            if e not in self._seen:
                self._seen.add(e)
                self.edges.append(e)

    def block(self, stmts, preds: list[int]) -> list[int]:
        cur = preds
        for s in stmts:
            if not s.is_named or s.type in _SKIP_IN_BLOCK:
                continue
            cur = self.stmt(s, cur)
        return cur

    def stmt(self, node: Node, preds: list[int]) -> list[int]:
        t = node.type
        if t == "compound_statement":
            return self.block(node.children, preds)
        if t == "else_clause":
            return self.block(node.named_children, preds)
        me = self.idx(node)
        self.link(preds, me)
        if t == "if_statement":
            cons = node.child_by_field_name("consequence")
            alt = node.child_by_field_name("alternative")
            exits = self.stmt(cons, [me]) if cons is not None else [me]
            exits = exits + (self.stmt(alt, [me]) if alt is not None else [me])
            return exits
        if t in ("while_statement", "for_statement"):
            self.break_sinks.append([])
            self.continue_targets.append(me)
            body = node.child_by_field_name("body")
            body_exits = self.stmt(body, [me]) if body is not None else [me]
            self.link(body_exits, me)
            breaks = self.break_sinks.pop()
            self.continue_targets.pop()
            return [me] + breaks
        if t == "do_statement":
            # the node stands for the trailing condition: body runs first, then loops back
            self.break_sinks.append([])
            self.continue_targets.append(me)
            body = node.child_by_field_name("body")
            body_exits = self.stmt(body, preds + [me]) if body is not None else [me]
            self.link(body_exits, me)
            breaks = self.break_sinks.pop()
            self.continue_targets.pop()
            return [me] + breaks
        if t == "switch_statement":
            self.break_sinks.append([])
            self.continue_targets.append(self.continue_targets[-1] if self.continue_targets else None)
            body = node.child_by_field_name("body")
            fall: list[int] = []
            has_default = False
            loose = [me]
            for child in (body.named_children if body is not None else []):
                if child.type != "case_statement":
                    if child.type not in _SKIP_IN_BLOCK:
                        loose = self.stmt(child, loose)
                    continue
                if child.child_by_field_name("value") is None:
                    has_default = True
                case_idx = self.idx(child)
                self.link([me] + fall, case_idx)
                value = child.child_by_field_name("value")
                inner = [c for c in child.named_children if value is None or c.id != value.id]
                fall = self.block(inner, [case_idx])
            breaks = self.break_sinks.pop()
            self.continue_targets.pop()
            exits = fall + breaks
            if not has_default:
                exits = [me] + exits
            return exits
        if t == "break_statement":
            if self.break_sinks:
                self.break_sinks[-1].append(me)
                return []
            return [me]
        if t == "continue_statement":
            target = self.continue_targets[-1] if self.continue_targets else None
            if target is not None:
                self.link([me], target)
                return []
            return [me]
        if t == "return_statement":
            self.link([me], self.exit)
            return []
        if t == "labeled_statement":
            inner = [c for c in node.named_children if c.type != "statement_identifier"]
            return self.block(inner, [me])
        if t == "case_statement":
            # stray case outside a switch body (error-tolerant parse)
            value = node.child_by_field_name("value")
            inner = [c for c in node.named_children if value is None or c.id != value.id]
            return self.block(inner, [me])
        return [me]


def extract_graph(source: str) -> CodeGraph:
    """Parse one C/C++ function into a :class:`CodeGraph`.

    Raises :class:`GraphExtractionError` for empty input or when no function
    definition can be recognised.
    """
    if not source or not source.strip():
        raise GraphExtractionError("empty source")
    tree = _parser().parse(source.encode("utf-8"))
    func = _find_function(tree.root_node)
    if func is None:
        raise GraphExtractionError("no function definition recognised")

    nodes: list[GraphNode] = []
    ids: dict[int, int] = {}
    ast_edges: list[tuple[int, int]] = []

    stack: list[tuple[Node, int | None]] = [(func, None)]
    while stack:
        cur, parent = stack.pop()
        idx = len(nodes)
        ids[cur.id] = idx
        nodes.append(GraphNode(idx, cur.type, _leading_lexeme(cur), cur.start_point[0]))
        if parent is not None:
            ast_edges.append((parent, idx))
        for child in reversed(cur.named_children):
            stack.append((child, idx))

    exit_idx = len(nodes)
    nodes.append(GraphNode(exit_idx, EXIT_KIND, "<exit>", func.end_point[0]))

    builder = _CFGBuilder(ids, exit_idx)
    entry = ids[func.id]
    body = func.child_by_field_name("body")
    tail = builder.stmt(body, [entry]) if body is not None else [entry]
    builder.link(tail, exit_idx)

    graph = CodeGraph(nodes, ast_edges, builder.edges)
    graph.validate(source.count("\n") + 1)
    return graph
