"""Small generated C corpora for smoke runs and tests."""

from __future__ import annotations

import random

from .dataset import CodeFunction

_NAMES = ["parse_header", "copy_name", "read_packet", "load_entry", "fill_buffer", "set_label",
          "decode_field", "store_token", "handle_msg", "build_path", "update_user", "scan_block"]
_FILLER = [
    "int count = 0;",
    "count = count + 1;",
    "log_debug(\"step\", count);",
    "if (flags & 1) { count++; }",
    "total += size;",
    "for (i = 0; i < 4; i++) { acc ^= i; }",
    "state->ready = 1;",
    "status = check_state(state);",
]
_BAD = [
    "strcpy(buf, src);",
    "memcpy(buf, src, len);",
    "sprintf(buf, \"%s\", src);",
    "buf[len] = 0;",
]
_GOOD = [
    "strncpy(buf, src, sizeof(buf) - 1);",
    "if (len < sizeof(buf)) { memcpy(buf, src, len); }",
    "snprintf(buf, sizeof(buf), \"%s\", src);",
    "if (len < sizeof(buf)) { buf[len] = 0; }",
]


def make_function(idx: int, vulnerable: bool, rng: random.Random) -> CodeFunction:
    name = f"{rng.choice(_NAMES)}_{idx}"
    body = ["char buf[64];", "int i, acc = 0, total = 0, status = 0;"]
    n_fill = rng.randint(2, 5)
    fill = [rng.choice(_FILLER) for _ in range(n_fill)]
    pos = rng.randint(0, n_fill)
    kind = rng.randrange(len(_BAD))
    sink = _BAD[kind] if vulnerable else _GOOD[kind]
    stmts = body + fill[:pos] + [sink] + fill[pos:] + ["return status;"]
    lines = [f"int {name}(struct ctx *state, const char *src, size_t len, int flags, size_t size)", "{"]
    lines += ["    " + s for s in stmts]
    lines.append("}")
    flaw = frozenset({2 + len(body) + pos}) if vulnerable else frozenset()
    return CodeFunction(f"syn-{idx}", "\n".join(lines), int(vulnerable), flaw)


def make_synthetic(n: int = 20, seed: int = 0) -> list[CodeFunction]:
    """``n`` functions, alternating vulnerable/benign, each vulnerable one with a single flaw line."""
    rng = random.Random(seed)
    return [make_function(i, i % 2 == 0, rng) for i in range(n)]
