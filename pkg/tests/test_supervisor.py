import math

import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st

from dcvd.supervisor import (
    FunctionHead,
    LossBreakdown,
    LossError,
    StatementHead,
    bce,
    function_head_prob,
    line_scores,
    statement_loss,
    total_loss,
)
from gradcheck_util import analytic_grad, numeric_grad, relative_error

D64 = torch.float64


def test_function_head_zero_logit_gives_half():
    head = FunctionHead(4).double()
    with torch.no_grad():
        head.g_f[-1].weight.zero_()
        head.g_f[-1].bias.zero_()
    K = torch.randn(5, 4, dtype=D64)
    assert function_head_prob(head, K, torch.ones(5, dtype=torch.bool)).item() == 0.5


def test_function_head_ignores_padding():
    torch.manual_seed(0)
    head = FunctionHead(4).double()
    K = torch.randn(1, 5, 4, dtype=D64)
    mask = torch.tensor([[True, True, True, False, False]])
    a = head(K, mask)
    K[0, 3:] = 1e6
    assert torch.equal(a, head(K, mask))
    with pytest.raises(ValueError):
        head(K, torch.zeros(1, 5, dtype=torch.bool))


def test_bce_closed_form():
    assert bce(0.5, 1.0).item() == pytest.approx(math.log(2), abs=1e-12)


def test_statement_head_defaults_and_layer_norm():
    torch.manual_seed(0)
    head = StatementHead(16).double()
    assert head.f_sa.num_heads == 8
    K = torch.randn(1, 16, dtype=D64)
    out = head.refine(K)
    assert out.shape == (1, 16)
    Kt = head.refine(torch.randn(7, 16, dtype=D64))
    assert torch.allclose(Kt.mean(-1), torch.zeros(7, dtype=D64), atol=1e-9)
    assert torch.allclose(Kt.var(-1, unbiased=False), torch.ones(7, dtype=D64), atol=1e-3)


def test_line_score_examples():
    s, scored = line_scores(torch.tensor([4.0, 4.0, 4.0]), torch.tensor([0, 0, 0]), 1)
    assert s.tolist() == [4.0] and scored.tolist() == [True]
    s, _ = line_scores(torch.tensor([1.0, 3.0]), torch.tensor([0, 0]), 1)
    assert s.tolist() == [2.0]


def test_line_scores_match_brute_force():
    torch.manual_seed(0)
    K = torch.randn(7, 5, dtype=D64)
    w = torch.randn(5, dtype=D64)
    lines = [-1, 0, 0, 2, 2, 2, 0]
    tok = (K @ w)
    s, scored = line_scores(tok, torch.tensor(lines), 3)
    for l in range(3):
        members = [i for i, x in enumerate(lines) if x == l]
        if members:
            assert s[l].item() == pytest.approx(sum(float(K[i] @ w) for i in members) / len(members), abs=1e-12)
    assert scored.tolist() == [True, False, True]
    with pytest.raises(IndexError):
        line_scores(tok, torch.tensor([0, 0, 0, 0, 0, 0, 5]), 3)


def test_statement_loss_trivial_cases():
    assert statement_loss(torch.tensor([1.7], dtype=D64), [0]).item() == 0.0
    assert statement_loss(torch.full((4,), 0.3, dtype=D64), [0, 1, 2, 3]).item() == pytest.approx(0.0, abs=1e-12)


def test_statement_loss_direct_formula():
    s = torch.tensor([2.0, 0.0, 0.0], dtype=D64)
    p0 = math.exp(2) / (math.exp(2) + 2)
    assert statement_loss(s, [0]).item() == pytest.approx(-math.log(p0), abs=1e-12)


def test_statement_loss_restricted_to_scored_lines():
    s = torch.tensor([2.0, 50.0, 0.0], dtype=D64)
    scored = torch.tensor([True, False, True])
    p0 = math.exp(2) / (math.exp(2) + 1)
    assert statement_loss(s, [0], scored).item() == pytest.approx(-math.log(p0), abs=1e-12)
    with pytest.raises(LossError, match="line 1"):
        statement_loss(s, [1], scored)


@settings(max_examples=60, deadline=None)
@given(scores=st.lists(st.floats(-5, 5), min_size=2, max_size=8), bump=st.floats(0, 5), data=st.data())
def test_raising_a_flaw_score_never_increases_loss(scores, bump, data):
    n = len(scores)
    flaws = data.draw(st.sets(st.integers(0, n - 1), min_size=1))
    s = torch.tensor(scores, dtype=D64)
    before = statement_loss(s, flaws).item()
    s[sorted(flaws)] += bump
    assert statement_loss(s, flaws).item() <= before + 1e-12
    assert before >= 0


def test_total_loss_arithmetic():
    assert total_loss(1.0, 3.0, 2.0, alpha=0.4, beta=0.1) == pytest.approx(2.28, abs=1e-12)
    assert total_loss(1.0, 3.0, 2.0, alpha=1.0, beta=0.1) == pytest.approx(1.2, abs=1e-12)
    assert total_loss(1.0, None, 2.0, alpha=0.4, beta=0.1) == pytest.approx(1.2, abs=1e-12)
    with pytest.raises(LossError):
        total_loss(1.0, 1.0, 1.0, alpha=1.5)


def test_loss_breakdown_check():
    LossBreakdown(1.0, 3.0, 2.0, 0.4 * 1.2 + 0.6 * 3.0, 0.4, 0.1).check()
    with pytest.raises(LossError):
        LossBreakdown(1.0, 3.0, 2.0, 2.0, 0.4, 0.1).check()
    assert "L_s" not in LossBreakdown(1.0, None, 2.0, 1.2, 0.4, 0.1).to_dict()


def test_total_loss_gradient_wrt_K():
    torch.manual_seed(0)
    d = 8
    fhead = FunctionHead(d).double()
    shead = StatementHead(d, heads=8).double()
    token_line = torch.tensor([-1, 0, 0, 1, 2, 2])
    mask = torch.ones(6, dtype=torch.bool)
    L_align = torch.tensor(0.37, dtype=D64)

    def loss(K):
        L_f = F.binary_cross_entropy_with_logits(fhead(K, mask), torch.ones(1, dtype=D64))
        s, scored = shead(K, mask, token_line, 3)
        L_s = statement_loss(s, [1], scored)
        return total_loss(L_f, L_s, L_align, 0.4, 0.1)

    K = torch.randn(6, d, dtype=D64)
    assert relative_error(analytic_grad(loss, K), numeric_grad(loss, K)) < 1e-4
