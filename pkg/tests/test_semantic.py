import math

import pytest
import torch

from dcvd.semantic import SemanticEncoder, pool_explanation


def test_pool_examples():
    T = torch.tensor([[1.0, 2.0], [3.0, 4.0]])
    assert pool_explanation(T, torch.tensor([1, 1])).tolist() == [2.0, 3.0]
    T = torch.tensor([[1.0, 2.0], [9.0, 9.0]])
    assert pool_explanation(T, torch.tensor([1, 0])).tolist() == [1.0, 2.0]
    with pytest.raises(ValueError):
        pool_explanation(T, torch.tensor([0, 0]))


def test_pool_ignores_non_finite_padding():
    T = torch.tensor([[1.0, 2.0], [float("nan"), float("inf")]])
    assert pool_explanation(T, torch.tensor([1, 0])).tolist() == [1.0, 2.0]


def make_encoder(vocab=12, d_h=4, d=3):
    torch.manual_seed(0)
    return SemanticEncoder(vocab, d_h, d).double()


def test_zero_injection_and_identical_tokens():
    enc = make_encoder()
    C = enc.embed(torch.tensor([[5, 6, 5]]))
    out = enc.inject(C, torch.zeros(1, 4, dtype=torch.float64))
    assert torch.equal(out, torch.tanh(enc.proj(C)))
    F_t = enc(torch.tensor([[5, 6, 5]]), torch.tensor([[7, 8]]), torch.tensor([[True, True]]))
    assert torch.equal(F_t[0, 0], F_t[0, 2])
    assert F_t.shape == (1, 3, 3)


def test_hand_evaluation_of_injection():
    enc = SemanticEncoder(4, 2, 2).double()
    with torch.no_grad():
        enc.embedding.weight.copy_(torch.tensor([[0, 0], [1.0, 0.5], [-1.0, 2.0], [0.25, 0.25]]))
        enc.proj.weight.copy_(torch.tensor([[1.0, -1.0], [0.5, 2.0]]))
        enc.proj.bias.copy_(torch.tensor([0.1, -0.2], dtype=torch.float64))
    # code = [1, 2]; explanation = [3, 1] -> t_bar = [0.625, 0.375]
    out = enc(torch.tensor([[1, 2]]), torch.tensor([[3, 1]]), torch.tensor([[1, 1]]))
    expect = []
    for c in ([1.0, 0.5], [-1.0, 2.0]):
        v = [c[0] + 0.625, c[1] + 0.375]
        expect.append([math.tanh(v[0] - v[1] + 0.1), math.tanh(0.5 * v[0] + 2 * v[1] - 0.2)])
    assert out[0].tolist() == [pytest.approx(r, abs=1e-12) for r in expect]


def test_padding_content_is_ignored():
    enc = make_encoder()
    code = torch.tensor([[5, 6, 7]])
    mask = torch.tensor([[True, True, False]])
    a = enc(code, torch.tensor([[7, 8, 0]]), mask)
    b = enc(code, torch.tensor([[7, 8, 11]]), mask)
    assert torch.equal(a, b)


def test_one_embedding_table_serves_code_and_explanation():
    enc = make_encoder()
    tables = [m for m in enc.modules() if isinstance(m, torch.nn.Embedding)]
    assert len(tables) == 1 and tables[0] is enc.embedding
    out = enc(torch.tensor([[2]]), torch.tensor([[9]]), torch.tensor([[True]]))
    out.sum().backward()
    grad = enc.embedding.weight.grad
    # token 9 only occurs in the explanation, token 2 only in code
    assert grad[9].abs().sum() > 0 and grad[2].abs().sum() > 0


def test_pretrained_weights_load():
    enc = make_encoder()
    w = torch.arange(48, dtype=torch.float64).reshape(12, 4)
    enc.load_embedding_weights(w)
    assert torch.equal(enc.embedding.weight, w)
    with pytest.raises(ValueError):
        enc.load_embedding_weights(torch.zeros(3, 3))
