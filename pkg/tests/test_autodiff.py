import numpy as np
import pytest

from nfde import autodiff as ad
from nfde.autodiff import InvalidParentError, NonFiniteError, Tape, grad_check


def test_fresh_tape_is_empty():
    assert len(Tape()) == 0


def test_record_examples():
    tape = Tape()
    c = tape.record("constant", (), 3.0)
    assert tape.nodes[c].value == 3.0 and tape.nodes[c].parents == ()
    a, b = tape.input(2.0), tape.input(5.0)
    s = ad.add(a, b)
    node = tape.nodes[s.id]
    assert node.value == 7.0 and tuple(map(float, node.local_grads)) == (1.0, 1.0)
    t = ad.tanh(tape.input(0.0))
    assert tape.nodes[t.id].value == 0.0 and float(tape.nodes[t.id].local_grads[0]) == 1.0
    assert len(tape) == 6


def test_record_rejects_forward_parents():
    tape = Tape()
    with pytest.raises(InvalidParentError):
        tape.record("add", (0, 1), 0.0, (1.0, 1.0))
    tape.input(1.0)
    with pytest.raises(NonFiniteError):
        tape.record("ln", (0,), 0.0, (np.inf,))


def test_parents_always_earlier():
    tape = Tape()
    x = tape.input(np.array([0.3, -0.2]))
    y = ad.total(ad.tanh(ad.mul(x, x)) + ad.sigmoid(x))
    ad.ln(ad.exp(y))
    assert all(p < i for i, n in enumerate(tape.nodes) for p in n.parents)


def test_backward_examples():
    tape = Tape()
    x, y = tape.parameter(3.0, "x"), tape.parameter(4.0, "y")
    g = tape.backward(x * y)
    assert g.wrt(x) == 4.0 and g.wrt(y) == 3.0
    assert g.wrt(g.output) == 1.0
    assert set(g.parameters()) == {"x", "y"}

    tape = Tape()
    x = tape.input(0.0)
    assert tape.backward(ad.tanh(x)).wrt(x) == 1.0
    tape = Tape()
    x = tape.input(0.0)
    assert tape.backward(ad.sigmoid(x)).wrt(x) == 0.25


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_nonfinite_adjoint_detected():
    tape = Tape()
    x = tape.input(1e-300)
    y = ad.mul(ad.mul(x, 1e200), 1e200)  # finite values, adjoint of x overflows
    with pytest.raises(NonFiniteError) as err:
        tape.backward(y)
    assert err.value.node_id == x.id


def test_pow_const_clamps_at_zero():
    tape = Tape()
    x = tape.input(np.array([0.0, 4.0]))
    g = tape.backward(ad.total(ad.pow_const(x, 0.5))).wrt(x)
    assert g[0] == ad.POW_CLAMP and g[1] == pytest.approx(0.25)
    assert tape.clamp_count == 1


def test_untaped_ops_return_plain_values():
    assert ad.add(1.0, 2.0) == 3.0
    assert not isinstance(ad.tanh(np.array([0.1])), ad.Var)


UNARY = {
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
    "exp": ad.exp,
    "ln": lambda v: ad.ln(ad.add(ad.mul(v, v), 1.0)),
    "pow_const": lambda v: ad.pow_const(ad.add(ad.mul(v, v), 0.5), 0.7),
    "pow_base": lambda v: ad.pow_base(np.array([0.0, 1.5, 3.0]), ad.add(ad.mul(v, v), 0.1)),
    "gamma": lambda v: ad.gamma_fn(ad.add(ad.total(ad.mul(v, v)), 0.2)),
    "neg": ad.neg,
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_elementary_ops_match_finite_differences(name):
    rng = np.random.default_rng(sorted(UNARY).index(name))
    op = UNARY[name]
    for _ in range(100):
        p = rng.uniform(-1.5, 1.5, size=1)
        err = grad_check(lambda v: ad.total(op(v)), p, eps=1e-6)
        assert err <= 1e-6, (name, p, err)


def test_binary_ops_match_finite_differences():
    rng = np.random.default_rng(5)
    w = rng.normal(size=(3, 2))
    fns = [
        lambda v: ad.total(ad.add(v[0], v[1])),
        lambda v: ad.total(ad.sub(v[0], v[1])),
        lambda v: ad.total(ad.mul(v[0], v[1])),
        lambda v: ad.total(ad.div(v[0], ad.add(ad.mul(v[1], v[1]), 1.0))),
        lambda v: ad.total(ad.matvec(w, v)),
        lambda v: ad.total(ad.weighted_sum(v, [np.array([1.0, 2.0]), np.array([-3.0, 0.5])])),
        lambda v: ad.total(ad.concat([v[0], ad.mul(v, v)])),
    ]
    for fn in fns:
        for _ in range(100):
            p = rng.uniform(-2, 2, size=2)
            assert grad_check(fn, p, eps=1e-6) <= 1e-6


def test_grad_check_quadratic():
    assert grad_check(lambda v: ad.total(ad.mul(v, v)), [3.0], eps=1e-5) <= 1e-9


def test_grad_check_rejects_bad_eps():
    with pytest.raises(ValueError):
        grad_check(lambda v: ad.total(v), [1.0], eps=1.0)


def test_linearity_of_gradients():
    rng = np.random.default_rng(1)
    p = rng.normal(size=4)

    def f(v):
        return ad.total(ad.tanh(v))

    def g(v):
        return ad.total(ad.mul(ad.sigmoid(v), v))

    def grad(fn):
        tape = Tape()
        x = tape.parameter(p, "p")
        return tape.backward(fn(x)).wrt(x)

    a, b = 2.5, -0.75
    combo = grad(lambda v: ad.add(ad.mul(a, f(v)), ad.mul(b, g(v))))
    np.testing.assert_allclose(combo, a * grad(f) + b * grad(g), rtol=0, atol=1e-12)


def test_replay_is_deterministic():
    def run():
        tape = Tape()
        x = tape.parameter(np.array([0.2, -0.4, 0.9]), "x")
        y = ad.total(ad.mul(ad.tanh(ad.matvec(np.eye(3) * 2.0, x)), x))
        g = tape.backward(y)
        return [(n.op_kind, n.parents, n.value.tobytes()) for n in tape.nodes], g.wrt(x).tobytes()

    assert run() == run()


def test_mixing_tapes_is_rejected():
    a, b = Tape().input(1.0), Tape().input(2.0)
    with pytest.raises(InvalidParentError):
        ad.add(a, b)
