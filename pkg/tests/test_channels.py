import numpy as np
import pytest

from conftest import random_kraus, random_pure, random_unitary
from qpirlab.channels import (
    ChannelError,
    CnotOp,
    CopyOp,
    DenseOp,
    HadamardOp,
    InnerProductCnotOp,
    MeasureOp,
    PrepareOp,
    RotateOp,
    SelectCnotOp,
    SelectPhaseOp,
    SwapOp,
    apply_channel,
    hadamard_transform,
    inner_product_cnot,
    op_from_descriptor,
)
from qpirlab.states import DensityOperator, PureState, RegisterLayout

H = np.array([[1, 1], [1, -1]]) / np.sqrt(2)


def test_hadamard_on_zero():
    state = PureState.basis(RegisterLayout((("a", 1),)))
    out = apply_channel(state, DenseOp((H,), ("a",)))
    np.testing.assert_allclose(out.amplitudes, [2**-0.5, 2**-0.5], atol=1e-12)


def test_identity_kraus_on_density(rng):
    layout = RegisterLayout((("a", 2),))
    rho = DensityOperator.maximally_mixed(4)
    op = DenseOp((np.eye(4),), ("a",), operation_kind="kraus-set")
    out = apply_channel(rho, op, layout=layout)
    np.testing.assert_allclose(out.matrix, rho.matrix, atol=1e-12)


def test_inner_product_cnot_examples():
    layout = RegisterLayout((("r", 2), ("q", 1)))
    s = PureState.basis(layout, {"r": 0b11})
    out = inner_product_cnot(s, "r", "01", "q")
    assert out.amplitudes[layout.basis_index({"r": 0b11, "q": 1})] == pytest.approx(1)

    s = PureState.basis(layout, {"r": 0b10})
    out = inner_product_cnot(s, "r", "01", "q")
    assert out.amplitudes[layout.basis_index({"r": 0b10, "q": 0})] == pytest.approx(1)

    # (|00> + |11>)/sqrt2 (x) |0>, mask 11 -> unchanged (1*1 xor 1*1 = 0)
    v = np.zeros(8)
    v[layout.basis_index({"r": 0b00})] = 2**-0.5
    v[layout.basis_index({"r": 0b11})] = 2**-0.5
    s = PureState.from_vector(layout, v)
    out = inner_product_cnot(s, "r", "11", "q")
    np.testing.assert_allclose(out.amplitudes, s.amplitudes, atol=1e-12)


def test_inner_product_cnot_zero_mask_fixes_state(rng):
    layout = RegisterLayout((("r", 2), ("q", 1)))
    s = random_pure(rng, layout)
    out = inner_product_cnot(s, "r", "00", "q")
    np.testing.assert_allclose(out.amplitudes, s.amplitudes, atol=1e-12)


def test_inner_product_cnot_width_mismatch():
    layout = RegisterLayout((("r", 2), ("q", 1)))
    s = PureState.basis(layout)
    with pytest.raises(ChannelError):
        inner_product_cnot(s, "r", "011", "q")


def test_inner_product_register_mask():
    # q ^= r . d, with d read coherently from a register
    layout = RegisterLayout((("r", 2), ("d", 2), ("q", 1)))
    for r in range(4):
        for d in range(4):
            s = PureState.basis(layout, {"r": r, "d": d})
            out = apply_channel(
                s, InnerProductCnotOp(source="r", target="q", mask_register="d"))
            par = ((r >> 1) & (d >> 1)) ^ (r & d & 1)
            idx = layout.basis_index({"r": r, "d": d, "q": par})
            assert abs(out.amplitudes[idx]) == pytest.approx(1)


def test_hadamard_transform_examples(rng):
    layout = RegisterLayout((("r", 3),))
    s = PureState.basis(layout)
    out = hadamard_transform(s, "r")
    np.testing.assert_allclose(out.amplitudes, np.full(8, 8**-0.5), atol=1e-12)
    # involution
    s = random_pure(rng, layout)
    twice = hadamard_transform(hadamard_transform(s, "r"), "r")
    np.testing.assert_allclose(twice.amplitudes, s.amplitudes, atol=1e-10)


@pytest.mark.parametrize("d", [0b00, 0b01, 0b10, 0b11])
def test_hadamard_shifted_entangled_pair(d):
    # sum_r (-1)^(r.d) |r>|r> --H(x)H--> sum_y |y>|y xor d>
    w = 2
    layout = RegisterLayout((("R", w), ("Rp", w)))
    v = np.zeros(16, dtype=complex)
    for r in range(4):
        par = bin(r & d).count("1") & 1
        v[layout.basis_index({"R": r, "Rp": r})] = (-1) ** par / 2
    s = PureState.from_vector(layout, v)
    out = hadamard_transform(hadamard_transform(s, "R"), "Rp")
    want = np.zeros(16, dtype=complex)
    for y in range(4):
        want[layout.basis_index({"R": y, "Rp": y ^ d})] = 0.5
    np.testing.assert_allclose(out.amplitudes, want, atol=1e-12)


def test_measure_branches_to_density():
    layout = RegisterLayout((("a", 1), ("b", 1)))
    bell = PureState.from_vector(layout, np.array([1, 0, 0, 1]) / np.sqrt(2))
    out = apply_channel(bell, MeasureOp("a"))
    assert isinstance(out, DensityOperator)
    want = np.zeros((4, 4))
    want[0, 0] = want[3, 3] = 0.5
    np.testing.assert_allclose(out.matrix, want, atol=1e-12)


def test_prepare_appends_registers():
    layout = RegisterLayout((("a", 1),))
    s = PureState.basis(layout, {"a": 1})
    out = apply_channel(s, PrepareOp.zeros((("anc", 2),)))
    assert out.layout.names == ("a", "anc")
    assert out.amplitudes[out.layout.basis_index({"a": 1, "anc": 0})] == pytest.approx(1)


def test_dense_isometry_validation():
    with pytest.raises(ChannelError):
        DenseOp((np.array([[1.0, 0.0], [0.0, 0.5]]),), ("a",))
    with pytest.raises(ChannelError):
        DenseOp((np.eye(2), np.eye(2)), ("a",))  # sum K'K = 2I


def test_dense_kraus_completeness_and_branching(rng):
    ks = random_kraus(rng, 2, 3)
    op = DenseOp(tuple(ks), ("a",), operation_kind="kraus-set")
    s = random_pure(rng, RegisterLayout((("a", 1),)))
    out = apply_channel(s, op)
    assert isinstance(out, DensityOperator)
    want = sum(k @ np.outer(s.amplitudes, s.amplitudes.conj()) @ k.conj().T for k in ks)
    np.testing.assert_allclose(out.matrix, want, atol=1e-12)


def test_isometry_norm_preservation_property(rng):
    layout = RegisterLayout((("a", 2), ("b", 1)))
    for _ in range(25):
        s = random_pure(rng, layout)
        u = random_unitary(rng, 4)
        out = apply_channel(s, DenseOp((u,), ("a",)))
        assert abs(np.linalg.norm(out.amplitudes) - 1) < 1e-10


def test_select_ops_and_swap_copy():
    layout = RegisterLayout((("sel", 2), ("src", 2), ("t", 1)))
    for v in range(4):
        s = PureState.basis(layout, {"sel": v, "src": 0b10})
        op = SelectCnotOp(sources=tuple((x, ("src", x % 2)) for x in range(4)),
                          target=("t", 0), selector="sel")
        out = apply_channel(s, op)
        bit = (0b10 >> (1 - (v % 2))) & 1
        assert abs(out.amplitudes[layout.basis_index({"sel": v, "src": 0b10, "t": bit})]) == pytest.approx(1)

    layout = RegisterLayout((("a", 2), ("b", 2)))
    s = PureState.basis(layout, {"a": 0b01, "b": 0b10})
    out = apply_channel(s, SwapOp("a", "b"))
    assert abs(out.amplitudes[layout.basis_index({"a": 0b10, "b": 0b01})]) == pytest.approx(1)
    out = apply_channel(s, CopyOp("a", "b"))
    assert abs(out.amplitudes[layout.basis_index({"a": 0b01, "b": 0b11})]) == pytest.approx(1)


def test_select_phase_applies_sign():
    layout = RegisterLayout((("sel", 1), ("q0", 1), ("q1", 1)))
    op = SelectPhaseOp(targets=((0, ("q0", 0)), (1, ("q1", 0))), selector="sel")
    v = np.zeros(8, dtype=complex)
    v[layout.basis_index({"sel": 0, "q0": 1})] = 1 / np.sqrt(2)
    v[layout.basis_index({"sel": 1, "q0": 1})] = 1 / np.sqrt(2)
    out = apply_channel(PureState.from_vector(layout, v), op)
    assert out.amplitudes[layout.basis_index({"sel": 0, "q0": 1})] == pytest.approx(-1 / np.sqrt(2))
    assert out.amplitudes[layout.basis_index({"sel": 1, "q0": 1})] == pytest.approx(1 / np.sqrt(2))


def test_rotate_and_inverse(rng):
    layout = RegisterLayout((("c", 1), ("t", 1)))
    s = random_pure(rng, layout)
    op = RotateOp(("t", 0), 0.7, control=("c", 0))
    out = apply_channel(apply_channel(s, op), op.inverse())
    np.testing.assert_allclose(out.amplitudes, s.amplitudes, atol=1e-12)


def test_dense_operators_of_structured_ops():
    layout = RegisterLayout((("r", 2), ("q", 1)))
    op = InnerProductCnotOp(source="r", target="q", mask="11")
    mats, regs = op.dense_operators(layout)
    assert regs == ("r", "q")
    v = mats[0]
    np.testing.assert_allclose(v.conj().T @ v, np.eye(8), atol=1e-12)


def test_descriptor_round_trip(rng):
    layout = RegisterLayout((("r", 2), ("q", 1)))
    ops = [
        HadamardOp("r"),
        InnerProductCnotOp(source="r", target="q", mask="10"),
        SelectPhaseOp(targets=((0, ("q", 0)),), selector=None, fixed_value=0),
        CnotOp(("r", 0), ("q", 0)),
        PrepareOp.zeros((("z", 1),)),
        MeasureOp("q"),
        RotateOp(("q", 0), 0.3, control=("r", 1)),
    ]
    s = random_pure(rng, layout)
    for op in ops:
        clone = op_from_descriptor(op.descriptor())
        a = op.apply_vectors([s.amplitudes.copy()], layout)
        b = clone.apply_vectors([s.amplitudes.copy()], layout)
        assert len(a) == len(b)
        for x, y in zip(a, b):
            np.testing.assert_allclose(x, y, atol=1e-12)


def test_cap_exceeded_on_prepare(monkeypatch):
    monkeypatch.setenv("QPIRLAB_QUBIT_CAP", "3")
    layout = RegisterLayout((("a", 2),))
    s = PureState.basis(layout)
    from qpirlab.config import CapExceeded

    with pytest.raises(CapExceeded):
        apply_channel(s, PrepareOp.zeros((("b", 2),)))


def test_malformed_op_rejected():
    bad = np.array([[1.0, 0.4], [0.0, 0.6]])
    with pytest.raises(ChannelError):
        DenseOp((bad,), ("a",))
