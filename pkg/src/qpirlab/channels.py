"""Quantum operations over named registers.

Operations come in two flavors backed by one contract:

* structured ops (Hadamard transforms, inner-product CNOTs, selector-driven
  gates, register preparation/swap/copy, computational-basis measurement)
  apply through bit arithmetic on the flat amplitude index and are exactly
  isometric by construction;
* ``DenseOp`` carries explicit operator matrices over a short list of
  registers and covers anything else (general isometries, Kraus sets,
  measurement operator sets), embedded as identity on untouched registers.

Every op reports its ``kind`` (``isometry``, ``kraus-set`` or
``measurement``), the registers it reads and writes, and any registers it
creates.  Application is branch-wise on unnormalized amplitude vectors so a
measurement simply multiplies branches; total squared norm is conserved.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .config import STATE_ATOL, check_cap, check_reduced_cap
from .states import DensityOperator, PureState, RegisterLayout

__all__ = [
    "ChannelError",
    "ChannelOp",
    "DenseOp",
    "HadamardOp",
    "InnerProductCnotOp",
    "SelectPhaseOp",
    "SelectCnotOp",
    "SelectFlipOp",
    "CnotOp",
    "CopyOp",
    "SwapOp",
    "RotateOp",
    "PrepareOp",
    "MeasureOp",
    "apply_channel",
    "inner_product_cnot",
    "hadamard_transform",
    "op_from_descriptor",
]

# Branches with squared norm below this are dropped after a measurement.
_BRANCH_PRUNE = 1e-24


class ChannelError(ValueError):
    """An operation is malformed or does not fit the state it is applied to."""


@lru_cache(maxsize=8)
def _index_array(dim: int) -> np.ndarray:
    # int32 halves the bandwidth of index arithmetic; layouts are capped well
    # below 31 qubits.
    idx = np.arange(dim, dtype=np.int32)
    idx.flags.writeable = False
    return idx


def _shift(total: int, slot: int) -> int:
    # Flat-index bit position of qubit slot `slot` under the big-endian layout.
    return total - 1 - slot


def _gather(idx: np.ndarray, total: int, slots) -> np.ndarray:
    """Pack the bits at the given qubit slots into the register label they
    spell under the big-endian convention (first slot = most significant)."""
    w = len(slots)
    out = np.zeros_like(idx)
    for j, s in enumerate(slots):
        out |= ((idx >> _shift(total, s)) & 1) << (w - 1 - j)
    return out


class _ArrayCache:
    """LRU cache for per-(op, layout) permutation and sign arrays.

    Structured ops are immutable and layouts repeat run after run, so the
    index arithmetic is paid once per distinct (descriptor, layout) pair.
    """

    def __init__(self, capacity: int = 48):
        self.capacity = capacity
        self._store: dict = {}

    def get(self, op: "ChannelOp", layout: RegisterLayout, build):
        key = (json.dumps(op.descriptor(), sort_keys=True), layout.registers)
        hit = self._store.pop(key, None)
        if hit is None:
            hit = build()
            hit.flags.writeable = False
            while len(self._store) >= self.capacity:
                self._store.pop(next(iter(self._store)))
        self._store[key] = hit
        return hit


_perm_cache = _ArrayCache()


class ChannelOp:
    """Base class; subclasses implement :meth:`apply_vectors`."""

    kind = "isometry"

    @property
    def reads(self) -> tuple[str, ...]:
        """Registers whose content the op depends on (including targets)."""
        raise NotImplementedError

    @property
    def writes(self) -> tuple[str, ...]:
        """Registers whose content the op may change."""
        raise NotImplementedError

    @property
    def creates(self) -> tuple[tuple[str, int], ...]:
        """Fresh registers appended to the layout by this op."""
        return ()

    @property
    def touches(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for n in (*self.reads, *self.writes):
            seen.setdefault(n)
        return tuple(seen)

    def output_layout(self, layout: RegisterLayout) -> RegisterLayout:
        for name in self.touches:
            if not layout.has(name):
                raise ChannelError(f"{type(self).__name__} references missing register {name!r}")
        for name, _ in self.creates:
            if layout.has(name):
                raise ChannelError(f"{type(self).__name__} would recreate register {name!r}")
        return layout.extended(self.creates) if self.creates else layout

    def apply_vectors(self, vectors: list[np.ndarray], layout: RegisterLayout) -> list[np.ndarray]:
        """Apply to unnormalized flat vectors; may multiply branches."""
        raise NotImplementedError

    def dense_operators(self, layout: RegisterLayout) -> tuple[list[np.ndarray], tuple[str, ...]]:
        """Materialize operator matrices over this op's registers.

        Returns the matrices and the register order defining their basis
        (big-endian concatenation of those registers' labels).  Guarded by
        the reduced-dimension cap; intended for validation and small-system
        work, not the simulation hot path.
        """
        regs = tuple(self.touches)
        widths = [(n, layout.width(n)) for n in regs]
        local = RegisterLayout(tuple(widths))
        check_reduced_cap(local.total_qubits + sum(w for _, w in self.creates))
        din = local.dim
        columns: list[list[np.ndarray]] = []
        out_layout = None
        for b in range(din):
            vec = np.zeros(din, dtype=np.complex128)
            vec[b] = 1.0
            outs = self.apply_vectors([vec], local)
            out_layout = self.output_layout(local)
            columns.append(outs)
        n_branch = len(columns[0])
        if any(len(c) != n_branch for c in columns):
            raise ChannelError("branch count varies across basis states; cannot densify")
        dout = out_layout.dim
        mats = []
        for k in range(n_branch):
            m = np.zeros((dout, din), dtype=np.complex128)
            for b in range(din):
                m[:, b] = columns[b][k]
            mats.append(m)
        return mats, regs + tuple(n for n, _ in self.creates)

    def descriptor(self) -> dict:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# structured permutation / phase ops
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HadamardOp(ChannelOp):
    """Qubit-wise Hadamard transform on one register."""

    register: str

    @property
    def reads(self):
        return (self.register,)

    @property
    def writes(self):
        return (self.register,)

    def apply_vectors(self, vectors, layout):
        slots = layout.slots([self.register])
        inv_sqrt2 = 1.0 / math.sqrt(2.0)
        out = []
        for vec in vectors:
            v = vec.astype(np.complex128, copy=True)
            for s in slots:
                t = v.reshape(1 << s, 2, -1)
                a = t[:, 0, :].copy()
                t[:, 0, :] += t[:, 1, :]
                t[:, 0, :] *= inv_sqrt2
                t[:, 1, :] *= -1.0
                t[:, 1, :] += a
                t[:, 1, :] *= inv_sqrt2
            out.append(v)
        return out

    def descriptor(self):
        return {"op": "hadamard", "register": self.register}


@dataclass(frozen=True)
class InnerProductCnotOp(ChannelOp):
    """Flip a target qubit by the inner product (mod 2) of a source register
    with either a classical bit mask or an equal-width slice of another
    register.

    Source qubit ``j`` pairs with mask character ``j`` (classical mask) or
    with qubit ``mask_offset + j`` of ``mask_register``.
    """

    source: str
    target: str
    mask: str | None = None
    mask_register: str | None = None
    mask_offset: int = 0
    target_qubit: int = 0

    def __post_init__(self):
        if (self.mask is None) == (self.mask_register is None):
            raise ChannelError("exactly one of mask / mask_register is required")
        if self.mask is not None and set(self.mask) - {"0", "1"}:
            raise ChannelError(f"mask {self.mask!r} is not a bit string")

    @property
    def reads(self):
        if self.mask_register is None:
            return (self.source, self.target)
        return (self.source, self.mask_register, self.target)

    @property
    def writes(self):
        return (self.target,)

    def _build_perm(self, layout):
        total = layout.total_qubits
        w = layout.width(self.source)
        src_slots = layout.slots([self.source])
        if self.mask is not None:
            if len(self.mask) != w:
                raise ChannelError(
                    f"mask length {len(self.mask)} != width {w} of {self.source!r}"
                )
        else:
            mw = layout.width(self.mask_register)
            if self.mask_offset < 0 or self.mask_offset + w > mw:
                raise ChannelError(
                    f"mask slice [{self.mask_offset}, {self.mask_offset + w}) "
                    f"out of range for {self.mask_register!r} (width {mw})"
                )
        idx = _index_array(1 << total)
        tshift = _shift(total, layout.qubit(self.target, self.target_qubit))
        if self.mask is not None:
            const = 0
            for j, c in enumerate(self.mask):
                if c == "1":
                    const |= 1 << _shift(total, src_slots[j])
            if const == 0:
                return idx.copy()
            par = np.bitwise_count(idx & const).astype(np.int32) & 1
        else:
            moff = layout.offset(self.mask_register) + self.mask_offset
            par = np.zeros_like(idx)
            for j in range(w):
                par ^= (idx >> _shift(total, src_slots[j])) & (idx >> _shift(total, moff + j)) & 1
        return idx ^ (par << tshift)

    def apply_vectors(self, vectors, layout):
        perm = _perm_cache.get(self, layout, lambda: self._build_perm(layout))
        return [vec[perm] for vec in vectors]

    def descriptor(self):
        d = {"op": "inner-product-cnot", "source": self.source, "target": self.target,
             "target_qubit": self.target_qubit}
        if self.mask is not None:
            d["mask"] = self.mask
        else:
            d["mask_register"] = self.mask_register
            d["mask_offset"] = self.mask_offset
        return d


def _selector_values(idx, layout, selector):
    return _gather(idx, layout.total_qubits, layout.slots([selector]))


@dataclass(frozen=True)
class SelectPhaseOp(ChannelOp):
    """Apply Z to a per-value chosen qubit, selected by a register's label.

    ``targets`` maps selector label -> (register, qubit).  Labels without an
    entry get identity.  With ``selector=None`` the single entry under key
    ``fixed_value`` is applied unconditionally.
    """

    targets: tuple[tuple[int, tuple[str, int]], ...]
    selector: str | None = None
    fixed_value: int = 0

    @property
    def reads(self):
        regs = tuple(dict.fromkeys(r for _, (r, _) in self.targets))
        return regs if self.selector is None else (self.selector,) + regs

    @property
    def writes(self):
        return tuple(dict.fromkeys(r for _, (r, _) in self.targets))

    def _build_sign(self, layout):
        total = layout.total_qubits
        idx = _index_array(1 << total)
        table = dict(self.targets)
        if self.selector is None:
            reg, q = table[self.fixed_value]
            bit = (idx >> _shift(total, layout.qubit(reg, q))) & 1
        else:
            width = layout.width(self.selector)
            shifts = np.full(1 << width, -1, dtype=np.int32)
            for v, (reg, q) in table.items():
                shifts[v] = _shift(total, layout.qubit(reg, q))
            vals = _selector_values(idx, layout, self.selector)
            sh = shifts[vals]
            bit = np.where(sh >= 0, (idx >> np.maximum(sh, 0)) & 1, 0)
        return 1.0 - 2.0 * bit

    def apply_vectors(self, vectors, layout):
        sign = _perm_cache.get(self, layout, lambda: self._build_sign(layout))
        return [vec * sign for vec in vectors]

    def descriptor(self):
        return {"op": "select-phase", "selector": self.selector,
                "fixed_value": self.fixed_value,
                "targets": [[v, [r, q]] for v, (r, q) in self.targets]}


@dataclass(frozen=True)
class SelectCnotOp(ChannelOp):
    """CNOT into a fixed target from a per-value chosen source qubit."""

    sources: tuple[tuple[int, tuple[str, int]], ...]
    target: tuple[str, int]
    selector: str | None = None
    fixed_value: int = 0

    @property
    def reads(self):
        regs = tuple(dict.fromkeys(r for _, (r, _) in self.sources))
        base = regs + (self.target[0],)
        return base if self.selector is None else (self.selector,) + base

    @property
    def writes(self):
        return (self.target[0],)

    def _build_perm(self, layout):
        total = layout.total_qubits
        idx = _index_array(1 << total)
        table = dict(self.sources)
        tshift = _shift(total, layout.qubit(*self.target))
        if self.selector is None:
            reg, q = table[self.fixed_value]
            par = (idx >> _shift(total, layout.qubit(reg, q))) & 1
        else:
            width = layout.width(self.selector)
            shifts = np.full(1 << width, -1, dtype=np.int32)
            for v, (reg, q) in table.items():
                shifts[v] = _shift(total, layout.qubit(reg, q))
            vals = _selector_values(idx, layout, self.selector)
            sh = shifts[vals]
            par = np.where(sh >= 0, (idx >> np.maximum(sh, 0)) & 1, 0)
        return idx ^ (par << tshift)

    def apply_vectors(self, vectors, layout):
        perm = _perm_cache.get(self, layout, lambda: self._build_perm(layout))
        return [vec[perm] for vec in vectors]

    def descriptor(self):
        return {"op": "select-cnot", "selector": self.selector,
                "fixed_value": self.fixed_value, "target": list(self.target),
                "sources": [[v, [r, q]] for v, (r, q) in self.sources]}


@dataclass(frozen=True)
class SelectFlipOp(ChannelOp):
    """Flip the target qubit iff a classical bit table says so for the
    selector's label (an X gate controlled on a classical function)."""

    selector: str
    bit_table: tuple[int, ...]
    target: tuple[str, int]

    @property
    def reads(self):
        return (self.selector, self.target[0])

    @property
    def writes(self):
        return (self.target[0],)

    def _build_perm(self, layout):
        total = layout.total_qubits
        width = layout.width(self.selector)
        if len(self.bit_table) != (1 << width):
            raise ChannelError("bit table length does not match selector width")
        idx = _index_array(1 << total)
        vals = _selector_values(idx, layout, self.selector)
        par = np.asarray(self.bit_table, dtype=np.int32)[vals]
        return idx ^ (par << _shift(total, layout.qubit(*self.target)))

    def apply_vectors(self, vectors, layout):
        perm = _perm_cache.get(self, layout, lambda: self._build_perm(layout))
        return [vec[perm] for vec in vectors]

    def descriptor(self):
        return {"op": "select-flip", "selector": self.selector,
                "bit_table": list(self.bit_table), "target": list(self.target)}


@dataclass(frozen=True)
class CnotOp(ChannelOp):
    """Plain CNOT between two addressed qubits."""

    control: tuple[str, int]
    target: tuple[str, int]

    @property
    def reads(self):
        return (self.control[0], self.target[0])

    @property
    def writes(self):
        return (self.target[0],)

    def _build_perm(self, layout):
        total = layout.total_qubits
        idx = _index_array(1 << total)
        par = (idx >> _shift(total, layout.qubit(*self.control))) & 1
        return idx ^ (par << _shift(total, layout.qubit(*self.target)))

    def apply_vectors(self, vectors, layout):
        perm = _perm_cache.get(self, layout, lambda: self._build_perm(layout))
        return [vec[perm] for vec in vectors]

    def descriptor(self):
        return {"op": "cnot", "control": list(self.control), "target": list(self.target)}


@dataclass(frozen=True)
class CopyOp(ChannelOp):
    """Qubit-wise CNOT of one register into an equal-width register."""

    source: str
    target: str

    @property
    def reads(self):
        return (self.source, self.target)

    @property
    def writes(self):
        return (self.target,)

    def _build_perm(self, layout):
        if layout.width(self.source) != layout.width(self.target):
            raise ChannelError(
                f"copy width mismatch: {self.source!r} vs {self.target!r}"
            )
        total = layout.total_qubits
        idx = _index_array(1 << total)
        flip = np.zeros_like(idx)
        for j, s in enumerate(layout.slots([self.source])):
            bit = (idx >> _shift(total, s)) & 1
            flip |= bit << _shift(total, layout.qubit(self.target, j))
        return idx ^ flip

    def apply_vectors(self, vectors, layout):
        perm = _perm_cache.get(self, layout, lambda: self._build_perm(layout))
        return [vec[perm] for vec in vectors]

    def descriptor(self):
        return {"op": "copy", "source": self.source, "target": self.target}


@dataclass(frozen=True)
class SwapOp(ChannelOp):
    """Swap the contents of two equal-width registers."""

    first: str
    second: str

    @property
    def reads(self):
        return (self.first, self.second)

    @property
    def writes(self):
        return (self.first, self.second)

    def _build_perm(self, layout):
        if layout.width(self.first) != layout.width(self.second):
            raise ChannelError(f"swap width mismatch: {self.first!r} vs {self.second!r}")
        total = layout.total_qubits
        idx = _index_array(1 << total)
        a_slots = layout.slots([self.first])
        b_slots = layout.slots([self.second])
        flip = np.zeros_like(idx)
        for j in range(len(a_slots)):
            bit = ((idx >> _shift(total, a_slots[j])) ^ (idx >> _shift(total, b_slots[j]))) & 1
            flip |= bit << _shift(total, a_slots[j])
            flip |= bit << _shift(total, b_slots[j])
        return idx ^ flip

    def apply_vectors(self, vectors, layout):
        perm = _perm_cache.get(self, layout, lambda: self._build_perm(layout))
        return [vec[perm] for vec in vectors]

    def descriptor(self):
        return {"op": "swap", "first": self.first, "second": self.second}


@dataclass(frozen=True)
class RotateOp(ChannelOp):
    """Y-rotation of one qubit, optionally controlled on another qubit."""

    target: tuple[str, int]
    theta: float
    control: tuple[str, int] | None = None

    @property
    def reads(self):
        return (self.target[0],) if self.control is None else (self.control[0], self.target[0])

    @property
    def writes(self):
        return (self.target[0],)

    def inverse(self) -> "RotateOp":
        return RotateOp(self.target, -self.theta, self.control)

    def apply_vectors(self, vectors, layout):
        total = layout.total_qubits
        pt = layout.qubit(*self.target)
        c = math.cos(self.theta / 2.0)
        s = math.sin(self.theta / 2.0)
        out = []
        for vec in vectors:
            t = vec.reshape([2] * total)
            if self.control is None:
                t = np.moveaxis(t, pt, 0)
                new = np.empty_like(t)
                new[0] = c * t[0] - s * t[1]
                new[1] = s * t[0] + c * t[1]
                new = np.moveaxis(new, 0, pt)
            else:
                pc = layout.qubit(*self.control)
                t = np.moveaxis(t, (pc, pt), (0, 1))
                new = t.copy()
                new[1, 0] = c * t[1, 0] - s * t[1, 1]
                new[1, 1] = s * t[1, 0] + c * t[1, 1]
                new = np.moveaxis(new, (0, 1), (pc, pt))
            out.append(np.ascontiguousarray(new).reshape(-1))
        return out

    def descriptor(self):
        return {"op": "rotate", "target": list(self.target), "theta": self.theta,
                "control": list(self.control) if self.control else None}


@dataclass(frozen=True)
class PrepareOp(ChannelOp):
    """Create fresh registers initialized to a given pure state.

    The isometry |psi> -> |psi> (x) |prep>; new registers are appended to the
    layout in the declared order.
    """

    registers: tuple[tuple[str, int], ...]
    amplitudes: tuple[complex, ...] = ()

    def __post_init__(self):
        dim = 1 << sum(w for _, w in self.registers)
        if not self.amplitudes:
            amps = [0.0] * dim
            amps[0] = 1.0
            object.__setattr__(self, "amplitudes", tuple(amps))
        elif len(self.amplitudes) != dim:
            raise ChannelError("preparation amplitudes do not match register widths")
        vec = np.asarray(self.amplitudes, dtype=np.complex128)
        if abs(np.vdot(vec, vec).real - 1.0) > STATE_ATOL:
            raise ChannelError("preparation state is not normalized")

    @classmethod
    def zeros(cls, registers) -> "PrepareOp":
        return cls(tuple(registers))

    @classmethod
    def of_state(cls, state: PureState) -> "PrepareOp":
        return cls(state.layout.registers, tuple(state.amplitudes))

    @property
    def reads(self):
        return ()

    @property
    def writes(self):
        return ()

    @property
    def creates(self):
        return tuple(self.registers)

    def apply_vectors(self, vectors, layout):
        prep = np.asarray(self.amplitudes, dtype=np.complex128)
        check_cap(layout.total_qubits + sum(w for _, w in self.registers), what="state")
        return [np.multiply.outer(vec, prep).reshape(-1) for vec in vectors]

    def descriptor(self):
        return {"op": "prepare", "registers": [[n, w] for n, w in self.registers],
                "amplitudes": [[z.real, z.imag] for z in map(complex, self.amplitudes)]}


@dataclass(frozen=True)
class MeasureOp(ChannelOp):
    """Complete computational-basis measurement of one register.

    Branches the state over observed labels; outcome registers keep their
    post-measurement content (projective, non-destructive).
    """

    register: str

    kind = "measurement"

    @property
    def reads(self):
        return (self.register,)

    @property
    def writes(self):
        return (self.register,)

    def apply_vectors(self, vectors, layout):
        total = layout.total_qubits
        slots = layout.slots([self.register])
        w = len(slots)
        out = []
        for vec in vectors:
            t = np.moveaxis(vec.reshape([2] * total), slots, range(w)).reshape(1 << w, -1)
            for x in range(1 << w):
                weight = float(np.vdot(t[x], t[x]).real)
                if weight <= _BRANCH_PRUNE:
                    continue
                branch = np.zeros_like(t)
                branch[x] = t[x]
                branch = np.moveaxis(branch.reshape([2] * total), range(w), slots)
                out.append(np.ascontiguousarray(branch).reshape(-1))
        return out

    def dense_operators(self, layout):
        w = layout.width(self.register)
        check_reduced_cap(w)
        mats = []
        for x in range(1 << w):
            p = np.zeros((1 << w, 1 << w), dtype=np.complex128)
            p[x, x] = 1.0
            mats.append(p)
        return mats, (self.register,)

    def descriptor(self):
        return {"op": "measure", "register": self.register}


# ---------------------------------------------------------------------------
# dense operator sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DenseOp(ChannelOp):
    """Explicit operator matrices on the tensor product of named registers.

    The matrix basis is the big-endian concatenation of the listed registers'
    labels, inputs ordered as ``registers`` and outputs as ``registers``
    followed by ``created``.  A single matrix with orthonormal columns is an
    isometry; several matrices form a Kraus set (``operation_kind``
    distinguishes a measurement-operator set from a generic Kraus set).
    """

    matrices: tuple[np.ndarray, ...]
    registers: tuple[str, ...]
    created: tuple[tuple[str, int], ...] = ()
    operation_kind: str = ""

    def __post_init__(self):
        mats = tuple(np.asarray(m, dtype=np.complex128) for m in self.matrices)
        if not mats:
            raise ChannelError("empty operator list")
        shape = mats[0].shape
        if any(m.shape != shape for m in mats):
            raise ChannelError("operator matrices must share one shape")
        comp = sum(m.conj().T @ m for m in mats)
        if np.max(np.abs(comp - np.eye(shape[1]))) > STATE_ATOL:
            raise ChannelError("operators are not complete: sum K^dagger K != I")
        kind = self.operation_kind or ("isometry" if len(mats) == 1 else "kraus-set")
        if kind not in ("isometry", "kraus-set", "measurement"):
            raise ChannelError(f"unknown operation kind {kind!r}")
        if kind == "isometry" and len(mats) != 1:
            raise ChannelError("an isometry has exactly one operator")
        object.__setattr__(self, "matrices", mats)
        object.__setattr__(self, "operation_kind", kind)
        object.__setattr__(self, "registers", tuple(self.registers))
        object.__setattr__(self, "created", tuple(self.created))

    @property
    def kind(self):
        return self.operation_kind

    @property
    def reads(self):
        return self.registers

    @property
    def writes(self):
        return self.registers

    @property
    def creates(self):
        return self.created

    def apply_vectors(self, vectors, layout):
        total = layout.total_qubits
        slots = []
        for name in self.registers:
            slots.extend(layout.slots([name]))
        k = len(slots)
        knew = sum(w for _, w in self.created)
        din, dout = 1 << k, 1 << (k + knew)
        if self.matrices[0].shape != (dout, din):
            raise ChannelError(
                f"operator shape {self.matrices[0].shape} does not match registers "
                f"({k} qubits in, {k + knew} out)"
            )
        if knew:
            check_cap(total + knew, what="state")
        dest = slots + list(range(total, total + knew))
        out = []
        for vec in vectors:
            t = np.moveaxis(vec.reshape([2] * total), slots, range(k)).reshape(din, -1)
            for m in self.matrices:
                b = (m @ t).reshape([2] * (k + knew) + [2] * (total - k))
                b = np.moveaxis(b, range(k + knew), dest)
                w2 = float(np.vdot(b, b).real)
                if len(self.matrices) > 1 and w2 <= _BRANCH_PRUNE:
                    continue
                out.append(np.ascontiguousarray(b).reshape(-1))
        return out

    def dense_operators(self, layout):
        return list(self.matrices), self.registers + tuple(n for n, _ in self.created)

    def descriptor(self):
        return {"op": "dense", "kind": self.operation_kind,
                "registers": list(self.registers),
                "created": [[n, w] for n, w in self.created],
                "matrices": [[[ [z.real, z.imag] for z in row] for row in m] for m in self.matrices]}


# ---------------------------------------------------------------------------
# application and module-level helpers
# ---------------------------------------------------------------------------


def apply_channel(state, op: ChannelOp, *, layout: RegisterLayout | None = None):
    """Apply ``op`` embedded as identity on untouched registers.

    A ``PureState`` stays pure under an isometry (possibly with an enlarged
    layout) and becomes a ``DensityOperator`` under a branching operation.
    A ``DensityOperator`` input needs its register ``layout`` and evolves by
    eigendecomposition into pure branches.
    """
    if isinstance(state, PureState):
        out_layout = op.output_layout(state.layout)
        branches = op.apply_vectors([state.amplitudes.copy()], state.layout)
        total = sum(float(np.vdot(b, b).real) for b in branches)
        if abs(total - 1.0) > 1e-8:
            raise ChannelError(f"operation does not conserve norm (total {total!r})")
        if len(branches) == 1 and op.kind == "isometry":
            return PureState(out_layout, branches[0])
        if len(branches) == 1 and abs(float(np.vdot(branches[0], branches[0]).real) - 1.0) <= STATE_ATOL:
            return PureState(out_layout, branches[0])
        check_reduced_cap(out_layout.total_qubits)
        return DensityOperator.from_ensemble(branches, out_layout.dim)
    if isinstance(state, DensityOperator):
        if layout is None:
            raise ChannelError("a register layout is required for density-operator inputs")
        if layout.dim != state.dimension:
            raise ChannelError("layout dimension does not match the density operator")
        evals, evecs = np.linalg.eigh(state.matrix)
        vectors = [np.sqrt(lam) * evecs[:, i] for i, lam in enumerate(evals) if lam > 1e-14]
        out_layout = op.output_layout(layout)
        out_vectors: list[np.ndarray] = []
        for v in vectors:
            out_vectors.extend(op.apply_vectors([np.ascontiguousarray(v)], layout))
        return DensityOperator.from_ensemble(out_vectors, out_layout.dim)
    raise ChannelError(f"cannot apply a channel to {type(state).__name__}")


def inner_product_cnot(state: PureState, source: str, mask: str, target: str) -> PureState:
    """CNOT the target register's qubit 0 with ``source . mask`` (mod 2)."""
    if state.layout.width(target) != 1:
        raise ChannelError(f"target register {target!r} must have width 1")
    op = InnerProductCnotOp(source=source, target=target, mask=mask)
    return apply_channel(state, op)


def hadamard_transform(state: PureState, register: str) -> PureState:
    """Qubit-wise Hadamard transform of one register."""
    return apply_channel(state, HadamardOp(register))


_OP_CLASSES = {
    "hadamard": lambda d: HadamardOp(d["register"]),
    "inner-product-cnot": lambda d: InnerProductCnotOp(
        source=d["source"], target=d["target"], mask=d.get("mask"),
        mask_register=d.get("mask_register"), mask_offset=d.get("mask_offset", 0),
        target_qubit=d.get("target_qubit", 0)),
    "select-phase": lambda d: SelectPhaseOp(
        targets=tuple((v, (r, q)) for v, (r, q) in d["targets"]),
        selector=d.get("selector"), fixed_value=d.get("fixed_value", 0)),
    "select-cnot": lambda d: SelectCnotOp(
        sources=tuple((v, (r, q)) for v, (r, q) in d["sources"]),
        target=tuple(d["target"]), selector=d.get("selector"),
        fixed_value=d.get("fixed_value", 0)),
    "select-flip": lambda d: SelectFlipOp(
        selector=d["selector"], bit_table=tuple(d["bit_table"]),
        target=tuple(d["target"])),
    "cnot": lambda d: CnotOp(tuple(d["control"]), tuple(d["target"])),
    "copy": lambda d: CopyOp(d["source"], d["target"]),
    "swap": lambda d: SwapOp(d["first"], d["second"]),
    "rotate": lambda d: RotateOp(tuple(d["target"]), d["theta"],
                                 tuple(d["control"]) if d.get("control") else None),
    "prepare": lambda d: PrepareOp(
        tuple((n, w) for n, w in d["registers"]),
        tuple(complex(re, im) for re, im in d["amplitudes"])),
    "measure": lambda d: MeasureOp(d["register"]),
    "dense": lambda d: DenseOp(
        matrices=tuple(np.array([[complex(re, im) for re, im in row] for row in m])
                       for m in d["matrices"]),
        registers=tuple(d["registers"]),
        created=tuple((n, w) for n, w in d["created"]),
        operation_kind=d["kind"]),
}


def op_from_descriptor(d: dict) -> ChannelOp:
    """Rebuild an operation from its serialized descriptor."""
    try:
        factory = _OP_CLASSES[d["op"]]
    except KeyError:
        raise ChannelError(f"unknown op descriptor {d.get('op')!r}") from None
    return factory(d)
