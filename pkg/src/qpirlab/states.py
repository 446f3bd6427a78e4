"""Multi-register pure states and density operators.

Index convention (used everywhere in this package): the amplitude index of a
basis state is the big-endian concatenation of the per-register basis labels
in declaration order.  Within a register of width ``w``, bit ``j`` of the
label is qubit ``j``, reading the label as a ``w``-character bit string
(so label ``0b10`` of a 2-qubit register sets qubit 0 and clears qubit 1).
Equivalently, the flat amplitude array reshaped to ``[2] * total_qubits``
has one axis per qubit slot, most significant first.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .config import STATE_ATOL, check_cap

__all__ = [
    "LayoutError",
    "StateError",
    "RegisterLayout",
    "PureState",
    "DensityOperator",
]


class LayoutError(ValueError):
    """Register layout is malformed or a named register is missing."""


class StateError(ValueError):
    """A state object violates its invariants beyond tolerance."""


@dataclass(frozen=True)
class RegisterLayout:
    """Ordered, named qubit registers backing one amplitude array."""

    registers: tuple[tuple[str, int], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "registers", tuple((str(n), int(w)) for n, w in self.registers)
        )
        names = [n for n, _ in self.registers]
        if len(set(names)) != len(names):
            raise LayoutError(f"duplicate register names in {names}")
        for name, width in self.registers:
            if width < 1:
                raise LayoutError(f"register {name!r} has width {width}, must be >= 1")
        check_cap(self.total_qubits, what="layout")

    @property
    def total_qubits(self) -> int:
        return sum(w for _, w in self.registers)

    @property
    def dim(self) -> int:
        return 1 << self.total_qubits

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.registers)

    def width(self, name: str) -> int:
        for n, w in self.registers:
            if n == name:
                return w
        raise LayoutError(f"no register named {name!r} in {self.names}")

    def has(self, name: str) -> bool:
        return any(n == name for n, _ in self.registers)

    def offset(self, name: str) -> int:
        """Qubit slot of the register's first (most significant) qubit."""
        off = 0
        for n, w in self.registers:
            if n == name:
                return off
            off += w
        raise LayoutError(f"no register named {name!r} in {self.names}")

    def qubit(self, name: str, j: int) -> int:
        """Global qubit slot of qubit ``j`` of register ``name``."""
        w = self.width(name)
        if not 0 <= j < w:
            raise LayoutError(f"qubit {j} out of range for {name!r} (width {w})")
        return self.offset(name) + j

    def slots(self, names) -> list[int]:
        """Global qubit slots covered by ``names``, in layout order."""
        wanted = set(names)
        missing = wanted - set(self.names)
        if missing:
            raise LayoutError(f"unknown registers {sorted(missing)}")
        out = []
        off = 0
        for n, w in self.registers:
            if n in wanted:
                out.extend(range(off, off + w))
            off += w
        return out

    def subset(self, names) -> "RegisterLayout":
        """Sub-layout of ``names`` in declaration order."""
        wanted = set(names)
        missing = wanted - set(self.names)
        if missing:
            raise LayoutError(f"unknown registers {sorted(missing)}")
        return RegisterLayout(tuple((n, w) for n, w in self.registers if n in wanted))

    def without(self, names) -> "RegisterLayout":
        drop = set(names)
        return RegisterLayout(tuple((n, w) for n, w in self.registers if n not in drop))

    def extended(self, new_registers) -> "RegisterLayout":
        return RegisterLayout(self.registers + tuple(new_registers))

    def renamed(self, mapping: dict[str, str]) -> "RegisterLayout":
        return RegisterLayout(tuple((mapping.get(n, n), w) for n, w in self.registers))

    def basis_index(self, assignment: dict[str, int] | None = None) -> int:
        """Flat amplitude index of the basis state with the given labels.

        Registers absent from ``assignment`` default to label 0.
        """
        assignment = assignment or {}
        for name in assignment:
            self.width(name)
        idx = 0
        for n, w in self.registers:
            label = int(assignment.get(n, 0))
            if not 0 <= label < (1 << w):
                raise LayoutError(f"label {label} out of range for {n!r} (width {w})")
            idx = (idx << w) | label
        return idx


def _as_amplitudes(amplitudes, dim: int) -> np.ndarray:
    amps = np.asarray(amplitudes, dtype=np.complex128)
    if amps.shape != (dim,):
        raise StateError(f"amplitude array has shape {amps.shape}, expected ({dim},)")
    return amps


@dataclass(frozen=True)
class PureState:
    """A unit-norm amplitude array over a register layout.

    Amplitudes are copied on construction, renormalized (drift must stay
    within 1e-10 of unit squared norm) and frozen.
    """

    layout: RegisterLayout
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = _as_amplitudes(self.amplitudes, self.layout.dim).copy()
        norm2 = float(np.vdot(amps, amps).real)
        if abs(norm2 - 1.0) > STATE_ATOL:
            raise StateError(f"squared norm {norm2!r} is not 1 within {STATE_ATOL}")
        amps /= np.sqrt(norm2)
        amps.flags.writeable = False
        object.__setattr__(self, "amplitudes", amps)

    def __repr__(self):  # amplitude dumps are never useful in tracebacks
        return f"PureState(layout={self.layout.registers})"

    # -- constructors -------------------------------------------------------

    @classmethod
    def basis(cls, layout: RegisterLayout, assignment: dict[str, int] | None = None) -> "PureState":
        amps = np.zeros(layout.dim, dtype=np.complex128)
        amps[layout.basis_index(assignment)] = 1.0
        return cls(layout, amps)

    @classmethod
    def from_vector(cls, layout: RegisterLayout, vector, normalize: bool = False) -> "PureState":
        amps = _as_amplitudes(vector, layout.dim)
        if normalize:
            n = np.linalg.norm(amps)
            if n < 1e-150:
                raise StateError("cannot normalize the zero vector")
            amps = amps / n
        return cls(layout, amps)

    def tensor(self, other: "PureState") -> "PureState":
        """Product state; ``other``'s registers are appended to the layout."""
        layout = self.layout.extended(other.layout.registers)
        amps = np.multiply.outer(self.amplitudes, other.amplitudes).reshape(-1)
        return PureState(layout, amps)

    # -- views and helpers --------------------------------------------------

    @property
    def tensor_view(self) -> np.ndarray:
        return self.amplitudes.reshape([2] * self.layout.total_qubits)

    def aligned_to(self, layout: RegisterLayout) -> np.ndarray:
        """Amplitudes permuted to another ordering of the same registers."""
        if layout.registers == self.layout.registers:
            return self.amplitudes
        if sorted(layout.registers) != sorted(self.layout.registers):
            raise LayoutError(
                f"layouts hold different registers: {self.layout.names} vs {layout.names}"
            )
        perm = []
        for name in layout.names:
            perm.extend(self.layout.slots([name]))
        return np.ascontiguousarray(self.tensor_view.transpose(perm)).reshape(-1)

    def reordered(self, names) -> "PureState":
        target = RegisterLayout(tuple((n, self.layout.width(n)) for n in names))
        return PureState(target, self.aligned_to(target))

    def overlap(self, other: "PureState") -> complex:
        """Inner product <self|other>; both must hold the same registers."""
        return complex(np.vdot(self.amplitudes, other.aligned_to(self.layout)))

    def probabilities(self, names) -> np.ndarray:
        """Marginal outcome distribution of the named registers, in layout order."""
        keep = self.layout.slots(names)
        probs = np.abs(self.tensor_view) ** 2
        drop = tuple(a for a in range(self.layout.total_qubits) if a not in keep)
        if drop:
            probs = probs.sum(axis=drop)
        return probs.reshape(-1)

    # -- binary fixture format ----------------------------------------------

    _MAGIC = b"QPST"

    def to_bytes(self) -> bytes:
        """Serialize: magic, u32 header length, JSON register table, then
        little-endian f64 re/im pairs in amplitude order."""
        header = json.dumps(
            {"registers": [[n, w] for n, w in self.layout.registers]}
        ).encode()
        payload = np.empty(2 * self.layout.dim, dtype="<f8")
        payload[0::2] = self.amplitudes.real
        payload[1::2] = self.amplitudes.imag
        return self._MAGIC + struct.pack("<I", len(header)) + header + payload.tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "PureState":
        if blob[:4] != cls._MAGIC:
            raise StateError("not a serialized pure state")
        (hlen,) = struct.unpack("<I", blob[4:8])
        header = json.loads(blob[8 : 8 + hlen])
        layout = RegisterLayout(tuple((n, w) for n, w in header["registers"]))
        raw = np.frombuffer(blob[8 + hlen :], dtype="<f8")
        if raw.size != 2 * layout.dim:
            raise StateError("payload size does not match layout")
        return cls(layout, raw[0::2] + 1j * raw[1::2])


def hermitize(m: np.ndarray) -> np.ndarray:
    """Symmetrize before eigen-solving, as (M + M^dagger) / 2."""
    return 0.5 * (m + m.conj().T)


class DensityOperator:
    """Hermitian, positive semidefinite, unit-trace matrix.

    ``psd_checked=True`` skips the eigenvalue scan for matrices that are
    positive semidefinite by construction (Gram reductions, pure outer
    products); Hermiticity and trace are always verified.
    """

    __slots__ = ("dimension", "matrix")

    def __init__(self, dimension: int, matrix, *, psd_checked: bool = False):
        m = np.asarray(matrix, dtype=np.complex128)
        d = int(dimension)
        if m.shape != (d, d):
            raise StateError(f"matrix has shape {m.shape}, expected ({d}, {d})")
        if np.max(np.abs(m - m.conj().T)) > STATE_ATOL:
            raise StateError("matrix is not Hermitian within tolerance")
        m = hermitize(m)
        tr = float(np.trace(m).real)
        if abs(tr - 1.0) > STATE_ATOL:
            raise StateError(f"trace {tr!r} is not 1 within {STATE_ATOL}")
        m /= tr
        if not psd_checked and np.min(np.linalg.eigvalsh(m)) < -STATE_ATOL:
            raise StateError(f"matrix has an eigenvalue below -{STATE_ATOL}")
        m.flags.writeable = False
        self.dimension = d
        self.matrix = m

    def __repr__(self):
        return f"DensityOperator(dimension={self.dimension})"

    def __eq__(self, other):
        return (
            isinstance(other, DensityOperator)
            and self.dimension == other.dimension
            and np.array_equal(self.matrix, other.matrix)
        )

    @classmethod
    def from_pure(cls, state_or_vector) -> "DensityOperator":
        vec = (
            state_or_vector.amplitudes
            if isinstance(state_or_vector, PureState)
            else np.asarray(state_or_vector, dtype=np.complex128)
        )
        return cls(vec.size, np.outer(vec, vec.conj()), psd_checked=True)

    @classmethod
    def maximally_mixed(cls, dimension: int) -> "DensityOperator":
        return cls(dimension, np.eye(dimension) / dimension, psd_checked=True)

    @classmethod
    def from_ensemble(cls, vectors, dimension: int | None = None) -> "DensityOperator":
        """Density operator sum(v v^dagger) over unnormalized branch vectors."""
        vecs = [np.asarray(v, dtype=np.complex128) for v in vectors]
        if not vecs:
            raise StateError("empty ensemble")
        d = dimension if dimension is not None else vecs[0].size
        m = np.zeros((d, d), dtype=np.complex128)
        for v in vecs:
            m += np.outer(v, v.conj())
        return cls(d, m, psd_checked=True)

    @property
    def purity(self) -> float:
        return float(np.trace(self.matrix @ self.matrix).real)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)
