"""Anchored-privacy verification, lower bounds, and simulator certificates.

The server's view at an even global step ``2t`` is everything on its side
plus the in-flight client message, keeping any reference registers.  Views
are handled as low-rank ensembles (branch vectors componentized over the
traced-out client side), so distances stay cheap even when the view itself
is large.

Lower bounds need no simulator: two runs that any one simulator state must
approximate within eps sit within 2 eps of each other, so half the largest
pairwise view distance over inputs sharing a database state and a
reference-marginal class certifies a floor under every achievable eps.

Upper bounds come from explicit simulators: the honest-protocol simulator
(rerun with the client input pinned to 1) and the specious-adversary
simulator assembled from an extracted anchor state, the inverted purified
recovery, and the honest simulator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .adversaries import Adversary, InputSpec, standard_inputs
from .channels import (
    ChannelOp,
    CnotOp,
    CopyOp,
    HadamardOp,
    InnerProductCnotOp,
    RotateOp,
    SelectCnotOp,
    SelectFlipOp,
    SelectPhaseOp,
    SwapOp,
)
from .distances import ensemble_trace_distance, trace_in_extraction
from .protocols import QpirInstance
from .runtime import (
    CLIENT,
    Ensemble,
    ExecutionTranscript,
    ProtocolShapeError,
    ProtocolSpec,
    execute,
)
from .states import PureState, RegisterLayout

__all__ = [
    "PrivacyRow",
    "PrivacyReport",
    "privacy_lower_bound",
    "HonestSimulator",
    "honest_simulator",
    "TheoremSimulator",
    "theorem_simulator",
    "verify_theorem_bound",
    "is_measurement_free",
]


def is_measurement_free(spec: ProtocolSpec) -> bool:
    return all(
        op.kind == "isometry"
        for prog in (spec.server, spec.client)
        for st in prog.steps
        for op in st.ops
    )


def _even_steps(spec: ProtocolSpec) -> list[int]:
    return [2 * t for t in range(1, spec.rounds + 1)]


def _view_ensemble(transcript: ExecutionTranscript, t: int) -> Ensemble:
    """Server-side view at step t as a low-rank ensemble (reference kept)."""
    ens = transcript.ensemble(t)
    own = transcript.record(t).ownership
    client_side = [n for n in ens.layout.names if own.get(n) == CLIENT]
    return ens.traced(client_side) if client_side else ens


@dataclass(frozen=True)
class PrivacyRow:
    step: int
    x_label: str
    pair: tuple[str, str]
    distance: float
    required: bool  # inside the definition's range t <= s-1

    def as_dict(self) -> dict:
        return {"step": self.step, "x": self.x_label, "pair": list(self.pair),
                "distance": self.distance, "required": self.required}


@dataclass(frozen=True)
class PrivacyReport:
    mode: str
    protocol: str
    adversary: str
    rows: tuple[PrivacyRow, ...]
    eps_lower: float
    eps_upper: float | None = None
    target: float | None = None

    def __post_init__(self):
        if self.eps_upper is not None and self.eps_lower > self.eps_upper + 1e-9:
            raise ValueError(
                f"lower bound {self.eps_lower} exceeds upper bound {self.eps_upper}"
            )

    @property
    def passed(self) -> bool | None:
        if self.target is None:
            return None
        return self.eps_lower <= self.target + 1e-9

    def as_rows(self) -> list[dict]:
        meta = {"mode": self.mode, "protocol": self.protocol, "adversary": self.adversary}
        return [dict(meta, **r.as_dict()) for r in self.rows]


def privacy_lower_bound(instance: QpirInstance, adversary: Adversary | None = None,
                        mode: str = "anchored", *, databases=None,
                        client_kinds=("classical", "uniform", "entangled", "correlated"),
                        target: float | None = None,
                        include_odd_steps: bool = False) -> PrivacyReport:
    """Certified floor under the privacy error of a (possibly adversarial) run.

    For every even step and every pair of inputs sharing the database state
    and the reference-marginal class, half the view distance lower-bounds any
    achievable simulation error.  ``mode="anchored"`` keeps the database
    classical; ``mode="full"`` adds the uniformly superposed database, the
    input class anchoring excludes.  Odd steps are outside the definition's
    quantification; ``include_odd_steps`` adds them as informational rows
    (never flagged required) without folding them into ``eps_lower``.
    """
    if mode not in ("anchored", "full"):
        raise ValueError(f"unknown privacy mode {mode!r}")
    spec = instance.spec if adversary is None else adversary.modified_spec(instance.spec)
    inputs = standard_inputs(
        instance, databases=databases, client_kinds=client_kinds,
        superposed_db=(mode == "full" and instance.database_register is not None),
    )
    s = instance.spec.rounds
    steps = (list(range(1, 2 * s + 1)) if include_odd_steps
             else _even_steps(instance.spec))
    groups: dict[tuple[str, str], list[InputSpec]] = {}
    for ins in inputs:
        groups.setdefault((ins.x_label, ins.marginal_key), []).append(ins)

    rows: list[PrivacyRow] = []
    for (x_label, _key), members in groups.items():
        views: list[tuple[str, dict[int, Ensemble]]] = []
        for ins in members:
            tr = execute(spec, ins.state, probe_steps=steps, keep_states=False)
            views.append((ins.label, {t: _view_ensemble(tr, t) for t in steps}))
        for a in range(len(views)):
            for b in range(a + 1, len(views)):
                la, va = views[a]
                lb, vb = views[b]
                for t in steps:
                    ea, eb = va[t], vb[t]
                    dist = ensemble_trace_distance(
                        ea.vectors, eb.aligned_vectors(ea.layout.names)
                    )
                    rows.append(PrivacyRow(t, x_label, (la, lb), float(dist),
                                           required=(t % 2 == 0 and t // 2 <= s - 1)))
    eps_lower = max((r.distance for r in rows if r.step % 2 == 0), default=0.0) / 2.0
    return PrivacyReport(
        mode=mode,
        protocol=instance.spec.name,
        adversary=adversary.name if adversary else "honest",
        rows=tuple(rows),
        eps_lower=eps_lower,
        target=target,
    )


# ---------------------------------------------------------------------------
# simulators
# ---------------------------------------------------------------------------


def _reference_marginal(state: PureState | Ensemble, reference) -> Ensemble | None:
    if not reference:
        return None
    ens = Ensemble.from_pure(state) if isinstance(state, PureState) else state
    drop = [n for n in ens.layout.names if n not in set(reference)]
    return ens.traced(drop)


def _product_vectors(front: list[np.ndarray], back: list[np.ndarray]) -> list[np.ndarray]:
    return [np.multiply.outer(f, b).reshape(-1) for f in front for b in back]


class HonestSimulator:
    """Def-style simulator for the honest server: rerun with the client
    input pinned to index 1 and output the server-side registers."""

    def __init__(self, instance: QpirInstance, reference_index: int = 1):
        self.instance = instance
        self.reference_index = reference_index
        self._cache: dict = {}

    def view(self, db, t: int) -> Ensemble:
        key = (self._db_key(db), t)
        if key not in self._cache:
            tr = self.instance.run(
                db if self.instance.database_register else None,
                self.reference_index,
                probe_steps=_even_steps(self.instance.spec), keep_states=False,
            )
            for step in _even_steps(self.instance.spec):
                self._cache[(self._db_key(db), step)] = _view_ensemble(tr, step)
        return self._cache[key]

    def _db_key(self, db):
        return tuple(db) if isinstance(db, (tuple, list)) else db

    def epsilon_upper(self, inputs=None, *, adversary_spec: ProtocolSpec | None = None):
        """Max distance between the simulated and the actual view over the
        test inputs; returns (eps_upper, rows)."""
        instance = self.instance
        if inputs is None:
            inputs = standard_inputs(instance)
        spec = adversary_spec or instance.spec
        rows = []
        for ins in inputs:
            tr = execute(spec, ins.state, probe_steps=_even_steps(instance.spec),
                         keep_states=False)
            db = _x_of(ins, instance)
            ref = _reference_marginal(ins.state, ins.reference)
            for t in _even_steps(instance.spec):
                actual = _view_ensemble(tr, t)
                sim = self.view(db, t)
                sim_names = list(sim.layout.names) + list(ins.reference)
                vecs = sim.vectors if ref is None else _product_vectors(sim.vectors, ref.vectors)
                dist = ensemble_trace_distance(vecs, actual.aligned_vectors(sim_names))
                rows.append((ins.label, t, float(dist)))
        eps = max((d for _, _, d in rows), default=0.0)
        return eps, rows


def _x_of(ins: InputSpec, instance: QpirInstance):
    if instance.database_register is None:
        return None
    lbl = ins.x_label
    if lbl == "x=+":
        raise ValueError("honest simulator is defined for anchored inputs only")
    return int(lbl.split("=", 1)[1], 2)


def honest_simulator(instance: QpirInstance, reference_index: int = 1) -> HonestSimulator:
    return HonestSimulator(instance, reference_index)


_SELF_INVERSE = (HadamardOp, InnerProductCnotOp, SelectPhaseOp, SelectCnotOp,
                 SelectFlipOp, CnotOp, CopyOp, SwapOp)


def _inverted(ops) -> tuple[ChannelOp, ...]:
    out = []
    for op in reversed(tuple(ops)):
        if isinstance(op, RotateOp):
            out.append(op.inverse())
        elif isinstance(op, _SELF_INVERSE):
            out.append(op)
        else:
            raise ProtocolShapeError(
                f"recovery op {type(op).__name__} is not invertible; purify it first"
            )
    return tuple(out)


class TheoremSimulator:
    """The constructive specious-server simulator.

    For each even step the anchor state is extracted from one run of the
    adversary on the reference input ``(x0, i=1)``: the purified recovery is
    applied, the result is projected onto the honest pure state, and the
    renormalized remainder on the adversary's private registers is the
    anchor.  The simulator for any anchored input is then the inverted
    recovery applied to (anchor tensor honest-simulator output).
    """

    def __init__(self, instance: QpirInstance, adversary: Adversary, x0,
                 reference_index: int = 1):
        if not is_measurement_free(instance.spec):
            raise ProtocolShapeError("the certificate needs a measurement-free protocol")
        if adversary.recoveries is None:
            raise ProtocolShapeError("the adversary ships no recovery operators")
        self.instance = instance
        self.adversary = adversary
        self.x0 = x0
        self.honest = HonestSimulator(instance, reference_index)
        self.anchors: dict[int, PureState | None] = {}
        self.extraction_bounds: dict[int, float] = {}
        self._build()

    def _build(self):
        instance, adversary = self.instance, self.adversary
        spec = instance.spec
        inp = instance.basis_input(self.x0, self.honest.reference_index)
        honest_tr = execute(spec, inp)
        adv_tr = adversary.run(spec, inp)
        for t in _even_steps(spec):
            recovery = adversary.recoveries[t - 1]
            ens = adv_tr.ensemble(t)
            for op in recovery.ops:
                ens = ens.apply(op)
            if not ens.is_pure:
                raise ProtocolShapeError(
                    f"adversarial state at step {t} is not pure; purify the adversary"
                )
            if not recovery.discard:
                self.anchors[t] = None
                self.extraction_bounds[t] = 0.0
                continue
            alpha = ens.to_pure()
            phi = honest_tr.ensemble(t).to_pure()
            sigma, bound = trace_in_extraction(alpha, phi)
            self.anchors[t] = sigma.reordered(
                [n for n in alpha.layout.names if n in set(recovery.discard)]
            )
            self.extraction_bounds[t] = bound

    def simulated_view(self, db, t: int) -> tuple[list[str], list[np.ndarray]]:
        """Simulator output for database ``db`` at even step ``t``: register
        names and ensemble vectors of the reconstructed adversary view."""
        recovery = self.adversary.recoveries[t - 1]
        sim = self.honest.view(db, t)
        anchor = self.anchors[t]
        if anchor is None:
            return list(sim.layout.names), list(sim.vectors)
        names = list(anchor.layout.names) + list(sim.layout.names)
        widths = dict(anchor.layout.registers) | dict(sim.layout.registers)
        layout = RegisterLayout(tuple((n, widths[n]) for n in names))
        ens = Ensemble(layout, _product_vectors([anchor.amplitudes], sim.vectors))
        for op in _inverted(recovery.ops):
            ens = ens.apply(op)
        return list(ens.layout.names), list(ens.vectors)

    def certify(self, inputs=None):
        """(eps_hat, rows): worst distance between the simulator output and
        the adversary's actual view across anchored test inputs and steps."""
        instance = self.instance
        if inputs is None:
            inputs = standard_inputs(instance)
        adv_spec = self.adversary.modified_spec(instance.spec)
        rows = []
        for ins in inputs:
            tr = execute(adv_spec, ins.state,
                         probe_steps=_even_steps(instance.spec), keep_states=False)
            db = _x_of(ins, instance)
            ref = _reference_marginal(ins.state, ins.reference)
            for t in _even_steps(instance.spec):
                names, vecs = self.simulated_view(db, t)
                if ref is not None:
                    names = names + list(ins.reference)
                    vecs = _product_vectors(vecs, ref.vectors)
                actual = _view_ensemble(tr, t)
                dist = ensemble_trace_distance(vecs, actual.aligned_vectors(names))
                rows.append((ins.label, t, float(dist)))
        eps_hat = max((d for _, _, d in rows), default=0.0)
        return eps_hat, rows

    def extract_anchor(self, db, client_state: PureState, t: int) -> PureState:
        """Re-extract the anchor from an arbitrary anchored pure input; used
        to check that one anchor serves every input."""
        recovery = self.adversary.recoveries[t - 1]
        if not recovery.discard:
            raise ProtocolShapeError("this adversary has no private registers")
        inp = self.instance.input_with_client(db, client_state) \
            if self.instance.database_register else client_state
        honest_tr = execute(self.instance.spec, inp)
        adv_tr = self.adversary.run(self.instance.spec, inp)
        ens = adv_tr.ensemble(t)
        for op in recovery.ops:
            ens = ens.apply(op)
        alpha = ens.to_pure()
        phi = honest_tr.ensemble(t).to_pure()
        sigma, _ = trace_in_extraction(alpha, phi)
        return sigma.reordered([n for n in alpha.layout.names if n in set(recovery.discard)])


def theorem_simulator(instance: QpirInstance, adversary: Adversary, x0,
                      reference_index: int = 1) -> TheoremSimulator:
    return TheoremSimulator(instance, adversary, x0, reference_index)


@dataclass(frozen=True)
class TheoremBoundRow:
    adversary: str
    gamma_hat: float
    eps_hat: float
    eps_honest: float
    bound: float
    ok: bool

    def as_dict(self) -> dict:
        return {"adversary": self.adversary, "gamma_hat": self.gamma_hat,
                "eps_hat": self.eps_hat, "eps_honest": self.eps_honest,
                "bound": self.bound, "ok": self.ok}


def verify_theorem_bound(instance: QpirInstance, adversaries, *, x0=0,
                         tolerance: float = 1e-6) -> list[TheoremBoundRow]:
    """For each specious adversary: measure gamma, build the constructive
    simulator, measure its achieved anchored privacy error, and check it
    against eps_honest + 3 sqrt(2 gamma)."""
    from .adversaries import measure_speciousness

    eps_honest, _ = HonestSimulator(instance).epsilon_upper()
    rows = []
    for adv in adversaries:
        gamma = measure_speciousness(instance, adv).gamma_hat
        sim = TheoremSimulator(instance, adv, x0)
        eps_hat, _ = sim.certify()
        bound = eps_honest + 3.0 * math.sqrt(2.0 * gamma)
        rows.append(TheoremBoundRow(adv.name, gamma, eps_hat, eps_honest, bound,
                                    eps_hat <= bound + tolerance))
    return rows
