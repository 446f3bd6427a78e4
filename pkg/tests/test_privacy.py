import math

import numpy as np
import pytest

from qpirlab.adversaries import (
    client_variants,
    gamma_family,
    measure_speciousness,
    purification_attack,
    purified_honest,
    standard_inputs,
)
from qpirlab.distances import pure_trace_distance
from qpirlab.privacy import (
    HonestSimulator,
    PrivacyReport,
    PrivacyRow,
    honest_simulator,
    is_measurement_free,
    privacy_lower_bound,
    theorem_simulator,
    verify_theorem_bound,
)
from qpirlab.protocols import build_baseline, build_counterexample, build_kerenidis
from qpirlab.runtime import ProtocolShapeError
from qpirlab.states import PureState, RegisterLayout


@pytest.fixture(scope="module")
def k2():
    return build_kerenidis(2)


class TestLowerBound:
    def test_kerenidis_honest_anchored_n2(self, k2):
        report = privacy_lower_bound(k2)
        assert report.eps_lower <= 1e-9
        assert all(r.distance <= 1e-9 for r in report.rows)

    def test_kerenidis_honest_anchored_n4_classical_path(self):
        worst = 0.0
        for d in range(16):
            inst = build_kerenidis(4, database=d)
            worst = max(worst, privacy_lower_bound(inst).eps_lower)
        assert worst <= 1e-9

    def test_purification_attack_lower_bound(self, k2):
        report = privacy_lower_bound(k2, purification_attack(k2))
        assert report.eps_lower == pytest.approx(0.25, abs=1e-9)
        assert report.eps_lower > 0.025

    def test_send_index_leaks_everything(self):
        report = privacy_lower_bound(build_baseline("send-index", 2))
        # orthogonal index states reach the server: view distance 1, halved
        assert max(r.distance for r in report.rows) == pytest.approx(1.0, abs=1e-9)
        assert report.eps_lower == pytest.approx(0.5, abs=1e-9)

    def test_send_db_perfectly_private(self):
        report = privacy_lower_bound(build_baseline("send-db", 2))
        assert report.eps_lower <= 1e-9

    def test_full_mode_exposes_superposed_database(self, k2):
        report = privacy_lower_bound(k2, mode="full")
        superposed = [r for r in report.rows if r.x_label == "x=+"]
        assert superposed and max(r.distance for r in superposed) > 0.1

    def test_rows_tag_definition_range(self, k2):
        report = privacy_lower_bound(k2)
        s = k2.spec.rounds
        for r in report.rows:
            assert r.required == (r.step // 2 <= s - 1)

    def test_report_consistency_guard(self):
        row = PrivacyRow(2, "x", ("a", "b"), 0.4, True)
        with pytest.raises(ValueError):
            PrivacyReport("anchored", "p", "honest", (row,), eps_lower=0.2,
                          eps_upper=0.1)


class TestHonestSimulator:
    def test_kerenidis_upper_bound(self, k2):
        eps, rows = honest_simulator(k2).epsilon_upper()
        assert eps <= 1e-9
        assert any("i-uniform" in lbl for lbl, _, _ in rows)
        assert any("i-entangled" in lbl for lbl, _, _ in rows)

    def test_send_db_trivial_simulator(self):
        sd = build_baseline("send-db", 2)
        eps, _ = honest_simulator(sd).epsilon_upper()
        assert eps <= 1e-9

    def test_sandwich_with_lower_bound(self, k2):
        lower = privacy_lower_bound(k2).eps_lower
        upper, _ = honest_simulator(k2).epsilon_upper()
        assert lower <= upper + 1e-9


class TestTheoremSimulator:
    def test_purified_honest_reduces_to_honest(self, k2):
        sim = theorem_simulator(k2, purified_honest(k2), x0=0)
        eps_hat, _ = sim.certify()
        assert eps_hat <= 1e-9

    @pytest.mark.parametrize("theta", [0.1, 0.2, 0.4])
    def test_lossy_certificate(self, k2, theta):
        adv = gamma_family(k2, theta, lossy=True)
        gamma = measure_speciousness(k2, adv).gamma_hat
        sim = theorem_simulator(k2, adv, x0=0)
        eps_hat, rows = sim.certify()
        assert eps_hat <= 3.0 * math.sqrt(2.0 * gamma) + 1e-6
        # superposed client indices are part of the certified domain
        assert any("i-uniform" in lbl for lbl, _, _ in rows)

    def test_anchor_universality(self, k2):
        # one anchor serves every anchored input within 2 sqrt(2 gamma)
        theta = 0.4
        adv = gamma_family(k2, theta, lossy=True)
        gamma = measure_speciousness(k2, adv).gamma_hat
        sim = theorem_simulator(k2, adv, x0=0)
        t = 2 * k2.spec.rounds
        base = sim.anchors[t]
        layout = RegisterLayout((("idx", 1),))
        for x in range(4):
            for state in (PureState.basis(layout, {"idx": 0}),
                          PureState.basis(layout, {"idx": 1}),
                          PureState.from_vector(layout, np.array([1, 1]) / np.sqrt(2))):
                sigma = sim.extract_anchor(x, state, t)
                assert pure_trace_distance(base, sigma) <= 2 * math.sqrt(2 * gamma) + 1e-8

    def test_requires_measurement_free(self):
        cx = build_counterexample(2)
        assert not is_measurement_free(cx.spec)
        with pytest.raises(ProtocolShapeError, match="measurement-free"):
            theorem_simulator(cx, purified_honest(cx), x0=0)


class TestTheoremBound:
    def test_grid(self, k2):
        rows = verify_theorem_bound(
            k2, [gamma_family(k2, t, lossy=True) for t in (0.1, 0.2, 0.4)])
        assert all(r.ok for r in rows)
        gammas = [r.gamma_hat for r in rows]
        assert gammas == sorted(gammas)
        # bound is one-sided: slack rows are accepted
        assert all(r.eps_hat < r.bound for r in rows)

    def test_zero_gamma_row(self, k2):
        rows = verify_theorem_bound(k2, [gamma_family(k2, 0.9)])
        assert rows[0].gamma_hat <= 1e-9
        assert rows[0].eps_hat <= 1e-9

    def test_sandwich_lower_vs_certified(self, k2):
        adv = gamma_family(k2, 0.4, lossy=True)
        lower = privacy_lower_bound(k2, adv).eps_lower
        sim = theorem_simulator(k2, adv, x0=0)
        eps_hat, _ = sim.certify()
        gamma = measure_speciousness(k2, adv).gamma_hat
        assert lower <= eps_hat + 1e-6
        assert eps_hat <= 3 * math.sqrt(2 * gamma) + 1e-6


class TestCounterexampleSeparation:
    def test_honest_passes_specious_fails(self):
        cx = build_counterexample(2)
        honest = privacy_lower_bound(cx)
        assert honest.eps_lower <= 1e-9
        adv = purified_honest(cx)
        assert measure_speciousness(cx, adv).gamma_hat <= 1e-9
        broken = privacy_lower_bound(cx, adv)
        # pinned from the oracle run: the purified first execution leaks 1/2
        assert broken.eps_lower == pytest.approx(0.25, abs=1e-9)
        assert broken.eps_lower > 0.1
