"""Rasch baseline tests: probit init against a high-precision quantile oracle,
expected-response recovery, and estimator invariants."""

import math

import mpmath
import numpy as np
import pytest
from scipy.special import expit

from edustate import rasch
from edustate.errors import InsufficientDataError, SchemaError


def probit_oracle(p):
    """Standard normal quantile via mpmath (independent of scipy)."""
    with mpmath.workdps(40):
        return float(mpmath.sqrt(2) * mpmath.erfinv(2 * mpmath.mpf(p) - 1))


class TestInitDifficulties:
    def test_half_maps_to_zero(self):
        assert abs(rasch.init_difficulties({"i": 0.5})["i"]) < 1e-9

    def test_point_eight(self):
        got = rasch.init_difficulties({"i": 0.8})["i"]
        assert got == pytest.approx(-probit_oracle(0.8), abs=1e-3)
        assert got == pytest.approx(-0.8416, abs=1e-3)

    def test_perfect_accuracy_clamped(self):
        got = rasch.init_difficulties({"i": 1.0})["i"]
        assert got == pytest.approx(-probit_oracle(0.99), abs=1e-3)
        assert got == pytest.approx(-2.3263, abs=1e-3)

    def test_zero_accuracy_clamped(self):
        got = rasch.init_difficulties({"i": 0.0})["i"]
        assert got == pytest.approx(probit_oracle(0.99), abs=1e-3)

    def test_strictly_decreasing_in_accuracy(self):
        ps = np.linspace(0.01, 0.99, 60)
        bs = [rasch.init_difficulties({"i": p})["i"] for p in ps]
        assert all(b1 > b2 for b1, b2 in zip(bs, bs[1:]))

    def test_non_finite_rejected(self):
        with pytest.raises(SchemaError):
            rasch.init_difficulties({"i": float("nan")})

    def test_matches_oracle_over_grid(self):
        for p in np.linspace(0.02, 0.98, 25):
            got = rasch.init_difficulties({"i": float(p)})["i"]
            assert got == pytest.approx(-probit_oracle(float(p)), abs=1e-9)


class TestPredict:
    def _params(self, theta, b):
        return rasch.RaschParams(theta={"u": theta}, b={"i": b})

    def test_equal_ability_difficulty(self):
        assert rasch.predict_response(self._params(1.2, 1.2), "u", "i") == 0.5

    def test_unit_gap(self):
        assert rasch.predict_response(self._params(1.0, 0.0), "u", "i") == (
            pytest.approx(0.7310585786300049, abs=1e-12)
        )

    def test_sigmoid_symmetry(self):
        p_plus = rasch.predict_response(self._params(0.5, -0.5), "u", "i")
        p_minus = rasch.predict_response(self._params(-0.5, 0.5), "u", "i")
        assert p_plus + p_minus == pytest.approx(1.0, abs=1e-12)
        assert p_minus == pytest.approx(0.2689414213699951, abs=1e-12)

    def test_unknown_user_item(self):
        with pytest.raises(KeyError):
            rasch.predict_response(self._params(0, 0), "ghost", "i")
        with pytest.raises(KeyError):
            rasch.predict_response(self._params(0, 0), "u", "ghost")

    def test_threshold_is_inclusive(self):
        params = self._params(0.0, 0.0)
        assert rasch.predict_understanding(params, "u", "i", threshold=0.5) is True
        assert rasch.predict_understanding(params, "u", "i", threshold=0.5 + 1e-12) is False

    def test_explicit_video_difficulty(self):
        params = self._params(2.0, 0.0)
        assert rasch.understanding_score(params, "u", "any", video_difficulty=0.0) == (
            pytest.approx(expit(2.0))
        )
        with pytest.raises(SchemaError):
            rasch.understanding_score(params, "u", "any", video_difficulty=float("inf"))


def expected_response_records(thetas, bs, n_copies=200):
    """Replicated records whose per-cell accuracy sits at the model expectation."""
    records = []
    for u, th in thetas.items():
        for i, b in bs.items():
            k = round(n_copies * float(expit(th - b)))
            records += [(u, i, True)] * k + [(u, i, False)] * (n_copies - k)
    return records


class TestFit:
    def test_expected_response_recovery(self):
        thetas = {"u0": -1.0, "u1": -0.5, "u2": 0.5, "u3": 1.0}
        bs = {"i0": -1.5, "i1": 0.0, "i2": 1.5}
        params = rasch.fit(expected_response_records(thetas, bs))
        # truth is already mean-zero in theta, matching the fitted anchor
        for u, th in thetas.items():
            assert params.theta[u] == pytest.approx(th, abs=0.05)
        for i, b in bs.items():
            assert params.b[i] == pytest.approx(b, abs=0.05)

    def test_parameters_clamped_and_centered(self):
        thetas = {"u0": -2.0, "u1": 2.0}
        bs = {"i0": -1.0, "i1": 1.0}
        params = rasch.fit(expected_response_records(thetas, bs))
        vals = list(params.theta.values()) + list(params.b.values())
        assert max(abs(v) for v in vals) <= 4.0
        assert abs(np.mean(list(params.theta.values()))) < 1e-9

    def test_all_correct_user_is_bounded_by_clamp(self):
        # a user who answers everything correctly has a divergent MLE;
        # the clamp bounds it and the prediction saturates near sigma(8)
        records = [("lucky", f"i{k}", True) for k in range(5)]
        records += [("other", f"i{k}", k % 2 == 0) for k in range(5)]
        params = rasch.fit(records)
        assert max(abs(v) for v in params.theta.values()) <= 4.0
        assert max(abs(v) for v in params.b.values()) <= 4.0
        gap = params.theta["lucky"] - max(params.b.values())
        assert gap >= 2.0  # strongly positive despite the bound
        assert rasch.predict_response(params, "lucky", "i0") > 0.85

    def test_translation_invariance_of_predictions(self):
        records = expected_response_records({"a": -0.5, "b": 0.5}, {"i": 0.0, "j": 0.7})
        params = rasch.fit(records)
        shifted = rasch.RaschParams(
            theta={u: v + 1.7 for u, v in params.theta.items()},
            b={i: v + 1.7 for i, v in params.b.items()},
        )
        for u in params.theta:
            for i in params.b:
                assert rasch.predict_response(params, u, i) == pytest.approx(
                    rasch.predict_response(shifted, u, i), abs=1e-12
                )

    def test_loglik_non_decreasing_without_clamps(self):
        rng = np.random.default_rng(8)
        records = []
        for u in range(12):
            for i in range(8):
                p = expit(rng.normal() - (i - 4) / 3)
                records.append((f"u{u}", f"i{i}", bool(rng.random() < p)))
        params = rasch.fit(records)
        lls = [ll for ll, clamped in params.history if clamped == 0]
        assert all(b >= a - 1e-9 for a, b in zip(lls, lls[1:]))

    def test_deterministic(self):
        records = expected_response_records({"a": -0.3, "b": 0.9}, {"i": 0.0, "j": -0.6}, 50)
        p1 = rasch.fit(records)
        p2 = rasch.fit(records)
        assert p1.theta == p2.theta and p1.b == p2.b

    def test_insufficient_data(self):
        with pytest.raises(InsufficientDataError):
            rasch.fit([])
        with pytest.raises(InsufficientDataError):
            rasch.fit([("u", "i", True)], users=["u", "silent"])
        with pytest.raises(InsufficientDataError):
            rasch.fit([("u", "i", True)], items=["i", "unanswered"])

    def test_accepts_response_records(self, small_synth_nostreams):
        sessions, bank, _ = small_synth_nostreams
        records = [r for s in sessions for r in s.responses]
        params = rasch.fit(records)
        assert set(params.theta) == {s.user for s in sessions}

    def test_json_round_trip(self):
        params = rasch.fit(expected_response_records({"a": 0.5, "b": -0.5}, {"i": 0.0}, 40))
        restored = rasch.RaschParams.from_json(params.to_json())
        assert restored.theta == params.theta and restored.b == params.b


class TestSyntheticRecovery:
    def test_moderate_grid_recovers_difficulty_ordering(self):
        from edustate import synth

        config = synth.SynthConfig(
            n_users=100, n_lectures=10, state_sd=0.0, signal_strength=0.0,
            generate_streams=False, seed=31,
        )
        sessions, bank, truth = synth.generate(config)
        records = [
            r for s in sessions for r in s.responses
            if bank[r.item].kind == "lecture_question"
        ]
        params = rasch.fit(records)
        items = sorted({r.item for r in records})
        fitted = np.array([params.b[i] for i in items])
        true = np.array([truth.b[i] for i in items])
        fitted -= fitted.mean()
        true -= true.mean()
        r = np.corrcoef(fitted, true)[0, 1]
        assert r >= 0.9
        assert math.sqrt(np.mean((fitted - true) ** 2)) <= 0.35
