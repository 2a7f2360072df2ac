import math

import numpy as np
import pytest

from qclocksync.ensemble import (
    CONSUMED,
    IDLE,
    TYPE_I,
    TYPE_II,
    Ensemble,
    PopulationSeries,
    SamplingSchedule,
    alice_collapse_all,
    create_ensemble,
    pos_probability,
    sample_batch,
    sample_population,
    select_subensemble,
)
from qclocksync.errors import BudgetError, ProtocolOrderError
from qclocksync.quantum import (
    ClockSpecies,
    apply_local,
    dual_projection_probability,
    evolution_unitary,
    measure_dual,
    singlet_state,
)

CS = ClockSpecies("cs", 2.0)


def _collapsed(n=100, eta=0.0, t0=0.0, phi_a=0.0, seed=1):
    ens = create_ensemble(n, CS, eta)
    rng = np.random.default_rng(seed)
    t1, t2 = alice_collapse_all(ens, t0, phi_a, rng)
    return ens, t1, t2


class TestLifecycle:
    def test_fresh_ensemble_is_all_idle(self):
        ens = create_ensemble(5, CS)
        assert np.all(ens.status == IDLE)
        assert list(ens.labels) == [1, 2, 3, 4, 5]
        snap = ens.pair(3)
        assert snap.state == "idle"
        assert snap.collapsed_type is None
        assert snap.t0 is None

    def test_collapse_partitions_labels(self):
        ens, t1, t2 = _collapsed(n=1000)
        assert len(t1) + len(t2) == 1000
        assert set(t1).isdisjoint(t2)
        assert np.all(ens.status[np.asarray(t1) - 1] == TYPE_I)
        assert np.all(ens.status[np.asarray(t2) - 1] == TYPE_II)
        assert ens.pair(int(t1[0])).collapsed_type == "type_i"
        assert ens.pair(int(t2[0])).t0 == 0.0

    def test_collapse_split_is_balanced(self):
        _, t1, t2 = _collapsed(n=100_000, seed=5)
        # binomial(1e5, 1/2): 5 sigma is about 790
        assert abs(len(t1) - 50_000) < 800

    def test_double_collapse_rejected(self):
        ens, _, _ = _collapsed()
        with pytest.raises(ProtocolOrderError):
            alice_collapse_all(ens, 1.0, 0.0, np.random.default_rng(2))

    def test_collapse_is_deterministic_in_the_seed(self):
        _, a1, a2 = _collapsed(n=500, seed=42)
        _, b1, b2 = _collapsed(n=500, seed=42)
        np.testing.assert_array_equal(a1, b1)
        np.testing.assert_array_equal(a2, b2)

    def test_unknown_label_rejected(self):
        ens = create_ensemble(4, CS)
        with pytest.raises(KeyError):
            ens.pair(0)
        with pytest.raises(KeyError):
            ens.pair(5)


class TestSelection:
    def test_selection_requires_collapse(self):
        ens = create_ensemble(10, CS)
        with pytest.raises(ProtocolOrderError):
            select_subensemble(ens, [1, 2, 3])

    def test_selection_sorts_labels(self):
        ens, t1, _ = _collapsed()
        handle = select_subensemble(ens, list(reversed(list(t1))), "type_i")
        assert list(handle.labels) == sorted(t1)
        assert handle.size == len(t1)
        assert handle.remaining == len(t1)

    def test_selection_does_not_reveal_hidden_type(self):
        # a party cannot distinguish Type I from Type II locally, so selecting
        # with the "wrong" expectation must succeed
        ens, t1, _ = _collapsed()
        handle = select_subensemble(ens, t1, expected_type="type_ii")
        assert handle.expected_type == "type_ii"

    def test_out_of_range_labels_rejected(self):
        ens, _, _ = _collapsed(n=10)
        with pytest.raises(KeyError):
            select_subensemble(ens, [3, 11])


class TestSampling:
    def test_sampling_consumes_pairs(self):
        ens, t1, _ = _collapsed(n=2000)
        handle = select_subensemble(ens, t1)
        rng = np.random.default_rng(3)
        n_pos, n = sample_batch(handle, 0.5, 10, "A", 0.0, rng)
        assert n == 10
        assert 0 <= n_pos <= 10
        consumed = handle.labels[:10]
        assert np.all(ens.status[consumed - 1] == CONSUMED)
        assert handle.remaining == handle.size - 10

    def test_consumed_pairs_cannot_be_resampled(self):
        ens, t1, _ = _collapsed(n=400)
        handle = select_subensemble(ens, t1)
        rng = np.random.default_rng(4)
        sample_batch(handle, 0.5, 5, "A", 0.0, rng)
        fresh = select_subensemble(ens, handle.labels[:5])
        with pytest.raises(ProtocolOrderError):
            sample_batch(fresh, 1.0, 5, "A", 0.0, rng)

    def test_budget_enforced(self):
        ens, t1, _ = _collapsed(n=100)
        handle = select_subensemble(ens, t1)
        schedule = SamplingSchedule(tuple(np.linspace(0.1, 1.0, 10)), len(t1))
        with pytest.raises(BudgetError):
            sample_population(handle, schedule, "A", 0.0, np.random.default_rng(5))

    def test_series_counts_conserve_batch_size(self):
        ens, t1, _ = _collapsed(n=4000, seed=9)
        handle = select_subensemble(ens, t1)
        schedule = SamplingSchedule((0.2, 0.4, 0.6), 100)
        series = sample_population(handle, schedule, "A", 0.0, np.random.default_rng(6))
        assert len(series) == 3
        np.testing.assert_array_equal(series.count_pos + series.count_neg,
                                      series.batch_size)
        np.testing.assert_array_equal(series.times, schedule.times)

    def test_sampling_deterministic_in_the_seed(self):
        def run():
            ens, t1, _ = _collapsed(n=4000, seed=10)
            handle = select_subensemble(ens, t1)
            schedule = SamplingSchedule(tuple(np.linspace(0.1, 2.0, 8)), 200)
            return sample_population(handle, schedule, "B", 0.3,
                                     np.random.default_rng(11))
        assert run() == run()


class TestClosedFormOracle:
    def _oracle_p_pos(self, party, pair_type, omega, tau, phi_a, eta, phi_meas):
        """Brute-force state-vector computation of the same probability."""
        species = ClockSpecies("o", omega)
        s = singlet_state(eta)
        # Alice collapses at t0 in basis phi_a; pick a draw that forces the
        # requested branch (pos -> Type I, neg -> Type II, each P = 1/2)
        draw = 0.25 if pair_type == TYPE_I else 0.75
        outcome, post = measure_dual(s, "A", phi_a, draw)
        assert outcome == ("pos" if pair_type == TYPE_I else "neg")
        u = evolution_unitary(species, tau)
        evolved = apply_local(post, u, u)
        return dual_projection_probability(evolved, party, phi_meas)

    def test_matches_state_vector_everywhere(self):
        rng = np.random.default_rng(20)
        for _ in range(150):
            party = "A" if rng.random() < 0.5 else "B"
            pair_type = TYPE_I if rng.random() < 0.5 else TYPE_II
            omega = rng.uniform(0.1, 10.0)
            tau = rng.uniform(0.0, 20.0)
            phi_a = rng.uniform(0, 2 * math.pi)
            eta = rng.uniform(0, 2 * math.pi)
            phi_m = rng.uniform(0, 2 * math.pi)
            closed = pos_probability(party, pair_type, omega, tau, phi_a, eta, phi_m)
            oracle = self._oracle_p_pos(party, pair_type, omega, tau, phi_a, eta, phi_m)
            assert closed == pytest.approx(oracle, abs=1e-12)

    def test_tau_zero_same_basis_is_deterministic(self):
        # immediately after collapse, remeasuring in the same basis repeats
        # the collapse outcome for Alice and anticorrelates for Bob (eta = 0)
        assert pos_probability("A", TYPE_I, 1.0, 0.0, 0.7, 0.0, 0.7) == 1.0
        assert pos_probability("A", TYPE_II, 1.0, 0.0, 0.7, 0.0, 0.7) == 0.0
        assert pos_probability("B", TYPE_I, 1.0, 0.0, 0.7, 0.0, 0.7) == 0.0
        assert pos_probability("B", TYPE_II, 1.0, 0.0, 0.7, 0.0, 0.7) == 1.0

    def test_eta_shifts_bob_only(self):
        kw = dict(pair_type=TYPE_I, omega=1.3, tau=2.0, collapse_phi=0.4,
                  phi_meas=1.1)
        a0 = pos_probability("A", eta=0.0, **kw)
        a1 = pos_probability("A", eta=1.9, **kw)
        assert a0 == a1
        b0 = pos_probability("B", eta=0.0, **kw)
        b1 = pos_probability("B", eta=1.9, **kw)
        assert b0 != pytest.approx(b1)

    def test_type_populations_are_complementary(self):
        for party in ("A", "B"):
            p1 = pos_probability(party, TYPE_I, 1.0, 0.8, 0.2, 0.5, 1.0)
            p2 = pos_probability(party, TYPE_II, 1.0, 0.8, 0.2, 0.5, 1.0)
            assert p1 + p2 == pytest.approx(1.0, abs=1e-12)

    def test_empirical_fraction_tracks_closed_form(self):
        ens, t1, _ = _collapsed(n=120_000, eta=0.6, phi_a=0.2, seed=30)
        handle = select_subensemble(ens, t1)
        batch = 20_000
        t = 0.9
        n_pos, n = sample_batch(handle, t, batch, "B", 1.3,
                                np.random.default_rng(31))
        p_expected = pos_probability("B", TYPE_I, CS.omega, t, 0.2, 0.6, 1.3)
        sigma = math.sqrt(p_expected * (1 - p_expected) / batch)
        assert abs(n_pos / n - p_expected) < 5 * sigma


class TestSamplingSchedule:
    def test_rejects_nonincreasing_times(self):
        with pytest.raises(ValueError):
            SamplingSchedule((1.0, 1.0), 10)
        with pytest.raises(ValueError):
            SamplingSchedule((2.0, 1.0), 10)

    def test_rejects_empty_or_bad_batch(self):
        with pytest.raises(ValueError):
            SamplingSchedule((), 10)
        with pytest.raises(ValueError):
            SamplingSchedule((1.0,), 0)

    def test_total_pairs_and_shift(self):
        s = SamplingSchedule((1.0, 2.0, 3.0), 50)
        assert s.total_pairs == 150
        shifted = s.shifted(0.5)
        assert shifted.times == (1.5, 2.5, 3.5)
        assert shifted.batch_size == 50


class TestPopulationSeries:
    def test_counts_must_balance(self):
        with pytest.raises(ValueError):
            PopulationSeries([0.0], [3], [4], [10])
        with pytest.raises(ValueError):
            PopulationSeries([0.0], [-1], [11], [10])

    def test_csv_round_trip_exact(self, tmp_path):
        series = PopulationSeries([0.1, 0.2, 0.30000000000000004],
                                  [7, 3, 10], [3, 7, 0], [10, 10, 10])
        path = tmp_path / "series.csv"
        series.to_csv(path, header_comment="alice cs")
        back = PopulationSeries.from_csv(path)
        assert back == series

    def test_csv_round_trip_float_counts(self, tmp_path):
        series = PopulationSeries([0.0, 1.0], [2.5, 9.0], [7.5, 1.0], [10, 10])
        path = tmp_path / "series.csv"
        series.to_csv(path)
        assert PopulationSeries.from_csv(path) == series

    def test_with_times_relabels_only(self):
        series = PopulationSeries([1.0, 2.0], [4, 6], [6, 4], [10, 10])
        shifted = series.with_times([11.0, 12.0])
        np.testing.assert_array_equal(shifted.times, [11.0, 12.0])
        np.testing.assert_array_equal(shifted.count_pos, series.count_pos)

    def test_p_hat(self):
        series = PopulationSeries([0.0], [30], [70], [100])
        np.testing.assert_allclose(series.p_hat(), [0.3])


class TestNoSignalling:
    def test_bob_marginal_uniform_before_message(self):
        # without the label partition, Bob's pooled outcome fraction is 1/2
        # regardless of Alice's basis phase: pooled over types the cosines cancel
        for phi_a in (0.0, 0.9, 2.5):
            ens, _, _ = _collapsed(n=40_000, phi_a=phi_a, seed=40)
            handle = select_subensemble(ens, ens.labels)
            n_pos, n = sample_batch(handle, 0.7, 40_000, "B", 0.0,
                                    np.random.default_rng(41))
            assert abs(n_pos / n - 0.5) < 5 * math.sqrt(0.25 / n)
