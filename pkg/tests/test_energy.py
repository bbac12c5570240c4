import pytest

from mecdc.energy import (
    EnergyLedger,
    compute_energy,
    propulsion_energy,
    propulsion_power,
    total_energy,
)
from mecdc.scenario import ComputeParams, PropulsionParams

PROP = PropulsionParams()
COMP = ComputeParams()


class TestPropulsion:
    def test_hover_is_blade_plus_induced(self):
        assert propulsion_power(0.0, PROP) == pytest.approx(79.86 + 88.63, abs=1e-9)
        assert propulsion_energy(0.0, 1.0, PROP) == pytest.approx(168.49, abs=1e-9)

    def test_zero_duration_zero_energy(self):
        assert propulsion_energy(30.0, 0.0, PROP) == 0.0

    def test_induced_term_shrinks_with_speed(self):
        # direct evaluation of the induced component at v=0 and v=10
        def induced(v):
            x = v * v / (2.0 * PROP.mean_rotor_induced_velocity**2)
            return PROP.hover_induced_power * ((1.0 + x * x) ** 0.5 - x) ** 0.5

        assert induced(10.0) < induced(0.0)
        # and the total model honours the same decomposition
        blade = PROP.hover_blade_power * (1 + 3 * 100.0 / PROP.tip_speed**2)
        parasite = (
            0.5 * PROP.fuselage_drag_ratio * PROP.air_density
            * PROP.rotor_solidity * PROP.rotor_disc_area * 1000.0
        )
        assert propulsion_power(10.0, PROP) == pytest.approx(
            blade + induced(10.0) + parasite, rel=1e-12
        )

    def test_high_speed_stays_finite_and_positive(self):
        for v in (0.0, 10.0, 25.0, 50.0):
            p = propulsion_power(v, PROP)
            assert p > 0.0
            assert p < 1e5

    def test_negative_speed_rejected(self):
        with pytest.raises(ValueError):
            propulsion_power(-1.0, PROP)


class TestComputeEnergy:
    def test_zero_bits(self):
        assert compute_energy(0.0, COMP) == 0.0

    def test_table_constant_pin(self):
        # kappa omega^2 C l with the default constants and a 512 Kbit task
        assert compute_energy(512 * 1024, COMP) == pytest.approx(18.874368, abs=1e-6)

    def test_linearity(self):
        assert compute_energy(2 * 131072, COMP) == pytest.approx(
            2 * compute_energy(131072, COMP), rel=1e-12
        )

    def test_negative_bits_rejected(self):
        with pytest.raises(ValueError):
            compute_energy(-1.0, COMP)


class TestTotals:
    def test_dc_uav_never_pays_compute(self):
        assert total_energy(True, 100.0, 50.0) == 100.0
        assert total_energy(False, 100.0, 50.0) == 150.0

    def test_mec_hover_with_no_bits(self):
        move = propulsion_energy(0.0, 1.0, PROP)
        assert total_energy(False, move, compute_energy(0.0, COMP)) == pytest.approx(168.49)

    def test_ledger_additivity(self):
        ledger = EnergyLedger(num_uavs=2)
        total = 0.0
        for slot in range(1, 11):
            for uav in range(2):
                ledger.record(uav, slot, 10.0 * uav + slot, 0.5 * slot)
                total += 10.0 * uav + slot + 0.5 * slot
        assert ledger.total() == pytest.approx(total)
        assert ledger.total(0) + ledger.total(1) == pytest.approx(total)
        assert ledger.total(0) == pytest.approx(sum(r.total for r in ledger.rows if r.uav == 0))
        assert len(list(ledger.csv_rows())) == 20

    def test_ledger_rejects_negative_entries(self):
        ledger = EnergyLedger(num_uavs=1)
        with pytest.raises(ValueError):
            ledger.record(0, 1, -1.0, 0.0)
