"""Tests for the link propagation features and closed-form quantities."""

import math

import numpy as np
import pytest

from rfprop.features import (FeatureVector, RadioSpec, diffraction_parameter,
                             extract, fresnel_radius, knife_edge_loss,
                             read_samples, reflection_loss,
                             reflection_loss_from_path_difference,
                             scan_fresnel_zone, write_samples)
from rfprop.voxel_grid import OccupancyGrid

from helpers import fill_region_free, fill_region_occupied, make_fv, make_sample
import oracles

LAM = 0.125  # 2.4 GHz band


class TestRadioSpec:
    def test_wavelength(self):
        radio = RadioSpec(frequency_hz=2.4e9)
        assert radio.wavelength_m == pytest.approx(299792458.0 / 2.4e9,
                                                   rel=1e-12)

    def test_validation(self):
        with pytest.raises(ValueError):
            RadioSpec(frequency_hz=0.0)
        with pytest.raises(ValueError):
            RadioSpec(frequency_hz=1e9, antenna_height_tx_m=-1.0)


class TestFresnelRadius:
    def test_endpoint_is_zero(self):
        assert fresnel_radius(0.0, 37.0, LAM) == 0.0

    def test_frozen_midpoint_value(self):
        # sqrt(50 * 50 * 0.125 / 100), evaluated independently
        assert fresnel_radius(50.0, 50.0, LAM) == pytest.approx(
            1.7677669529663689, abs=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            d1, d2 = rng.uniform(0.1, 200.0, 2)
            lam = rng.uniform(0.01, 1.0)
            assert fresnel_radius(d1, d2, lam) == pytest.approx(
                fresnel_radius(d2, d1, lam), rel=1e-12)

    def test_maximized_at_midpoint(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            total = rng.uniform(1.0, 300.0)
            split = rng.uniform(0.05, 0.95)
            r_mid = fresnel_radius(total / 2, total / 2, LAM)
            r_off = fresnel_radius(split * total, (1 - split) * total, LAM)
            assert r_off <= r_mid + 1e-12

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            fresnel_radius(0.0, 0.0, LAM)
        with pytest.raises(ValueError):
            fresnel_radius(-1.0, 5.0, LAM)


class TestReflectionLoss:
    def test_zero_path_difference_clamped(self):
        assert reflection_loss(10.0, 0.0, 0.0, LAM) == -40.0

    def test_half_wavelength_doubles_field(self):
        rl = reflection_loss_from_path_difference(LAM / 2, LAM)
        assert rl == pytest.approx(20 * math.log10(2.0), abs=1e-12)

    def test_frozen_geometry_value(self):
        # d=50, h_tx=h_rx=1, lambda=0.125: delta ~ 0.039984 m
        assert reflection_loss(50.0, 1.0, 1.0, LAM, floor_db=None) == \
            pytest.approx(4.548607169999271, abs=1e-9)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(5)
        for _ in range(300):
            d = rng.uniform(0.5, 300.0)
            h_tx, h_rx = rng.uniform(0.0, 3.0, 2)
            lam = rng.uniform(0.02, 0.5)
            got = reflection_loss(d, h_tx, h_rx, lam, floor_db=None)
            ref = oracles.reflection_loss_brute(d, h_tx, h_rx, lam)
            assert got == pytest.approx(ref, abs=1e-9)

    def test_periodic_in_path_difference(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            delta = rng.uniform(0.0, 1.0)
            lam = rng.uniform(0.05, 0.5)
            a = reflection_loss_from_path_difference(delta, lam, floor_db=None)
            b = reflection_loss_from_path_difference(delta + lam, lam,
                                                     floor_db=None)
            if math.isfinite(a):
                assert a == pytest.approx(b, abs=1e-9)

    def test_invalid_distance(self):
        with pytest.raises(ValueError):
            reflection_loss(0.0, 1.0, 1.0, LAM)


class TestDiffractionParameter:
    def test_on_axis_zero(self):
        assert diffraction_parameter(0.0, 10.0, 20.0, LAM) == 0.0

    def test_clearance_at_fresnel_radius(self):
        d1, d2 = 30.0, 70.0
        r = fresnel_radius(d1, d2, LAM)
        v = diffraction_parameter(-r, d1, d2, LAM)
        assert v == pytest.approx(-math.sqrt(2.0), abs=1e-12)

    def test_linear_in_height(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            h = rng.uniform(-3.0, 3.0)
            d1, d2 = rng.uniform(1.0, 100.0, 2)
            assert diffraction_parameter(2 * h, d1, d2, LAM) == pytest.approx(
                2 * diffraction_parameter(h, d1, d2, LAM), rel=1e-12)

    def test_antenna_coincident_rejected(self):
        with pytest.raises(ValueError):
            diffraction_parameter(1.0, 0.0, 10.0, LAM)


class TestKnifeEdgeLoss:
    def test_clear_zone(self):
        assert knife_edge_loss(-2.0) == 0.0
        assert knife_edge_loss(-1.0) == 0.0

    def test_grazing_half_field(self):
        assert knife_edge_loss(0.0) == pytest.approx(-6.020599913279624,
                                                     abs=1e-12)

    def test_seams_are_continuous(self):
        for seam in (-1.0, 0.0, 1.0, 2.4):
            left = knife_edge_loss(seam - 1e-9)
            right = knife_edge_loss(seam + 1e-9)
            assert abs(left - right) <= 0.2  # continuity-joined branches

    def test_never_positive_and_monotone(self):
        vs = np.arange(-3.0, 5.0, 1e-3)
        dl = knife_edge_loss(vs)
        assert np.all(dl <= 0.0)
        assert np.all(np.diff(dl) <= 1e-12)

    def test_matches_oracle(self):
        rng = np.random.default_rng(8)
        vs = rng.uniform(-3.0, 6.0, 500)
        for v in vs:
            assert knife_edge_loss(float(v)) == pytest.approx(
                oracles.knife_edge_loss_brute(float(v)), abs=1e-9)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            knife_edge_loss(float("nan"))


def free_grid(extent=40, vox=0.5):
    """Grid with a fully-Free box [0, extent)^2 x [0, extent/4)."""
    grid = OccupancyGrid(voxel_size=vox)
    fill_region_free(grid, (0, 0, 0), (extent, extent, extent / 4))
    return grid


class TestScanFresnelZone:
    def test_empty_grid_is_clear(self):
        grid = OccupancyGrid(voxel_size=0.5)
        v = scan_fresnel_zone([1, 1, 1], [21, 1, 1], grid, LAM)
        assert v == pytest.approx(-math.sqrt(2.0), abs=1e-9)

    def test_on_axis_blocker(self):
        grid = free_grid()
        tx = np.array([1.25, 5.25, 1.25])
        rx = np.array([21.25, 5.25, 1.25])
        mid = 0.5 * (tx + rx)
        grid.set_log_odds(grid.world_to_index(mid), grid.l_max)
        v = scan_fresnel_zone(tx, rx, grid, LAM)
        assert v >= 0.0
        assert knife_edge_loss(v) <= -6.02

    def test_symmetry(self):
        grid = free_grid()
        grid.set_log_odds(grid.world_to_index((11.3, 5.4, 2.1)), grid.l_max)
        tx, rx = [1.2, 5.3, 1.4], [21.7, 5.1, 1.6]
        a = scan_fresnel_zone(tx, rx, grid, LAM)
        b = scan_fresnel_zone(rx, tx, grid, LAM)
        assert a == pytest.approx(b, abs=1e-9)

    def test_monotone_under_obstruction(self):
        rng = np.random.default_rng(9)
        tx, rx = np.array([1.3, 5.2, 1.3]), np.array([19.6, 5.7, 1.8])
        for _ in range(20):
            grid = free_grid(extent=24)
            base_v = scan_fresnel_zone(tx, rx, grid, LAM)
            t = rng.uniform(0.15, 0.85)
            offset = rng.uniform(-0.8, 0.8, 3)
            p = tx + t * (rx - tx) + offset
            grid.set_log_odds(grid.world_to_index(p), grid.l_max)
            assert scan_fresnel_zone(tx, rx, grid, LAM) >= base_v - 1e-12

    def test_vertical_link_does_not_fail(self):
        grid = free_grid()
        v = scan_fresnel_zone([5, 5, 0.4], [5, 5, 9.0], grid, LAM)
        assert math.isfinite(v)


class TestExtract:
    def radio(self):
        return RadioSpec(frequency_hz=2.4e9)

    def test_free_corridor(self):
        grid = free_grid()
        f = extract([1.25, 5.25, 1.25], [11.25, 5.25, 1.25], grid, self.radio())
        assert f.strictly_visible and not f.strictly_not_visible
        assert f.n_occupied == 0 and f.n_unknown == 0 and f.n_maybe == 0
        assert f.diffraction_loss == 0.0
        assert f.distance == pytest.approx(10.0)
        assert f.not_free_meters == 0.0

    def test_wall_blocks(self):
        grid = free_grid()
        fill_region_occupied(grid, (5.0, 0.0, 0.0), (5.5, 10.0, 10.0))
        f = extract([1.25, 5.25, 1.25], [11.25, 5.25, 1.25], grid, self.radio())
        assert f.strictly_not_visible and not f.strictly_visible
        assert f.n_occupied >= 1
        assert f.not_free_meters >= grid.voxel_size
        assert f.diffraction_loss < 0.0

    def test_counts_sum_to_traversed(self):
        grid = free_grid()
        fill_region_occupied(grid, (5.0, 0.0, 0.0), (5.5, 10.0, 10.0))
        tx, rx = [1.2, 5.3, 1.2], [14.8, 6.1, 1.9]
        f = extract(tx, rx, grid, self.radio())
        from rfprop.voxel_grid import traverse_segment
        total = len(traverse_segment(tx, rx, grid))
        assert f.n_free + f.n_occupied + f.n_maybe + f.n_unknown == total

    def test_direction_symmetry(self):
        grid = free_grid()
        fill_region_occupied(grid, (7.0, 4.0, 0.0), (7.5, 7.0, 3.0))
        tx, rx = [1.2, 5.3, 1.2], [14.8, 6.1, 1.9]
        a = extract(tx, rx, grid, self.radio())
        b = extract(rx, tx, grid, self.radio())
        assert a.distance == b.distance
        assert a.strictly_visible == b.strictly_visible
        assert a.strictly_not_visible == b.strictly_not_visible
        assert (a.n_free, a.n_occupied, a.n_maybe, a.n_unknown) == \
            (b.n_free, b.n_occupied, b.n_maybe, b.n_unknown)
        assert a.reflection_loss == pytest.approx(b.reflection_loss, abs=1e-12)
        assert a.diffraction_loss == pytest.approx(b.diffraction_loss, abs=1e-9)

    def test_coincident_positions_rejected(self):
        grid = free_grid()
        with pytest.raises(ValueError):
            extract([1, 1, 1], [1, 1, 1], grid, self.radio())

    def test_visibility_flags_exclusive(self):
        with pytest.raises(ValueError):
            FeatureVector(distance=1.0, log10_distance=0.0,
                          strictly_visible=True, strictly_not_visible=True,
                          n_free=0, n_occupied=1, n_maybe=0, n_unknown=0,
                          not_free_meters=0.5, reflection_loss=0.0,
                          diffraction_loss=0.0, worst_v=0.0)


class TestSampleFile:
    def test_round_trip(self, tmp_path):
        samples = [
            make_sample(make_fv(distance=12.5, reflection_loss=1.25,
                                diffraction_loss=-3.5, worst_v=0.2,
                                strictly_visible=False, n_unknown=3,
                                not_free_meters=1.5),
                        measured_pl=77.25, tx="base", rx="husky1", t=102.5),
            make_sample(make_fv(distance=3.0), measured_pl=50.0,
                        tx="husky1", rx="spot2", t=103.0, synthetic=True),
        ]
        path = tmp_path / "samples.csv"
        write_samples(samples, str(path))
        back = read_samples(str(path))
        assert len(back) == 2
        assert back[0].features == samples[0].features
        assert back[0].measured_pl == samples[0].measured_pl
        assert back[1].synthetic is True
        assert back[0].tx_id == "base" and back[0].rx_id == "husky1"

    def test_header_enforced(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("nope\n1,2,3\n")
        with pytest.raises(ValueError):
            read_samples(str(path))
