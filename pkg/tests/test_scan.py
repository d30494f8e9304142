"""Channel configurations, rasters, profiles, axial and 1D sweeps."""

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coherencemap import scenarios
from coherencemap.geometry import FWHM_PER_SIGMA, DefocusParams, beam_fwhm
from coherencemap.noise import (
    DetectionAssignment,
    NoiseDomainError,
    RegionEntry,
    nrf_covariance,
)
from coherencemap.scan import (
    AD_ONLY,
    ALL_DIFF,
    SPLIT,
    ChannelConfig,
    NoiseMap,
    ScanPlan,
    axial_sweep,
    build_assignment,
    default_plan,
    evaluate_cell,
    grid_noise,
    optimal_profile,
    preset,
    run_raster,
    sweep_1d,
)

from conftest import make_layout


class TestChannelConfig:
    def test_presets(self):
        assert SPLIT.signs == {"A": 1, "B": -1, "C": 1, "D": -1}
        assert AD_ONLY.signs == {"A": 1, "B": 0, "C": 0, "D": -1}
        assert ALL_DIFF.signs == {"A": 1, "B": 1, "C": -1, "D": -1}

    def test_all_blocked(self):
        with pytest.raises(NoiseDomainError, match="SNL = 0"):
            ChannelConfig({"A": 0, "B": 0, "C": 0, "D": 0})

    @pytest.mark.parametrize("signs", [{"A": 2}, {"E": 1}])
    def test_bad_signs(self, signs):
        with pytest.raises(ValueError):
            ChannelConfig(signs)

    def test_preset_overrides(self):
        cfg = preset("AD_ONLY", sweep_axis="y", cmrr_imbalance=0.05)
        assert cfg.sweep_axis == "y"
        assert cfg.coefficient("D") == pytest.approx(-0.95)
        assert cfg.coefficient("A") == 1.0
        assert cfg.coefficient("B") == 0.0
        with pytest.raises(ValueError, match="unknown channel preset"):
            preset("QUAD")


class TestScanPlan:
    def test_shape(self):
        assert ScanPlan((0, 1, 2), (0, 1)).shape == (3, 2)

    @pytest.mark.parametrize("probe, conj", [((), (1,)), ((0, 1, 1), (0,)), ((0, 2, 1), (0,))])
    def test_invalid(self, probe, conj):
        with pytest.raises(ValueError):
            ScanPlan(probe, conj)

    def test_default_grid(self, two_area_layout):
        plan = default_plan(two_area_layout)
        sigma_beam = beam_fwhm(two_area_layout) / FWHM_PER_SIGMA
        assert plan.shape == (40, 15)
        assert plan.probe_positions[-1] == pytest.approx(2.5 * sigma_beam)
        assert plan.conj_positions[0] == pytest.approx(-2.5 * sigma_beam)


class TestCells:
    @pytest.mark.parametrize("gain", [1.1, 2.0, 12.6])
    def test_uncut_beam_is_full_detection(self, gain):
        layout = make_layout([(0.0, 0.14, gain, 1.0)])
        # probe entirely in A (+), conjugate entirely in D (-)
        res = evaluate_cell(layout, SPLIT, 8 * 0.14, -8 * 0.14)
        assert res.nrf == pytest.approx(1 / (2 * gain - 1), rel=1e-12)

    def test_split_through_centers_exceeds_full_detection(self):
        layout = make_layout([(0.0, 0.14, 2.0, 1.0)])
        res = evaluate_cell(layout, SPLIT, 0.0, 0.0)
        assert res.nrf > 1 / 3

    def test_all_diff_through_centers_matches_sampler(self):
        layout = make_layout([(0.0, 0.14, 2.0, 1.0)])
        exact = evaluate_cell(layout, ALL_DIFF, 0.0, 0.0)
        mc = evaluate_cell(layout, ALL_DIFF, 0.0, 0.0, "monte_carlo", n_samples=400_000, rng_seed=5)
        assert abs(mc.nrf - exact.nrf) <= 3 * mc.stderr_nrf
        # both halves of each arm share a sign, so the cut adds nothing
        assert exact.nrf == pytest.approx(1 / 3, rel=1e-12)

    def test_blocked_modes_carry_no_bookkeeping(self, two_area_layout):
        cfg = AD_ONLY
        full = build_assignment(two_area_layout, cfg, 0.05, -0.1)
        trimmed = DetectionAssignment({
            pid: ([e for e in probe if e.sign], [e for e in conj if e.sign])
            for pid, (probe, conj) in full.arms.items()
        })
        assert nrf_covariance(two_area_layout, full) == nrf_covariance(two_area_layout, trimmed)

    def test_unknown_engine(self, single_layout):
        with pytest.raises(ValueError, match="engine"):
            evaluate_cell(single_layout, SPLIT, 0.0, 0.0, engine="exact")


layout_specs = st.lists(
    st.tuples(st.floats(-0.6, 0.6), st.floats(0.05, 0.3), st.floats(1.05, 8), st.floats(0.2, 3)),
    min_size=1, max_size=4,
)


class TestGridMatchesReference:
    @settings(max_examples=40, deadline=None)
    @given(
        specs=layout_specs,
        pe=st.floats(-1, 1), ce=st.floats(-1, 1),
        cfg=st.sampled_from([SPLIT, AD_ONLY, ALL_DIFF]),
        eff=st.floats(0.3, 1.0), bg=st.floats(0, 0.5), scatter=st.floats(0, 0.5),
        cmrr=st.floats(0, 0.1), engine=st.sampled_from(["analytic", "paper"]),
    )
    def test_vectorized_path(self, specs, pe, ce, cfg, eff, bg, scatter, cmrr, engine):
        layout = make_layout(specs)
        cfg = replace(cfg, efficiency=eff, background=bg, edge_scatter=scatter, cmrr_imbalance=cmrr)
        try:
            ref = evaluate_cell(layout, cfg, pe, ce, engine)
        except NoiseDomainError:
            with pytest.raises(NoiseDomainError):
                grid_noise(layout, cfg, [pe], [ce], engine, paired=True)
            return
        var, snl, nrf = grid_noise(layout, cfg, [pe], [ce], engine, paired=True)
        assert nrf[0] == pytest.approx(ref.nrf, rel=1e-10)
        assert snl[0] == pytest.approx(ref.snl, rel=1e-12)

    def test_outer_grid_matches_paired(self, three_area_layout):
        p, c = np.linspace(-0.5, 0.5, 7), np.linspace(-0.4, 0.4, 5)
        _, _, grid = grid_noise(three_area_layout, SPLIT, p, c)
        pp, cc = np.meshgrid(p, c, indexing="ij")
        _, _, paired = grid_noise(three_area_layout, SPLIT, pp.ravel(), cc.ravel(), paired=True)
        np.testing.assert_allclose(grid.ravel(), paired, rtol=1e-13)


class TestRaster:
    def test_shape_and_metadata(self, two_area_layout):
        m = run_raster(two_area_layout, default_plan(two_area_layout), SPLIT)
        assert m.shape == (40, 15)
        assert m.fingerprint == two_area_layout.fingerprint()
        assert m.result(3, 4).nrf == m.nrf[3, 4]
        assert len(list(m.cells())) == 600

    def test_two_area_minimum_isolates_strong_area(self, two_area_layout):
        m = run_raster(two_area_layout, default_plan(two_area_layout), AD_ONLY)
        i, _ = np.unravel_index(np.argmin(m.nrf), m.shape)
        strong, weak = (a.center[0] for a in two_area_layout.areas)
        # probe edge off-center, past the strong area and short of the weak one
        assert strong < m.probe_coords[i] < 0.0 < weak

    def test_monte_carlo_engine_equivalence(self, three_area_layout):
        plan = ScanPlan(tuple(np.linspace(-0.6, 0.6, 5)), tuple(np.linspace(-0.5, 0.5, 5)),
                        engine="monte_carlo", n_samples=100_000, seed=11)
        mc = run_raster(three_area_layout, plan, SPLIT)
        exact = run_raster(three_area_layout, replace(plan, engine="analytic"), SPLIT)
        z = np.abs(mc.nrf - exact.nrf) / mc.stderr_nrf
        assert np.all(z <= 3.0), z.max()

    def test_monte_carlo_determinism_and_threads(self, single_layout):
        plan = ScanPlan((-0.1, 0.0, 0.1), (0.0, 0.1), engine="monte_carlo",
                        n_samples=20_000, seed=3)
        a = run_raster(single_layout, plan, SPLIT)
        b = run_raster(single_layout, plan, SPLIT, workers=3)
        np.testing.assert_array_equal(a.nrf, b.nrf)
        np.testing.assert_array_equal(a.stderr_nrf, b.stderr_nrf)
        c = run_raster(single_layout, replace(plan, seed=4), SPLIT)
        assert not np.array_equal(a.nrf, c.nrf)

    def test_mirror_pairing_in_gaps(self):
        # symmetric, well separated areas; edges parked in the gaps
        layout = make_layout([(-0.5, 0.08, 3.0, 1.0), (0.5, 0.08, 3.0, 1.0)])
        conj = np.linspace(-0.9, 0.9, 181)
        for pe in (-0.9, -0.2, 0.0, 0.2, 0.9):
            _, _, row = grid_noise(layout, SPLIT, [pe], conj)
            _, _, mirror = grid_noise(layout, SPLIT, [pe], [-pe])
            assert mirror[0, 0] <= row.min() + 1e-12


class TestProfile:
    def test_constant_map(self):
        m = NoiseMap([0, 1, 2], [0, 1], np.ones((3, 2)), np.full((3, 2), 2.0),
                     np.full((3, 2), 0.5), np.zeros((3, 2)), SPLIT)
        prof = optimal_profile(m)
        np.testing.assert_allclose(prof.nrf_db, 10 * np.log10(0.5))
        assert prof.coords.shape == (3,)

    def test_fixture_profile(self, two_area_layout):
        m = run_raster(two_area_layout, default_plan(two_area_layout), AD_ONLY)
        prof = optimal_profile(m, "probe")
        assert prof.nrf_db.shape == prof.argmin_coords.shape == (40,)
        unblocked = grid_noise(two_area_layout, AD_ONLY, [10.0], [-10.0], paired=True)[2][0]
        assert prof.nrf_db.min() < 10 * np.log10(unblocked)
        conj = optimal_profile(m, "conjugate")
        assert conj.nrf_db.shape == (15,)

    def test_rejects_sweeps(self, single_layout):
        with pytest.raises(ValueError, match="raster"):
            optimal_profile(sweep_1d(single_layout, "x", [0.0, 0.1]))


class TestAxialSweep:
    def test_image_plane_optimal_symmetric(self):
        layout = make_layout([(-0.3, 0.14, 2.0, 1.0), (0.3, 0.14, 2.0, 1.0)])
        z = np.linspace(-60, 60, 13)
        for arm in ("probe", "conjugate"):
            assert axial_sweep(layout, z, arm).argmin_z == 0.0

    def test_image_plane_optimal_asymmetric(self, two_area_layout):
        z = np.linspace(-90, 90, 19)
        sweep = axial_sweep(two_area_layout, z, "probe")
        assert sweep.argmin_z == 0.0
        assert len(sweep.results) == 19

    def test_far_defocus_limit(self):
        layout = make_layout([(-0.3, 0.14, 2.0, 1.0), (0.3, 0.14, 2.0, 1.0)])
        far = axial_sweep(layout, [0.0, 1e10], "probe").nrf
        # fully blurred probe: every area sends half its light past the edge
        conj_t = {p.id: build_assignment(layout, AD_ONLY, 0.0, 0.0).arms[p.id][1]
                  for p in layout.pairs}
        mixed = DetectionAssignment({
            pid: ((RegionEntry("A", 0.5, 1), RegionEntry("B", 0.5, 0)), conj_t[pid])
            for pid in conj_t
        })
        assert far[1] == pytest.approx(nrf_covariance(layout, mixed).nrf, rel=1e-6)
        assert far[1] > far[0]

    def test_bad_arm(self, single_layout):
        with pytest.raises(ValueError, match="arm"):
            axial_sweep(single_layout, [0.0], "pump")


class TestSweep1D:
    def test_mirror_positions(self, three_area_layout):
        s = sweep_1d(three_area_layout, "x", [-0.2, 0.0, 0.3])
        np.testing.assert_allclose(s.conj_coords, [0.2, 0.0, -0.3])
        assert s.kind == "sweep" and s.shape == (3,)

    def test_isotropy_single_area(self):
        layout = scenarios.single_area(center=0.0)
        pos = np.linspace(-0.5, 0.5, 21)
        np.testing.assert_allclose(sweep_1d(layout, "x", pos).nrf, sweep_1d(layout, "y", pos).nrf,
                                   rtol=1e-14)

    def test_vertical_even_split_rise(self, three_area_layout):
        pos = np.linspace(-2.0, 2.0, 401)
        s = sweep_1d(three_area_layout, "y", pos, engine="paper")
        assert s.probe_coords[np.argmax(s.nrf)] == pytest.approx(0.0, abs=1e-12)
        assert s.nrf_db.max() - s.nrf_db[0] == pytest.approx(10 * np.log10(2), abs=1e-9)

    def test_horizontal_sweep_non_monotone(self, three_area_layout):
        s = sweep_1d(three_area_layout, "x", np.linspace(-0.8, 0.8, 161))
        d = np.diff(s.nrf_db)
        assert np.any(d > 0) and np.any(d < 0)

    def test_monte_carlo_sweep_reproducible(self, single_layout):
        a = sweep_1d(single_layout, "x", [0.0, 0.1], engine="monte_carlo", n_samples=20_000, seed=2)
        b = sweep_1d(single_layout, "x", [0.0, 0.1], engine="monte_carlo", n_samples=20_000, seed=2)
        np.testing.assert_array_equal(a.nrf, b.nrf)
        assert np.all(a.stderr_nrf > 0)

    def test_defocus_metadata(self, single_layout):
        plan = ScanPlan((0.0,), (0.0,), probe_defocus=DefocusParams(5.0))
        assert run_raster(single_layout, plan, SPLIT).meta["probe_defocus_cm"] == 5.0
