"""Layout reconstruction, model selection and mode counting."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coherencemap import scenarios
from coherencemap.fit import (
    FitModel,
    _arrays,
    bic,
    estimate_mode_count,
    fit_layout,
    model_for_maps,
    select_model,
)
from coherencemap.geometry import DefocusParams, beam_fwhm, footprint
from coherencemap.scan import (
    AD_ONLY,
    SPLIT,
    NoiseMap,
    default_plan,
    layout_arrays,
    run_raster,
)


@pytest.fixture(scope="module")
def single_map():
    layout = scenarios.single_area(center=0.05)
    return layout, run_raster(layout, default_plan(layout), SPLIT)


@pytest.fixture(scope="module")
def single_fit(single_map):
    _, m = single_map
    return fit_layout(m, model_for_maps(m, 1), xatol=1e-7)


class TestFitModel:
    def test_parameter_names(self):
        m = FitModel(2, (-1.0, 1.0))
        assert m.names() == ["center_0", "sigma_0", "gain_0", "center_1", "sigma_1", "gain_1",
                             "weight_1"]
        assert m.n_params == 7
        full = FitModel(1, (-1.0, 1.0), symmetric=False, fit_pump=True, fit_conj_scale=True)
        assert full.names() == ["center_0", "sigma_0", "gain_0", "conj_center_0", "pump",
                                "conj_scale"]

    def test_scaled_bounds(self):
        m = FitModel(1, (-1.0, 1.0), scale=2.0)
        assert m.bounds() == [(-0.5, 0.5), (0.01, 1.0), (0.1, 3.0)]

    @given(c=st.floats(-1, 1), s=st.floats(0.05, 1), g=st.floats(1, 30), w=st.floats(0.01, 10))
    def test_pack_round_trip(self, c, s, g, w):
        m = FitModel(2, (-1.0, 1.0), scale=1.7)
        values = {"center_0": c, "sigma_0": s, "gain_0": g, "center_1": -c, "sigma_1": s,
                  "gain_1": g, "weight_1": w}
        out = m.unpack(m.pack(values))
        assert out == pytest.approx(values, rel=1e-12, abs=1e-15)

    @pytest.mark.parametrize("kwargs", [{"n_pairs": 0, "center_bounds": (0, 1)},
                                        {"n_pairs": 1, "center_bounds": (1, 0)},
                                        {"n_pairs": 1, "center_bounds": (0, math.inf)}])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            FitModel(**kwargs)

    def test_symmetry_is_structural(self):
        m = FitModel(2, (-1.0, 1.0), pump_center=(0.1, 0.0))
        x = m.pack({"center_0": -0.4, "sigma_0": 0.1, "gain_0": 2.0, "center_1": 0.3,
                    "sigma_1": 0.1, "gain_1": 3.0, "weight_1": 0.5})
        layout = m.layout(x)
        for a in layout.areas:
            assert a.conj_center is None
            center, _ = footprint(a, layout, "conjugate")
            assert center[0] == 2 * 0.1 - a.center[0]

    @settings(max_examples=30, deadline=None)
    @given(c0=st.floats(-0.8, 0.8), c1=st.floats(-0.8, 0.8), s=st.floats(0.05, 0.4),
           z=st.floats(-50, 50), sym=st.booleans(), pump=st.floats(-0.2, 0.2))
    def test_fast_arrays_match_layout(self, c0, c1, s, z, sym, pump):
        m = FitModel(2, (-1.0, 1.0), symmetric=sym, fit_pump=True, fit_conj_scale=True)
        values = {"center_0": c0, "sigma_0": s, "gain_0": 2.0, "center_1": c1, "sigma_1": 2 * s,
                  "gain_1": 1.5, "weight_1": 0.7, "conj_center_0": -c1, "conj_center_1": c0,
                  "pump": pump, "conj_scale": 0.6}
        x = m.pack(values)
        fast = _arrays(m, x, z, -z)
        ref = layout_arrays(m.layout(x), "x", DefocusParams(z), DefocusParams(-z))
        for a, b in zip(fast, ref):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


class TestSinglePair:
    def test_round_trip(self, single_map, single_fit):
        layout, _ = single_map
        fwhm = beam_fwhm(layout)
        truth = layout.areas[0]
        (p,) = single_fit.pairs
        assert abs(p["center"] - truth.center[0]) <= 0.02 * fwhm
        assert p["gain"] == pytest.approx(truth.pair.gain, rel=0.02)
        assert single_fit.residual < 1e-6
        assert single_fit.converged

    def test_not_worse_than_truth(self, single_fit):
        # noiseless data: the true parameters have zero residual
        assert single_fit.rss <= 0.0 + 1e-9

    def test_history_monotone(self, single_fit):
        h = np.array(single_fit.history)
        assert h.size > 10
        assert np.all(np.diff(h) <= 1e-15 * np.abs(h[:-1]) + 1e-300)

    def test_select_single(self, single_map):
        _, m = single_map
        sel = select_model(m, [1, 2], n_starts=5)
        assert sel.best_k == 1
        assert set(sel.scores) == {1, 2}
        assert sel.best is sel.fits[1]

    def test_threads_do_not_change_result(self, single_map):
        _, m = single_map
        a = fit_layout(m, model_for_maps(m, 1), n_starts=3)
        b = fit_layout(m, model_for_maps(m, 1), n_starts=3, workers=3)
        np.testing.assert_array_equal(a.x, b.x)

    def test_iteration_budget_reported(self, single_map):
        _, m = single_map
        res = fit_layout(m, model_for_maps(m, 1), n_starts=1, maxiter=5, polish=0)
        assert not res.converged
        assert res.iterations <= 5


class TestModelSelection:
    def test_constant_shot_noise_map(self):
        shape = (8, 5)
        m = NoiseMap(np.linspace(-1, 1, 8), np.linspace(-1, 1, 5), np.ones(shape),
                     np.ones(shape), np.ones(shape), np.zeros(shape), SPLIT)
        sel = select_model(m, [1, 2], n_starts=4)
        assert sel.best_k == 1
        # no correlations: the fitted gain carries no conjugate light
        assert sel.best.pairs[0]["gain"] == pytest.approx(1.0, abs=0.01)

    def test_overparameterized_fit(self):
        layout = scenarios.two_area()
        m = run_raster(layout, default_plan(layout), AD_ONLY)
        true_k = fit_layout(m, model_for_maps(m, 2))
        over = fit_layout(m, model_for_maps(m, 3))
        assert over.residual <= true_k.residual + 1e-6
        fwhm = beam_fwhm(layout)
        centers = [p["center"] for p in over.pairs]
        weights = [p["weight"] for p in over.pairs]
        gains = [p["gain"] for p in over.pairs]
        # the extra pair either fades out or doubles up on an existing area
        faded = min(weights) < 1e-3 or min(gains) < 1.001
        doubled = min(np.diff(centers)) < 0.05 * fwhm
        assert faded or doubled

    def test_pairs_sorted_by_center(self):
        layout = scenarios.two_area()
        m = run_raster(layout, default_plan(layout), AD_ONLY)
        res = fit_layout(m, model_for_maps(m, 2))
        centers = [p["center"] for p in res.pairs]
        assert centers == sorted(centers)
        assert sum(p["weight"] for p in res.pairs) == pytest.approx(1.0)

    def test_too_many_parameters(self):
        m = NoiseMap([0.0, 1.0], [0.0], np.ones((2, 1)), np.ones((2, 1)), np.ones((2, 1)),
                     np.zeros((2, 1)), SPLIT)
        with pytest.raises(ValueError, match="exceed"):
            fit_layout(m, model_for_maps(m, 1))

    def test_empty_range(self, single_map):
        with pytest.raises(ValueError, match="nonempty"):
            select_model(single_map[1], [])


class TestScore:
    def test_bic_frozen(self):
        # 100 ln(0.5 / 100) + 4 ln(100)
        assert bic(0.5, 100, 4) == pytest.approx(-511.41105591085, rel=1e-12)

    def test_bic_floor(self):
        assert bic(0.0, 10, 2, rss_floor=1e-6) == bic(1e-6, 10, 2)


class TestModeCount:
    def test_diffraction_limited(self):
        theta_d_mrad = 795e-9 / (math.pi * 0.65e-3) * 1e3
        assert estimate_mode_count(0.65, 795.0, theta_d_mrad) == pytest.approx(1.0, rel=1e-12)

    def test_calibrated_fixture(self):
        # (3.25 mrad / (795 nm / (pi 0.65 mm)))^2, evaluated to 30 digits
        assert estimate_mode_count(0.65, 795.0, 3.25) == pytest.approx(69.68814804089859, rel=1e-12)

    @given(w=st.floats(0.1, 5), lam=st.floats(300, 2000), a=st.floats(0.1, 50))
    def test_quadratic_in_angle(self, w, lam, a):
        assert estimate_mode_count(w, lam, 2 * a) == pytest.approx(
            4 * estimate_mode_count(w, lam, a), rel=1e-12)

    @pytest.mark.parametrize("args", [(0, 795, 3), (1, -1, 3), (1, 795, 0)])
    def test_domain(self, args):
        with pytest.raises(ValueError):
            estimate_mode_count(*args)
