"""Model parameterization: drift/diffusion evaluation, transitions,
canonical coefficients and serialization."""

import json

import numpy as np
import pytest

from emsde import (
    DiffusionParams,
    DimensionMismatchError,
    DriftParams,
    GbmSystem,
    SdeModel,
    StochasticLorenzSystem,
    load_model,
    save_model,
)


def random_model(rng, d, bias=False, floor=1e-6):
    mk = lambda: rng.uniform(-1, 1, (d, d))
    return SdeModel(
        drift_params=DriftParams(a1=mk(), a2=mk(), a3=mk()),
        diffusion_params=DiffusionParams(
            b=mk(), bias=rng.uniform(-1, 1, d) if bias else None, variance_floor=floor
        ),
    )


class TestDrift:
    def test_pure_linear_term(self):
        model = GbmSystem(mu=0.5, sigma=1.0).as_sde_model()
        assert model.drift([2.0]) == pytest.approx([1.0])

    def test_single_bilinear_term_by_construction(self):
        # row i of a2 = e_j, row i of a3 = e_k picks out x_j * x_k
        d = 3
        a2 = np.zeros((d, d))
        a3 = np.zeros((d, d))
        a2[1, 0] = 1.0
        a3[1, 2] = 1.0
        model = SdeModel(
            drift_params=DriftParams(a1=np.zeros((d, d)), a2=a2, a3=a3),
            diffusion_params=DiffusionParams(b=np.zeros((d, d))),
        )
        x = np.array([2.0, -3.0, 5.0])
        assert model.drift(x) == pytest.approx([0.0, 2.0 * 5.0, 0.0])

    def test_lorenz_truth_at_ones(self):
        model = StochasticLorenzSystem(gamma=10.0).as_sde_model()
        f = model.drift([1.0, 1.0, 1.0])
        # sigma*y-(sigma+2/g)x, (rho-z)x-(1+2/g)y, xy-(beta+4/g)z at (1,1,1)
        assert f == pytest.approx([-0.2, 25.8, -(8.0 / 3.0 + 0.4) + 1.0], rel=1e-12)
        assert f[2] == pytest.approx(-2.0667, abs=5e-5)

    def test_dimension_mismatch(self, rng):
        model = random_model(rng, 2)
        with pytest.raises(DimensionMismatchError):
            model.drift([1.0, 2.0, 3.0])

    def test_quadratic_part_is_homogeneous_degree_two(self, rng):
        # F(a*x) linear part scales by a, quadratic part by a**2
        for _ in range(20):
            model = random_model(rng, 3)
            zero_quad = SdeModel(
                drift_params=DriftParams(
                    a1=model.drift_params.a1, a2=np.zeros((3, 3)), a3=np.zeros((3, 3))
                ),
                diffusion_params=model.diffusion_params,
            )
            x = rng.normal(0, 2, 3)
            a = rng.uniform(0.5, 2.0)
            lin = zero_quad.drift(x)
            quad = model.drift(x) - lin
            lin_scaled = zero_quad.drift(a * x)
            quad_scaled = model.drift(a * x) - lin_scaled
            np.testing.assert_allclose(lin_scaled, a * lin, rtol=1e-10)
            np.testing.assert_allclose(quad_scaled, a**2 * quad, rtol=1e-10, atol=1e-12)


class TestDiffusion:
    def test_gbm_scale(self):
        model = GbmSystem(mu=0.5, sigma=1.0).as_sde_model()
        assert model.noise_scales([3.0]) == pytest.approx([3.0])

    def test_zero_matrix_no_bias(self, rng):
        model = SdeModel(
            drift_params=DriftParams(a1=rng.normal(0, 1, (2, 2)),
                                     a2=np.zeros((2, 2)), a3=np.zeros((2, 2))),
            diffusion_params=DiffusionParams(b=np.zeros((2, 2))),
        )
        assert model.noise_scales(rng.normal(0, 5, 2)) == pytest.approx([0.0, 0.0])

    def test_lorenz_affine_rows_at_ones(self):
        model = StochasticLorenzSystem(gamma=10.0).as_sde_model(affine=True)
        scales = model.noise_scales([1.0, 1.0, 1.0])
        assert scales[0] == 0.0
        assert scales[1] == pytest.approx(27.0 / np.sqrt(10.0), rel=1e-12)
        assert scales[1] == pytest.approx(8.538, abs=5e-4)
        assert scales[2] == pytest.approx(1.0 / np.sqrt(10.0), rel=1e-12)
        assert scales[2] == pytest.approx(0.3162, abs=5e-5)


class TestTransition:
    def test_gbm_values(self):
        model = GbmSystem(mu=0.5, sigma=1.0).as_sde_model(variance_floor=0.0)
        tr = model.transition([1.0], 0.001)
        assert tr.mean == pytest.approx([1.0005])
        assert tr.variance == pytest.approx([0.001])

    def test_floor_only_covariance(self):
        d = 2
        model = SdeModel(
            drift_params=DriftParams(a1=np.zeros((d, d)), a2=np.zeros((d, d)),
                                     a3=np.zeros((d, d))),
            diffusion_params=DiffusionParams(b=np.zeros((d, d)), variance_floor=1e-6),
        )
        x = np.array([4.0, -2.0])
        tr = model.transition(x, 1.0)
        np.testing.assert_allclose(tr.mean, x)
        np.testing.assert_allclose(tr.variance, [1e-6, 1e-6])

    def test_zero_diffusion_row_gets_floor(self):
        model = StochasticLorenzSystem(gamma=10.0).as_sde_model(affine=True)
        tr = model.transition([1.0, 1.0, 1.0], 0.001)
        assert tr.variance[0] == pytest.approx(1e-9)

    def test_variance_strictly_positive_with_positive_floor(self, rng):
        for _ in range(50):
            model = random_model(rng, 3, bias=bool(rng.integers(2)))
            tr = model.transition(rng.normal(0, 10, 3), rng.uniform(1e-4, 1.0))
            assert np.all(tr.variance > 0)

    def test_tau_must_be_positive(self, rng):
        with pytest.raises(ValueError):
            random_model(rng, 1).transition([1.0], 0.0)


class TestEffectiveCoefficients:
    def test_single_cross_term(self):
        d = 3
        a2 = np.zeros((d, d))
        a3 = np.zeros((d, d))
        a2[0, 0] = 1.0  # row 0: x1 * x2 (0-based: x0 * x1)
        a3[0, 1] = 1.0
        model = SdeModel(
            drift_params=DriftParams(a1=np.zeros((d, d)), a2=a2, a3=a3),
            diffusion_params=DiffusionParams(b=np.zeros((d, d))),
        )
        coeffs = model.effective_coefficients()
        labels = coeffs.labels()
        vec = coeffs.as_vector()
        by_label = dict(zip(labels, vec))
        assert by_label["quad:0,0,1"] == 1.0
        quad_labels = [lab for lab in labels if lab.startswith("quad:")]
        assert sum(abs(by_label[lab]) for lab in quad_labels) == 1.0

    def test_gauge_invariance_of_factorization(self, rng):
        for c in (2.0, 0.5, 8.0):  # powers of two: exact in floating point
            model = random_model(rng, 3)
            a2 = model.drift_params.a2.copy()
            a3 = model.drift_params.a3.copy()
            a2[1, :] *= c
            a3[1, :] /= c
            rescaled = SdeModel(
                drift_params=DriftParams(a1=model.drift_params.a1, a2=a2, a3=a3),
                diffusion_params=model.diffusion_params,
            )
            x = rng.normal(0, 3, 3)
            np.testing.assert_array_equal(model.drift(x), rescaled.drift(x))
            np.testing.assert_array_equal(
                model.effective_coefficients().as_vector(),
                rescaled.effective_coefficients().as_vector(),
            )

    def test_gauge_invariance_generic_scale(self, rng):
        model = random_model(rng, 3)
        a2 = model.drift_params.a2.copy()
        a3 = model.drift_params.a3.copy()
        a2[2, :] *= 1.7
        a3[2, :] /= 1.7
        rescaled = SdeModel(
            drift_params=DriftParams(a1=model.drift_params.a1, a2=a2, a3=a3),
            diffusion_params=model.diffusion_params,
        )
        x = rng.normal(0, 3, 3)
        np.testing.assert_allclose(model.drift(x), rescaled.drift(x), rtol=1e-12)
        np.testing.assert_allclose(
            model.effective_coefficients().as_vector(),
            rescaled.effective_coefficients().as_vector(),
            rtol=1e-12, atol=1e-14,
        )

    def test_row_sign_canonicalization(self):
        b = np.array([[-1.0, 0.0, 2.0], [0.0, 0.0, 0.0], [0.0, 3.0, -1.0]])
        model = SdeModel(
            drift_params=DriftParams(a1=np.zeros((3, 3)), a2=np.zeros((3, 3)),
                                     a3=np.zeros((3, 3))),
            diffusion_params=DiffusionParams(b=b),
        )
        canon = model.effective_coefficients().diffusion_linear
        np.testing.assert_array_equal(canon[0], [1.0, 0.0, -2.0])
        np.testing.assert_array_equal(canon[1], [0.0, 0.0, 0.0])
        np.testing.assert_array_equal(canon[2], [0.0, 3.0, -1.0])

    def test_sign_invariance_of_transition(self, rng):
        model = random_model(rng, 3)
        b = model.diffusion_params.b.copy()
        b[1, :] = -b[1, :]
        flipped = SdeModel(
            drift_params=model.drift_params,
            diffusion_params=DiffusionParams(b=b, variance_floor=1e-6),
        )
        x = rng.normal(0, 2, 3)
        t1 = model.transition(x, 0.01)
        t2 = flipped.transition(x, 0.01)
        np.testing.assert_array_equal(t1.mean, t2.mean)
        np.testing.assert_array_equal(t1.variance, t2.variance)

    def test_gbm_round_trip(self):
        model = GbmSystem(mu=0.5, sigma=1.0).as_sde_model()
        coeffs = model.effective_coefficients()
        assert coeffs.linear[0, 0] == 0.5
        assert coeffs.diffusion_linear[0, 0] == 1.0
        assert model.to_dict()["a1"] == [[0.5]]

    def test_drift_param_count(self):
        model = StochasticLorenzSystem(gamma=10.0).as_sde_model()
        assert model.drift_params.n_params == 27
        assert model.diffusion_params.b.size == 9


class TestValidation:
    def test_rejects_non_square(self):
        with pytest.raises(DimensionMismatchError):
            DriftParams(a1=[[1.0, 2.0]], a2=[[1.0]], a3=[[1.0]])

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            DriftParams(a1=[[np.nan]], a2=[[0.0]], a3=[[0.0]])

    def test_rejects_mismatched_bias(self):
        with pytest.raises(DimensionMismatchError):
            DiffusionParams(b=np.eye(2), bias=[1.0])

    def test_rejects_negative_floor(self):
        with pytest.raises(ValueError):
            DiffusionParams(b=[[1.0]], variance_floor=-1e-9)

    def test_rejects_dim_mismatch_between_blocks(self):
        with pytest.raises(DimensionMismatchError):
            SdeModel(
                drift_params=DriftParams(a1=np.eye(2), a2=np.eye(2), a3=np.eye(2)),
                diffusion_params=DiffusionParams(b=np.eye(3)),
            )

    def test_params_immutable(self, rng):
        model = random_model(rng, 2)
        with pytest.raises(ValueError):
            model.drift_params.a1[0, 0] = 5.0


class TestSerialization:
    def test_round_trip_lossless(self, tmp_path, rng):
        for k in range(5):
            model = random_model(rng, int(rng.integers(1, 4)), bias=bool(k % 2),
                                 floor=float(rng.uniform(0, 1e-3)))
            path = tmp_path / f"m{k}.json"
            save_model(model, path)
            back = load_model(path)
            np.testing.assert_array_equal(back.drift_params.a1, model.drift_params.a1)
            np.testing.assert_array_equal(back.drift_params.a2, model.drift_params.a2)
            np.testing.assert_array_equal(back.drift_params.a3, model.drift_params.a3)
            np.testing.assert_array_equal(back.diffusion_params.b, model.diffusion_params.b)
            if model.diffusion_params.bias is None:
                assert back.diffusion_params.bias is None
            else:
                np.testing.assert_array_equal(back.diffusion_params.bias,
                                              model.diffusion_params.bias)
            assert back.diffusion_params.variance_floor == model.diffusion_params.variance_floor

    def test_schema_fields(self, tmp_path, rng):
        model = random_model(rng, 2)
        path = tmp_path / "m.json"
        save_model(model, path)
        doc = json.loads(path.read_text())
        assert set(doc) == {"dim", "a1", "a2", "a3", "b", "variance_floor"}
        assert doc["dim"] == 2

    def test_declared_dim_checked(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"dim": 3, "a1": [[1.0]], "a2": [[0.0]],
                                    "a3": [[0.0]], "b": [[1.0]]}))
        with pytest.raises(DimensionMismatchError):
            load_model(path)
