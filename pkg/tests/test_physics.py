import numpy as np
import pytest

from vmfem.physics import (FluidProperties, InvalidStateError, conductivity,
                           eos_pressure, stress_tensor, sutherland_mu,
                           viscous_dissipation)

AIR = FluidProperties()


def test_sutherland_at_zero():
    assert sutherland_mu(0.0, AIR) == 0.0


def test_sutherland_unit_constants():
    props = FluidProperties(c_ref=1.0, s_ref=1.0)
    assert sutherland_mu(1.0, props) == pytest.approx(0.5, rel=1e-15)


def test_sutherland_air():
    expected = 1.458e-6 * 288.15 ** 1.5 / (288.15 + 110.4)
    got = sutherland_mu(288.15, AIR)
    assert got == pytest.approx(expected, rel=1e-14)
    assert got == pytest.approx(1.79e-5, rel=5e-3)


def test_sutherland_negative_temperature():
    with pytest.raises(InvalidStateError):
        sutherland_mu(-1.0, AIR)


def test_sutherland_wrong_mode():
    props = FluidProperties(mode="constant-mu", mu_const=1.0)
    with pytest.raises(InvalidStateError):
        sutherland_mu(1.0, props)


def test_conductivity():
    assert conductivity(0.0, AIR) == 0.0
    expected = (717.8 + 287.0) * 1.716e-5 / 0.72
    assert conductivity(1.716e-5, AIR) == pytest.approx(expected, rel=1e-14)
    assert conductivity(1.716e-5, AIR) == pytest.approx(2.395e-2, rel=2e-3)


def test_conductivity_monotone_in_prandtl():
    mus = [conductivity(1.0, FluidProperties(prandtl=pr))
           for pr in (0.5, 1.0, 5.0, 100.0)]
    assert all(a > b for a, b in zip(mus, mus[1:]))
    assert mus[-1] < 0.05


def test_eos_pressure():
    assert eos_pressure(1.0, 1.0, AIR) == pytest.approx(287.0)
    unit = FluidProperties(c_v=1.0, r=1.0, gamma=2.0)
    assert eos_pressure(1.0, 1.0, unit) == pytest.approx(1.0)
    with pytest.raises(InvalidStateError):
        eos_pressure(-1.0, 1.0, AIR)
    with pytest.raises(InvalidStateError):
        eos_pressure(1.0, 0.0, AIR)


def test_kinematic_pressure_of_reference_density():
    # p = rho^gamma evaluated at rho = 1 gives 1 for any gamma
    assert 1.0 ** AIR.gamma == 1.0


def test_stress_zero_gradient():
    assert np.all(stress_tensor(1.0, np.zeros((2, 2))) == 0.0)


def test_stress_identity_gradient():
    tau = stress_tensor(1.0, np.eye(2))
    assert np.allclose(tau, np.diag([2.0 / 3.0, 2.0 / 3.0]), atol=1e-15)


def test_stress_pure_rotation():
    grad = np.array([[0.0, 1.0], [-1.0, 0.0]])
    assert np.abs(stress_tensor(2.5, grad)).max() < 1e-15


def test_stress_symmetry_random():
    rng = np.random.default_rng(0)
    grads = rng.standard_normal((200, 2, 2))
    tau = stress_tensor(0.7, grads)
    assert np.abs(tau - np.swapaxes(tau, -2, -1)).max() < 1e-14


def test_stress_trace_identity_2d():
    # in two dimensions trace(tau) = (2/3) nu div(u)
    rng = np.random.default_rng(1)
    grads = rng.standard_normal((500, 2, 2))
    nu = 1.7
    tau = stress_tensor(nu, grads)
    div = grads[:, 0, 0] + grads[:, 1, 1]
    assert np.abs(np.trace(tau, axis1=1, axis2=2) - (2.0 / 3.0) * nu * div).max() < 1e-13


def test_dissipation_cases():
    assert viscous_dissipation(1.0, np.zeros((2, 2)), np.eye(2)) == 0.0
    shear = np.array([[0.0, 1.0], [0.0, 0.0]])
    tau = stress_tensor(1.0, shear)
    assert viscous_dissipation(1.0, tau, shear) == pytest.approx(1.0, rel=1e-14)
    rot = np.array([[0.0, 1.0], [-1.0, 0.0]])
    assert abs(viscous_dissipation(1.0, stress_tensor(1.0, rot), rot)) < 1e-14


def test_dissipation_nonnegative():
    rng = np.random.default_rng(2)
    grads = rng.standard_normal((10_000, 2, 2))
    tau = stress_tensor(1.0, grads)
    diss = viscous_dissipation(1.0, tau, grads)
    assert diss.min() > -1e-13


def test_gamma_consistency_warning():
    with pytest.warns(UserWarning):
        FluidProperties(c_v=717.8, r=287.0, gamma=1.4)
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        FluidProperties(c_v=1.0, r=1.0, gamma=2.0)


def test_property_validation():
    with pytest.raises(ValueError):
        FluidProperties(c_v=-1.0)
    with pytest.raises(ValueError):
        FluidProperties(gamma=0.9)
    with pytest.raises(ValueError):
        FluidProperties(mode="constant-mu")
    with pytest.raises(ValueError):
        FluidProperties(mode="constant-nu")
    with pytest.raises(ValueError):
        FluidProperties(mode="magic")


def test_viscosity_modes():
    mu_mode = FluidProperties(c_v=1.0, r=1.0, gamma=2.0, mode="constant-mu",
                              mu_const=3.0, kappa_const=0.47)
    assert mu_mode.viscosity(5.0, 0.5) == 3.0
    assert mu_mode.heat_conductivity(3.0) == 0.47
    nu_mode = FluidProperties(c_v=1.0, r=1.0, gamma=2.0, mode="constant-nu",
                              nu_const=3.0, kappa_const=0.47)
    assert nu_mode.viscosity(5.0, 0.5) == pytest.approx(1.5)
    suth = FluidProperties()
    assert suth.viscosity(288.15, 1.0) == pytest.approx(sutherland_mu(288.15, suth))
    assert suth.heat_conductivity(1.716e-5) == pytest.approx(
        conductivity(1.716e-5, suth))
