import numpy as np
import pytest

from qpois import models
from qpois.errors import DegeneratePairing, NotClosed, NotConvenient, NotInSpan, RankDeficient
from qpois.liealg import (
    PairingData,
    ad_invariance_residual,
    adjoint_coeffs,
    adjoint_matrix,
    build_lie_algebra,
    cartan3,
    chi2,
    ideal_of_H,
    pairing_from_lower,
    trace_pairing,
    verify_chi_identity,
)


def test_sl2_structure_constants():
    model, _ = models.sl2()
    # order H, E, F: [H,E] = 2E, [H,F] = -2F, [E,F] = H
    assert abs(model.struct[1, 0, 1] - 2) < 1e-12
    assert abs(model.struct[2, 0, 2] + 2) < 1e-12
    assert abs(model.struct[0, 1, 2] - 1) < 1e-12
    # everything else in those slices vanishes
    br = model.bracket_coeffs(np.array([1, 0, 0]), np.array([0, 1, 0]))
    assert np.allclose(br, [0, 2, 0])
    assert model.closure_residual <= 1e-10


def test_closure_reconstruction_all_models():
    for build in (models.sl2, models.gl2, models.sl3, models.sl2_abelian,
                  lambda: models.abelian(2)):
        model, _ = build()
        for u in range(model.d):
            for v in range(model.d):
                lhs = model.basis[u] @ model.basis[v] - model.basis[v] @ model.basis[u]
                rhs = model.from_coeffs(model.struct[:, u, v])
                assert np.abs(lhs - rhs).max() <= 1e-10


def test_abelian_struct_zero():
    model, _ = models.abelian(2)
    assert np.abs(model.struct).max() == 0.0


def test_dependent_basis_rejected():
    h = np.diag([1.0, -1.0])
    with pytest.raises(RankDeficient):
        build_lie_algebra([h, 2 * h])


def test_not_closed_rejected():
    # span{E11, E12} in gl2 is not closed under commutator with... E12,E21 pair
    e12 = np.array([[0.0, 1.0], [0.0, 0.0]])
    e21 = np.array([[0.0, 0.0], [1.0, 0.0]])
    with pytest.raises(NotClosed):
        build_lie_algebra([e12, e21])


def test_coeffs_span_guard():
    model, _ = models.sl2()
    with pytest.raises(NotInSpan):
        model.coeffs(np.eye(2))  # identity is not traceless


def test_adjoint_diag_action():
    model, _ = models.sl2()
    t = 1.7
    q = np.diag([t, 1 / t]).astype(complex)
    out = adjoint_coeffs(model, q, np.array([0.0, 1.0, 0.0]))
    assert np.allclose(out, [0, t * t, 0])
    amat = adjoint_matrix(model, q)
    assert np.allclose(amat @ np.array([0, 1.0, 0]), [0, t * t, 0])


def test_abelian_adjoint_trivial():
    model, _ = models.abelian(2)
    q = np.diag([2.0, 5.0]).astype(complex)
    x = np.array([0.3, -1.2])
    assert np.allclose(adjoint_coeffs(model, q, x), x)


def test_trace_pairing_sl2():
    model, pairing = models.sl2()
    expect = np.array([[2.0, 0, 0], [0, 0, 1], [0, 1, 0]])
    assert np.allclose(pairing.eta_lower, expect)
    expect_up = np.array([[0.5, 0, 0], [0, 0, 1], [0, 1, 0]])
    assert np.allclose(pairing.eta_upper, expect_up)
    assert pairing.invertible


def test_ad_invariance():
    for build in (models.sl2, models.gl2, models.sl3, models.sl2_abelian):
        model, pairing = build()
        assert ad_invariance_residual(model, pairing, samples=16, seed=3) <= 1e-10


def test_ad_invariance_detects_perturbation():
    model, pairing = models.sl2()
    bad = np.array(pairing.eta_lower)
    bad[0, 1] += 1e-3
    bad[1, 0] += 1e-3
    broken = PairingData(eta_lower=bad)
    r = ad_invariance_residual(model, broken, samples=16, seed=3)
    assert 1e-5 < r < 1e-1


def test_cartan3_sl2_oracle():
    model, pairing = models.sl2()
    phi = cartan3(model, pairing)
    # eta^{H,E,F} = 1 and total antisymmetry
    assert abs(phi[0, 1, 2] - 1) < 1e-12
    assert abs(phi[1, 2, 0] - 1) < 1e-12
    assert abs(phi[1, 0, 2] + 1) < 1e-12
    assert np.count_nonzero(np.abs(phi) > 1e-12) == 6


def test_cartan3_abelian_zero():
    model, pairing = models.abelian(2)
    assert np.abs(cartan3(model, pairing)).max() == 0.0


def test_cartan3_degenerate_supported_on_block():
    model, pairing = models.sl2_abelian()
    phi = cartan3(model, pairing)
    assert np.abs(phi[3, :, :]).max() < 1e-12
    assert np.abs(phi[:, 3, :]).max() < 1e-12
    assert np.abs(phi[:, :, 3]).max() < 1e-12
    assert abs(phi[0, 1, 2] - 1) < 1e-12


def test_cartan3_noninvariant_rejected():
    model, _ = models.sl2()
    bad = PairingData(eta_upper=np.diag([1.0, 1.0, 2.0]))
    with pytest.raises(NotConvenient):
        cartan3(model, bad)


def test_chi2_blocks():
    model, pairing = models.sl2()
    blocks = chi2(model, pairing)
    assert np.allclose(blocks.block_12, 0.5 * pairing.eta_upper)
    assert np.allclose(blocks.block_21, -0.5 * pairing.eta_upper.T)
    scalar_model, scalar_pairing = models.abelian(1)
    c = 3.0
    blocks = chi2(scalar_model, PairingData(eta_upper=np.array([[c]])))
    assert np.allclose(blocks.block_12, [[c / 2]])
    assert np.allclose(blocks.block_21, [[-c / 2]])


def test_chi_identity_all_models():
    for build in (models.sl2, models.gl2, models.sl3, models.sl2_abelian,
                  lambda: models.abelian(2)):
        model, pairing = build()
        assert verify_chi_identity(model, pairing) <= 1e-10


def test_ideal_full_and_degenerate():
    model, pairing = models.sl2()
    ideal = ideal_of_H(model, pairing)
    assert ideal.basis.shape == (3, 3)
    assert ideal.min_singular > 0.1
    assert ideal.ideal_residual <= 1e-10

    model, pairing = models.sl2_abelian()
    ideal = ideal_of_H(model, pairing)
    assert ideal.basis.shape == (4, 3)
    # the image is the sl2 block: no component along the central generator
    assert np.abs(ideal.basis[3, :]).max() <= 1e-12
    assert ideal.min_singular > 0.1
    assert ideal.ideal_residual <= 1e-10
    assert ideal.membership_residual <= 1e-10


def test_degenerate_pairing_flags():
    _, pairing = models.sl2_abelian()
    assert not pairing.invertible
    with pytest.raises(DegeneratePairing):
        pairing.require_invertible()
    with pytest.raises(DegeneratePairing):
        pairing.lower_inverse()


def test_pairing_from_lower_degenerate():
    p = pairing_from_lower(np.diag([1.0, 0.0]))
    assert p.eta_upper is None
    with pytest.raises(DegeneratePairing):
        p.require_upper()
