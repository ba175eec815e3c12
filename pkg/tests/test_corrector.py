import numpy as np
import pytest
import scipy.sparse

from bistoch import corrector as cor
from bistoch.env import (ConductanceField, Environment,
                         homogeneous_environment, random_environment)
from bistoch.errors import (DenseCapExceeded, InconsistentRHS, NoConvergence,
                            NotPositiveDefinite, Reducible)
from bistoch.helmholtz import laplacian_apply
from bistoch.mart import bounds, drift_fields
from bistoch.torus import Torus


# -- assembly ------------------------------------------------------------------


def test_gradient_matrix_by_direct_evaluation():
    t = Torus(2, 4)
    G = cor.gradient_matrix(t)
    assert G.shape == (t.ndir * t.n, t.n)
    rng = np.random.default_rng(0)
    u = rng.normal(size=t.n)
    g = (G @ u).reshape(t.ndir, t.n)
    for k in range(t.ndir):
        assert np.array_equal(g[k], u[t.nbr[:, k]] - u)


def test_homogeneous_assembly_is_laplacian(env_homog):
    ops = cor.assemble(env_homog)
    assert ops.s_factorization == 0.0
    assert ops.a_factorization == 0.0
    assert ops.a_antisymmetry == 0.0
    assert ops.row_sums == 0.0 and ops.col_sums == 0.0
    f = np.arange(env_homog.torus.n, dtype=float)
    assert np.allclose(ops.S @ f, -laplacian_apply(env_homog.torus, f),
                       atol=1e-12)
    assert (ops.A != 0).nnz == 0


@pytest.mark.parametrize("d,L,seed", [(2, 8, 0), (2, 8, 4), (3, 4, 3)])
def test_assembly_residuals(d, L, seed):
    ops = cor.assemble(random_environment(d, L, seed=seed))
    assert ops.s_factorization < 1e-13
    assert ops.a_factorization < 1e-13
    assert ops.a_antisymmetry < 1e-13
    assert ops.row_sums < 1e-12 and ops.col_sums < 1e-12
    # L = A - S with zero row and column sums: bistochastic generator
    assert np.allclose((ops.L @ np.ones(ops.L.shape[0])), 0.0, atol=1e-12)


def test_export_coo_round_trip(tmp_path, env_rand):
    ops = cor.assemble(env_rand)
    path = tmp_path / "S.txt"
    cor.export_coo(ops.S, str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "row,col,value"
    rows, cols, vals = [], [], []
    for line in lines[1:]:
        r, c, v = line.split(",")
        rows.append(int(r))
        cols.append(int(c))
        vals.append(float(v))
    n = env_rand.torus.n
    back = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(n, n))
    assert np.array_equal(back.toarray(), ops.S.toarray())
    # row-major ordering
    keys = [r * n + c for r, c in zip(rows, cols)]
    assert keys == sorted(keys)


# -- spectral operator ------------------------------------------------------------


@pytest.mark.parametrize("d,L,seed", [(1, 8, 0), (2, 8, 1), (2, 4, 2),
                                      (3, 4, 3), (1, 64, 4), (2, 16, 5)])
def test_spectral_certificates(d, L, seed):
    env = random_environment(d, L, seed=seed)
    spec = cor.build_spectral_operator(env)
    cert = spec.certificate()
    assert cert["zero_modes"] == 1
    assert spec.skewness <= 1e-11
    assert spec.min_singular >= 1.0 - 1e-11


def test_skew_quadratic_form_vanishes(env_rand):
    spec = cor.build_spectral_operator(env_rand)
    rng = np.random.default_rng(2)
    for _ in range(5):
        v = spec.projector @ rng.normal(size=env_rand.torus.n)
        assert abs(v @ (spec.B @ v)) <= 1e-11 * (v @ v)


def test_riesz_certificate(env_rand):
    spec = cor.build_spectral_operator(env_rand)
    rc = cor.riesz_certificate(env_rand, spec)
    assert set(rc) == {"gram_vs_projector", "idempotency", "symmetry"}
    assert max(rc.values()) <= 1e-11


def test_dense_cap_enforced():
    with pytest.raises(DenseCapExceeded):
        cor.build_spectral_operator(homogeneous_environment(2, 80))


def test_reducible_conductances_detected():
    t4 = Torus(1, 4)
    s_dead = np.array([[1.0], [0.0], [0.0], [1.0]])
    env = Environment(t4, ConductanceField.from_canonical(t4, s_dead),
                      weak_ellipticity=False)
    with pytest.raises(Reducible):
        cor.build_spectral_operator(env)


def test_negative_conductance_rejected():
    t4 = Torus(1, 4)
    s_neg = np.array([[1.0], [-0.5], [1.0], [1.0]])
    env = Environment(t4, ConductanceField.from_canonical(t4, s_neg),
                      weak_ellipticity=False)
    with pytest.raises(NotPositiveDefinite):
        cor.build_spectral_operator(env)


# -- harmonic solves ---------------------------------------------------------------


def test_krylov_and_spectral_routes_agree(env_rand):
    rng = np.random.default_rng(0)
    rhs = rng.normal(size=env_rand.torus.n)
    rhs -= rhs.mean()
    spec = cor.build_spectral_operator(env_rand)
    sk = cor.solve_harmonic(env_rand, rhs)
    ss = cor.solve_harmonic_spectral(env_rand, rhs, spec=spec)
    assert np.max(np.abs(sk.potential - ss.potential)) <= 1e-8
    assert sk.residual <= 1e-8 * np.abs(rhs).max()
    assert abs(sk.potential.mean()) < 1e-12
    assert cor.harmonic_equation_residual(env_rand, sk, rhs) <= 1e-8
    assert cor.harmonic_equation_residual(env_rand, ss, rhs) <= 1e-8


def test_inconsistent_rhs(env_rand):
    rng = np.random.default_rng(1)
    rhs = rng.normal(size=env_rand.torus.n)
    rhs -= rhs.mean()
    with pytest.raises(InconsistentRHS):
        cor.solve_harmonic(env_rand, rhs + 0.5)
    base = cor.solve_harmonic(env_rand, rhs)
    proj = cor.solve_harmonic(env_rand, rhs + 0.5, project=True)
    assert np.allclose(proj.potential, base.potential, atol=1e-8)


def test_unreachable_residual_cap(env_rand):
    rng = np.random.default_rng(2)
    rhs = rng.normal(size=env_rand.torus.n)
    rhs -= rhs.mean()
    with pytest.raises(NoConvergence):
        cor.solve_harmonic(env_rand, rhs, residual_cap=1e-20)


# -- effective diffusivity -----------------------------------------------------------


def test_homogeneous_diffusivity_exact(env_homog):
    res = cor.effective_diffusivity(env_homog)
    assert np.allclose(res.sigma2, 2.0 * np.eye(2), atol=1e-12)
    assert np.abs(res.correctors).max() < 1e-9


def test_alternating_chain_diffusivity(env_two_point):
    res = cor.effective_diffusivity(env_two_point)
    assert abs(res.sigma2[0, 0] - 3.2) < 1e-10


def test_random_chain_matches_harmonic_mean():
    t = Torus(1, 16)
    draw = np.random.default_rng(7).choice([1.0, 4.0], size=16)
    env = Environment(t, ConductanceField.from_canonical(t, draw[:, None]))
    res = cor.effective_diffusivity(env)
    hm = 1.0 / np.mean(1.0 / draw)
    assert abs(res.sigma2[0, 0] - 2.0 * hm) < 1e-10


def test_diffusivity_routes_agree(env_rand):
    a = cor.effective_diffusivity(env_rand, method="krylov")
    b = cor.effective_diffusivity(env_rand, method="spectral")
    assert np.allclose(a.sigma2, b.sigma2, atol=1e-8)
    assert a.method == "krylov" and b.method == "spectral"
    assert max(a.residuals) <= 1e-8


def test_p_weight_equals_s_weight(env_rand):
    # flow contributions cancel against the corrected gradients
    f = drift_fields(env_rand)
    D = env_rand.torus.directions.astype(float)
    grads = np.stack([cor.solve_harmonic(env_rand, -(f.phi + f.psi)[:, i]).gradient
                      for i in range(2)], axis=2)
    u = D[None] + grads
    sig_s = np.einsum("xk,xki,xkj->ij", env_rand.s.full, u, u) / env_rand.torus.n
    sig_p = np.einsum("xk,xki,xkj->ij", env_rand.p_full, u, u) / env_rand.torus.n
    assert np.allclose(sig_s, sig_p, atol=1e-11)


@pytest.mark.parametrize("seed", [1, 5, 9])
def test_diffusivity_between_bounds(seed):
    env = random_environment(2, 8, seed=seed)
    sg = cor.effective_diffusivity(env).sigma2
    chk = bounds(env).check(sg, atol=1e-9)
    assert chk["lower_ok"]
    assert chk["upper_ok"]


def test_corrector_csv(tmp_path):
    path = tmp_path / "chi.csv"
    cor.corrector_csv(np.array([0.5, -1.25]), str(path))
    assert path.read_text() == "site,value\n0,0.5\n1,-1.25\n"


# -- truncation ----------------------------------------------------------------------


def test_truncation_identity_for_large_cutoff():
    env = random_environment(2, 4, seed=11)
    trunc = cor.truncate_environment(env, 100.0)
    assert np.array_equal(trunc.s.canonical, env.s.canonical)
    assert np.array_equal(trunc.h.canonical, env.h.canonical)
    B0 = cor.build_spectral_operator(env).B
    B1 = cor.build_spectral_operator(trunc).B
    assert np.array_equal(B0, B1)


def test_truncation_zeroes_out_of_range_entries():
    env = random_environment(2, 4, seed=11)
    t2 = cor.truncate_environment(env, 1.05)
    assert not np.array_equal(t2.s.canonical, env.s.canonical)
    r = np.sqrt(t2.s.canonical[t2.s.canonical > 0])
    assert np.all((r >= 1 / 1.05 - 1e-12) & (r <= 1.05 + 1e-12))
    t3 = cor.truncate_environment(env, 0.2)
    assert np.all(np.abs(t3.h.canonical) <= 0.2)
    # flow is rebuilt from the truncated tensor, so zero divergence survives
    assert np.abs(t3.b.divergence()).max() < 1e-12


def test_truncation_argument_errors(env_homog):
    with pytest.raises(ValueError):
        cor.truncate_environment(env_homog, 0.0)
    t = Torus(1, 4)
    flow_only = Environment(t, ConductanceField.from_canonical(t, np.ones((4, 1))))
    with pytest.raises(ValueError):
        cor.truncate_environment(flow_only, 2.0)
