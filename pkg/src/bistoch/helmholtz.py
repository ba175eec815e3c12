"""Constructive stream tensors for divergence-free flows on the torus.

A periodic flow b is the curl of a periodic stream tensor exactly when its
per-direction site averages (the flux) vanish.  The tensor is produced
explicitly as

    h_{k,l} = D_l Lap^{-1} b_k - D_k Lap^{-1} b_l,

where D_k g(x) = g(x+k) - g(x) and Lap = sum_l (T_l - I) is the lattice
Laplacian.  Contracting over l gives sum_l h_{k,l} = b_k because
sum_l D_l = Lap and sum_l b_l = 0; the structural symmetries follow from
the antisymmetry of b.  Both facts are asserted on the computed tensor
rather than assumed.
"""

from __future__ import annotations

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .env import FlowField, StreamTensor, _scale
from .errors import NoConvergence, NonZeroMean, NonzeroFlux, NotDivergenceFree
from .torus import Torus


def laplacian_apply(torus: Torus, f: np.ndarray) -> np.ndarray:
    """Lattice Laplacian: (Lap f)(x) = sum_k [f(x+k) - f(x)] over all 2d steps."""
    out = -torus.ndir * f
    for k in range(torus.ndir):
        out = out + f[torus.nbr[:, k]]
    return out


class PoissonSolver:
    """Solve Lap u = f for mean-zero f with mean-zero u.

    Parameters
    ----------
    torus : Torus
    method : str
        "spectral" diagonalizes the Laplacian in the discrete Fourier basis,
        with eigenvalue lam(m) = 2 * sum_j (cos(2 pi m_j / L) - 1);
        "cg" runs conjugate gradients on -Lap with a rank-one mean shift
        that pins the constant mode.
    tol : float
        Max-norm residual bound checked after every solve.
    """

    def __init__(self, torus: Torus, method: str = "spectral", tol: float = 1e-10):
        if method not in ("spectral", "cg"):
            raise ValueError(f"unknown method {method!r}")
        self.torus = torus
        self.method = method
        self.tol = tol
        if method == "spectral":
            L = torus.L
            line = 2.0 * (np.cos(2.0 * np.pi * np.arange(L) / L) - 1.0)
            lam = np.zeros(torus.shape)
            for axis in range(torus.d):
                shape = [1] * torus.d
                shape[axis] = L
                lam = lam + line.reshape(shape)
            self._eigenvalues = lam

    def solve(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(getattr(f, "values", f), dtype=float)
        t = self.torus
        scale = _scale(f)
        mean = float(f.mean())
        if abs(mean) > 1e-12 * scale:
            raise NonZeroMean(mean)
        if self.method == "spectral":
            u = self._solve_spectral(f - mean)
        else:
            u = self._solve_cg(f - mean)
        u = u - u.mean()
        res = float(np.max(np.abs(laplacian_apply(t, u) - (f - mean))))
        if res > self.tol * scale:
            raise NoConvergence(0, res)
        return u

    def _solve_spectral(self, f: np.ndarray) -> np.ndarray:
        t = self.torus
        fhat = np.fft.fftn(f.reshape(t.shape))
        lam = self._eigenvalues.copy()
        zero = (lam == 0.0)
        lam[zero] = 1.0
        uhat = fhat / lam
        uhat[zero] = 0.0
        return np.real(np.fft.ifftn(uhat)).ravel()

    def _solve_cg(self, f: np.ndarray) -> np.ndarray:
        t = self.torus
        # -Lap is symmetric PSD with kernel = constants; the mean shift makes
        # the operator positive definite without moving mean-zero solutions
        def matvec(v):
            return -laplacian_apply(t, v) + v.mean()

        op = LinearOperator((t.n, t.n), matvec=matvec, dtype=float)
        u, info = cg(op, -f, rtol=1e-12, atol=0.0, maxiter=40 * t.n)
        if info != 0:
            raise NoConvergence(info if info > 0 else 0,
                                float(np.max(np.abs(laplacian_apply(t, u) + f))))
        return u


def flux(b: FlowField) -> np.ndarray:
    """Per-direction site averages of b_{e_1},...,b_{e_d}.

    Vanishing flux is necessary and sufficient on the torus for b to be the
    curl of a periodic stream tensor.
    """
    return b.flux()


def poisson_solve(torus: Torus, f: np.ndarray, method: str = "spectral",
                  tol: float = 1e-10) -> np.ndarray:
    """One-shot Lap u = f solve; see PoissonSolver."""
    return PoissonSolver(torus, method=method, tol=tol).solve(f)


def stream_from_flow(b: FlowField, solver: PoissonSolver | None = None,
                     tol: float = 1e-10) -> StreamTensor:
    """Recover a stream tensor whose curl is the given flow.

    The result is gauge-dependent: two different tensors can share the same
    curl, so round trips compare curls, never tensors.

    Raises
    ------
    NotDivergenceFree
        if some site has nonzero net flow.
    NonzeroFlux
        if some direction has a nonzero site-average (the torus obstruction).
    NoConvergence
        if a Poisson solve misses its residual target.
    """
    t = b.torus
    scale = _scale(b.full)
    div = b.divergence()
    worst = int(np.argmax(np.abs(div)))
    if abs(div[worst]) > tol * scale:
        raise NotDivergenceFree(worst, float(div[worst]))
    fl = b.flux()
    for i in range(t.d):
        if abs(fl[i]) > tol * scale:
            raise NonzeroFlux(i, float(fl[i]))
    if solver is None:
        solver = PoissonSolver(t, tol=tol)

    # the 2d potentials are solved independently; their mutual consistency
    # is certified below instead of being wired in by construction
    u = np.stack([solver.solve(b.full[:, k]) for k in range(t.ndir)], axis=1)

    h_full = np.zeros((t.n, t.ndir, t.ndir))
    for k in range(t.ndir):
        for l in range(t.ndir):
            # includes the same-axis entries, which must come out zero on
            # their own; the certification below checks that they do
            h_full[:, k, l] = (u[t.nbr[:, l], k] - u[:, k]) - (u[t.nbr[:, k], l] - u[:, l])

    raw = StreamTensor.from_full(t, h_full)
    sym = raw.symmetry_residuals()
    sym_tol = max(1e-11 * _scale(h_full), tol * scale)
    for name, value in sym.items():
        if value > sym_tol:
            raise NoConvergence(0, value)

    # return the canonicalized tensor (exact symmetries); its curl must still
    # reproduce b within the solver tolerance
    out = StreamTensor(t, raw.canonical)
    curl_gap = float(np.max(np.abs(out.full().sum(axis=2) - b.full)))
    if curl_gap > tol * scale:
        raise NoConvergence(0, curl_gap)
    return out
