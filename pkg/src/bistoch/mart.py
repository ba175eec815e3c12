"""Martingale decompositions of the walk and their computable brackets.

The displacement splits as X = M + I + J, where I and J are the exact path
integrals of the symmetric and antisymmetric local drifts and M is the
compensated jump martingale.  M splits further as M = Z + Y: each jump
across an edge is shared between Z and Y with weights s_bar/s and
1 - s_bar/s, where s_bar is the per-axis harmonic mean conductance.  The
weights are chosen so that the stationary bracket of Z is the constant
matrix diag(2 s_bar_i) and the Z,Y cross bracket averages to zero, which
yields explicit two-sided bounds on the diffusivity.

Every identity here is finite and checkable: the path identities hold for
each realized trajectory up to float accumulation error, and the bracket
averages reduce to exact cancellations over +/- direction pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.stats

from .env import Environment, _scale
from .errors import InsufficientReplicas, ZeroConductanceCrossing
from .walker import EnsembleResult, Trajectory, run_ensemble

# two-sided 99% normal quantile, frozen for reproducibility
Z_99 = 2.5758293035489004


# -- local drift fields --------------------------------------------------------

@dataclass
class DriftFields:
    """Per-site drift decomposition and the compensators of Z and Y.

    phi[x, i]   symmetric drift, s_{+e_i}(x) - s_{-e_i}(x)
    psi[x, i]   antisymmetric drift, b_{+e_i}(x) - b_{-e_i}(x)
    alpha[x, i] compensator density of Z
    beta[x, i]  compensator density of Y, beta = phi + psi - alpha
    s_bar[i]    harmonic mean of s over the edges of axis i
    """

    phi: np.ndarray
    psi: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    s_bar: np.ndarray

    def mean_residuals(self) -> dict:
        """Site averages of phi and psi (zero for zero-flux environments)."""
        return {"phi": float(np.max(np.abs(self.phi.mean(axis=0)))),
                "psi": float(np.max(np.abs(self.psi.mean(axis=0))))}


def harmonic_mean_conductance(env: Environment) -> np.ndarray:
    """Per-axis harmonic mean of the conductances, zero if any edge is dead."""
    s_can = env.s.canonical
    inv = np.divide(1.0, s_can, out=np.full_like(s_can, np.inf), where=s_can > 0)
    means = inv.mean(axis=0)
    return np.where(np.isfinite(means), 1.0 / np.where(means > 0, means, 1.0), 0.0)


def drift_fields(env: Environment, method: str = "moment") -> DriftFields:
    """Compute the local drifts and compensators of an environment.

    The "moment" method contracts the rate arrays against the direction
    vectors; "shift" reads the same numbers off the canonical edge arrays.
    Both agree to rounding and exist as a cross-check on the storage
    conventions.
    """
    t_ = env.torus
    d = t_.d
    s_full = env.s.full
    b_full = env.b.full
    if method == "moment":
        D = t_.directions.astype(float)
        phi = s_full @ D
        psi = b_full @ D
    elif method == "shift":
        s_can = env.s.canonical
        b_can = env.b.canonical
        phi = np.empty((t_.n, d))
        psi = np.empty((t_.n, d))
        for i in range(d):
            back = t_.nbr[:, d + i]  # site x - e_i
            phi[:, i] = s_can[:, i] - s_can[back, i]
            psi[:, i] = b_can[:, i] + b_can[back, i]
    else:
        raise ValueError(f"unknown method {method!r}")

    s_bar = harmonic_mean_conductance(env)
    ratio = np.divide(b_full, s_full, out=np.zeros_like(b_full), where=s_full > 0)
    alpha = s_bar[None, :] * (ratio[:, :d] - ratio[:, d:])
    beta = (phi + psi) - alpha
    return DriftFields(phi=phi, psi=psi, alpha=alpha, beta=beta, s_bar=s_bar)


def jump_weight_tables(env: Environment) -> dict:
    """Per-edge weights splitting each jump between Z and Y.

    wZ(x, k) = s_bar / s_k(x) and wY = 1 - wZ.  Edges with zero conductance
    carry zero rate under the domination constraint and are never crossed;
    a zero-conductance edge with positive rate is rejected.
    """
    t_ = env.torus
    s_full = env.s.full
    s_bar = harmonic_mean_conductance(env)
    dead = s_full == 0
    if np.any(dead & (env.p_full > 0)):
        x, k = np.argwhere(dead & (env.p_full > 0))[0]
        raise ZeroConductanceCrossing(int(x), int(k))
    axis_bar = s_bar[t_.axis_of][None, :]
    wz = np.divide(axis_bar * np.ones_like(s_full), s_full,
                   out=np.zeros_like(s_full), where=~dead)
    return {"z": wz, "y": 1.0 - wz}


# -- diffusivity bounds --------------------------------------------------------

@dataclass
class DiffusivityBounds:
    """Explicit two-sided diffusivity bounds from the conductances alone.

    lower        diag(2 s_bar_i); the stationary bracket of Z
    upper_trace  sum over all 2d directions of the mean conductance
    """

    lower: np.ndarray
    upper_trace: float

    @property
    def lower_trace(self) -> float:
        return float(np.trace(self.lower))

    def check(self, sigma2: np.ndarray, atol: float = 0.0) -> dict:
        """Compare a diffusivity matrix against both bounds.

        Returns the smallest eigenvalue of sigma2 - lower (order check) and
        the trace gap to the upper bound; nonnegative values pass.
        """
        gap = np.linalg.eigvalsh(np.asarray(sigma2) - self.lower)
        return {
            "matrix_gap": float(gap[0]),
            "trace": float(np.trace(sigma2)),
            "trace_gap": self.upper_trace - float(np.trace(sigma2)),
            "lower_ok": bool(gap[0] >= -atol),
            "upper_ok": bool(np.trace(sigma2) <= self.upper_trace + atol),
        }


def bounds(env: Environment) -> DiffusivityBounds:
    s_can = env.s.canonical
    s_bar = harmonic_mean_conductance(env)
    return DiffusivityBounds(lower=np.diag(2.0 * s_bar),
                             upper_trace=float(2.0 * s_can.mean(axis=0).sum()))


# -- bracket fields ------------------------------------------------------------

@dataclass
class BracketFields:
    """Site fields of the predictable quadratic brackets and their averages.

    For a compensated jump sum with per-edge weights w, the bracket density
    at x is sum_k p_k(x) w(x,k)^2 k k^T.  The site averages admit closed
    forms because the flow contributions cancel in +/- direction pairs:

        avg <Z>  = diag(2 s_bar_i)
        avg <Z,Y> = 0
        avg <Y>  = diag(2 (mean s_i - s_bar_i))
        avg <M>  = diag(2 mean s_i)
    """

    zz: np.ndarray          # (n, d, d)
    zy: np.ndarray
    yy: np.ndarray
    mm: np.ndarray
    zz_target: np.ndarray   # (d, d)
    zy_target: np.ndarray
    yy_target: np.ndarray
    mm_target: np.ndarray

    def average_residuals(self) -> dict:
        out = {}
        for name in ("zz", "zy", "yy", "mm"):
            got = getattr(self, name).mean(axis=0)
            want = getattr(self, f"{name}_target")
            out[name] = float(np.max(np.abs(got - want)))
        return out


def bracket_fields(env: Environment) -> BracketFields:
    t_ = env.torus
    D = t_.directions.astype(float)
    p = env.p_full
    w = jump_weight_tables(env)
    s_can = env.s.canonical
    s_bar = harmonic_mean_conductance(env)

    def density(wa, wb):
        return np.einsum("xk,ki,kj->xij", p * wa * wb, D, D)

    mean_s = s_can.mean(axis=0)
    return BracketFields(
        zz=density(w["z"], w["z"]),
        zy=density(w["z"], w["y"]),
        yy=density(w["y"], w["y"]),
        mm=density(np.ones_like(p), np.ones_like(p)),
        zz_target=np.diag(2.0 * s_bar),
        zy_target=np.zeros((t_.d, t_.d)),
        yy_target=np.diag(2.0 * (mean_s - s_bar)),
        mm_target=np.diag(2.0 * mean_s),
    )


# -- path decompositions -------------------------------------------------------

def dyadic_grid(T: float, levels: int = 8) -> np.ndarray:
    """Sample times T/2^(levels-1), ..., T/2, T."""
    return T * 0.5 ** np.arange(levels - 1, -1, -1, dtype=float)


def _field_tables(env: Environment) -> tuple:
    f = drift_fields(env)
    site_fields = {"phipsi": f.phi + f.psi, "phi": f.phi, "psi": f.psi,
                   "alpha": f.alpha, "beta": f.beta}
    return site_fields, jump_weight_tables(env)


@dataclass
class DecompositionPath:
    """The six path components of one trajectory at the grid times.

    M keeps its own integral accumulator for phi + psi, and Z + Y uses
    weight tables summing to one per edge, so the reconstruction residuals
    X - (M + I + J) and X - (Z + Y + I + J) measure genuine float
    accumulation error rather than being zero by construction.
    """

    times: np.ndarray
    X: np.ndarray
    M: np.ndarray
    I: np.ndarray
    J: np.ndarray
    Z: np.ndarray
    Y: np.ndarray

    def identity_residuals(self) -> dict:
        three = self.X - (self.M + self.I + self.J)
        four = self.X - (self.Z + self.Y + self.I + self.J)
        return {"three_way": float(np.max(np.abs(three))),
                "four_way": float(np.max(np.abs(four)))}


def decompose(env: Environment, traj: Trajectory, grid=None) -> DecompositionPath:
    """Split one trajectory into its martingale and drift components.

    Snapshots at grid times use the pre-jump state, matching the batch
    engine: a jump at exactly a grid time lands after the snapshot.
    """
    T = traj.T
    grid = np.asarray(dyadic_grid(T) if grid is None else grid, dtype=float)
    if grid.ndim != 1 or len(grid) == 0 or np.any(np.diff(grid) <= 0) or grid[0] <= 0:
        raise ValueError("grid must be strictly increasing and positive")
    if grid[-1] != T:
        raise ValueError("grid must end exactly at T")
    site_fields, weights = _field_tables(env)
    t_ = env.torus
    d = t_.d
    G = len(grid)

    acc = {name: np.zeros(tbl.shape[1]) for name, tbl in site_fields.items()}
    snap = {name: np.zeros((G, tbl.shape[1])) for name, tbl in site_fields.items()}
    jsum = {name: np.zeros(d) for name in weights}
    jsnap = {name: np.zeros((G, d)) for name in weights}
    psnap = np.zeros((G, d))
    pos = np.zeros(d)
    gi = 0
    now = 0.0

    events = list(zip(traj.times, traj.dirs, traj.sites[:-1]))
    events.append((T, -1, traj.sites[-1]))  # censored final interval
    for t_next, k, site in events:
        while gi < G and grid[gi] <= t_next:
            dtg = grid[gi] - now
            for name, tbl in site_fields.items():
                snap[name][gi] = acc[name] + tbl[site] * dtg
            for name in weights:
                jsnap[name][gi] = jsum[name]
            psnap[gi] = pos
            gi += 1
        if k < 0:
            break
        dt = t_next - now
        for name, tbl in site_fields.items():
            acc[name] += tbl[site] * dt
        ax, sg = t_.axis_of[k], float(t_.sign_of[k])
        for name, tbl in weights.items():
            jsum[name][ax] += tbl[site, k] * sg
        pos[ax] += sg
        now = t_next

    X = psnap
    return DecompositionPath(
        times=grid, X=X,
        M=X - snap["phipsi"],
        I=snap["phi"], J=snap["psi"],
        Z=jsnap["z"] - snap["alpha"],
        Y=jsnap["y"] - snap["beta"],
    )


@dataclass
class MartingaleEnsemble:
    """Decomposition paths for a replica ensemble at shared grid times."""

    times: np.ndarray
    X: np.ndarray  # (R, G, d)
    M: np.ndarray
    I: np.ndarray
    J: np.ndarray
    Z: np.ndarray
    Y: np.ndarray
    n_jumps: np.ndarray
    final_site: np.ndarray
    holding: np.ndarray | None
    master_seed: int
    T: float

    @property
    def n_replicas(self) -> int:
        return self.X.shape[0]

    def identity_residuals(self) -> dict:
        three = self.X - (self.M + self.I + self.J)
        four = self.X - (self.Z + self.Y + self.I + self.J)
        return {"three_way": float(np.max(np.abs(three))),
                "four_way": float(np.max(np.abs(four)))}


def run_decomposition_ensemble(env: Environment, T: float, n_replicas: int,
                               master_seed: int, grid=None, x0: int | None = None,
                               collect_holding: bool = False, threads: int = 1,
                               block: int = 512) -> MartingaleEnsemble:
    grid = dyadic_grid(T) if grid is None else np.asarray(grid, dtype=float)
    site_fields, weights = _field_tables(env)
    res = run_ensemble(env, T, n_replicas, master_seed, grid=grid,
                       site_fields=site_fields, jump_weights=weights, x0=x0,
                       collect_holding=collect_holding, block=block,
                       threads=threads)
    X = res.displacement
    return MartingaleEnsemble(
        times=res.times, X=X,
        M=X - res.integrals["phipsi"],
        I=res.integrals["phi"], J=res.integrals["psi"],
        Z=res.jump_sums["z"] - res.integrals["alpha"],
        Y=res.jump_sums["y"] - res.integrals["beta"],
        n_jumps=res.n_jumps, final_site=res.final_site, holding=res.holding,
        master_seed=master_seed, T=T,
    )


def decomposition_csv(ens: MartingaleEnsemble, path: str) -> None:
    """Per-replica component values at every grid time, one row each."""
    import csv

    d = ens.X.shape[2]
    parts = [("X", ens.X), ("M", ens.M), ("I", ens.I),
             ("J", ens.J), ("Z", ens.Z), ("Y", ens.Y)]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        header = ["replica", "t"]
        for name, _ in parts:
            header += [f"{name}_{i + 1}" for i in range(d)]
        w.writerow(header)
        for r in range(ens.n_replicas):
            for g, t in enumerate(ens.times):
                row = [r, repr(float(t))]
                for _, arr in parts:
                    row += [repr(float(v)) for v in arr[r, g]]
                w.writerow(row)


# -- ensemble statistics -------------------------------------------------------

@dataclass
class MeanInterval:
    """Batch-means confidence interval for the mean of iid replica values."""

    mean: float
    half_width: float
    se: float
    n_batches: int
    level: float = 0.99

    @property
    def lo(self) -> float:
        return self.mean - self.half_width

    @property
    def hi(self) -> float:
        return self.mean + self.half_width

    def contains(self, value: float) -> bool:
        return self.lo <= value <= self.hi


def batch_mean_interval(samples, n_batches: int = 32, z: float = Z_99) -> MeanInterval:
    samples = np.asarray(samples, dtype=float).ravel()
    R = len(samples)
    if R < 2 * n_batches:
        raise InsufficientReplicas(R, 2 * n_batches)
    usable = R - (R % n_batches)
    batches = samples[:usable].reshape(n_batches, -1).mean(axis=1)
    se = float(batches.std(ddof=1) / np.sqrt(n_batches))
    return MeanInterval(mean=float(batches.mean()), half_width=z * se,
                        se=se, n_batches=n_batches)


def variance_rate(ens: MartingaleEnsemble, g: int = -1) -> MeanInterval:
    """Estimate E|X(t)|^2 / t with a 99% batch-means interval."""
    t = float(ens.times[g])
    return batch_mean_interval((ens.X[:, g, :] ** 2).sum(axis=1) / t)


def second_moment_curve(ens: MartingaleEnsemble) -> tuple:
    """E|X(t)|^2 at every grid time, with per-time standard errors."""
    m2 = (ens.X ** 2).sum(axis=2)  # (R, G)
    means = np.array([batch_mean_interval(m2[:, g]).mean for g in range(m2.shape[1])])
    ses = np.array([batch_mean_interval(m2[:, g]).se for g in range(m2.shape[1])])
    return means, ses


def growth_slope(times, second_moments) -> float:
    """Least-squares slope of log E|X|^2 against log t."""
    lt = np.log(np.asarray(times, dtype=float))
    lm = np.log(np.asarray(second_moments, dtype=float))
    return float(np.polyfit(lt, lm, 1)[0])


def zz_matrix(ens: MartingaleEnsemble, g: int = -1, min_replicas: int = 1000) -> tuple:
    """Estimate E[Z Z^T] / t entrywise with batch-means standard errors."""
    if ens.n_replicas < min_replicas:
        raise InsufficientReplicas(ens.n_replicas, min_replicas)
    t = float(ens.times[g])
    Zg = ens.Z[:, g, :]
    d = Zg.shape[1]
    est = np.empty((d, d))
    se = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            iv = batch_mean_interval(Zg[:, i] * Zg[:, j] / t)
            est[i, j] = iv.mean
            se[i, j] = iv.se
    return est, se


def orthogonality_report(ens: MartingaleEnsemble, g1: int = 0, g2: int = -1,
                         min_replicas: int = 1000) -> dict:
    """99% intervals for the cross moments that vanish for orthogonal parts.

    Tests E[Z(t1) . Y(t2)] and E[Z(t1) . (I+J)(t2)] at two grid times; both
    are zero when Z is orthogonal to the remainder of the decomposition.
    """
    if ens.n_replicas < min_replicas:
        raise InsufficientReplicas(ens.n_replicas, min_replicas)
    Z1 = ens.Z[:, g1, :]
    out = {
        "z_dot_y": batch_mean_interval((Z1 * ens.Y[:, g2, :]).sum(axis=1)),
        "z_dot_drift": batch_mean_interval(
            (Z1 * (ens.I[:, g2, :] + ens.J[:, g2, :])).sum(axis=1)),
    }
    return out


def ks_exponential(holding) -> float:
    """KS distance of normalized holding times from the unit exponential."""
    if holding is None or len(holding) == 0:
        raise ValueError("no holding-time samples; run with collect_holding=True")
    return float(scipy.stats.kstest(holding, "expon").statistic)


def ks_gaussian(samples: np.ndarray) -> float:
    """KS distance from a centered normal with the sample's own scale."""
    samples = np.asarray(samples, dtype=float)
    sd = samples.std()
    if sd == 0:
        return 1.0
    return float(scipy.stats.kstest(samples, "norm", args=(0.0, sd)).statistic)


def final_site_chisquare(final_site: np.ndarray, n_sites: int) -> float:
    """Chi-square p-value for uniformity of the wrapped endpoint counts."""
    counts = np.bincount(final_site, minlength=n_sites)
    return float(scipy.stats.chisquare(counts).pvalue)
