"""Graph Laplacians of submeshes and tracking of their low-frequency eigenspaces.

The bottom ``c`` eigenvectors of a submesh Laplacian ``L`` are obtained
either directly (dense symmetric eigendecomposition) or by orthogonal
iterations on the shifted inverse ``R = (L + delta I)^-1``, warm started
from the basis of a previously processed submesh of the same size.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse.linalg import splu

WEIGHTINGS = ("binary", "distance", "distance_degree")
DENSE_LIMIT = 4096
DEFAULT_SHIFT = 1e-3


class SpectralError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Laplacian:
    """Sparse symmetric ``L = D - C`` of one submesh.

    ``weighting`` is ``"binary"`` (C_ij = 1), ``"distance"`` (C_ij =
    1/||v_i - v_j||^2 with D_ii = |N(i)|) or ``"distance_degree"`` (same
    C, D_ii = sum_j C_ij, which keeps L positive semidefinite).
    """

    matrix: sparse.csr_matrix
    weighting: str

    @property
    def size(self):
        return self.matrix.shape[0]


@dataclass(frozen=True, eq=False)
class Spectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def basis(self, c):
        return SpectralBasis(np.ascontiguousarray(self.eigenvectors[:, :c]))


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """Orthonormal ``(n_d, c)`` basis of a tracked subspace.

    ``converged`` is False when dynamic sizing hit ``c_max`` with the
    residual still above the band or ran out of steps; ``residual`` is the last control
    residual (relative units) when one was computed.
    """

    U: np.ndarray
    converged: bool = True
    residual: float | None = None
    iterations: int = 0

    @property
    def c(self):
        return self.U.shape[1]

    @property
    def size(self):
        return self.U.shape[0]


def laplacian_from_adjacency(adjacency, coords=None, weighting="binary"):
    """Build ``L = D - C`` from a binary adjacency pattern.

    Raises
    ------
    SpectralError
        When two connected vertices coincide under a distance weighting.
    """
    if weighting not in WEIGHTINGS:
        raise ValueError(f"unknown weighting {weighting!r}; expected one of {WEIGHTINGS}")
    a = sparse.csr_matrix(adjacency, dtype=np.float64)
    a.sort_indices()
    n = a.shape[0]
    if n < 2:
        raise SpectralError("a Laplacian needs at least two vertices")
    counts = np.diff(a.indptr).astype(np.float64)
    if weighting == "binary":
        c = a.copy()
        c.data[:] = 1.0
        diag = counts
    else:
        if coords is None:
            raise ValueError(f"weighting {weighting!r} needs vertex coordinates")
        rows = np.repeat(np.arange(n), np.diff(a.indptr))
        d2 = ((coords[rows] - coords[a.indices]) ** 2).sum(axis=1)
        bad = np.flatnonzero(d2 == 0)
        if bad.shape[0]:
            i, j = rows[bad[0]], a.indices[bad[0]]
            raise SpectralError(f"connected vertices {i} and {j} coincide (zero edge length)")
        c = sparse.csr_matrix((1.0 / d2, a.indices.copy(), a.indptr.copy()), shape=(n, n))
        diag = counts if weighting == "distance" else np.asarray(c.sum(axis=1)).ravel()
    lap = (sparse.diags(diag) - c).tocsr()
    lap.sort_indices()
    return Laplacian(lap, weighting)


def build_laplacian(submesh, vertices=None, weighting="binary"):
    """Laplacian of ``submesh``; ``vertices`` are the global mesh coordinates."""
    coords = None if vertices is None else np.asarray(vertices)[submesh.global_indices]
    return laplacian_from_adjacency(submesh.adjacency, coords, weighting)


def apply_sign_convention(U):
    """Flip columns so the largest-magnitude entry of each is positive (in place)."""
    if U.shape[1] == 0:
        return U
    idx = np.argmax(np.abs(U), axis=0)
    s = np.sign(U[idx, np.arange(U.shape[1])])
    s[s == 0] = 1.0
    U *= s
    return U


def dense_eigendecomposition(laplacian, dense_limit=DENSE_LIMIT):
    """Full symmetric eigendecomposition, eigenvalues ascending."""
    n = laplacian.size
    if n > dense_limit:
        raise SpectralError(f"submesh of size {n} exceeds the dense limit {dense_limit}")
    try:
        w, U = np.linalg.eigh(laplacian.matrix.toarray())
    except np.linalg.LinAlgError as exc:
        raise SpectralError(f"eigendecomposition did not converge: {exc}") from None
    return Spectrum(w, apply_sign_convention(U))


class ShiftedInverseOperator:
    """Action of ``R^z`` with ``R = (L + delta I)^-1`` through a sparse factorization.

    The factorization is computed once; the dense inverse is never formed.
    """

    def __init__(self, laplacian, delta, z, lu):
        self.laplacian = laplacian
        self.delta = float(delta)
        self.z = int(z)
        self._lu = lu

    @property
    def size(self):
        return self.laplacian.size

    def solve(self, B):
        """One application of ``R``."""
        return self._lu.solve(np.asarray(B, dtype=np.float64))

    def apply(self, B):
        """``R^z B``."""
        X = np.asarray(B, dtype=np.float64)
        for _ in range(self.z):
            X = self._lu.solve(X)
        return X

    def __matmul__(self, B):
        return self.apply(B)


def default_shift(laplacian, relative=DEFAULT_SHIFT):
    """``relative * trace(L) / n_d``."""
    return relative * float(laplacian.matrix.diagonal().sum()) / laplacian.size


def shifted_inverse(laplacian, delta=None, z=2):
    """Factor ``L + delta I`` for repeated solves.

    Raises
    ------
    SpectralError
        If ``L + delta I`` is not positive definite.
    """
    if z < 1:
        raise ValueError("z must be a positive integer")
    delta = default_shift(laplacian) if delta is None else float(delta)
    if not delta > 0:
        raise ValueError("delta must be positive")
    n = laplacian.size
    a = (laplacian.matrix + delta * sparse.identity(n, format="csr")).tocsc()
    try:
        lu = splu(a, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                  options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise SpectralError(f"factorization of L + delta I failed: {exc}") from None
    # without row pivoting the pivots carry the inertia of the matrix
    piv = lu.U.diagonal()
    if not np.array_equal(lu.perm_r, lu.perm_c) or np.any(piv <= 0):
        raise SpectralError("L + delta I is not positive definite; use a positive "
                            "semidefinite weighting or a larger shift")
    return ShiftedInverseOperator(laplacian, delta, z, lu)


def householder_qr(A):
    """Thin QR by ``c`` successive Householder reflections.

    Returns ``Q`` (first ``c`` columns of ``H_1 ... H_c``) and the upper
    triangular ``R``.
    """
    R = np.array(A, dtype=np.float64, copy=True)
    m, c = R.shape
    vs = []
    for j in range(min(c, m)):
        x = R[j:, j]
        normx = np.linalg.norm(x)
        if normx == 0.0:
            vs.append(None)
            continue
        v = x.copy()
        v[0] += normx if x[0] >= 0 else -normx
        v /= np.linalg.norm(v)
        R[j:, j:] -= 2.0 * np.outer(v, v @ R[j:, j:])
        vs.append(v)
    Q = np.eye(m, c)
    for j in range(len(vs) - 1, -1, -1):
        v = vs[j]
        if v is not None:
            Q[j:, :] -= 2.0 * np.outer(v, v @ Q[j:, :])
    return Q, np.triu(R[:c, :])


def orthonormalize(block, method="lapack", rank_tol=1e-13):
    """Orthonormal basis of the column span of ``block`` via Householder QR.

    Columns are scaled to unit norm first, so the rank test
    ``|r_kk| < rank_tol * ||block||`` does not depend on column scaling.
    ``method="lapack"`` uses LAPACK's blocked Householder routine,
    ``"householder"`` the reference implementation above; both return
    the same subspace with the same sign convention.

    Raises
    ------
    SpectralError
        On (numerical) rank deficiency.
    """
    block = np.asarray(block, dtype=np.float64)
    if block.shape[1] == 0:
        return block.copy()
    norms = np.linalg.norm(block, axis=0)
    if np.any(norms == 0) or not np.all(np.isfinite(norms)):
        raise SpectralError("block has a zero or non-finite column")
    scaled = block / norms
    if method == "lapack":
        Q, R = scipy.linalg.qr(scaled, mode="economic", check_finite=False)
    elif method == "householder":
        Q, R = householder_qr(scaled)
    else:
        raise ValueError(f"unknown orthonormalization method {method!r}")
    rkk = np.abs(np.diagonal(R))
    if np.any(rkk < rank_tol * np.linalg.norm(scaled)):
        raise SpectralError(f"block is rank deficient (min |r_kk| = {rkk.min():.3e})")
    return apply_sign_convention(np.ascontiguousarray(Q))


def random_basis(n, c, seed=0):
    """Random orthonormal ``(n, c)`` start."""
    rng = np.random.default_rng(seed)
    return SpectralBasis(orthonormalize(rng.standard_normal((n, c))))


def oi_step(operator, U, method="lapack"):
    """One orthogonal iteration ``Onorm(R^z U)``.

    For large ``z`` the columns of ``R^z U`` can collapse onto the lowest
    eigenvector in floating point.  The step then recomputes the same span
    by orthonormalizing after each application of ``R``.
    """
    try:
        return orthonormalize(operator.apply(U), method=method)
    except SpectralError:
        if operator.z == 1:
            raise
    X = U
    for _ in range(operator.z):
        X = orthonormalize(operator.solve(X), method=method)
    return X


def orthogonal_iteration(operator, init, t_max=2, method="lapack"):
    """Refine ``init`` toward the bottom eigenspace of ``L`` with ``t_max`` steps.

    Parameters
    ----------
    operator : ShiftedInverseOperator
    init : SpectralBasis or ndarray
        Orthonormal start, e.g. the basis of the previous submesh.
    t_max : int

    Returns
    -------
    SpectralBasis
    """
    U = init.U if isinstance(init, SpectralBasis) else np.asarray(init, dtype=np.float64)
    if U.shape[0] != operator.size:
        raise SpectralError(f"basis has {U.shape[0]} rows, operator size is {operator.size}")
    for _ in range(t_max):
        U = oi_step(operator, U, method)
    return SpectralBasis(U, iterations=t_max)


def projection_residual(U, coords):
    """Sum over x, y, z of ``v_j - U U^T v_j`` (signed, may cancel)."""
    coords = np.asarray(coords, dtype=np.float64)
    return (coords - U @ (U.T @ coords)).sum(axis=1)


def axis_rms_residual(U, coords):
    """Root mean square of the per-axis projection residuals."""
    coords = np.asarray(coords, dtype=np.float64)
    r = coords - U @ (U.T @ coords)
    return float(np.sqrt((r ** 2).sum() / r.size))


def _extent(coords):
    d = float(np.linalg.norm(coords.max(axis=0) - coords.min(axis=0)))
    return d if d > 0 else 1.0


def dynamic_oi(operator, init, coords, eps_l, eps_h, c_min=1, c_max=None, t_max=50,
               method="lapack"):
    """Orthogonal iterations that adapt the subspace size to a residual band.

    After every step the control residual ``||e||_2 / diag`` is evaluated,
    ``e`` being the summed per-axis projection residual and ``diag`` the
    bounding-box diagonal of ``coords``.  Above ``eps_h`` the normalized
    residual is appended as a new column (it is orthogonal to the current
    basis), below ``eps_l`` the last column is dropped, inside the band the
    iteration stops.

    Returns
    -------
    SpectralBasis
        ``converged`` is False when ``c_max`` was reached with the residual
        still above ``eps_h``, or when ``t_max`` steps ran out before the
        residual settled in the band.
    """
    if not 0 < eps_l < eps_h:
        raise ValueError("need 0 < eps_l < eps_h")
    U = init.U if isinstance(init, SpectralBasis) else np.asarray(init, dtype=np.float64)
    n = operator.size
    c_max = n if c_max is None else min(c_max, n)
    if U.shape[0] != n:
        raise SpectralError(f"basis has {U.shape[0]} rows, operator size is {n}")
    if not c_min <= U.shape[1] <= c_max:
        raise ValueError(f"initial size {U.shape[1]} outside [{c_min}, {c_max}]")
    coords = np.asarray(coords, dtype=np.float64)
    scale = _extent(coords)
    converged = True
    res = None
    t = 0
    while t < t_max:
        t += 1
        U = oi_step(operator, U, method)
        e = projection_residual(U, coords)
        norm_e = float(np.linalg.norm(e))
        res = norm_e / scale
        if res > eps_h:
            if U.shape[1] >= c_max:
                converged = False
                break
            U = np.column_stack([U, e / norm_e])
        elif res < eps_l:
            if U.shape[1] <= c_min:
                break
            U = U[:, :-1]
        else:
            break
    else:
        # budget exhausted while still stepping (e.g. a grow/shrink cycle
        # because one column moves the residual across the whole band)
        converged = False
    return SpectralBasis(np.ascontiguousarray(U), converged=converged, residual=res, iterations=t)


def gft(basis, coords):
    """Spectral coefficients ``U_c^T v``, shape ``(c, 3)``."""
    U = basis.U if isinstance(basis, SpectralBasis) else basis
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape[0] != U.shape[0]:
        raise ValueError(f"coordinates have {coords.shape[0]} rows, basis {U.shape[0]}")
    return U.T @ coords


def igft(basis, coeffs):
    """Synthesis ``U_c E``, shape ``(n_d, 3)``."""
    U = basis.U if isinstance(basis, SpectralBasis) else basis
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape[0] != U.shape[1]:
        raise ValueError(f"{coeffs.shape[0]} coefficient rows for a basis of size {U.shape[1]}")
    return U @ coeffs


def principal_angles(A, B):
    """Principal angles (radians, descending) between two column spans."""
    A = A.U if isinstance(A, SpectralBasis) else A
    B = B.U if isinstance(B, SpectralBasis) else B
    return scipy.linalg.subspace_angles(A, B)


_BASIS_MAGIC = b"GSPB"


def save_basis(basis, path):
    """Binary dump: magic, u32 version, u64 n_d, u64 c, then float64 row-major (little endian)."""
    U = basis.U if isinstance(basis, SpectralBasis) else np.asarray(basis)
    with open(path, "wb") as fh:
        fh.write(_BASIS_MAGIC + struct.pack("<IQQ", 1, U.shape[0], U.shape[1]))
        fh.write(np.ascontiguousarray(U, dtype="<f8").tobytes())


def load_basis(path):
    with open(path, "rb") as fh:
        head = fh.read(24)
        if len(head) != 24 or head[:4] != _BASIS_MAGIC:
            raise ValueError(f"{path}: not a basis dump")
        version, n, c = struct.unpack("<IQQ", head[4:])
        if version != 1:
            raise ValueError(f"{path}: unsupported basis dump version {version}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.shape[0] != n * c:
        raise ValueError(f"{path}: expected {n * c} values, found {data.shape[0]}")
    return SpectralBasis(data.reshape(n, c).astype(np.float64))
