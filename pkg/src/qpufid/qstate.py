"""Dense state-vector kernel.

Pure states are 1-D complex arrays of length ``D = 2**n``; batches of pure
states are 2-D arrays with one state per row. Density matrices and unitaries
are square 2-D arrays. Everything here is a pure function of its inputs and an
explicit :class:`numpy.random.Generator`.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch

MAX_QUBITS = 12
ATOL = 1e-10
RANK_TOL = 1e-8


@dataclass(frozen=True)
class Dimension:
    """Qubit count ``n`` and Hilbert-space size ``D = 2**n``."""

    n: int

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or not 1 <= self.n <= MAX_QUBITS:
            raise ValueError(f"qubit count must be an integer in [1, {MAX_QUBITS}], got {self.n!r}")

    @property
    def D(self) -> int:
        return 2 ** int(self.n)

    @classmethod
    def from_size(cls, D: int) -> "Dimension":
        n = int(D).bit_length() - 1
        if D < 2 or 2 ** n != D:
            raise ValueError(f"Hilbert-space size must be a power of two >= 2, got {D}")
        return cls(n)


def as_dimension(dim: Dimension | int) -> Dimension:
    """Accept either a :class:`Dimension` or a bare qubit count."""
    return dim if isinstance(dim, Dimension) else Dimension(int(dim))


def _key(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode())
    return int(k)


def substream(seed: int, *keys) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``.

    Keys may be ints or strings; strings are hashed with CRC-32 so the
    derivation is stable across interpreter runs. Distinct key tuples give
    statistically independent streams, which is what lets trial ``t`` of an
    experiment be reproduced (or run on another worker) in isolation.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(k) for k in keys))
    return np.random.default_rng(ss)


def child_seed(rng: np.random.Generator) -> int:
    """Draw a 63-bit seed from ``rng`` for handing to :func:`substream`."""
    return int(rng.integers(0, 2**63 - 1))


def _complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def haar_random_states(dim: Dimension | int, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` independent Haar-random pure states, one per row."""
    D = as_dimension(dim).D
    z = _complex_normal(rng, (count, D))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def haar_random_state(dim: Dimension | int, rng: np.random.Generator) -> np.ndarray:
    """A Haar-random pure state in dimension ``D``."""
    return haar_random_states(dim, 1, rng)[0]


def haar_random_unitary(dim: Dimension | int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary via QR of a Ginibre matrix with phase fix.

    Plain QR is not Haar distributed because LAPACK's choice of phases on the
    diagonal of R leaks into Q; multiplying each column of Q by the phase of the
    matching diagonal entry of R removes that bias.
    """
    D = as_dimension(dim).D
    z = _complex_normal(rng, (D, D))
    q, r = np.linalg.qr(z)
    diag = np.diagonal(r)
    return q * (diag / np.abs(diag))


def basis_state(dim: Dimension | int, index: int) -> np.ndarray:
    D = as_dimension(dim).D
    v = np.zeros(D, dtype=complex)
    v[index] = 1.0
    return v


def is_unit(psi: np.ndarray, atol: float = ATOL) -> bool:
    return bool(abs(np.linalg.norm(psi) - 1.0) <= atol)


def is_unitary(U: np.ndarray, atol: float = ATOL) -> bool:
    U = np.asarray(U)
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        return False
    return bool(np.max(np.abs(U.conj().T @ U - np.eye(U.shape[0]))) <= atol)


def is_density_matrix(rho: np.ndarray, atol: float = ATOL) -> bool:
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        return False
    if np.max(np.abs(rho - rho.conj().T)) > atol:
        return False
    if abs(np.trace(rho) - 1.0) > atol:
        return False
    return bool(np.min(np.linalg.eigvalsh(rho)) >= -atol)


def density_matrix(psi: np.ndarray) -> np.ndarray:
    """Projector ``|psi><psi|``."""
    psi = np.asarray(psi)
    return np.outer(psi, psi.conj())


def _psd_sqrt(rho: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(rho)
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.conj().T


def fidelity(a: np.ndarray, b: np.ndarray) -> float:
    """Uhlmann fidelity ``Tr sqrt(sqrt(a) b sqrt(a))``.

    Either argument may be a pure state (1-D) or a density matrix (2-D). For
    two pure states this is ``|<a|b>|`` and for a pure/mixed pair it is
    ``sqrt(<psi|rho|psi>)``. The result is clipped into ``[0, 1]``.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape[0] != b.shape[0]:
        raise DimensionMismatch(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    if a.ndim == 1 and b.ndim == 1:
        f = abs(np.vdot(a, b))
    elif a.ndim == 1 or b.ndim == 1:
        psi, rho = (a, b) if a.ndim == 1 else (b, a)
        f = np.sqrt(max(np.real(np.vdot(psi, rho @ psi)), 0.0))
    else:
        s = _psd_sqrt(a)
        m = s @ b @ s
        ev = np.clip(np.linalg.eigvalsh((m + m.conj().T) / 2), 0.0, None)
        f = float(np.sum(np.sqrt(ev)))
    return float(min(max(f, 0.0), 1.0))


def overlap_squared(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise ``|<a_i|b_i>|**2`` for two equally shaped batches of pure states."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shape mismatch: {a.shape} vs {b.shape}")
    f2 = np.abs(np.sum(a.conj() * b, axis=-1)) ** 2
    return np.clip(f2, 0.0, 1.0)


def orthogonal_states(phis: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Row-wise Haar-random states orthogonal to each row of ``phis``."""
    phis = np.atleast_2d(phis)
    count, D = phis.shape
    if D < 2:
        raise ValueError("an orthogonal complement needs D >= 2")
    out = _complex_normal(rng, (count, D))
    for _ in range(2):
        out -= phis * np.sum(phis.conj() * out, axis=1, keepdims=True)
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    # a Gaussian draw landing on span(phi) has probability zero; guard anyway
    while np.any(norms < RANK_TOL):
        bad = norms[:, 0] < RANK_TOL
        out[bad] = _complex_normal(rng, (int(bad.sum()), D))
        out[bad] -= phis[bad] * np.sum(phis[bad].conj() * out[bad], axis=1, keepdims=True)
        norms = np.linalg.norm(out, axis=1, keepdims=True)
    return out / norms


def orthogonal_state(phi: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Haar-random state in the orthogonal complement of ``phi``."""
    return orthogonal_states(np.asarray(phi)[None, :], rng)[0]


@dataclass(frozen=True)
class SubspaceBasis:
    """Orthonormal basis vectors stored as the rows of ``vectors`` (shape ``(d, D)``)."""

    vectors: np.ndarray

    @property
    def d(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def D(self) -> int:
        return int(self.vectors.shape[1])

    def coefficients(self, phi: np.ndarray) -> np.ndarray:
        """Expansion coefficients ``<e_i|phi>``; works row-wise on batches."""
        return np.asarray(phi) @ self.vectors.conj().T

    def project(self, phi: np.ndarray) -> np.ndarray:
        return self.coefficients(phi) @ self.vectors


def gram_schmidt(states: np.ndarray, tol: float = RANK_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Modified Gram-Schmidt with one re-orthogonalisation pass.

    Returns ``(Q, C)`` with ``Q = C @ states``: ``Q`` holds the surviving
    orthonormal vectors as rows, ``C`` the linear combinations that produced
    them. Inputs whose residual norm after projection falls below ``tol`` are
    dropped as linearly dependent. The coefficient matrix is what lets a caller
    push the same combinations through a linear map it can only query.
    """
    X = np.atleast_2d(np.asarray(states, dtype=complex))
    k, D = X.shape
    qs: list[np.ndarray] = []
    cs: list[np.ndarray] = []
    for j in range(k):
        v = X[j].copy()
        c = np.zeros(k, dtype=complex)
        c[j] = 1.0
        for _ in range(2):
            for q, cq in zip(qs, cs):
                proj = np.vdot(q, v)
                v -= proj * q
                c -= proj * cq
        norm = np.linalg.norm(v)
        if norm < tol:
            continue
        qs.append(v / norm)
        cs.append(c / norm)
    if not qs:
        return np.zeros((0, D), dtype=complex), np.zeros((0, k), dtype=complex)
    return np.array(qs), np.array(cs)


def orthonormalize(states) -> SubspaceBasis:
    """Orthonormal basis for the span of ``states`` (list or row-stacked array)."""
    X = np.atleast_2d(np.asarray(states, dtype=complex))
    if X.shape[0] == 0:
        raise ValueError("orthonormalize needs at least one state")
    Q, _ = gram_schmidt(X)
    return SubspaceBasis(Q)


def subspace_overlap(phi: np.ndarray, basis: SubspaceBasis) -> float:
    """Squared norm of the projection of ``phi`` onto ``span(basis)``."""
    phi = np.asarray(phi)
    if phi.shape[-1] != basis.D:
        raise DimensionMismatch(f"dimension mismatch: {phi.shape[-1]} vs {basis.D}")
    if basis.d == 0:
        return 0.0
    return float(min(np.sum(np.abs(basis.coefficients(phi)) ** 2), 1.0))


def states_with_fidelity(dim: Dimension | int, fidelities, rng: np.random.Generator):
    """Pairs of pure states with prescribed pure-state fidelities ``|<a|b>|``.

    Returns ``(a, b)`` batches. ``a`` is Haar random and
    ``b = F a + sqrt(1 - F**2) a_perp`` with ``a_perp`` Haar in the complement.
    """
    F = np.atleast_1d(np.asarray(fidelities, dtype=float))
    a = haar_random_states(dim, F.size, rng)
    perp = orthogonal_states(a, rng)
    b = F[:, None] * a + np.sqrt(np.clip(1.0 - F**2, 0.0, None))[:, None] * perp
    return a, b
