"""Finite noncommutative probability spaces.

A space is a block-diagonal matrix *-algebra  A = M_{d_1} + ... + M_{d_m}
together with a faithful state  phi(x) = trace(rho x)  given by a full-rank
block-diagonal density matrix rho.  Everything downstream (adjoints, modular
flows, weighted L^p norms) divides by the spectrum of rho, so faithfulness is
enforced at construction time with a hard threshold on the smallest
eigenvalue.

Vectorization convention (fixed globally): blocks are concatenated in order
and each block is column-stacked, i.e. the entry X[p, q] of a d x d block sits
at offset q*d + p.  All dense map matrices in :mod:`ncergo.maps` use it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import FaithfulnessError, ShapeError

EPS_FAITHFUL = 1e-12
# Hermiticity / normalization tolerance for admitting a density matrix.
EPS_STATE = 1e-10


@dataclass(frozen=True)
class BlockStructure:
    """Ordered block sizes (d_1, ..., d_m) of a block-diagonal algebra."""

    dims: tuple[int, ...]

    def __post_init__(self):
        if len(self.dims) == 0:
            raise ShapeError("block structure needs at least one block")
        if any((not isinstance(d, (int, np.integer))) or d < 1 for d in self.dims):
            raise ShapeError(f"block sizes must be positive integers, got {self.dims}")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    @cached_property
    def vec_dim(self) -> int:
        """Dimension of the algebra as a vector space, sum of d_k^2."""
        return int(sum(d * d for d in self.dims))

    @cached_property
    def matrix_dim(self) -> int:
        """Size of the ambient full matrix algebra, sum of d_k."""
        return int(sum(self.dims))

    @cached_property
    def offsets(self) -> tuple[int, ...]:
        """Start offset of each block inside a vectorized element."""
        out, pos = [], 0
        for d in self.dims:
            out.append(pos)
            pos += d * d
        return tuple(out)


class Element:
    """A block-diagonal complex matrix conforming to a :class:`BlockStructure`.

    Immutable value type: arithmetic returns new elements, the underlying
    arrays are never written in place.
    """

    __slots__ = ("structure", "blocks")

    def __init__(self, structure: BlockStructure, blocks):
        blocks = tuple(np.asarray(b, dtype=complex) for b in blocks)
        if len(blocks) != len(structure.dims):
            raise ShapeError(
                f"expected {len(structure.dims)} blocks, got {len(blocks)}"
            )
        for b, d in zip(blocks, structure.dims):
            if b.shape != (d, d):
                raise ShapeError(f"block of shape {b.shape} does not match size {d}")
        self.structure = structure
        self.blocks = blocks

    # -- constructors -------------------------------------------------

    @staticmethod
    def identity(structure: BlockStructure) -> "Element":
        return Element(structure, [np.eye(d, dtype=complex) for d in structure.dims])

    @staticmethod
    def zero(structure: BlockStructure) -> "Element":
        return Element(
            structure, [np.zeros((d, d), dtype=complex) for d in structure.dims]
        )

    @staticmethod
    def from_vec(structure: BlockStructure, v: np.ndarray) -> "Element":
        v = np.asarray(v, dtype=complex).reshape(-1)
        if v.shape != (structure.vec_dim,):
            raise ShapeError(f"vector of length {v.size} does not match structure")
        blocks = []
        for off, d in zip(structure.offsets, structure.dims):
            blocks.append(v[off : off + d * d].reshape(d, d, order="F"))
        return Element(structure, blocks)

    @staticmethod
    def diagonal(structure: BlockStructure, entries) -> "Element":
        """Diagonal element from a flat list of matrix-diagonal entries."""
        entries = list(entries)
        if len(entries) != structure.matrix_dim:
            raise ShapeError("diagonal entry count does not match structure")
        blocks, pos = [], 0
        for d in structure.dims:
            blocks.append(np.diag(np.asarray(entries[pos : pos + d], dtype=complex)))
            pos += d
        return Element(structure, blocks)

    # -- algebra ------------------------------------------------------

    def _check_same(self, other: "Element") -> None:
        if self.structure != other.structure:
            raise ShapeError("elements live in different block structures")

    def __add__(self, other: "Element") -> "Element":
        self._check_same(other)
        return Element(self.structure, [a + b for a, b in zip(self.blocks, other.blocks)])

    def __sub__(self, other: "Element") -> "Element":
        self._check_same(other)
        return Element(self.structure, [a - b for a, b in zip(self.blocks, other.blocks)])

    def __mul__(self, scalar) -> "Element":
        return Element(self.structure, [scalar * b for b in self.blocks])

    __rmul__ = __mul__

    def __neg__(self) -> "Element":
        return self * (-1.0)

    def __matmul__(self, other: "Element") -> "Element":
        self._check_same(other)
        return Element(self.structure, [a @ b for a, b in zip(self.blocks, other.blocks)])

    def adjoint(self) -> "Element":
        return Element(self.structure, [b.conj().T for b in self.blocks])

    def vec(self) -> np.ndarray:
        return np.concatenate([b.flatten(order="F") for b in self.blocks])

    def trace(self) -> complex:
        return complex(sum(np.trace(b) for b in self.blocks))

    def op_norm(self) -> float:
        """Operator (largest singular value) norm over all blocks."""
        return max(float(np.linalg.norm(b, 2)) for b in self.blocks)

    def frob_norm(self) -> float:
        return float(math.sqrt(sum(np.linalg.norm(b, "fro") ** 2 for b in self.blocks)))

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        return all(np.max(np.abs(b - b.conj().T)) <= tol * max(1.0, np.max(np.abs(b))) for b in self.blocks)

    def __repr__(self) -> str:
        return f"Element(dims={self.structure.dims}, op_norm={self.op_norm():.3g})"


def op_dist(a: Element, b: Element) -> float:
    return (a - b).op_norm()


class NcSpace:
    """A block-diagonal algebra with a faithful state phi = trace(rho . ).

    rho's Hermitian eigendecomposition is computed once per space and cached;
    every real or imaginary power of rho used anywhere in the package goes
    through this single decomposition so that, e.g., modular flows and L^p
    weights are numerically consistent with each other.
    """

    def __init__(self, structure: BlockStructure, rho: Element):
        if rho.structure != structure:
            raise ShapeError("rho does not conform to the block structure")
        for b in rho.blocks:
            if np.max(np.abs(b - b.conj().T)) > EPS_STATE:
                raise FaithfulnessError("rho is not Hermitian within tolerance")
        tr = rho.trace()
        if abs(tr - 1.0) > EPS_STATE:
            raise FaithfulnessError(f"trace(rho) = {tr} is not 1")
        eigs, vecs = [], []
        for b in rho.blocks:
            w, u = np.linalg.eigh((b + b.conj().T) / 2.0)
            if np.min(w) <= EPS_FAITHFUL:
                raise FaithfulnessError(
                    f"state not faithful: min eigenvalue {np.min(w):.3e} <= {EPS_FAITHFUL:.0e}"
                )
            eigs.append(w)
            vecs.append(u)
        self.structure = structure
        self.rho = rho
        self._eigs = tuple(eigs)
        self._vecs = tuple(vecs)

    # -- cached derived data -------------------------------------------

    def identity(self) -> Element:
        return Element.identity(self.structure)

    @cached_property
    def state_vec(self) -> np.ndarray:
        """phi(x) = state_vec^dagger vec(x)."""
        return self.rho.vec()

    def rho_power(self, s: float) -> Element:
        """rho^s through the cached eigendecomposition (s real, also negative)."""
        blocks = [
            u @ np.diag(w**s).astype(complex) @ u.conj().T
            for w, u in zip(self._eigs, self._vecs)
        ]
        return Element(self.structure, blocks)

    def rho_power_imag(self, t: float) -> Element:
        """The unitary rho^{it}."""
        blocks = [
            u @ np.diag(np.exp(1j * t * np.log(w))) @ u.conj().T
            for w, u in zip(self._eigs, self._vecs)
        ]
        return Element(self.structure, blocks)

    @cached_property
    def log_rho(self) -> Element:
        blocks = [
            u @ np.diag(np.log(w)).astype(complex) @ u.conj().T
            for w, u in zip(self._eigs, self._vecs)
        ]
        return Element(self.structure, blocks)

    @cached_property
    def min_rho_eig(self) -> float:
        return float(min(np.min(w) for w in self._eigs))

    def is_tracial(self, tol: float = 1e-12) -> bool:
        """True when rho is a scalar multiple of the identity in every block."""
        return all(np.max(w) - np.min(w) <= tol for w in self._eigs)

    def __repr__(self) -> str:
        return f"NcSpace(dims={self.structure.dims}, tracial={self.is_tracial()})"


# ---------------------------------------------------------------------------
# state, inner product, modular flow
# ---------------------------------------------------------------------------


def state_eval(space: NcSpace, x: Element) -> complex:
    """phi(x) = trace(rho x).

    Returns a complex scalar even when the result is provably real; callers
    that rely on reality assert a small imaginary part themselves.
    """
    if x.structure != space.structure:
        raise ShapeError("element does not conform to the space")
    return complex(
        sum(np.trace(r @ b) for r, b in zip(space.rho.blocks, x.blocks))
    )


def gns_inner(space: NcSpace, a: Element, b: Element) -> complex:
    """GNS scalar product <a, b> = phi(b* a); positive definite by faithfulness."""
    return state_eval(space, b.adjoint() @ a)


def modular_action(space: NcSpace, t: float, x: Element) -> Element:
    """Modular flow at real time t:  x -> rho^{it} x rho^{-it}."""
    if x.structure != space.structure:
        raise ShapeError("element does not conform to the space")
    u = space.rho_power_imag(t)
    return u @ x @ u.adjoint()


def modular_action_imaginary(space: NcSpace, s: float, x: Element) -> Element:
    """Analytic continuation of the modular flow to imaginary time i*s.

    Realized as  x -> rho^{-s} x rho^{s}.  Not norm preserving for s != 0
    unless the state is tracial.
    """
    if x.structure != space.structure:
        raise ShapeError("element does not conform to the space")
    return space.rho_power(-s) @ x @ space.rho_power(s)


# ---------------------------------------------------------------------------
# weighted L^p norms
# ---------------------------------------------------------------------------


def validate_p(p: float) -> float:
    p = float(p)
    if not (p >= 1.0 or math.isinf(p)):
        raise ValueError(f"L^p index must satisfy p >= 1 or p = inf, got {p}")
    return p


def lp_norm(space: NcSpace, p: float, x: Element) -> float:
    """Weighted L^p norm of x.

    For finite p this is the Schatten-p norm of rho^{1/2p} x rho^{1/2p}; for
    p = inf it is the plain operator norm of x.  ||1||_p = 1 for every p
    because trace(rho) = 1.
    """
    p = validate_p(p)
    if x.structure != space.structure:
        raise ShapeError("element does not conform to the space")
    if math.isinf(p):
        return x.op_norm()
    w = space.rho_power(1.0 / (2.0 * p))
    y = w @ x @ w
    svals = np.concatenate([np.linalg.svd(b, compute_uv=False) for b in y.blocks])
    return float(np.sum(svals**p) ** (1.0 / p))


# ---------------------------------------------------------------------------
# Gram matrices of the three pairings used by the dense map machinery
# ---------------------------------------------------------------------------


def _block_gram(builder, space: NcSpace) -> np.ndarray:
    n = space.structure.vec_dim
    g = np.zeros((n, n), dtype=complex)
    for off, d, rho_b, w, u in zip(
        space.structure.offsets,
        space.structure.dims,
        space.rho.blocks,
        space._eigs,
        space._vecs,
    ):
        g[off : off + d * d, off : off + d * d] = builder(d, rho_b, w, u)
    return g


def gns_gram(space: NcSpace) -> np.ndarray:
    """Hermitian W with <a, b>_GNS = vec(b)^dagger W vec(a)."""

    def build(d, rho_b, w, u):
        return np.kron(rho_b.T, np.eye(d))

    return _block_gram(build, space)


def state_pairing_gram(space: NcSpace) -> np.ndarray:
    """Bilinear G with phi(y a) = vec(y)^T G vec(a)."""

    def build(d, rho_b, w, u):
        return np.einsum("qr,sp->qpsr", np.eye(d), rho_b).reshape(d * d, d * d)

    return _block_gram(build, space)


def kms_pairing_gram(space: NcSpace) -> np.ndarray:
    """Symmetric bilinear K with trace(rho^{1/2} y rho^{1/2} a) = vec(y)^T K vec(a)."""
    half = space.rho_power(0.5)
    n = space.structure.vec_dim
    g = np.zeros((n, n), dtype=complex)
    for off, d, h in zip(space.structure.offsets, space.structure.dims, half.blocks):
        g[off : off + d * d, off : off + d * d] = np.einsum(
            "qr,sp->qpsr", h, h
        ).reshape(d * d, d * d)
    return g


def gns_factor(space: NcSpace) -> np.ndarray:
    """F with F^dagger F = gns_gram(space); maps vec coords to GNS coordinates."""
    half = space.rho_power(0.5)
    n = space.structure.vec_dim
    f = np.zeros((n, n), dtype=complex)
    for off, d, h in zip(space.structure.offsets, space.structure.dims, half.blocks):
        f[off : off + d * d, off : off + d * d] = np.kron(h.conj(), np.eye(d))
    return f
