"""Linear maps between finite noncommutative probability spaces.

A map is stored as a dense matrix acting on vectorized elements (see
:mod:`ncergo.core` for the vectorization convention).  The module provides

* complete positivity via the Choi matrix of the pinched extension,
* the stationarity check (state preservation AND commutation with the
  modular flow, tested through the exact log-rho commutator condition),
* the state adjoint  phi(Q*(b) a) = psi(b Q(a))  for stationary maps,
* the KMS-twisted adjoint, which exists for every state-preserving map,
* weighted L^p contraction reports,
* joint fixed-point algebras and state-preserving conditional expectations.

Adjoints are computed by solving the dense linear system given by the
pairing on a full basis rather than by closed-form transposition, so one
code path covers tracial and non-tracial states alike.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    Element,
    NcSpace,
    gns_factor,
    kms_pairing_gram,
    state_pairing_gram,
    validate_p,
    lp_norm,
)
from .errors import ClosureError, ShapeError, StationarityError

TOL_FLAG = 1e-10          # verification tolerance for map flags
TOL_CHOI = 1e-10          # PSD threshold on the Choi spectrum
TOL_SPAN = 1e-10          # subalgebra span / closure tolerance


def same_space(a: NcSpace, b: NcSpace, tol: float = 1e-12) -> bool:
    if a is b:
        return True
    if a.structure != b.structure:
        return False
    return all(
        np.max(np.abs(x - y)) <= tol for x, y in zip(a.rho.blocks, b.rho.blocks)
    )


def modular_generator_matrix(space: NcSpace) -> np.ndarray:
    """Matrix of x -> [log rho, x], the generator of the modular flow."""
    n = space.structure.vec_dim
    out = np.zeros((n, n), dtype=complex)
    for off, d, lb in zip(
        space.structure.offsets, space.structure.dims, space.log_rho.blocks
    ):
        blk = np.kron(np.eye(d), lb) - np.kron(lb.T, np.eye(d))
        out[off : off + d * d, off : off + d * d] = blk
    return out


class CpMap:
    """A linear map between two spaces with cached verification flags.

    Flags (unital / completely positive / state preserving / modular
    commuting) start out unchecked and are filled in lazily; values are pure
    functions of the matrix, so caching does not break immutability.
    """

    __slots__ = ("source", "target", "matrix", "_flags", "_choi_min")

    def __init__(self, source: NcSpace, target: NcSpace, matrix: np.ndarray):
        matrix = np.asarray(matrix, dtype=complex)
        expected = (target.structure.vec_dim, source.structure.vec_dim)
        if matrix.shape != expected:
            raise ShapeError(f"map matrix shape {matrix.shape}, expected {expected}")
        self.source = source
        self.target = target
        self.matrix = matrix
        self._flags: dict = {}
        self._choi_min = None

    # -- constructors ---------------------------------------------------

    @staticmethod
    def identity(space: NcSpace) -> "CpMap":
        return CpMap(space, space, np.eye(space.structure.vec_dim, dtype=complex))

    @staticmethod
    def from_kraus(source: NcSpace, target: NcSpace, kraus_blocks) -> "CpMap":
        """Map x -> sum_a K_a x K_a^dagger with blockwise Kraus data.

        ``kraus_blocks`` is a list of block lists; entry k of each operator
        must have shape (target_dim_k, source_dim_k).
        """
        n_s, n_t = source.structure.vec_dim, target.structure.vec_dim
        m = np.zeros((n_t, n_s), dtype=complex)
        for op in kraus_blocks:
            blocks = [np.asarray(b, dtype=complex) for b in op]
            if len(blocks) != len(source.structure.dims):
                raise ShapeError("Kraus operator block count mismatch")
            for bt, bs, bk in zip(
                target.structure.dims, source.structure.dims, blocks
            ):
                if bk.shape != (bt, bs):
                    raise ShapeError("Kraus block shape mismatch")
            pos_t = pos_s = 0
            for bt, bs, bk in zip(
                target.structure.dims, source.structure.dims, blocks
            ):
                m[pos_t : pos_t + bt * bt, pos_s : pos_s + bs * bs] += np.kron(
                    bk.conj(), bk
                )
                pos_t += bt * bt
                pos_s += bs * bs
        return CpMap(source, target, m)

    @staticmethod
    def from_unitary(space: NcSpace, u: Element) -> "CpMap":
        """Conjugation x -> u x u^dagger by a block-diagonal unitary."""
        return CpMap.from_kraus(space, space, [u.blocks])

    @staticmethod
    def from_block_permutation(space: NcSpace, target: NcSpace, perm) -> "CpMap":
        """x -> permuted blocks: output block i is input block perm[i].

        Permuted blocks must have equal sizes.  Used for point permutations
        of commutative (all 1x1 blocks) spaces and for component rewiring of
        product spaces.
        """
        dims_s, dims_t = space.structure.dims, target.structure.dims
        if sorted(dims_s) != sorted(dims_t) or len(perm) != len(dims_t):
            raise ShapeError("permutation does not match block structures")
        n_s, n_t = space.structure.vec_dim, target.structure.vec_dim
        m = np.zeros((n_t, n_s), dtype=complex)
        for i, j in enumerate(perm):
            if dims_t[i] != dims_s[j]:
                raise ShapeError("permuted blocks differ in size")
            d2 = dims_t[i] ** 2
            ot, os_ = target.structure.offsets[i], space.structure.offsets[j]
            m[ot : ot + d2, os_ : os_ + d2] = np.eye(d2)
        return CpMap(space, target, m)

    @staticmethod
    def state_map(space: NcSpace) -> "CpMap":
        """x -> phi(x) 1, the rank-one conditional expectation onto scalars."""
        one = Element.identity(space.structure).vec()
        return CpMap(space, space, np.outer(one, space.state_vec.conj()))

    @staticmethod
    def convex_combination(maps, weights) -> "CpMap":
        weights = np.asarray(weights, dtype=float)
        if abs(weights.sum() - 1.0) > 1e-12 or np.any(weights < 0):
            raise ValueError("weights must be a probability vector")
        first = maps[0]
        m = sum(w * q.matrix for w, q in zip(weights, maps))
        return CpMap(first.source, first.target, m)

    # -- action and composition -----------------------------------------

    def __call__(self, x: Element) -> Element:
        return apply(self, x)

    def compose(self, inner: "CpMap") -> "CpMap":
        """self after inner."""
        if not same_space(inner.target, self.source):
            raise ShapeError("composition spaces do not match")
        return CpMap(inner.source, self.target, self.matrix @ inner.matrix)

    def inverse(self) -> "CpMap":
        """Matrix inverse; meaningful for automorphisms."""
        if not same_space(self.source, self.target):
            raise ShapeError("inverse requires an endomorphism")
        return CpMap(self.target, self.source, np.linalg.inv(self.matrix))

    # -- verified flags ---------------------------------------------------

    def is_unital(self, tol: float = TOL_FLAG) -> bool:
        if "unital" not in self._flags:
            one_s = Element.identity(self.source.structure).vec()
            one_t = Element.identity(self.target.structure).vec()
            self._flags["unital"] = bool(
                np.max(np.abs(self.matrix @ one_s - one_t)) <= tol
            )
        return self._flags["unital"]

    def choi_matrix(self) -> np.ndarray:
        """Choi matrix of the pinched extension, normalized by the source size.

        The map is defined on the block-diagonal subalgebra only; composing
        with the trace-preserving pinching onto that subalgebra gives a map
        on the full matrix algebra whose complete positivity is equivalent,
        and whose Choi matrix is assembled from matrix units within blocks.
        """
        ds = self.source.structure
        dt = self.target.structure
        big_s, big_t = ds.matrix_dim, dt.matrix_dim
        choi = np.zeros((big_s * big_t, big_s * big_t), dtype=complex)
        row_start_s = np.cumsum((0,) + ds.dims)[:-1]
        row_start_t = np.cumsum((0,) + dt.dims)[:-1]
        for k, d in enumerate(ds.dims):
            for q in range(d):
                for p in range(d):
                    col = ds.offsets[k] + q * d + p
                    img = Element.from_vec(dt, self.matrix[:, col])
                    gi = row_start_s[k] + p
                    gj = row_start_s[k] + q
                    for kt, dtk in enumerate(dt.dims):
                        r0 = row_start_t[kt]
                        choi[
                            gi * big_t + r0 : gi * big_t + r0 + dtk,
                            gj * big_t + r0 : gj * big_t + r0 + dtk,
                        ] += img.blocks[kt]
        return choi / big_s

    def is_completely_positive(self, tol: float = TOL_CHOI):
        """Choi positivity test; returns (bool, min eigenvalue witness)."""
        if self._choi_min is None:
            c = self.choi_matrix()
            c = (c + c.conj().T) / 2.0
            self._choi_min = float(np.min(np.linalg.eigvalsh(c)))
        return self._choi_min > -tol, self._choi_min

    def preserves_state(self, tol: float = TOL_FLAG) -> bool:
        if "state" not in self._flags:
            back = self.matrix.conj().T @ self.target.state_vec
            self._flags["state"] = bool(
                np.max(np.abs(back - self.source.state_vec)) <= tol
            )
        return self._flags["state"]

    def commutes_with_modular(self, tol: float = TOL_FLAG) -> bool:
        if "modular" not in self._flags:
            self._flags["modular"] = modular_commutation_residual(self) <= tol
        return self._flags["modular"]

    def __repr__(self) -> str:
        return (
            f"CpMap({self.source.structure.dims} -> {self.target.structure.dims})"
        )


def apply(q: CpMap, x: Element) -> Element:
    """Evaluate the map on an element."""
    if x.structure != q.source.structure:
        raise ShapeError("element does not conform to the map source")
    return Element.from_vec(q.target.structure, q.matrix @ x.vec())


def modular_commutation_residual(q: CpMap) -> float:
    """Residual of Q [log rho_s, .] = [log rho_t, .] Q, scaled by matrix norms.

    Exact linear form of the commutation with both modular flows: since
    t -> sigma_t is generated by i[log rho, .], the one-parameter condition
    is equivalent to this single commutator identity in finite dimension.
    """
    gen_s = modular_generator_matrix(q.source)
    gen_t = modular_generator_matrix(q.target)
    lhs = q.matrix @ gen_s
    rhs = gen_t @ q.matrix
    scale = max(
        1.0, np.max(np.abs(q.matrix)) * max(np.max(np.abs(gen_s)), np.max(np.abs(gen_t)))
    )
    return float(np.max(np.abs(lhs - rhs)) / scale)


@dataclass(frozen=True)
class StationarityResult:
    """Outcome of the two-part stationarity test, reported separately."""

    state_preserving: bool
    modular_commuting: bool
    state_residual: float
    modular_residual: float

    def __bool__(self) -> bool:
        return self.state_preserving and self.modular_commuting


def check_stationary(q: CpMap, tol: float = TOL_FLAG) -> StationarityResult:
    """Check psi o Q = phi AND commutation with the modular flows.

    Both conditions together are strictly stronger than state preservation
    alone; the result reports them separately.
    """
    back = q.matrix.conj().T @ q.target.state_vec
    state_res = float(np.max(np.abs(back - q.source.state_vec)))
    mod_res = modular_commutation_residual(q)
    return StationarityResult(
        state_preserving=state_res <= tol,
        modular_commuting=mod_res <= tol,
        state_residual=state_res,
        modular_residual=mod_res,
    )


def adjoint_wrt_states(q: CpMap, tol: float = TOL_FLAG) -> CpMap:
    """The adjoint Q* with phi(Q*(b) a) = psi(b Q(a)) for all a, b.

    Exists precisely for stationary maps; non-stationary input is rejected.
    Computed by solving the linear system the pairing induces on a full
    basis of both spaces.
    """
    st = check_stationary(q, tol)
    if not st:
        raise StationarityError(
            "state adjoint requires a stationary map "
            f"(state residual {st.state_residual:.2e}, "
            f"modular residual {st.modular_residual:.2e})"
        )
    g_s = state_pairing_gram(q.source)
    g_t = state_pairing_gram(q.target)
    m_adj = np.linalg.solve(g_s.T, q.matrix.T @ g_t.T)
    return CpMap(q.target, q.source, m_adj)


def kms_adjoint(q: CpMap, tol: float = TOL_FLAG) -> CpMap:
    """The KMS-twisted adjoint, defined whenever psi o Q = phi.

    The defining pairing, with both elements moved half-way along the
    imaginary-time modular flow, reads

        trace(rho_s^{1/2} a rho_s^{1/2} Q*(b)) = trace(rho_t^{1/2} b rho_t^{1/2} Q(a)).

    No modular commutation is required; for stationary maps this adjoint
    coincides with :func:`adjoint_wrt_states`.
    """
    back = q.matrix.conj().T @ q.target.state_vec
    res = float(np.max(np.abs(back - q.source.state_vec)))
    if res > tol:
        raise StationarityError(
            f"KMS adjoint requires a state-preserving map (residual {res:.2e})"
        )
    k_s = kms_pairing_gram(q.source)
    k_t = kms_pairing_gram(q.target)
    m_adj = np.linalg.solve(k_s, q.matrix.T @ k_t)
    return CpMap(q.target, q.source, m_adj)


# ---------------------------------------------------------------------------
# weighted L^p contraction report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LpContractionReport:
    p: float
    ratios: tuple
    max_ratio: float
    passed: bool


def lp_extension_norm_check(
    q: CpMap, p: float, samples, tol: float = 1e-10
) -> LpContractionReport:
    """Verify the weighted L^p contraction property on sample elements.

    The map sends the compression rho_s^{1/2p} a rho_s^{1/2p} to
    rho_t^{1/2p} Q(a) rho_t^{1/2p}; with Q positive, Q(1) <= 1 and
    psi o Q <= phi this extension is a contraction, so every ratio
    ||Q a||_p / ||a||_p of the weighted norms is at most 1.
    """
    p = validate_p(p)
    cp_ok, witness = q.is_completely_positive()
    if not cp_ok:
        raise StationarityError(f"map is not positive (Choi witness {witness:.2e})")
    q_one = apply(q, Element.identity(q.source.structure))
    herm = [(b + b.conj().T) / 2.0 for b in q_one.blocks]
    top = max(float(np.max(np.linalg.eigvalsh(b))) for b in herm)
    if top > 1.0 + tol:
        raise StationarityError(f"Q(1) <= 1 fails (top eigenvalue {top})")
    back = Element.from_vec(
        q.source.structure, q.matrix.conj().T @ q.target.state_vec
    )
    gap = q.source.rho - back
    low = min(
        float(np.min(np.linalg.eigvalsh((b + b.conj().T) / 2.0))) for b in gap.blocks
    )
    if low < -tol:
        raise StationarityError(f"psi o Q <= phi fails (witness {low:.2e})")
    ratios = []
    for a in samples:
        before = lp_norm(q.source, p, a)
        after = lp_norm(q.target, p, apply(q, a))
        ratios.append(after / before if before > 0 else 0.0)
    max_ratio = max(ratios) if ratios else 0.0
    return LpContractionReport(
        p=p,
        ratios=tuple(ratios),
        max_ratio=max_ratio,
        passed=max_ratio <= 1.0 + tol,
    )


# ---------------------------------------------------------------------------
# subalgebras, fixed points, conditional expectations
# ---------------------------------------------------------------------------


class Subalgebra:
    """A unital *-subalgebra given by a GNS-orthonormal spanning basis."""

    __slots__ = ("ambient", "basis", "_g_basis", "_factor")

    def __init__(self, ambient: NcSpace, basis, g_basis, factor):
        self.ambient = ambient
        self.basis = tuple(basis)
        self._g_basis = g_basis          # columns orthonormal in GNS coordinates
        self._factor = factor            # F with F^dagger F = GNS Gram

    @property
    def dim(self) -> int:
        return len(self.basis)

    @staticmethod
    def from_span(
        ambient: NcSpace, elements, tol: float = TOL_SPAN, check_closure: bool = True
    ) -> "Subalgebra":
        """Orthonormalize a spanning set and certify the algebra axioms.

        Verifies that the span contains the identity and is closed under
        adjoints and pairwise products (residual below ``tol`` after
        projecting back onto the span).
        """
        f = gns_factor(ambient)
        vecs = np.stack([e.vec() for e in elements], axis=1)
        u, s, _ = np.linalg.svd(f @ vecs, full_matrices=False)
        keep = s > max(tol * s[0], 1e-13)
        g_basis = u[:, keep]
        basis_mat = np.linalg.solve(f, g_basis)
        basis = [
            Element.from_vec(ambient.structure, basis_mat[:, j])
            for j in range(basis_mat.shape[1])
        ]
        sub = Subalgebra(ambient, basis, g_basis, f)
        if check_closure:
            sub._verify_closure(tol)
        return sub

    def _residual(self, x: Element) -> float:
        g = self._factor @ x.vec()
        r = g - self._g_basis @ (self._g_basis.conj().T @ g)
        return float(np.linalg.norm(r))

    def _verify_closure(self, tol: float) -> None:
        one = Element.identity(self.ambient.structure)
        scale = max(1.0, max(b.op_norm() for b in self.basis))
        if self._residual(one) > tol * scale:
            raise ClosureError("span does not contain the identity")
        for b in self.basis:
            if self._residual(b.adjoint()) > tol * scale:
                raise ClosureError("span is not closed under adjoints")
        for a in self.basis:
            for b in self.basis:
                if self._residual(a @ b) > tol * scale * scale:
                    raise ClosureError("span is not closed under products")

    def project(self, x: Element) -> Element:
        """GNS-orthogonal projection onto the span."""
        g = self._factor @ x.vec()
        proj = self._g_basis @ (self._g_basis.conj().T @ g)
        return Element.from_vec(
            self.ambient.structure, np.linalg.solve(self._factor, proj)
        )

    def contains(self, x: Element, tol: float = TOL_SPAN) -> bool:
        return self._residual(x) <= tol * max(1.0, x.op_norm())

    def __repr__(self) -> str:
        return f"Subalgebra(dim={self.dim} of {self.ambient.structure.dims})"


def fixed_point_algebra(space: NcSpace, maps, tol: float = TOL_SPAN) -> Subalgebra:
    """Joint fixed subspace {x : m(x) = x for every m}, certified as an algebra.

    Computed as the null space of the stacked matrices (M_m - I).  Closure
    failure signals that an input was not an automorphism.
    """
    n = space.structure.vec_dim
    eye = np.eye(n)
    stacked = np.vstack([q.matrix - eye for q in maps])
    if stacked.size == 0:
        stacked = np.zeros((1, n), dtype=complex)
    _, s, vh = np.linalg.svd(stacked)
    s = np.concatenate([s, np.zeros(n - len(s))])
    null_mask = s < tol * max(1.0, s[0] if len(s) else 1.0)
    basis_vecs = vh.conj().T[:, null_mask]
    if basis_vecs.shape[1] == 0:
        raise ClosureError("fixed subspace is trivial; unital maps always fix 1")
    elements = [
        Element.from_vec(space.structure, basis_vecs[:, j])
        for j in range(basis_vecs.shape[1])
    ]
    return Subalgebra.from_span(space, elements, tol=tol)


def conditional_expectation(
    space: NcSpace, sub: Subalgebra, tol: float = TOL_SPAN
) -> CpMap:
    """The state-preserving conditional expectation onto a subalgebra.

    Requires the subalgebra to be invariant under the modular flow (checked
    through the log-rho commutator); without that invariance no
    state-preserving expectation exists and the call is rejected.  The map
    itself is the GNS-orthogonal projection onto the span.
    """
    gen = modular_generator_matrix(space)
    scale = max(1.0, float(np.max(np.abs(gen))))
    for b in sub.basis:
        moved = Element.from_vec(space.structure, gen @ b.vec())
        if sub._residual(moved) > tol * scale:
            raise StationarityError(
                "subalgebra is not invariant under the modular flow; "
                "no state-preserving expectation exists"
            )
    f = sub._factor
    proj_g = sub._g_basis @ sub._g_basis.conj().T
    m = np.linalg.solve(f, proj_g @ f)
    return CpMap(space, space, m)
