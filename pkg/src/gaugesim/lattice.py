"""Spatial patches, patch covers, and embedding of patch-local operators.

Site convention: a chain of n qubits, sites numbered 0..n-1, with site s
carrying bit weight 2^s in the global basis index (see `linalg`). A patch is
a nonempty sorted set of sites; a cover is a list of patches whose union is
every site. Patch-local operators use the same convention restricted to the
patch: the smallest site in the patch is the least significant bit of the
patch-local index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError
from .linalg import as_operator


@dataclass(frozen=True, order=True)
class Patch:
    """A nonempty set of lattice sites, with value semantics."""

    sites: tuple[int, ...]

    def __init__(self, sites: Iterable[int]):
        sites = tuple(sorted(set(int(s) for s in sites)))
        if not sites:
            raise ContractError("a patch must contain at least one site")
        if sites[0] < 0:
            raise ContractError(f"negative site index in patch {sites}")
        object.__setattr__(self, "sites", sites)

    def __len__(self) -> int:
        return len(self.sites)

    def __iter__(self):
        return iter(self.sites)

    def __contains__(self, site: int) -> bool:
        return site in self.sites

    def overlaps(self, other: "Patch") -> bool:
        return bool(set(self.sites) & set(other.sites))

    @property
    def dim(self) -> int:
        """Hilbert-space dimension of the patch."""
        return 2 ** len(self.sites)

    def __repr__(self) -> str:
        return f"Patch{self.sites}"


class PatchCover:
    """An ordered list of patches covering all sites, plus overlap structure."""

    def __init__(self, n_sites: int, patches: Sequence[Patch | Iterable[int]]):
        self.n_sites = int(n_sites)
        self.patches: tuple[Patch, ...] = tuple(
            p if isinstance(p, Patch) else Patch(p) for p in patches
        )
        if self.n_sites < 1:
            raise ContractError("cover needs at least one site")
        if len(set(self.patches)) != len(self.patches):
            raise ContractError("duplicate patches in cover")
        covered: set[int] = set()
        for p in self.patches:
            if p.sites[-1] >= self.n_sites:
                raise ContractError(f"{p} exceeds n_sites={self.n_sites}")
            covered.update(p.sites)
        if covered != set(range(self.n_sites)):
            missing = sorted(set(range(self.n_sites)) - covered)
            raise ContractError(f"patches do not cover sites {missing}")
        self._index = {p: i for i, p in enumerate(self.patches)}
        # adjacency by patch index; every patch overlaps itself
        self._adjacent: list[tuple[int, ...]] = [
            tuple(j for j, q in enumerate(self.patches) if p.overlaps(q))
            for p in self.patches
        ]

    @property
    def dim(self) -> int:
        return 2**self.n_sites

    def __len__(self) -> int:
        return len(self.patches)

    def __iter__(self):
        return iter(self.patches)

    def __contains__(self, patch: Patch) -> bool:
        return patch in self._index

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, PatchCover)
            and self.n_sites == other.n_sites
            and set(self.patches) == set(other.patches)
        )

    def __hash__(self):
        return hash((self.n_sites, frozenset(self.patches)))

    def index(self, patch: Patch) -> int:
        try:
            return self._index[patch]
        except KeyError:
            raise ContractError(f"{patch} is not a patch of this cover") from None

    def overlapping(self, patch: Patch) -> tuple[Patch, ...]:
        """All cover patches sharing a site with `patch` (including itself)."""
        return tuple(self.patches[j] for j in self._adjacent[self.index(patch)])

    def overlapping_indices(self, i: int) -> tuple[int, ...]:
        return self._adjacent[i]

    def overlap_pairs(self) -> list[tuple[int, int]]:
        """Index pairs (i, j), i < j, of distinct overlapping patches."""
        return [
            (i, j)
            for i in range(len(self.patches))
            for j in self._adjacent[i]
            if i < j
        ]

    def __repr__(self) -> str:
        return f"PatchCover(n_sites={self.n_sites}, patches={list(self.patches)})"


def nn_pair_cover(n: int) -> PatchCover:
    """Patches (i, i+1) for i = 0..n-2."""
    if n < 2:
        raise ContractError(f"nearest-neighbour pair cover needs n >= 2, got {n}")
    return PatchCover(n, [Patch((i, i + 1)) for i in range(n - 1)])


def single_site_cover(n: int) -> PatchCover:
    """One patch per site; pairs of patches never overlap."""
    if n < 1:
        raise ContractError(f"single-site cover needs n >= 1, got {n}")
    return PatchCover(n, [Patch((i,)) for i in range(n)])


def cover_from_config(spec: dict, n_sites: int) -> PatchCover:
    """Build a cover from its config-file form."""
    scheme = spec.get("scheme", "nn_pair")
    if scheme == "nn_pair":
        return nn_pair_cover(n_sites)
    if scheme == "single_site":
        return single_site_cover(n_sites)
    if scheme == "explicit":
        return PatchCover(n_sites, [Patch(p) for p in spec["patches"]])
    raise ContractError(f"unknown cover scheme {scheme!r}")


def cover_to_config(cover: PatchCover) -> dict:
    return {"scheme": "explicit", "patches": [list(p.sites) for p in cover.patches]}


# ---------------------------------------------------------------------------
# Embedding and support detection
# ---------------------------------------------------------------------------


def _site_tuple(where: Patch | Iterable[int]) -> tuple[int, ...]:
    return where.sites if isinstance(where, Patch) else Patch(where).sites


def apply_local(op, where: Patch | Iterable[int], n: int, target, side: str = "left") -> np.ndarray:
    """Multiply by an embedded patch-local operator without materializing it.

    side="left" computes embed(op) @ target for a vector or matrix target;
    side="right" computes target @ embed(op) for a matrix target. Cost scales
    as 4^n * 2^k instead of 8^n for a dense product.
    """
    sites = _site_tuple(where)
    op = as_operator(op)
    k = len(sites)
    if op.shape[0] != 2**k:
        raise ContractError(f"operator dim {op.shape[0]} != 2^{k} for sites {sites}")
    if sites[-1] >= n:
        raise ContractError(f"sites {sites} exceed n={n}")
    target = np.asarray(target, dtype=np.complex128)
    if side == "right":
        if target.ndim != 2:
            raise ContractError("side='right' needs a matrix target")
        return apply_local(op.T, sites, n, target.T, side="left").T
    if side != "left":
        raise ContractError(f"side must be 'left' or 'right', got {side!r}")

    dim = 2**n
    if target.shape[0] != dim:
        raise ContractError(f"target dim {target.shape[0]} != 2^{n}")
    cols = 1 if target.ndim == 1 else target.shape[1]
    # axis t of the [2]*n row view holds site n-1-t; op axis j holds sites[k-1-j]
    src_axes = [n - 1 - s for s in reversed(sites)]
    tensor = target.reshape([2] * n + ([cols] if target.ndim == 2 else []))
    tensor = np.moveaxis(tensor, src_axes, range(k))
    shape = tensor.shape
    out = op @ tensor.reshape(2**k, -1)
    out = np.moveaxis(out.reshape(shape), range(k), src_axes)
    return out.reshape(target.shape)


def embed_operator(op, where: Patch | Iterable[int], n: int) -> np.ndarray:
    """Tensor a patch-local operator with the identity on all other sites."""
    sites = _site_tuple(where)
    op = as_operator(op)
    k = len(sites)
    if op.shape[0] != 2**k:
        raise ContractError(f"operator dim {op.shape[0]} != 2^{k} for sites {sites}")
    if sites[-1] >= n:
        raise ContractError(f"sites {sites} exceed n={n}")
    rest = [s for s in range(n) if s not in sites]
    kr = np.kron(op, np.eye(2 ** len(rest), dtype=np.complex128))
    # kron row axes: op sites descending, then rest sites descending
    order = list(reversed(sites)) + list(reversed(rest))
    # result axis t must hold site n-1-t
    perm = [order.index(n - 1 - t) for t in range(n)]
    tensor = kr.reshape([2] * (2 * n))
    tensor = tensor.transpose(perm + [n + p for p in perm])
    return np.ascontiguousarray(tensor.reshape(2**n, 2**n))


def site_identity_defects(m) -> dict[int, float]:
    """Per-site Frobenius distance from M to the nearest identity_s (x) M'.

    The nearest factorized operator has M' = partial trace over site s divided
    by 2; the distance is computed from the four site-s blocks of M.
    """
    m = as_operator(m)
    dim = m.shape[0]
    n = dim.bit_length() - 1
    if 2**n != dim:
        raise ContractError(f"operator dim {dim} is not a power of two")
    defects: dict[int, float] = {}
    tensor = m.reshape([2] * (2 * n))
    for s in range(n):
        row_ax = n - 1 - s
        col_ax = 2 * n - 1 - s
        blocks = np.moveaxis(tensor, (row_ax, col_ax), (0, 1))
        off = np.linalg.norm(blocks[0, 1]) ** 2 + np.linalg.norm(blocks[1, 0]) ** 2
        diag = 0.5 * np.linalg.norm(blocks[0, 0] - blocks[1, 1]) ** 2
        defects[s] = float(np.sqrt(off + diag))
    return defects


def operator_support(m, tol: float = 1e-10) -> set[int]:
    """Sites on which M fails to act as the identity factor, within tol."""
    return {s for s, d in site_identity_defects(m).items() if d > tol}
