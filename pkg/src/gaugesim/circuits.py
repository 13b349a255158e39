"""Layered commuting-gate circuits, brickwork builders, and light-cone audits."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError
from .gauge import GaugeState, apply_commuting_layer
from .hamiltonian import LocalHamiltonian, LocalTerm
from .lattice import (
    Patch,
    PatchCover,
    apply_local,
    operator_support,
    site_identity_defects,
)
from .linalg import expm_hermitian, random_unitary, require_unitary
from .reference import ReferenceBundle


@dataclass(frozen=True)
class Gate:
    """A unitary supported on one patch."""

    patch: Patch
    op: np.ndarray

    def __post_init__(self):
        op = require_unitary(self.op, what=f"gate on {self.patch}")
        if op.shape[0] != self.patch.dim:
            raise ContractError(
                f"gate dim {op.shape[0]} != {self.patch.dim} for {self.patch}"
            )
        object.__setattr__(self, "op", op)


class Circuit:
    """Ordered layers of gates; within a layer all gates must commute."""

    def __init__(self, n_sites: int, layers: Iterable[Iterable[Gate]]):
        self.n_sites = int(n_sites)
        self.layers: tuple[tuple[Gate, ...], ...] = tuple(
            tuple(layer) for layer in layers
        )
        for li, layer in enumerate(self.layers):
            patches = [g.patch for g in layer]
            if len(set(patches)) != len(patches):
                raise ContractError(f"layer {li} repeats a patch")
            for g in layer:
                if g.patch.sites[-1] >= self.n_sites:
                    raise ContractError(f"{g.patch} exceeds n_sites={self.n_sites}")
            self._check_layer_commutes(layer, li)

    def _check_layer_commutes(self, layer: Sequence[Gate], li: int, tol: float = 1e-12) -> None:
        for a, b in itertools.combinations(layer, 2):
            shared = set(a.patch.sites) & set(b.patch.sites)
            if not shared:
                continue
            union = sorted(set(a.patch.sites) | set(b.patch.sites))
            k = len(union)
            eye = np.eye(2**k, dtype=np.complex128)
            ma = apply_local(a.op, [union.index(s) for s in a.patch.sites], k, eye)
            mb = apply_local(b.op, [union.index(s) for s in b.patch.sites], k, eye)
            defect = float(np.linalg.norm(ma @ mb - mb @ ma))
            if defect > tol:
                raise ContractError(
                    f"layer {li}: gates on {a.patch} and {b.patch} do not commute "
                    f"(defect {defect:.3e})"
                )

    @property
    def depth(self) -> int:
        return len(self.layers)

    def layer_gates(self, i: int) -> dict[Patch, np.ndarray]:
        return {g.patch: g.op for g in self.layers[i]}

    def layer_unitary(self, i: int) -> np.ndarray:
        """The layer's global unitary (product of its embedded gates)."""
        u = np.eye(2**self.n_sites, dtype=np.complex128)
        for g in self.layers[i]:
            u = apply_local(g.op, g.patch, self.n_sites, u)
        return u

    def unitary(self) -> np.ndarray:
        """Full circuit unitary; layer 0 acts first."""
        u = np.eye(2**self.n_sites, dtype=np.complex128)
        for i in range(self.depth):
            for g in self.layers[i]:
                u = apply_local(g.op, g.patch, self.n_sites, u)
        return u


def brickwork(n: int, depth: int, gate_source: int | np.random.Generator = 0) -> Circuit:
    """Alternating even/odd nearest-neighbour pair layers of Haar-like gates.

    Layer l places gates on pairs (i, i+1) with i = l mod 2, l mod 2 + 2, ...
    The gates are drawn deterministically from the seed (or generator).
    """
    if n < 2:
        raise ContractError(f"brickwork needs n >= 2, got {n}")
    if depth < 1:
        raise ContractError(f"brickwork needs depth >= 1, got {depth}")
    rng = (
        gate_source
        if isinstance(gate_source, np.random.Generator)
        else np.random.default_rng(gate_source)
    )
    layers = []
    for layer_index in range(depth):
        offset = layer_index % 2
        layer = [
            Gate(Patch((i, i + 1)), random_unitary(4, rng))
            for i in range(offset, n - 1, 2)
        ]
        layers.append(layer)
    return Circuit(n, layers)


def run_circuit(state: GaugeState, circuit: Circuit) -> GaugeState:
    """Apply the circuit layer by layer as commuting-gate updates."""
    if circuit.n_sites != state.n_sites:
        raise ContractError(
            f"circuit is on {circuit.n_sites} sites, state on {state.n_sites}"
        )
    for i in range(circuit.depth):
        state = apply_commuting_layer(state, circuit.layer_gates(i))
    return state


# ---------------------------------------------------------------------------
# Exact circuit reference and Hamiltonian-schedule export
# ---------------------------------------------------------------------------


def circuit_reference(circuit: Circuit, cover: PatchCover, psi0) -> ReferenceBundle:
    """Reference gauge variables after a circuit, from global gate products.

    For each patch the complement propagator is the same circuit with every
    gate overlapping the patch removed; the full product gives the global
    propagator. All bundle quantities follow from those two.
    """
    if circuit.n_sites != cover.n_sites:
        raise ContractError("circuit and cover disagree on the number of sites")
    psi0 = np.asarray(psi0, dtype=np.complex128)
    dim = 2**circuit.n_sites
    propagator = circuit.unitary()
    complements = {}
    for p in cover.patches:
        u = np.eye(dim, dtype=np.complex128)
        for i in range(circuit.depth):
            for g in circuit.layers[i]:
                if not g.patch.overlaps(p):
                    u = apply_local(g.op, g.patch, circuit.n_sites, u)
        complements[p] = u
    psi_s = propagator @ psi0
    frames = {p: complements[p].conj().T @ propagator for p in cover.patches}
    psi = {p: complements[p].conj().T @ psi_s for p in cover.patches}
    return ReferenceBundle(
        cover=cover,
        time=float(circuit.depth),
        propagator=propagator,
        complements=complements,
        psi_schrodinger=psi_s,
        frames=frames,
        psi=psi,
    )


def gate_generator(u: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Hermitian K with u = exp(-i K), eigenphases in (-pi, pi]."""
    u = require_unitary(u, what="gate")
    evals, vecs = np.linalg.eig(u)
    vecs, _ = np.linalg.qr(vecs)  # restore orthonormality lost by eig
    phases = np.angle(evals)
    k = (vecs * (-phases)) @ vecs.conj().T
    k = 0.5 * (k + k.conj().T)
    check = float(np.linalg.norm(expm_hermitian(k, 1.0) - u))
    if check > tol:
        raise ContractError(
            f"could not extract a Hermitian generator (reconstruction error {check:.3e})"
        )
    return k


def as_layer_hamiltonians(circuit: Circuit, cover: PatchCover) -> list[LocalHamiltonian]:
    """One Hamiltonian per layer; evolving each for unit time reproduces the layer.

    Within a layer the gate generators commute, so exp(-i sum_J K_J) equals
    the product of the gates.
    """
    out = []
    for i in range(circuit.depth):
        terms = [
            LocalTerm(g.patch, gate_generator(g.op)) for g in circuit.layers[i]
        ]
        out.append(LocalHamiltonian(cover, terms))
    return out


# ---------------------------------------------------------------------------
# Light-cone audits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LightConePrediction:
    """Sites reachable from a patch in `depth` brickwork layers."""

    patch: Patch
    depth: int
    allowed_sites: frozenset[int]

    @classmethod
    def chain(cls, patch: Patch, depth: int, n: int) -> "LightConePrediction":
        allowed = {
            s
            for s in range(n)
            if min(abs(s - p) for p in patch.sites) <= depth
        }
        return cls(patch=patch, depth=depth, allowed_sites=frozenset(allowed))


@dataclass(frozen=True)
class LightConeAudit:
    """Measured operator supports of a patch's gauge variables vs the cone."""

    patch: Patch
    depth: int
    allowed_sites: tuple[int, ...]
    frame_support: tuple[int, ...]
    connection_supports: dict  # neighbour Patch -> tuple of sites
    site_defects: dict  # site -> identity defect of the frame
    violations: tuple[int, ...]  # support sites outside the cone
    margins: tuple[int, int]  # slack in sites on the (left, right) cone edge

    @property
    def ok(self) -> bool:
        return not self.violations


def audit_lightcone(
    state: GaugeState,
    patch: Patch,
    depth: int,
    tol: float = 1e-12,
    include_connections: bool = True,
) -> LightConeAudit:
    """Check that the patch's frame and connections stay inside the light cone."""
    if state.mode != "generator":
        raise ContractError("light-cone audits need generator mode (frames required)")
    if patch not in state.cover:
        raise ContractError(f"{patch} is not a patch of the cover")
    n = state.n_sites
    pred = LightConePrediction.chain(patch, depth, n)
    defects = site_identity_defects(state.frames[patch])
    support = {s for s, d in defects.items() if d > tol}
    violations = sorted(support - pred.allowed_sites)
    conn_supports = {}
    if include_connections:
        for other in state.cover.overlapping(patch):
            if other == patch:
                continue
            pair_allowed = pred.allowed_sites | LightConePrediction.chain(
                other, depth, n
            ).allowed_sites
            c_support = operator_support(state.connection(patch, other), tol)
            conn_supports[other] = tuple(sorted(c_support))
            violations.extend(sorted(c_support - pair_allowed))
    allowed_sorted = sorted(pred.allowed_sites)
    if support:
        lo, hi = min(support), max(support)
    else:
        lo, hi = patch.sites[0], patch.sites[-1]
    margins = (lo - allowed_sorted[0], allowed_sorted[-1] - hi)
    return LightConeAudit(
        patch=patch,
        depth=depth,
        allowed_sites=tuple(allowed_sorted),
        frame_support=tuple(sorted(support)),
        connection_supports=conn_supports,
        site_defects=defects,
        violations=tuple(sorted(set(violations))),
        margins=margins,
    )
