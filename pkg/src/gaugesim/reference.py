"""Exact reference dynamics for cross-validation.

Everything here is deliberately global and simple: closed-form propagators
from eigendecompositions for time-independent Hamiltonians, fine-step RK4 on
the linear equations of motion otherwise. These quantities are the oracle
against which the locally-integrated dynamics is checked, so clarity wins
over speed throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .hamiltonian import LocalHamiltonian
from .integrate import rk4_step, time_grid
from .lattice import Patch, PatchCover, embed_operator
from .linalg import as_state, expm_hermitian, frobenius_distance

DEFAULT_REFERENCE_DT = 1e-4


@dataclass(frozen=True)
class ReferenceBundle:
    """Globally-computed gauge variables at one time.

    `complements` holds, for each patch, the propagator generated by the
    Hamiltonian terms that do not touch the patch; it relates the per-patch
    wavefunctions to the global one: psi_patch = complement^dag psi_global,
    frame = complement^dag propagator.
    """

    cover: PatchCover
    time: float
    propagator: np.ndarray
    complements: dict[Patch, np.ndarray]
    psi_schrodinger: np.ndarray
    frames: dict[Patch, np.ndarray]
    psi: dict[Patch, np.ndarray]

    def connection(self, a: Patch, b: Patch) -> np.ndarray:
        """complement_a^dag complement_b, the exact frame connection."""
        return self.complements[a].conj().T @ self.complements[b]


@dataclass(frozen=True)
class InteractionReference:
    """Interaction-picture data for one patch: H = h0 + h1 with h1 the patch neighborhood."""

    h0: np.ndarray
    h1: np.ndarray
    u0: np.ndarray
    psi_interaction: np.ndarray


def _require_normalized(psi0) -> np.ndarray:
    psi0 = as_state(psi0)
    norm = np.linalg.norm(psi0)
    if abs(norm - 1.0) > 1e-10:
        raise ContractError(f"initial state is not normalized (norm {norm!r})")
    return psi0


def global_propagator(hml: LocalHamiltonian, t: float, dt: float | None = None) -> np.ndarray:
    """U with psi(t) = U psi(0); closed form when H is time-independent."""
    if not hml.is_time_dependent:
        return expm_hermitian(hml.total(0.0), t)
    u = np.eye(hml.cover.dim, dtype=np.complex128)
    (u,) = _integrate_generated([u], [lambda tau: hml.total(tau)], t, dt)
    return u


def _integrate_generated(mats, generators, t_end, dt):
    """Integrate d/dt M_k = -i G_k(t) M_k from 0 to t_end with RK4."""
    dt = DEFAULT_REFERENCE_DT if dt is None else float(dt)

    def deriv(tau, ys):
        return [-1j * gen(tau) @ y for gen, y in zip(generators, ys)]

    t = 0.0
    ys = list(mats)
    for h in time_grid(0.0, t_end, dt):
        ys = rk4_step(ys, t, h, deriv)
        t += h
    return ys


def schrodinger_evolve(
    hml: LocalHamiltonian, psi0, t: float, dt: float | None = None
) -> np.ndarray:
    """psi(t) from the global linear evolution of the full chain."""
    psi0 = _require_normalized(psi0)
    if not hml.is_time_dependent:
        return expm_hermitian(hml.total(0.0), t) @ psi0
    dt = DEFAULT_REFERENCE_DT if dt is None else float(dt)

    def deriv(tau, ys):
        return [-1j * (hml.total(tau) @ ys[0])]

    psi = psi0.copy()
    clock = 0.0
    for h in time_grid(0.0, t, dt):
        (psi,) = rk4_step([psi], clock, h, deriv)
        clock += h
    return psi


def reference_gauge_state(
    hml: LocalHamiltonian,
    cover: PatchCover,
    psi0,
    t: float,
    dt: float | None = None,
) -> ReferenceBundle:
    """All per-patch reference quantities at time t, from global propagation."""
    if cover is None:
        cover = hml.cover
    if cover != hml.cover:
        raise ContractError("cover does not match the Hamiltonian's cover")
    psi0 = _require_normalized(psi0)
    patches = list(cover.patches)
    if not hml.is_time_dependent:
        h_full = hml.total(0.0)
        propagator = expm_hermitian(h_full, t)
        complements = {
            p: expm_hermitian(h_full - hml.neighborhood(p, 0.0), t) for p in patches
        }
    else:
        dim = cover.dim
        eye = np.eye(dim, dtype=np.complex128)
        mats = [eye.copy() for _ in range(len(patches) + 1)]
        gens = [lambda tau: hml.total(tau)]
        for p in patches:
            gens.append(
                lambda tau, _p=p: hml.total(tau) - hml.neighborhood(_p, tau)
            )
        mats = _integrate_generated(mats, gens, t, dt)
        propagator = mats[0]
        complements = dict(zip(patches, mats[1:]))
    psi_s = propagator @ psi0
    frames = {p: complements[p].conj().T @ propagator for p in patches}
    psi = {p: complements[p].conj().T @ psi_s for p in patches}
    return ReferenceBundle(
        cover=cover,
        time=float(t),
        propagator=propagator,
        complements=complements,
        psi_schrodinger=psi_s,
        frames=frames,
        psi=psi,
    )


def heisenberg_expectation(
    hml: LocalHamiltonian,
    psi0,
    ops: list[tuple[Patch, np.ndarray]],
    t: float,
    dt: float | None = None,
) -> complex:
    """<psi0| U^dag (A_1 A_2 ...) U |psi0> with the global propagator U."""
    psi0 = _require_normalized(psi0)
    n = hml.n_sites
    dim = hml.cover.dim
    psi_t = global_propagator(hml, t, dt) @ psi0
    product = np.eye(dim, dtype=np.complex128)
    for patch, op in ops:
        op = np.asarray(op, dtype=np.complex128)
        if op.shape[0] != dim:
            op = embed_operator(op, patch, n)
        product = product @ op
    return complex(np.vdot(psi_t, product @ psi_t))


def interaction_reference(
    hml: LocalHamiltonian,
    patch: Patch,
    psi0,
    t: float,
    dt: float | None = None,
) -> InteractionReference:
    """Interaction picture with the interacting part set to the patch neighborhood.

    The free propagator then coincides with the patch's complement propagator,
    and the interaction-picture wavefunction with the patch's local one.
    """
    if patch not in hml.cover:
        raise ContractError(f"{patch} is not a patch of the cover")
    psi0 = _require_normalized(psi0)
    h1 = hml.neighborhood(patch, 0.0)
    h0 = hml.total(0.0) - h1
    if not hml.is_time_dependent:
        u0 = expm_hermitian(h0, t)
    else:
        eye = np.eye(hml.cover.dim, dtype=np.complex128)
        (u0,) = _integrate_generated(
            [eye],
            [lambda tau: hml.total(tau) - hml.neighborhood(patch, tau)],
            t,
            dt,
        )
    psi_t = schrodinger_evolve(hml, psi0, t, dt)
    psi_i = u0.conj().T @ psi_t
    # wiring check: the complement propagator obeys the same equation as u0
    bundle_complement = (
        expm_hermitian(hml.total(0.0) - hml.neighborhood(patch, 0.0), t)
        if not hml.is_time_dependent
        else None
    )
    if bundle_complement is not None:
        gap = frobenius_distance(bundle_complement, u0)
        if gap > 1e-9:
            raise ContractError(
                f"complement propagator and free propagator disagree ({gap:.3e})"
            )
    return InteractionReference(h0=h0, h1=h1, u0=u0, psi_interaction=psi_i)
