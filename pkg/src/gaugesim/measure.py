"""Local generalized measurements and their propagation to every patch.

A measurement is specified by Kraus operators on one patch. Outcome
probabilities and the collapsed wavefunction on that patch are computed
locally; every other patch is then updated by transporting the collapsed
wavefunction through the stored connections, which is where the global
character of collapse reappears. Connections themselves are untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .gauge import GENERATOR, GaugeState
from .lattice import Patch, apply_local
from .linalg import as_operator

PAULI_BASES = ("Z", "X")


@dataclass(frozen=True)
class KrausSet:
    """Measurement operators on one patch; squares must sum to the identity."""

    patch: Patch
    operators: tuple[np.ndarray, ...]

    def __init__(self, patch: Patch, operators):
        operators = tuple(as_operator(e) for e in operators)
        if not operators:
            raise ContractError("a Kraus set needs at least one operator")
        for e in operators:
            if e.shape[0] != patch.dim:
                raise ContractError(
                    f"Kraus operator dim {e.shape[0]} != {patch.dim} for {patch}"
                )
        object.__setattr__(self, "patch", patch)
        object.__setattr__(self, "operators", operators)

    def __len__(self) -> int:
        return len(self.operators)


@dataclass(frozen=True)
class KrausCheck:
    ok: bool
    defect: float
    tol: float


@dataclass(frozen=True)
class MeasurementRecord:
    outcome: int
    probability: float


def validate_kraus(ks: KrausSet, tol: float = 1e-10) -> KrausCheck:
    """Completeness check: || sum_k E_k^dag E_k - 1 ||_F against tol."""
    acc = np.zeros((ks.patch.dim, ks.patch.dim), dtype=np.complex128)
    for e in ks.operators:
        acc += e.conj().T @ e
    defect = float(np.linalg.norm(acc - np.eye(ks.patch.dim)))
    return KrausCheck(ok=defect <= tol, defect=defect, tol=tol)


def _require_complete(ks: KrausSet, tol: float = 1e-10) -> None:
    check = validate_kraus(ks, tol)
    if not check.ok:
        raise ContractError(
            f"Kraus operators do not resolve the identity (defect {check.defect:.3e})"
        )


def _collapsed_vectors(state: GaugeState, ks: KrausSet) -> list[np.ndarray]:
    """E_k applied to the measured patch's wavefunction (picture-dressed)."""
    patch = ks.patch
    psi = state.psi[patch]
    d = state.dressing_of(patch)
    w = psi if d is None else d.conj().T @ psi
    out = []
    for e in ks.operators:
        v = apply_local(e, patch, state.n_sites, w)
        out.append(v if d is None else d @ v)
    return out


def measurement_probabilities(
    state: GaugeState, ks: KrausSet, consistency_tol: float = 1e-6
) -> np.ndarray:
    """P_k = <psi_I0 | E_k^dag E_k | psi_I0> for the measured patch I0."""
    if ks.patch not in state.cover:
        raise ContractError(f"{ks.patch} is not a patch of the cover")
    _require_complete(ks)
    defect = state.diagnostics(include_cocycle=False).consistency
    if defect > consistency_tol:
        raise ContractError(
            f"state is inconsistent (defect {defect:.3e} > {consistency_tol:.1e}); "
            "measurement probabilities would be ambiguous"
        )
    return np.array(
        [float(np.linalg.norm(v)) ** 2 for v in _collapsed_vectors(state, ks)]
    )


def _sample_outcome(probs: np.ndarray, rng: np.random.Generator) -> int:
    r = rng.random() * float(np.sum(probs))
    acc = 0.0
    for k, p in enumerate(probs):
        acc += p
        if r < acc:
            return k
    return len(probs) - 1


def apply_measurement(
    state: GaugeState,
    ks: KrausSet,
    outcome: int | None = None,
    rng: np.random.Generator | int | None = None,
    min_probability: float = 1e-12,
    consistency_tol: float = 1e-6,
) -> tuple[GaugeState, MeasurementRecord]:
    """Collapse on the measured patch and transport the result everywhere.

    `outcome` forces a specific Kraus operator; otherwise one is sampled from
    the outcome distribution using the supplied seed or generator.
    """
    probs = measurement_probabilities(state, ks, consistency_tol=consistency_tol)
    if outcome is None:
        if rng is None:
            raise ContractError("provide either an outcome or a seeded generator")
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        outcome = _sample_outcome(probs, rng)
    outcome = int(outcome)
    if not 0 <= outcome < len(ks):
        raise ContractError(f"outcome {outcome} out of range for {len(ks)} operators")
    p = float(probs[outcome])
    if p <= min_probability:
        raise ContractError(
            f"outcome {outcome} has probability {p:.3e} <= {min_probability:.1e}; "
            "the post-measurement state is undefined"
        )
    collapsed = _collapsed_vectors(state, ks)[outcome]
    collapsed = collapsed / np.linalg.norm(collapsed)
    patches = list(state.cover.patches)
    i0 = state.cover.index(ks.patch)
    if state.mode == GENERATOR:
        new_base = state.frames[ks.patch].conj().T @ collapsed
        psi = {p_: state.frames[p_] @ new_base for p_ in patches}
        psi[ks.patch] = collapsed
        new_state = state._replace(psi=psi, base=new_base)
    else:
        # breadth-first transport along stored connections, rooted at the
        # measured patch; tree edges keep the consistency identity exact
        psi = {ks.patch: collapsed}
        graph: dict[int, list[int]] = {i: [] for i in range(len(patches))}
        for i, j in state.connections:
            graph[i].append(j)
            graph[j].append(i)
        frontier = [i0]
        seen = {i0}
        while frontier:
            nxt = []
            for u in frontier:
                for v in graph[u]:
                    if v in seen:
                        continue
                    seen.add(v)
                    psi[patches[v]] = state._stored_connection(v, u) @ psi[patches[u]]
                    nxt.append(v)
            frontier = nxt
        if len(seen) != len(patches):
            unreachable = [str(patches[i]) for i in range(len(patches)) if i not in seen]
            raise ContractError(
                "collapse cannot be transported to patches "
                + ", ".join(unreachable)
                + " (no stored connection path)"
            )
        new_state = state._replace(psi=psi)
    return new_state, MeasurementRecord(outcome=outcome, probability=p)


def site_projectors(patch: Patch, site: int, basis: str = "Z") -> KrausSet:
    """Projective measurement of one site of a patch in the Z or X basis."""
    if site not in patch:
        raise ContractError(f"site {site} is not in {patch}")
    if basis not in PAULI_BASES:
        raise ContractError(f"basis must be one of {PAULI_BASES}, got {basis!r}")
    if basis == "Z":
        p0 = np.array([[1, 0], [0, 0]], dtype=np.complex128)
        p1 = np.array([[0, 0], [0, 1]], dtype=np.complex128)
    else:
        p0 = 0.5 * np.array([[1, 1], [1, 1]], dtype=np.complex128)
        p1 = 0.5 * np.array([[1, -1], [-1, 1]], dtype=np.complex128)
    ops = []
    for proj in (p0, p1):
        op = np.ones((1, 1), dtype=np.complex128)
        for s in reversed(patch.sites):
            op = np.kron(op, proj if s == site else np.eye(2))
        ops.append(op)
    return KrausSet(patch, ops)
