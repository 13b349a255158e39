"""Per-patch wavefunctions with unitary connections, and their local dynamics.

The dynamical content of the picture implemented here: every cover patch I
carries a full-dimension wavefunction psi_I, and patches are related by
unitary connections. Expectation values of operators supported inside one
patch need only that patch's wavefunction; operator products across patches
insert connections between them. Time evolution couples a patch only to the
Hamiltonian terms that touch it, with those terms conjugated by connections
("dressed"), which makes the equations of motion local but nonlinear.

Two integration modes are provided:

* ``generator`` (default): the state variable is one frame unitary per patch,
  advanced by dU_I/dt = -i H_eff(I) U_I. Connections are formed as
  U_I U_J^dag, so the transitivity identity U_IJ U_JK = U_IK holds to
  roundoff by construction, and psi_I = U_I base is a cached product.
* ``direct``: integrates the coupled equations for psi_I and the connections
  of overlapping pairs verbatim. Redundancy among the variables then drifts
  at the integrator's order, which `diagnostics` measures.

Within a step, every per-patch derivative reads the same frozen stage
snapshot, so evaluation order is immaterial; states are never mutated in
place and observable queries are read-only.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace as dc_replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractError, DivergenceError
from .hamiltonian import LocalHamiltonian
from .integrate import rk4_step, time_grid
from .lattice import Patch, PatchCover, apply_local, embed_operator, operator_support
from .linalg import as_state, polar_unitary, require_unitary, unitarity_defect

GENERATOR = "generator"
DIRECT = "direct"


@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed-step RK4 settings."""

    dt: float = 1e-3
    scheme: str = "rk4"
    reunitarize_every: int = 100  # 0 disables drift correction
    renormalize: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ContractError(f"dt must be positive and finite, got {self.dt}")
        if self.scheme != "rk4":
            raise ContractError(f"unsupported scheme {self.scheme!r}")
        if self.reunitarize_every < 0:
            raise ContractError("reunitarize_every must be >= 0")


class GaugeTransform:
    """A unitary frame change per patch; missing patches get the identity."""

    def __init__(self, lambdas: Mapping[Patch, np.ndarray]):
        self.lambdas = {
            p: require_unitary(m, what=f"gauge factor on {p}")
            for p, m in lambdas.items()
        }

    def factor(self, patch: Patch, n_sites: int) -> np.ndarray:
        m = self.lambdas.get(patch)
        if m is None:
            return np.eye(2**n_sites, dtype=np.complex128)
        if m.shape[0] == patch.dim and patch.dim != 2**n_sites:
            return embed_operator(m, patch, n_sites)
        if m.shape[0] != 2**n_sites:
            raise ContractError(
                f"gauge factor on {patch} has dim {m.shape[0]}, "
                f"expected {patch.dim} or {2 ** n_sites}"
            )
        return m


@dataclass(frozen=True)
class DefectReport:
    """Worst-case violations of the picture's built-in identities."""

    consistency: float  # max over pairs ||U_IJ psi_J - psi_I||
    cocycle: float  # max over triples ||U_IJ U_JK - U_IK||_F
    unitarity: float  # max ||U^dag U - 1||_F over frames/connections
    norm: float  # max | ||psi_I|| - 1 |

    def as_dict(self) -> dict:
        return {
            "consistency": self.consistency,
            "cocycle": self.cocycle,
            "unitarity": self.unitarity,
            "norm": self.norm,
        }


class GaugeState:
    """Local wavefunctions plus frame/connection unitaries on a patch cover.

    Treat instances as immutable: evolution and transformation functions
    return new states. Observable queries are read-only.
    """

    def __init__(
        self,
        cover: PatchCover,
        mode: str,
        time: float,
        steps: int,
        psi: dict[Patch, np.ndarray],
        frames: dict[Patch, np.ndarray] | None = None,
        base: np.ndarray | None = None,
        connections: dict[tuple[int, int], np.ndarray] | None = None,
        dressing: dict[Patch, np.ndarray] | None = None,
    ):
        if mode not in (GENERATOR, DIRECT):
            raise ContractError(f"unknown mode {mode!r}")
        self.cover = cover
        self.mode = mode
        self.time = float(time)
        self.steps = int(steps)
        self.psi = psi
        self.frames = frames
        self.base = base
        self.connections = connections
        self.dressing = dressing or {}

    # -- construction helpers -------------------------------------------

    def _replace(self, **kw) -> "GaugeState":
        fields = dict(
            cover=self.cover,
            mode=self.mode,
            time=self.time,
            steps=self.steps,
            psi=self.psi,
            frames=self.frames,
            base=self.base,
            connections=self.connections,
            dressing=self.dressing,
        )
        fields.update(kw)
        return GaugeState(**fields)

    # -- basic queries -----------------------------------------------------

    @property
    def n_sites(self) -> int:
        return self.cover.n_sites

    @property
    def dim(self) -> int:
        return self.cover.dim

    def dressing_of(self, patch: Patch) -> np.ndarray | None:
        """Accumulated frame change relative to the plain-operator gauge, or None."""
        return self.dressing.get(patch)

    def connection(self, a: Patch, b: Patch) -> np.ndarray:
        """The unitary transporting patch b's wavefunction to patch a's frame."""
        ia = self.cover.index(a)
        ib = self.cover.index(b)
        if ia == ib:
            return np.eye(self.dim, dtype=np.complex128)
        if self.mode == GENERATOR:
            return self.frames[a] @ self.frames[b].conj().T
        return self._direct_connection(ia, ib)

    def _stored_connection(self, i: int, j: int) -> np.ndarray | None:
        if i == j:
            return np.eye(self.dim, dtype=np.complex128)
        key = (min(i, j), max(i, j))
        c = self.connections.get(key)
        if c is None:
            return None
        return c if i < j else c.conj().T

    def _pair_graph(self) -> dict[int, list[int]]:
        graph: dict[int, list[int]] = {i: [] for i in range(len(self.cover))}
        for i, j in self.connections:
            graph[i].append(j)
            graph[j].append(i)
        return graph

    def _direct_connection(self, ia: int, ib: int) -> np.ndarray:
        c = self._stored_connection(ia, ib)
        if c is not None:
            return c
        path = self._shortest_path(ia, ib)
        out = self._stored_connection(path[0], path[1])
        for u, v in zip(path[1:], path[2:]):
            out = out @ self._stored_connection(u, v)
        return out

    def _shortest_path(self, start: int, goal: int) -> list[int]:
        graph = self._pair_graph()
        prev = {start: start}
        queue = [start]
        while queue:
            nxt: list[int] = []
            for u in queue:
                for v in graph[u]:
                    if v not in prev:
                        prev[v] = u
                        nxt.append(v)
            queue = nxt
            if goal in prev:
                break
        if goal not in prev:
            raise ContractError(
                f"patches {self.cover.patches[start]} and {self.cover.patches[goal]} "
                "are not linked by any chain of stored connections"
            )
        path = [goal]
        while path[-1] != start:
            path.append(prev[path[-1]])
        path.reverse()
        return path

    # -- observables -----------------------------------------------------

    def _dressed_apply(self, patch: Patch, op: np.ndarray, vec: np.ndarray) -> np.ndarray:
        """Apply the patch's picture operator for Schroedinger operator `op` to vec."""
        op = np.asarray(op, dtype=np.complex128)
        d = self.dressing_of(patch)
        w = vec if d is None else d.conj().T @ vec
        if op.shape[0] == patch.dim and patch.dim != self.dim:
            w = apply_local(op, patch, self.n_sites, w)
        elif op.shape[0] == self.dim:
            support = operator_support(op)
            if not support <= set(patch.sites):
                raise ContractError(
                    f"operator support {sorted(support)} leaks outside {patch}"
                )
            w = op @ w
        else:
            raise ContractError(
                f"operator dim {op.shape[0]} matches neither {patch} nor the chain"
            )
        return w if d is None else d @ w

    def local_expectation(self, patch: Patch, op: np.ndarray) -> complex:
        """<psi_I| A |psi_I> for A supported inside patch I (Schroedinger form)."""
        if patch not in self.cover:
            raise ContractError(f"{patch} is not a patch of the cover")
        psi = self.psi[patch]
        return complex(np.vdot(psi, self._dressed_apply(patch, op, psi)))

    def correlator(self, chain: Sequence[tuple[Patch, np.ndarray]]) -> complex:
        """<psi_{I_1}| A_1 U_{I_1 I_2} A_2 ... A_m |psi_{I_m}> for patch-supported A_k."""
        if not chain:
            raise ContractError("correlator needs at least one (patch, operator) pair")
        patches = [p for p, _ in chain]
        for p in patches:
            if p not in self.cover:
                raise ContractError(f"{p} is not a patch of the cover")
        vec = self._dressed_apply(patches[-1], chain[-1][1], self.psi[patches[-1]])
        for (patch, op), nxt in zip(reversed(chain[:-1]), reversed(patches[1:])):
            vec = self.connection(patch, nxt) @ vec
            vec = self._dressed_apply(patch, op, vec)
        return complex(np.vdot(self.psi[patches[0]], vec))

    # -- diagnostics -------------------------------------------------------

    def _consistency_pairs(self) -> Iterable[tuple[int, int]]:
        if self.mode == GENERATOR:
            count = len(self.cover)
            return ((i, j) for i in range(count) for j in range(i + 1, count))
        return iter(self.connections.keys())

    def diagnostics(self, include_cocycle: bool = True, max_triples: int = 40) -> DefectReport:
        patches = self.cover.patches
        consistency = 0.0
        for i, j in self._consistency_pairs():
            if self.mode == GENERATOR:
                w = self.frames[patches[i]] @ (
                    self.frames[patches[j]].conj().T @ self.psi[patches[j]]
                )
            else:
                w = self._stored_connection(i, j) @ self.psi[patches[j]]
            consistency = max(
                consistency, float(np.linalg.norm(w - self.psi[patches[i]]))
            )
        unitarity = 0.0
        mats = self.frames.values() if self.mode == GENERATOR else self.connections.values()
        for m in mats:
            unitarity = max(unitarity, unitarity_defect(m))
        norm = max(
            abs(float(np.linalg.norm(v)) - 1.0) for v in self.psi.values()
        )
        cocycle = 0.0
        if include_cocycle and len(patches) >= 3:
            triples = itertools.islice(
                itertools.combinations(range(len(patches)), 3), max_triples
            )
            for i, j, k in triples:
                try:
                    c_ij = self.connection(patches[i], patches[j])
                    c_jk = self.connection(patches[j], patches[k])
                    c_ik = self.connection(patches[i], patches[k])
                except ContractError:
                    continue  # disconnected pair graph: no loop to test
                cocycle = max(
                    cocycle, float(np.linalg.norm(c_ij @ c_jk - c_ik))
                )
        return DefectReport(
            consistency=consistency,
            cocycle=cocycle,
            unitarity=unitarity,
            norm=norm,
        )


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------


def required_pairs(cover: PatchCover, hml: LocalHamiltonian | None) -> set[tuple[int, int]]:
    """Connection pairs the direct-mode equations of motion will read."""
    pairs = set(cover.overlap_pairs())
    if hml is not None:
        for gt in hml.gen_terms:
            targets = [
                i
                for i, p in enumerate(cover.patches)
                if gt.union_sites & set(p.sites)
            ]
            for i in targets:
                for p in gt.patches:
                    j = cover.index(p)
                    if i != j:
                        pairs.add((min(i, j), max(i, j)))
    return pairs


def init_gauge_state(
    psi0,
    cover: PatchCover,
    mode: str = GENERATOR,
    hamiltonian: LocalHamiltonian | None = None,
) -> GaugeState:
    """The t=0 state: every patch carries psi0, all frames and connections trivial."""
    psi0 = as_state(psi0)
    if psi0.shape[0] != cover.dim:
        raise ContractError(f"psi0 dim {psi0.shape[0]} != 2^{cover.n_sites}")
    norm = float(np.linalg.norm(psi0))
    if abs(norm - 1.0) > 1e-10:
        raise ContractError(f"psi0 must be normalized, got norm {norm!r}")
    psi = {p: psi0.copy() for p in cover.patches}
    eye = np.eye(cover.dim, dtype=np.complex128)
    if mode == GENERATOR:
        return GaugeState(
            cover,
            GENERATOR,
            0.0,
            0,
            psi,
            frames={p: eye.copy() for p in cover.patches},
            base=psi0.copy(),
        )
    if mode == DIRECT:
        conns = {key: eye.copy() for key in sorted(required_pairs(cover, hamiltonian))}
        return GaugeState(cover, DIRECT, 0.0, 0, psi, connections=conns)
    raise ContractError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# Effective (connection-dressed) neighborhood Hamiltonian
# ---------------------------------------------------------------------------


def _dressed_global_term(state: GaugeState, hml: LocalHamiltonian, i: int) -> np.ndarray:
    term = hml.terms[i]
    mat = hml.embedded_term(i)
    d = state.dressing_of(term.patch)
    if d is not None:
        mat = d @ mat @ d.conj().T
    return mat


def _dressed_global_factor(state: GaugeState, hml: LocalHamiltonian, g: int, k: int) -> np.ndarray:
    mat = hml.embedded_factor(g, k)
    d = state.dressing_of(hml.gen_terms[g].patches[k])
    if d is not None:
        mat = d @ mat @ d.conj().T
    return mat


def effective_hamiltonian(
    state: GaugeState, hml: LocalHamiltonian, patch: Patch
) -> np.ndarray:
    """Connection-dressed sum of Hamiltonian terms overlapping `patch`.

    This is the generator of the patch's local time evolution: each nearby
    term is transported into the patch's frame by the connections. At t=0 it
    reduces to the plain neighborhood sum.
    """
    if state.cover != hml.cover:
        raise ContractError("state and Hamiltonian use different covers")
    if patch not in state.cover:
        raise ContractError(f"{patch} is not a patch of the cover")
    t = state.time
    out = np.zeros((state.dim, state.dim), dtype=np.complex128)
    for i in hml.term_indices_overlapping(patch):
        term = hml.terms[i]
        c = state.connection(patch, term.patch)
        out += term.coefficient(t) * (
            c @ _dressed_global_term(state, hml, i) @ c.conj().T
        )
    for g in hml.gen_indices_overlapping(patch):
        gt = hml.gen_terms[g]
        prod = None
        for k in range(len(gt.patches)):
            c = state.connection(patch, gt.patches[k])
            w = c @ _dressed_global_factor(state, hml, g, k) @ c.conj().T
            prod = w if prod is None else prod @ w
        out += gt.coeff(t) * prod
    return out


# ---------------------------------------------------------------------------
# Time stepping
# ---------------------------------------------------------------------------


class _GeneratorContext:
    """Precomputed structure for the frame-evolution right-hand side.

    The stage derivative is dU_I = -i U_I R_I with
    R_I = sum_(terms on J ov I) V_J^dag H_J V_J
        + sum_(products ov I) h prod_k V_K^dag tau_k V_K,
    V_J = D_J^dag U_J. R_I is assembled from per-patch sandwiches shared by
    all target patches.
    """

    def __init__(self, state: GaugeState, hml: LocalHamiltonian):
        cover = state.cover
        self.n = cover.n_sites
        self.patches = list(cover.patches)
        self.order = {p: i for i, p in enumerate(self.patches)}
        self.dress = [state.dressing_of(p) for p in self.patches]
        # group plain terms by carrying patch
        self.terms_by_patch: dict[int, list[int]] = {}
        for i, term in enumerate(hml.terms):
            self.terms_by_patch.setdefault(self.order[term.patch], []).append(i)
        self.static_local: dict[int, np.ndarray | None] = {}
        for j, idxs in self.terms_by_patch.items():
            if all(hml.terms[i].time_dependence is None for i in idxs):
                acc = sum(hml.terms[i].op for i in idxs)
                self.static_local[j] = np.asarray(acc, dtype=np.complex128)
            else:
                self.static_local[j] = None
        self.hml = hml
        self.gen_terms = [
            (g, [(self.order[p], f) for p, f in zip(gt.patches, gt.factors)])
            for g, gt in enumerate(hml.gen_terms)
        ]
        self.local_nbr: list[list[int]] = []
        self.gen_nbr: list[list[int]] = []
        for i, p in enumerate(self.patches):
            self.local_nbr.append(
                [j for j in self.terms_by_patch if self.patches[j].overlaps(p)]
            )
            psites = set(p.sites)
            self.gen_nbr.append(
                [
                    g
                    for g, gt in enumerate(hml.gen_terms)
                    if gt.union_sites & psites
                ]
            )

    def _term_local(self, j: int, t: float) -> np.ndarray:
        static = self.static_local[j]
        if static is not None:
            return static
        acc = None
        for i in self.terms_by_patch[j]:
            term = self.hml.terms[i]
            contrib = term.coefficient(t) * term.op
            acc = contrib if acc is None else acc + contrib
        return acc

    def deriv(self, t: float, frames: list[np.ndarray]) -> list[np.ndarray]:
        effective = [self.dress[i] is not None for i in range(len(frames))]
        views = [
            f if not eff else self.dress[i].conj().T @ f
            for i, (f, eff) in enumerate(zip(frames, effective))
        ]
        sandwiches: dict[int, np.ndarray] = {}
        for j in self.terms_by_patch:
            v = views[j]
            hv = apply_local(self._term_local(j, t), self.patches[j], self.n, v)
            sandwiches[j] = v.conj().T @ hv
        products: dict[int, np.ndarray] = {}
        for g, placed in self.gen_terms:
            prod = None
            for j, fac in placed:
                v = views[j]
                w = v.conj().T @ apply_local(fac, self.patches[j], self.n, v)
                prod = w if prod is None else prod @ w
            products[g] = prod
        derivs = []
        for i, frame in enumerate(frames):
            r = None
            for j in self.local_nbr[i]:
                r = sandwiches[j] if r is None else r + sandwiches[j]
            for g in self.gen_nbr[i]:
                contrib = self.hml.gen_terms[g].coeff(t) * products[g]
                r = contrib if r is None else r + contrib
            if r is None:
                derivs.append(np.zeros_like(frame))
            else:
                derivs.append(-1j * (frame @ r))
        return derivs


class _DirectContext:
    """Right-hand side for the verbatim psi/connection equations."""

    def __init__(self, state: GaugeState, hml: LocalHamiltonian):
        cover = state.cover
        self.n = cover.n_sites
        self.dim = cover.dim
        self.patches = list(cover.patches)
        self.order = {p: i for i, p in enumerate(self.patches)}
        self.keys = sorted(state.connections.keys())
        self.key_pos = {k: i for i, k in enumerate(self.keys)}
        self.hml = hml
        self.n_patches = len(self.patches)
        # dressed embedded terms, grouped by carrying patch
        self.terms_by_patch: dict[int, list[int]] = {}
        for i, term in enumerate(hml.terms):
            self.terms_by_patch.setdefault(self.order[term.patch], []).append(i)
        self.term_mats = [_dressed_global_term(state, hml, i) for i in range(len(hml.terms))]
        self.static_sum: dict[int, np.ndarray | None] = {}
        for j, idxs in self.terms_by_patch.items():
            if all(hml.terms[i].time_dependence is None for i in idxs):
                self.static_sum[j] = sum(self.term_mats[i] for i in idxs)
            else:
                self.static_sum[j] = None
        self.factor_mats = {
            (g, k): _dressed_global_factor(state, hml, g, k)
            for g, gt in enumerate(hml.gen_terms)
            for k in range(len(gt.patches))
        }
        self.local_nbr = [
            [j for j in self.terms_by_patch if self.patches[j].overlaps(p)]
            for p in self.patches
        ]
        self.gen_nbr = [
            [
                g
                for g, gt in enumerate(hml.gen_terms)
                if gt.union_sites & set(p.sites)
            ]
            for p in self.patches
        ]
        self.gen_patch_idx = [
            [self.order[p] for p in gt.patches] for gt in hml.gen_terms
        ]

    def conn(self, conns: list[np.ndarray], i: int, j: int) -> np.ndarray:
        if i == j:
            return np.eye(self.dim, dtype=np.complex128)
        key = (min(i, j), max(i, j))
        pos = self.key_pos.get(key)
        if pos is None:
            raise ContractError(
                f"direct mode is missing the connection for patches "
                f"{self.patches[key[0]]} and {self.patches[key[1]]}; "
                "initialize the state with the Hamiltonian"
            )
        c = conns[pos]
        return c if i < j else c.conj().T

    def _neighborhood(self, t: float, conns: list[np.ndarray], i: int) -> np.ndarray:
        out = np.zeros((self.dim, self.dim), dtype=np.complex128)
        for j in self.local_nbr[i]:
            static = self.static_sum[j]
            if static is None:
                static = sum(
                    self.hml.terms[k].coefficient(t) * self.term_mats[k]
                    for k in self.terms_by_patch[j]
                )
            if i == j:
                out += static
            else:
                c = self.conn(conns, i, j)
                out += c @ static @ c.conj().T
        for g in self.gen_nbr[i]:
            gt = self.hml.gen_terms[g]
            prod = None
            for k, jk in enumerate(self.gen_patch_idx[g]):
                fac = self.factor_mats[(g, k)]
                if i != jk:
                    c = self.conn(conns, i, jk)
                    fac = c @ fac @ c.conj().T
                prod = fac if prod is None else prod @ fac
            out += gt.coeff(t) * prod
        return out

    def deriv(self, t: float, y: list[np.ndarray]) -> list[np.ndarray]:
        psis = y[: self.n_patches]
        conns = y[self.n_patches :]
        h_eff = [self._neighborhood(t, conns, i) for i in range(self.n_patches)]
        d_psi = [-1j * (h_eff[i] @ psis[i]) for i in range(self.n_patches)]
        d_conn = [
            -1j * (h_eff[i] @ c) + 1j * (c @ h_eff[j])
            for (i, j), c in zip(self.keys, conns)
        ]
        return d_psi + d_conn


def _require_finite(arrays: Iterable[np.ndarray], time: float, steps: int) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise DivergenceError(
                f"integration diverged (non-finite values at t={time:.6g}, "
                f"step {steps}); reduce dt"
            )


def step(
    state: GaugeState, hml: LocalHamiltonian, config: IntegratorConfig
) -> GaugeState:
    """Advance one RK4 step of config.dt, returning a new state."""
    if state.cover != hml.cover:
        raise ContractError("state and Hamiltonian use different covers")
    if state.mode == DIRECT:
        missing = required_pairs(state.cover, hml) - set(state.connections)
        if missing:
            if state.steps == 0 and state.time == 0.0:
                eye = np.eye(state.dim, dtype=np.complex128)
                conns = dict(state.connections)
                for key in sorted(missing):
                    conns[key] = eye.copy()
                state = state._replace(connections=conns)
            else:
                raise ContractError(
                    "direct-mode state lacks connections required by this "
                    "Hamiltonian; initialize with init_gauge_state(..., hamiltonian=...)"
                )
    dt = config.dt
    patches = list(state.cover.patches)
    if state.mode == GENERATOR:
        ctx = _GeneratorContext(state, hml)
        frames = [state.frames[p] for p in patches]
        with np.errstate(invalid="ignore", over="ignore"):
            frames = rk4_step(frames, state.time, dt, ctx.deriv)
        new_steps = state.steps + 1
        _require_finite(frames, state.time + dt, new_steps)
        if config.reunitarize_every and new_steps % config.reunitarize_every == 0:
            frames = [polar_unitary(f) for f in frames]
        psi = {p: f @ state.base for p, f in zip(patches, frames)}
        if config.renormalize:
            psi = {p: v / np.linalg.norm(v) for p, v in psi.items()}
        new = state._replace(
            time=state.time + dt,
            steps=new_steps,
            psi=psi,
            frames=dict(zip(patches, frames)),
        )
    else:
        ctx = _DirectContext(state, hml)
        y = [state.psi[p] for p in patches] + [
            state.connections[k] for k in ctx.keys
        ]
        with np.errstate(invalid="ignore", over="ignore"):
            y = rk4_step(y, state.time, dt, ctx.deriv)
        psis = y[: len(patches)]
        conns = y[len(patches) :]
        new_steps = state.steps + 1
        _require_finite(y, state.time + dt, new_steps)
        if config.reunitarize_every and new_steps % config.reunitarize_every == 0:
            conns = [polar_unitary(c) for c in conns]
        if config.renormalize:
            psis = [v / np.linalg.norm(v) for v in psis]
        new = state._replace(
            time=state.time + dt,
            steps=new_steps,
            psi=dict(zip(patches, psis)),
            connections=dict(zip(ctx.keys, conns)),
        )
    return new


def evolve(
    state: GaugeState,
    hml: LocalHamiltonian,
    t_final: float,
    config: IntegratorConfig,
    callback: Callable[[GaugeState], None] | None = None,
) -> GaugeState:
    """Step from state.time to t_final (shortened final step if dt does not divide)."""
    for h in time_grid(state.time, t_final, config.dt):
        cfg = config if h == config.dt else dc_replace(config, dt=h)
        state = step(state, hml, cfg)
        if callback is not None:
            callback(state)
    return state


# ---------------------------------------------------------------------------
# Gauge transformations and commuting layers
# ---------------------------------------------------------------------------


def gauge_transform(state: GaugeState, transform: GaugeTransform) -> GaugeState:
    """Apply a per-patch unitary frame change; all physical quantities invariant."""
    n = state.n_sites
    patches = list(state.cover.patches)
    factors = {p: transform.factor(p, n) for p in patches}
    new_dressing = {}
    for p in patches:
        d = state.dressing_of(p)
        new_dressing[p] = factors[p] if d is None else factors[p] @ d
    if state.mode == GENERATOR:
        frames = {p: factors[p] @ state.frames[p] for p in patches}
        psi = {p: frames[p] @ state.base for p in patches}
        return state._replace(frames=frames, psi=psi, dressing=new_dressing)
    psi = {p: factors[p] @ state.psi[p] for p in patches}
    conns = {
        (i, j): factors[patches[i]] @ c @ factors[patches[j]].conj().T
        for (i, j), c in state.connections.items()
    }
    return state._replace(psi=psi, connections=conns, dressing=new_dressing)


def _commutation_check(
    cover: PatchCover, gates: Mapping[Patch, np.ndarray], tol: float
) -> None:
    items = sorted(gates.items(), key=lambda kv: kv[0])
    for (pa, ua), (pb, ub) in itertools.combinations(items, 2):
        shared = set(pa.sites) & set(pb.sites)
        if not shared:
            continue  # disjoint supports commute exactly
        union = Patch(sorted(set(pa.sites) | set(pb.sites)))
        k = len(union)
        eye = np.eye(2**k, dtype=np.complex128)
        # embed both gates into the union subspace to bound the commutator
        local_sites_a = [union.sites.index(s) for s in pa.sites]
        local_sites_b = [union.sites.index(s) for s in pb.sites]
        a = apply_local(ua, local_sites_a, k, eye)
        b = apply_local(ub, local_sites_b, k, eye)
        defect = float(np.linalg.norm(a @ b - b @ a))
        if defect > tol:
            raise ContractError(
                f"gates on {pa} and {pb} do not commute (defect {defect:.3e})"
            )


def apply_commuting_layer(
    state: GaugeState,
    gates: Mapping[Patch, np.ndarray],
    commutation_tol: float = 1e-10,
) -> GaugeState:
    """Apply one layer of mutually commuting patch-supported unitaries.

    Each patch overlapping a gate is updated by the product of nearby gates
    transported into its frame; connections between updated patches are
    conjugated accordingly. Patches away from every gate are untouched.
    """
    cover = state.cover
    checked: dict[Patch, np.ndarray] = {}
    for patch, op in gates.items():
        if patch not in cover:
            raise ContractError(f"gate patch {patch} is not a cover patch")
        op = require_unitary(op, what=f"gate on {patch}")
        if op.shape[0] != patch.dim:
            raise ContractError(
                f"gate on {patch} has dim {op.shape[0]}, expected {patch.dim}"
            )
        checked[patch] = op
    _commutation_check(cover, checked, commutation_tol)
    patches = list(cover.patches)
    n = state.n_sites
    gate_patches = sorted(checked.keys())
    if state.mode == GENERATOR:
        views = {}
        for gp in gate_patches:
            u = state.frames[gp]
            d = state.dressing_of(gp)
            views[gp] = u if d is None else d.conj().T @ u
        sandwiches = {
            gp: views[gp].conj().T @ apply_local(checked[gp], gp, n, views[gp])
            for gp in gate_patches
        }
        frames = {}
        for p in patches:
            w = None
            for gp in gate_patches:
                if gp.overlaps(p):
                    w = sandwiches[gp] if w is None else w @ sandwiches[gp]
            frames[p] = state.frames[p] if w is None else state.frames[p] @ w
        psi = {p: frames[p] @ state.base for p in patches}
        return state._replace(frames=frames, psi=psi)
    # direct mode: build the transported layer unitary per patch
    eye = np.eye(state.dim, dtype=np.complex128)
    layer_ops: list[np.ndarray | None] = []
    for i, p in enumerate(patches):
        w = None
        for gp in gate_patches:
            if not gp.overlaps(p):
                continue
            j = cover.index(gp)
            d = state.dressing_of(gp)
            if i == j:
                g_global = embed_operator(checked[gp], gp, n)
                if d is not None:
                    g_global = d @ g_global @ d.conj().T
                contrib = g_global
            else:
                c = state._stored_connection(i, j)
                if c is None:
                    c = state._direct_connection(i, j)
                if d is None:
                    contrib = apply_local(checked[gp], gp, n, c, side="right") @ c.conj().T
                else:
                    g_global = d @ embed_operator(checked[gp], gp, n) @ d.conj().T
                    contrib = c @ g_global @ c.conj().T
            w = contrib if w is None else w @ contrib
        layer_ops.append(w)
    psi = {
        p: (state.psi[p] if layer_ops[i] is None else layer_ops[i] @ state.psi[p])
        for i, p in enumerate(patches)
    }
    conns = {}
    for (i, j), c in state.connections.items():
        left = layer_ops[i]
        right = layer_ops[j]
        out = c
        if right is not None:
            out = out @ right.conj().T
        if left is not None:
            out = left @ out
        conns[(i, j)] = out
    return state._replace(psi=psi, connections=conns)
