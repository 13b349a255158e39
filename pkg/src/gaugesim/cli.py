"""Batch experiment runner.

Reads one JSON config describing a model, cover, scenario and output sink,
executes it, and emits JSON-lines records (CSV for observables on request,
CSV always for bench timings). Given identical (config, seed) the emitted
JSON bytes are identical run to run; wall-clock timings therefore appear
only in bench output and logs, never in records.

Exit codes: 0 all checks passed, 1 config error, 2 tolerance/assertion
failure, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ConfigError, ContractError, DivergenceError, GaugeSimError
from .gauge import (
    GaugeState,
    IntegratorConfig,
    evolve,
    init_gauge_state,
)
from .hamiltonian import LocalHamiltonian, build_model, pauli_on
from .lattice import Patch, PatchCover, cover_from_config, embed_operator
from .measure import apply_measurement, measurement_probabilities, site_projectors
from .circuits import audit_lightcone, brickwork, circuit_reference, run_circuit
from .reference import reference_gauge_state, schrodinger_evolve

log = logging.getLogger("gaugesim")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_TOLERANCE = 2
EXIT_DIVERGED = 3

SCENARIOS = ("evolve", "validate", "circuit", "measure", "bench")


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    """Hash of the experiment description (the output sink does not count)."""
    cfg = {k: v for k, v in cfg.items() if k != "output"}
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------


@dataclass
class Observable:
    obs_id: str
    patch: Patch
    op: np.ndarray
    sites: tuple[int, ...]
    labels: str


@dataclass
class Experiment:
    raw: dict
    scenario: str
    n_sites: int
    cover: PatchCover
    hml: LocalHamiltonian
    psi0: np.ndarray
    mode: str
    integrator: IntegratorConfig
    observables: list[Observable]
    times: list[float]
    seed: int
    tolerance: float
    out_path: str | None
    out_format: str
    hash: str = ""
    circuit_cfg: dict = field(default_factory=dict)
    measure_cfg: dict = field(default_factory=dict)
    bench_cfg: dict = field(default_factory=dict)


def _fail(path: str, message: str) -> ConfigError:
    return ConfigError(f"config field '{path}': {message}")


def _initial_state(spec, n: int) -> np.ndarray:
    dim = 2**n
    if spec is None or spec == "plus":
        return np.full(dim, 2 ** (-n / 2), dtype=np.complex128)
    if spec == "zero":
        psi = np.zeros(dim, dtype=np.complex128)
        psi[0] = 1.0
        return psi
    if isinstance(spec, dict) and "bitstring" in spec:
        bits = spec["bitstring"]
        if len(bits) != n or set(bits) - {"0", "1"}:
            raise _fail("initial_state.bitstring", f"need {n} characters of 0/1")
        index = sum(int(b) << i for i, b in enumerate(bits))
        psi = np.zeros(dim, dtype=np.complex128)
        psi[index] = 1.0
        return psi
    raise _fail("initial_state", f"unrecognized value {spec!r}")


def _parse_observables(specs, cover: PatchCover) -> list[Observable]:
    out = []
    for idx, spec in enumerate(specs):
        path = f"observables[{idx}]"
        if not isinstance(spec, dict):
            raise _fail(path, "must be an object")
        try:
            labels = str(spec["pauli"]).upper()
            sites = tuple(int(s) for s in spec["sites"])
        except KeyError as exc:
            raise _fail(path, f"missing key {exc.args[0]!r}") from None
        if len(labels) != len(sites):
            raise _fail(path, f"{len(labels)} Pauli labels for {len(sites)} sites")
        host = next(
            (p for p in cover.patches if set(sites) <= set(p.sites)), None
        )
        if host is None:
            raise _fail(path, f"no cover patch contains sites {list(sites)}")
        obs_id = str(spec.get("id") or "".join(f"{l}{s}" for l, s in zip(labels, sites)))
        try:
            op = pauli_on(labels, sites, host)
        except ContractError as exc:
            raise _fail(path, str(exc)) from None
        out.append(Observable(obs_id=obs_id, patch=host, op=op, sites=sites, labels=labels))
    ids = [o.obs_id for o in out]
    if len(set(ids)) != len(ids):
        raise _fail("observables", "duplicate observable ids")
    return out


def parse_config(raw: dict, overrides: dict | None = None) -> Experiment:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    cfg = dict(raw)
    for key, value in (overrides or {}).items():
        if value is not None:
            if key in ("dt", "mode"):
                cfg.setdefault("integrator", {})
                cfg["integrator"] = dict(cfg.get("integrator") or {})
                cfg["integrator"][key] = value
            else:
                cfg[key] = value

    scenario = cfg.get("scenario")
    if scenario not in SCENARIOS:
        raise _fail("scenario", f"must be one of {list(SCENARIOS)}, got {scenario!r}")

    model = cfg.get("model")
    if not isinstance(model, dict) or "name" not in model:
        raise _fail("model", "must be an object with a 'name'")
    try:
        n_sites = int(cfg["n_sites"])
    except KeyError:
        raise _fail("n_sites", "is required") from None
    if n_sites < 1:
        raise _fail("n_sites", "must be >= 1")

    try:
        hml = build_model(model["name"], n_sites, model.get("params"))
    except (ContractError, TypeError) as exc:
        raise _fail("model", str(exc)) from None
    try:
        cover = cover_from_config(cfg.get("cover") or {}, n_sites)
    except ContractError as exc:
        raise _fail("cover", str(exc)) from None
    if cover != hml.cover:
        raise _fail("cover", "does not match the cover implied by the model")

    integ = dict(cfg.get("integrator") or {})
    mode = integ.pop("mode", "generator")
    if mode not in ("generator", "direct"):
        raise _fail("integrator.mode", f"must be generator|direct, got {mode!r}")
    try:
        integrator = IntegratorConfig(
            dt=float(integ.pop("dt", 1e-3)),
            reunitarize_every=int(integ.pop("reunitarize_every", 100)),
            renormalize=bool(integ.pop("renormalize", False)),
        )
    except ContractError as exc:
        raise _fail("integrator", str(exc)) from None
    if integ:
        raise _fail("integrator", f"unknown keys {sorted(integ)}")

    times = [float(t) for t in cfg.get("times", [])]
    if times != sorted(times):
        raise _fail("times", "must be sorted ascending")
    if any(t < 0 for t in times):
        raise _fail("times", "must be nonnegative")

    psi0 = _initial_state(cfg.get("initial_state"), n_sites)
    observables = _parse_observables(cfg.get("observables", []), cover)

    out_cfg = dict(cfg.get("output") or {})
    out_format = str(out_cfg.get("format", "jsonl"))
    if out_format == "json":  # accepted alias: records are JSON lines
        out_format = "jsonl"
    if out_format not in ("jsonl", "csv"):
        raise _fail("output.format", f"must be json|jsonl|csv, got {out_format!r}")

    exp = Experiment(
        raw=cfg,
        scenario=scenario,
        n_sites=n_sites,
        cover=cover,
        hml=hml,
        psi0=psi0,
        mode=mode,
        integrator=integrator,
        observables=observables,
        times=times,
        seed=int(cfg.get("seed", 0)),
        tolerance=float(cfg.get("tolerance", 1e-6)),
        out_path=out_cfg.get("path"),
        out_format=out_format,
        circuit_cfg=dict(cfg.get("circuit") or {}),
        measure_cfg=dict(cfg.get("measure") or {}),
        bench_cfg=dict(cfg.get("bench") or {}),
    )
    exp.hash = config_hash(cfg)

    if scenario in ("evolve", "validate") and not times:
        raise _fail("times", f"scenario {scenario!r} needs at least one time")
    if scenario in ("evolve", "validate") and not observables:
        raise _fail("observables", f"scenario {scenario!r} needs observables")
    if scenario == "circuit" and int(exp.circuit_cfg.get("depth", 0)) < 1:
        raise _fail("circuit.depth", "must be >= 1")
    if scenario == "measure":
        if "site" not in exp.measure_cfg:
            raise _fail("measure.site", "is required")
    if scenario == "bench" and not exp.bench_cfg.get("sizes"):
        raise _fail("bench.sizes", "is required")
    return exp


# ---------------------------------------------------------------------------
# Record emission
# ---------------------------------------------------------------------------


class RecordWriter:
    def __init__(self, exp: Experiment, stream: io.TextIOBase):
        self.exp = exp
        self.stream = stream
        self.format = exp.out_format
        self._csv = csv.writer(stream) if self.format == "csv" else None
        if self._csv is not None:
            self._csv.writerow(
                ["type", "time", "id", "re", "im", "oracle_re", "oracle_im", "gap"]
            )

    def emit(self, record: dict) -> None:
        record = dict(record)
        record["config_hash"] = self.exp.hash
        record["seed"] = self.exp.seed
        if self._csv is not None:
            self._csv.writerow(
                [
                    record.get("type"),
                    record.get("time"),
                    record.get("id"),
                    record.get("re"),
                    record.get("im"),
                    record.get("oracle_re"),
                    record.get("oracle_im"),
                    record.get("gap"),
                ]
            )
        else:
            self.stream.write(canonical_json(record) + "\n")


def _header_record(exp: Experiment) -> dict:
    return {
        "type": "header",
        "schema": "gaugesim/v1",
        "scenario": exp.scenario,
        "n_sites": exp.n_sites,
        "model": exp.raw.get("model", {}).get("name"),
        "mode": exp.mode,
        "dt": exp.integrator.dt,
    }


def _defect_record(
    state: GaugeState, time: float | None = None, include_cocycle: bool = True
) -> dict:
    d = state.diagnostics(include_cocycle=include_cocycle)
    fields = d.as_dict()
    if not include_cocycle:
        fields.pop("cocycle")  # not computed, do not report a fake zero
    return {
        "type": "defects",
        "time": state.time if time is None else time,
        "steps": state.steps,
        **fields,
    }


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------


def _run_evolve(exp: Experiment, writer: RecordWriter, with_oracle: bool) -> int:
    writer.emit(_header_record(exp))
    state = init_gauge_state(exp.psi0, exp.cover, mode=exp.mode, hamiltonian=exp.hml)
    max_gap = 0.0
    for t in exp.times:
        state = evolve(state, exp.hml, t, exp.integrator)
        oracle_psi = (
            schrodinger_evolve(exp.hml, exp.psi0, t) if with_oracle else None
        )
        for obs in exp.observables:
            value = state.local_expectation(obs.patch, obs.op)
            record = {
                "type": "validation" if with_oracle else "observable",
                "time": t,
                "id": obs.obs_id,
                "re": value.real,
                "im": value.imag,
            }
            if with_oracle:
                ref_op = embed_operator(obs.op, obs.patch, exp.n_sites)
                ref_val = complex(np.vdot(oracle_psi, ref_op @ oracle_psi))
                gap = abs(value - ref_val)
                record.update(
                    oracle_re=ref_val.real, oracle_im=ref_val.imag, gap=gap
                )
                max_gap = max(max_gap, gap)
            writer.emit(record)
        writer.emit(_defect_record(state, time=t))
    status = "pass" if (not with_oracle or max_gap <= exp.tolerance) else "fail"
    writer.emit(
        {
            "type": "summary",
            "status": status,
            "max_gap": max_gap if with_oracle else None,
            "tolerance": exp.tolerance if with_oracle else None,
        }
    )
    return EXIT_OK if status == "pass" else EXIT_TOLERANCE


def _run_circuit(exp: Experiment, writer: RecordWriter) -> int:
    writer.emit(_header_record(exp))
    depth = int(exp.circuit_cfg.get("depth"))
    support_tol = float(exp.circuit_cfg.get("support_tol", 1e-12))
    circuit = brickwork(exp.n_sites, depth, gate_source=exp.seed)
    state = init_gauge_state(exp.psi0, exp.cover, mode=exp.mode)
    state = run_circuit(state, circuit)
    audit_patches = [
        Patch(p) for p in exp.circuit_cfg.get("audit_patches", [])
    ] or list(exp.cover.patches)
    all_ok = True
    for patch in audit_patches:
        audit = audit_lightcone(state, patch, depth, tol=support_tol)
        all_ok = all_ok and audit.ok
        writer.emit(
            {
                "type": "audit",
                "patch": list(patch.sites),
                "depth": depth,
                "allowed_sites": list(audit.allowed_sites),
                "frame_support": list(audit.frame_support),
                "violations": list(audit.violations),
                "margins": list(audit.margins),
                "ok": audit.ok,
            }
        )
    # cross-check local observables against the exact gate-product reference
    ref = circuit_reference(circuit, exp.cover, exp.psi0)
    max_gap = 0.0
    for obs in exp.observables:
        value = state.local_expectation(obs.patch, obs.op)
        ref_op = embed_operator(obs.op, obs.patch, exp.n_sites)
        ref_val = complex(
            np.vdot(ref.psi_schrodinger, ref_op @ ref.psi_schrodinger)
        )
        gap = abs(value - ref_val)
        max_gap = max(max_gap, gap)
        writer.emit(
            {
                "type": "validation",
                "time": float(depth),
                "id": obs.obs_id,
                "re": value.real,
                "im": value.imag,
                "oracle_re": ref_val.real,
                "oracle_im": ref_val.imag,
                "gap": gap,
            }
        )
    writer.emit(
        _defect_record(state, time=float(depth), include_cocycle=exp.n_sites <= 8)
    )
    tol = float(exp.circuit_cfg.get("tolerance", 1e-8))
    ok = all_ok and max_gap <= tol
    writer.emit(
        {
            "type": "summary",
            "status": "pass" if ok else "fail",
            "max_gap": max_gap,
            "tolerance": tol,
            "audits_ok": all_ok,
        }
    )
    return EXIT_OK if ok else EXIT_TOLERANCE


def _run_measure(exp: Experiment, writer: RecordWriter) -> int:
    writer.emit(_header_record(exp))
    site = int(exp.measure_cfg["site"])
    basis = str(exp.measure_cfg.get("basis", "Z"))
    t = float(exp.measure_cfg.get("time", exp.times[-1] if exp.times else 0.0))
    host_spec = exp.measure_cfg.get("patch")
    if host_spec is not None:
        host = Patch(host_spec)
        if host not in exp.cover:
            raise _fail("measure.patch", f"{host} is not a cover patch")
    else:
        host = next(p for p in exp.cover.patches if site in p)
    ks = site_projectors(host, site, basis=basis)
    state = init_gauge_state(exp.psi0, exp.cover, mode=exp.mode, hamiltonian=exp.hml)
    if t > 0:
        state = evolve(state, exp.hml, t, exp.integrator)
    probs = measurement_probabilities(state, ks)
    # oracle probabilities from the globally-evolved wavefunction
    psi_s = schrodinger_evolve(exp.hml, exp.psi0, t)
    gaps = []
    for k, e in enumerate(ks.operators):
        e_glob = embed_operator(e, ks.patch, exp.n_sites)
        p_ref = float(np.vdot(psi_s, e_glob.conj().T @ e_glob @ psi_s).real)
        gaps.append(abs(probs[k] - p_ref))
    state, record = apply_measurement(state, ks, rng=exp.seed)
    writer.emit(
        {
            "type": "measurement",
            "time": t,
            "patch": list(host.sites),
            "site": site,
            "basis": basis,
            "probabilities": [float(p) for p in probs],
            "probability_gaps": gaps,
            "outcome": record.outcome,
            "outcome_probability": record.probability,
        }
    )
    for obs in exp.observables:
        value = state.local_expectation(obs.patch, obs.op)
        writer.emit(
            {
                "type": "observable",
                "time": t,
                "id": obs.obs_id,
                "re": value.real,
                "im": value.imag,
            }
        )
    writer.emit(_defect_record(state, time=t))
    tol = float(exp.measure_cfg.get("tolerance", 1e-8))
    ok = max(gaps) <= tol
    writer.emit(
        {
            "type": "summary",
            "status": "pass" if ok else "fail",
            "max_gap": max(gaps),
            "tolerance": tol,
        }
    )
    return EXIT_OK if ok else EXIT_TOLERANCE


def _run_bench(exp: Experiment) -> int:
    sizes = [int(n) for n in exp.bench_cfg["sizes"]]
    steps = int(exp.bench_cfg.get("steps", 20))
    model = exp.raw["model"]
    rows = [("n", "mode", "steps", "seconds_per_step", "oracle_seconds")]
    for n in sizes:
        hml = build_model(model["name"], n, model.get("params"))
        psi0 = _initial_state(exp.raw.get("initial_state"), n)
        t_end = steps * exp.integrator.dt
        t0 = time.perf_counter()
        reference_gauge_state(hml, hml.cover, psi0, t_end)
        oracle_seconds = time.perf_counter() - t0
        for mode in ("generator", "direct"):
            state = init_gauge_state(psi0, hml.cover, mode=mode, hamiltonian=hml)
            t0 = time.perf_counter()
            state = evolve(state, hml, t_end, exp.integrator)
            per_step = (time.perf_counter() - t0) / max(state.steps, 1)
            rows.append((n, mode, state.steps, f"{per_step:.6e}", f"{oracle_seconds:.6e}"))
            log.info("bench n=%d mode=%s: %s s/step", n, mode, f"{per_step:.3e}")
    text = "\n".join(",".join(str(c) for c in row) for row in rows) + "\n"
    if exp.out_path:
        with open(exp.out_path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gaugesim",
        description="Run local-wavefunction dynamics experiments from a JSON config.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SCENARIOS:
        p = sub.add_parser(name, help=f"run a {name} scenario config")
        p.add_argument("--config", required=True, help="path to the JSON config")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="output path (default: stdout)")
        p.add_argument("--format", choices=("json", "jsonl", "csv"), default=None)
        p.add_argument("--dt", type=float, default=None, help="override integrator dt")
        p.add_argument(
            "--mode", choices=("generator", "direct"), default=None,
            help="override integration mode",
        )
    return parser


def _load_raw_config(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("GAUGESIM_LOG", "WARNING").upper(),
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        raw = _load_raw_config(args.config)
        raw["scenario"] = raw.get("scenario", args.command)
        if raw["scenario"] != args.command:
            raise ConfigError(
                f"config declares scenario {raw['scenario']!r} but the "
                f"{args.command!r} subcommand was invoked"
            )
        overrides = {
            "seed": args.seed,
            "dt": args.dt,
            "mode": args.mode,
        }
        if args.out is not None:
            raw.setdefault("output", {})
            raw["output"] = dict(raw.get("output") or {})
            raw["output"]["path"] = args.out
        if args.format is not None:
            raw.setdefault("output", {})
            raw["output"] = dict(raw.get("output") or {})
            raw["output"]["format"] = args.format
        exp = parse_config(raw, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if exp.scenario == "bench":
            return _run_bench(exp)
        if exp.out_path:
            stream = open(exp.out_path, "w", newline="")
        else:
            stream = sys.stdout
        try:
            writer = RecordWriter(exp, stream)
            if exp.scenario == "evolve":
                return _run_evolve(exp, writer, with_oracle=False)
            if exp.scenario == "validate":
                return _run_evolve(exp, writer, with_oracle=True)
            if exp.scenario == "circuit":
                return _run_circuit(exp, writer)
            if exp.scenario == "measure":
                return _run_measure(exp, writer)
            raise ConfigError(f"unhandled scenario {exp.scenario!r}")
        finally:
            if exp.out_path:
                stream.close()
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GaugeSimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TOLERANCE


if __name__ == "__main__":
    sys.exit(main())
