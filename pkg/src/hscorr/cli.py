"""Experiment runner: one subcommand per module, flat key=value configs, JSONL/CSV/manifest outputs.

Exit codes: 0 success, 2 configuration error, 3 precondition violation,
4 numeric assertion failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (ConfigError, DegenerateSamplingError, DenseRegimeError, NumericAssertionError,
                     PreconditionError)

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_PRECONDITION, EXIT_NUMERIC = 0, 2, 3, 4


def parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def format_value(value) -> str:
    return json.dumps(value, sort_keys=True)


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines; values are JSON where they parse, else bare strings."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {n}: empty key")
        out[key] = parse_value(value)
    return out


def format_config_text(params: dict) -> str:
    return "".join(f"{k} = {format_value(params[k])}\n" for k in sorted(params))


@dataclass
class RunConfig:
    command: str
    parameters: dict
    seed: int = 0
    output_path: str = "out"
    workers: int = 1

    def to_dict(self) -> dict:
        return {"command": self.command, "parameters": self.parameters, "seed": self.seed,
                "output_path": str(self.output_path), "workers": self.workers}


@dataclass
class Outcome:
    records: list = field(default_factory=list)
    table: list | None = None
    checks: dict = field(default_factory=dict)


# command schemas: key -> default; the default's type is the accepted type
HEAD_ON = {"x": [[0.0, 0.0], [3.0, 0.0]], "v": [[1.0, 0.0], [-1.0, 0.0]], "epsilon": 1.0}
SCHEMAS = {
    "flow": dict(HEAD_ON, t=2.0, direction="forward"),
    "jset": dict(HEAD_ON, t_prepare=2.0),
    "goodset": dict(HEAD_ON, t_prepare=2.0, m=2, eta=0.1),
    "badset": {"epsilon": 1e-3, "kappa": 0.5, "alpha": 0.05, "R": 2.0, "T": 4.0, "c_d": 1.0,
               "theta_exponent": None, "labels": ["I", "II", "III-", "IV-", "III+", "IV+", "V+", "VI+", "VII+"],
               "n_samples": 100000, "i_new": 0, "C": 1.0, "C_alpha": 1.0, "mode": "measure", "m": 3},
    "lemmas": {"d": 2, "rho_exponents": [1, 2, 3, 4, 5, 6, 7, 8], "n_samples": 200000, "line": "tangent",
               "n_reflect": 10000},
    "series": {"kind": "boltzmann", "x": [[0.2, 0.1]], "v": [[0.5, -0.3]], "t": 0.1, "k_max": 2, "n_mc": 20000,
               "epsilon": 0.01, "ell": 1.0, "m": 2, "beta": 1.0, "spatial_sigma": 1.0},
    "factorization": {"m": 3, "s": 4, "t_factor": 0.25, "n_probes": 8, "k_max": 2, "n_mc": 20000,
                      "epsilon": 0.05, "ell": 1.0},
    "chaos": {"N_list": [64, 256, 1024], "t": 0.5, "replicas": 30, "ell": 1.0, "kappa": 0.5, "R": 3.0,
              "bandwidth_scale": 0.5, "reference_n_mc": 20000, "reference_k_max": 2},
}


def _check_type(key: str, value, default):
    if default is None:
        if value is not None and not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number or null")
        return value
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, (int, float)):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        if ok and isinstance(default, int) and not isinstance(default, bool) and not float(value).is_integer():
            ok = False
        if ok and isinstance(default, int):
            value = int(value)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}")
    return value


def validate(command: str, params: dict) -> dict:
    if command not in SCHEMAS:
        raise ConfigError(f"unknown command {command!r}")
    schema = SCHEMAS[command]
    unknown = sorted(set(params) - set(schema))
    if unknown:
        raise ConfigError(f"unknown key(s) for {command}: {', '.join(unknown)}")
    out = {}
    for key, default in schema.items():
        out[key] = _check_type(key, params[key], default) if key in params else default
    return out


def _state(p: dict):
    from .dynamics import PhaseState
    x = np.asarray(p["x"], dtype=float)
    v = np.asarray(p["v"], dtype=float)
    if x.ndim != 2 or x.shape != v.shape:
        raise ConfigError("x and v must be equal-shaped lists of particle vectors")
    return PhaseState(x, v, float(p["epsilon"]))


def _prepared_state(p: dict):
    """Flow the configured state forward by t_prepare so it has a backward collision history."""
    from .dynamics import flow
    state = _state(p)
    if not state.is_valid():
        raise PreconditionError("particles overlap")
    return flow(state, p["t_prepare"])[0] if p["t_prepare"] > 0 else state


def run_flow(p: dict, seed: int, workers: int) -> Outcome:
    from .dynamics import BACKWARD, FORWARD, flow
    if p["direction"] not in (FORWARD, BACKWARD):
        raise ConfigError("direction must be forward or backward")
    state = _state(p)
    if not state.is_valid():
        raise PreconditionError("particles overlap")
    end, log = flow(state, p["t"], p["direction"])
    e0, e1 = state.energy(), end.energy()
    if abs(e1 - e0) > 1e-10 * max(e0, 1e-300):
        raise NumericAssertionError("energy not conserved")
    out = Outcome(checks={"energy_drift": abs(e1 - e0)})
    out.table = [["time", "i", "j"] + [f"omega_{a}" for a in range(state.d)]]
    for ev in log.events:
        out.records.append({"record": "event", **ev.to_dict()})
        out.table.append([ev.time, ev.pair[0], ev.pair[1], *ev.omega.tolist()])
    out.records.append({"record": "final_state", **end.to_dict(), "collisions": log.collision_count})
    return out


def run_jset(p: dict, seed: int, workers: int) -> Outcome:
    from .jset import jset
    state = _prepared_state(p)
    J = jset(state)
    out = Outcome(checks={"points": len(J)})
    out.table = [[f"x_{a}" for a in range(state.d)] + [f"v_{a}" for a in range(state.d)] + ["horizon"]]
    for n in range(len(J)):
        h = float(J.horizon[n])
        out.records.append({"x": J.x[n].tolist(), "v": J.v[n].tolist(), "horizon": h if math.isfinite(h) else None})
        out.table.append([*J.x[n].tolist(), *J.v[n].tolist(), h])
    return out


def run_goodset(p: dict, seed: int, workers: int) -> Outcome:
    from .goodsets import in_G, in_K, in_U, in_Uhat
    if p["m"] < 2 or p["eta"] <= 0:
        raise ConfigError("m must be >= 2 and eta positive")
    state = _prepared_state(p)
    rec = {"G": in_G(state, p["m"]), "Uhat": in_Uhat(state, p["eta"]), "K": in_K(state),
           "U": in_U(state, p["eta"]), "state": state.to_dict()}
    return Outcome(records=[rec], table=[["G", "Uhat", "K", "U"], [rec["G"], rec["Uhat"], rec["K"], rec["U"]]])


def colliding_base(epsilon: float, T: float, m: int = 3):
    """Head pair meeting at backward time T/2 plus one free tail particle."""
    from .badsets import Base
    from .dynamics import PhaseState, pair_colliding_backward
    pair = pair_colliding_backward([0.0, 0.0], [1.0, 0.0], [-1.0, 0.5], [1.0, -0.5], T / 2.0, epsilon)
    x = np.vstack([pair.x, [[1.0, 3.0]]])
    v = np.vstack([pair.v, [[0.3, -0.6]]])
    return Base.from_endpoint(PhaseState(x, v, epsilon), m=m)


def run_badset(p: dict, seed: int, workers: int) -> Outcome:
    from . import badsets
    p_ = badsets.default_scalings(p["epsilon"], p["kappa"], p["alpha"], p["R"], p["T"], c_d=p["c_d"],
                                  theta_exponent=p["theta_exponent"])
    unknown = set(p["labels"]) - set(badsets.LABELS)
    if unknown:
        raise ConfigError(f"unknown labels {sorted(unknown)}")
    base = colliding_base(p["epsilon"], p["T"], p["m"])
    out = Outcome(checks={"params": p_.to_dict()})
    if p["mode"] == "measure":
        est = badsets.estimate_all_labels(base, p_, p["i_new"], p["n_samples"], seed)
        out.table = [["label", "measure", "stderr", "bound"]]
        for label in list(p["labels"]) + ["pre", "post"]:
            if label in ("pre", "post"):
                bound = badsets.analytic_bound(p_, label, p["C"], p["C_alpha"])
            else:
                bound = badsets.label_bound(label, p_, p["C"], p["C_alpha"])
            e = est[label]
            out.records.append({"label": label, "params": p_.to_dict(), "measure": e.value,
                                "stderr": e.value_stderr, "bound": bound, "slope": None})
            out.table.append([label, e.value, e.value_stderr, bound])
    elif p["mode"] == "claim_ii":
        res = badsets.verify_claim_ii(base, p_, p["i_new"], p["n_samples"], seed)
        out.records.append({"record": "claim_ii", "params": p_.to_dict(), **res.to_dict()})
        out.table = [["fraction_good", "n_outside_B", "wilson_low", "wilson_high"],
                     [res.fraction_good, res.n_outside_B, *res.wilson]]
    else:
        raise ConfigError("mode must be measure or claim_ii")
    return out


def run_lemmas(p: dict, seed: int, workers: int) -> Outcome:
    from .geometry import (cylinder_cap_measure, loglog_slope, reflect_direction, reflect_direction_inverse,
                           sample_sphere, tangent_line)
    d = p["d"]
    if d < 2:
        raise ConfigError("d must be at least 2")
    rng = np.random.default_rng(seed)
    if p["line"] == "tangent":
        point, direction = tangent_line(d, rng)
    elif p["line"] == "random":
        point = sample_sphere(rng, 1, d)[0] * rng.random()
        direction = sample_sphere(rng, 1, d)[0]
    else:
        raise ConfigError("line must be tangent or random")
    rhos = [2.0 ** (-int(e)) for e in p["rho_exponents"]]
    ests = [cylinder_cap_measure(point, direction, r, p["n_samples"], [seed, n]) for n, r in enumerate(rhos)]
    slope = loglog_slope(rhos, [e.value for e in ests])
    out = Outcome(checks={"slope": slope})
    out.table = [["rho", "measure", "stderr", "slope"]]
    for r, e in zip(rhos, ests):
        out.records.append({"record": "cylinder", "rho": r, "measure": e.value, "stderr": e.value_stderr})
        out.table.append([r, e.value, e.value_stderr, slope])
    v = rng.standard_normal((p["n_reflect"], d))
    w = sample_sphere(rng, p["n_reflect"], d)
    w = np.where((np.sum(w * v, axis=1) > 0)[:, None], w, -w)
    back = reflect_direction_inverse(v, reflect_direction(v, w))
    err = float(np.max(np.abs(back - w)))
    out.records.append({"record": "reflection", "n": p["n_reflect"], "max_roundtrip_error": err})
    out.checks["reflection_error"] = err
    return out


def _kind(p: dict):
    from .pseudotraj import HierarchyKind
    d = len(p["x"][0])
    if p["kind"] == "boltzmann":
        return HierarchyKind.boltzmann(d, p["ell"])
    if p["kind"] == "enskog":
        return HierarchyKind.enskog(p["epsilon"], p["m"], d, p["ell"])
    if p["kind"] == "bbgky":
        return HierarchyKind.bbgky_at(p["epsilon"], d, p["ell"])
    raise ConfigError("kind must be boltzmann, enskog or bbgky")


def run_series(p: dict, seed: int, workers: int) -> Outcome:
    from .densities import GaussianProduct, TensorPower
    from .hierarchy import SeriesQuery, eval_series, lanford_time_proxy
    kind = _kind(p)
    Z = _state(p).with_epsilon(kind.diameter)
    d = Z.d
    data = TensorPower(GaussianProduct(p["beta"], (0.0,) * d, p["spatial_sigma"]))
    try:
        q = SeriesQuery(kind, Z.s, Z, p["t"], p["k_max"], p["n_mc"], seed)
    except ValueError as exc:
        if isinstance(exc, PreconditionError):
            raise
        raise ConfigError(str(exc)) from exc
    res = eval_series(q, data)
    out = Outcome(records=res.to_records(), checks={"lanford_proxy": lanford_time_proxy(data, d, p["ell"])})
    out.table = [["k", "estimate", "stderr", "magnitude"]]
    for r in out.records:
        out.table.append([r["k"], r["estimate"], r["stderr"], r["magnitude"]])
    return out


def factorization_data():
    from .densities import GaussianProduct, Mixture, PartialTensor, ProductMixture

    def g(c, u):
        return GaussianProduct(1.0, c, 1.0, u)
    head = ProductMixture((0.5, 0.5), ((g((0.5, 0.0), (0.5, 0.0)), g((-0.5, 0.0), (-0.5, 0.0))),
                                       (g((-0.5, 0.0), (0.0, 0.5)), g((0.5, 0.0), (0.0, -0.5)))))
    tail = Mixture((0.5, 0.5), (g((0.0, 0.3), (1.0, 0.0)), g((0.0, -0.3), (-1.0, 0.0))))
    return PartialTensor(head, tail)


def factorization_probes(n: int, s: int, epsilon: float, seed) -> list:
    """Probe points near the bulk of the partial-tensor data (head near its modes, tail near its drifts)."""
    from .dynamics import PhaseState
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        hx = rng.normal(size=(2, 2)) * 0.5 + np.array([[0.5, 0.0], [-0.5, 0.0]])
        hv = rng.normal(size=(2, 2)) * 0.7 + np.array([[0.5, 0.0], [-0.5, 0.0]])
        tx = rng.normal(size=(s - 2, 2)) * 0.7
        tv = rng.normal(size=(s - 2, 2)) * 0.7 + np.resize(np.array([[1.0, 0.0], [-1.0, 0.0]]), (s - 2, 2))
        Z = PhaseState(np.vstack([hx, tx]), np.vstack([hv, tv]), epsilon)
        if np.linalg.norm(Z.x[0] - Z.x[1]) > epsilon:
            out.append(Z)
    return out


def run_factorization(p: dict, seed: int, workers: int) -> Outcome:
    from .hierarchy import check_partial_factorization, lanford_time_proxy
    if p["m"] != 3 or p["s"] < 2:
        raise ConfigError("the built-in partial-tensor data has a two-particle head: use m = 3 and s >= 2")
    data = factorization_data()
    proxy = lanford_time_proxy(data, 2, p["ell"])
    t = p["t_factor"] * p["ell"] * proxy
    probes = factorization_probes(p["n_probes"], p["s"], p["epsilon"], [seed, 1])
    rows = check_partial_factorization(p["m"], p["s"], t, probes, data, p["epsilon"], p["k_max"], p["n_mc"],
                                       [seed, 2], p["ell"])
    out = Outcome(checks={"t": t, "lanford_proxy": proxy})
    out.table = [["probe", "joint", "product", "difference", "combined_stderr", "z"]]
    for r in rows:
        out.records.append({"record": "probe", "point": probes[r.probe].to_dict(), **r.to_dict()})
        out.table.append([r.probe, r.joint, r.product, r.difference, r.combined_stderr, r.z_score])
    return out


def _evolve_job(args):
    from .ensemble import run_replicas
    N, ell, d, data, t, replicas, seed = args
    return run_replicas(N, ell, d, data, t, replicas, seed)


def run_chaos(p: dict, seed: int, workers: int) -> Outcome:
    from .ensemble import (G_VARIANT, K_VARIANT, SeriesReference, chaos_metric, default_bandwidth, default_data,
                           epsilon_for, load_probes)
    from .goodsets import GoodSetParams
    if p["replicas"] < 2:
        raise ConfigError("replicas must be at least 2")
    data = default_data(2)
    ref = SeriesReference(data, p["t"], p["ell"], p["reference_k_max"], p["reference_n_mc"], seed)
    jobs = [(N, p["ell"], 2, data, p["t"], p["replicas"], [seed, N]) for N in p["N_list"]]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers) as pool:
            ensembles = list(pool.map(_evolve_job, jobs))
    else:
        ensembles = [_evolve_job(j) for j in jobs]
    out = Outcome()
    out.table = [["N", "epsilon", "variant", "m_prime", "s", "metric", "stderr", "probe_count"]]
    for N, states in zip(p["N_list"], ensembles):
        eps = epsilon_for(N, p["ell"], 2)
        params = GoodSetParams.from_chaoticity(2, eps, p["kappa"], p["R"])
        h = default_bandwidth(N, 2, p["bandwidth_scale"])
        for variant, m_prime, s in ((K_VARIANT, 2, 2), (G_VARIANT, 3, 3)):
            r = chaos_metric(states, m_prime, s, load_probes(variant, m_prime, s), params, ref, h, variant, p["R"])
            out.records.append({"N": N, "epsilon": eps, "variant": variant, "m_prime": m_prime, "s": s,
                                "t": p["t"], "bandwidth": h, **r.to_dict()})
            out.table.append([N, eps, variant, m_prime, s, r.metric, r.stderr, r.probe_count])
    return out


RUNNERS = {"flow": run_flow, "jset": run_jset, "goodset": run_goodset, "badset": run_badset,
           "lemmas": run_lemmas, "series": run_series, "factorization": run_factorization, "chaos": run_chaos}


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


def run(config: RunConfig) -> int:
    """Validate, execute and write artifacts; returns the exit status."""
    t0 = time.perf_counter()
    try:
        if not 0 <= config.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if config.workers < 1:
            raise ConfigError("workers must be positive")
        params = validate(config.command, config.parameters)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    status, message, outcome = EXIT_OK, None, None
    try:
        outcome = RUNNERS[config.command](params, config.seed, config.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PreconditionError, DenseRegimeError, DegenerateSamplingError) as exc:
        status, message = EXIT_PRECONDITION, f"precondition violated: {exc}"
    except NumericAssertionError as exc:
        status, message = EXIT_NUMERIC, f"numeric assertion failed: {exc}"
    out_dir = Path(config.output_path)
    out_dir.mkdir(parents=True, exist_ok=True)
    if outcome is not None:
        with open(out_dir / "results.jsonl", "w") as fh:
            for rec in outcome.records:
                fh.write(json.dumps(_jsonable(rec), sort_keys=True) + "\n")
        if outcome.table:
            buf = io.StringIO()
            csv.writer(buf, lineterminator="\n").writerows(outcome.table)
            (out_dir / "table.csv").write_text(buf.getvalue())
    manifest = {"schema_version": SCHEMA_VERSION, "version": __version__, "command": config.command,
                "config": {**config.to_dict(), "parameters": params}, "config_text": format_config_text(params),
                "exit_status": status, "message": message,
                "checks": _jsonable(outcome.checks) if outcome is not None else {},
                "wall_time_s": time.perf_counter() - t0}
    (out_dir / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")
    if message:
        print(message, file=sys.stderr)
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hscorr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SCHEMAS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", type=Path, help="flat key = value file")
        sp.add_argument("--seed", type=int, default=None, help="unsigned 64-bit seed (default 0)")
        sp.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        sp.add_argument("--workers", type=int, default=1, help="worker processes")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one parameter")
    return parser


def config_from_args(args) -> RunConfig:
    params = {}
    if args.config is not None:
        try:
            params.update(parse_config_text(args.config.read_text()))
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        params[key.strip()] = parse_value(value)
    file_seed = params.pop("seed", 0)
    seed = args.seed if args.seed is not None else file_seed
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    return RunConfig(args.command, params, seed, str(args.out), args.workers)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
