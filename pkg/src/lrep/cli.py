"""Command-line runner.

    lrep rates      --config cfg.json [--out DIR]
    lrep exact      --config cfg.json
    lrep simulate   --config cfg.json --seed 7
    lrep couple     --config cfg.json
    lrep experiment --config cfg.json          # mode taken from the file
    lrep acceptance [--only 1 2 3] [--fault-injection]

Outputs are written to a scratch directory next to ``--out`` and moved into
place only when the run succeeds.  ``LREP_OUTPUT_DIR`` overrides the output
directory; nothing else is read from the environment.

Exit status: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import shutil
import subprocess
import sys
import tempfile
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .acceptance import DEFAULT_SEED, rows_to_dicts, run_acceptance
from .coupled import Pair
from .exact import build_generator, invariance_report, stationary
from .lattice import Kernel, KernelValidationError, NotComputableError, NumericalFailure, SiteSpace
from .rates import as_config, rate_report, to_bitstring
from .simulate import RngPlan, run_coupled, run_single
from .stats import DiscrepancyProfile

log = logging.getLogger("lrep")

MODES = ("rates", "exact", "simulate", "couple", "acceptance")
EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    mode: str
    space: dict = field(default_factory=lambda: {"kind": "torus", "dims": [5]})
    kernel: dict = field(default_factory=lambda: {"nn": 0.5})
    init: dict = field(default_factory=dict)
    horizon: float = 1.0
    replicas: int = 1
    seed: int = DEFAULT_SEED
    out: str = "lrep-out"
    source: int | None = None          # rates: one source site instead of all occupied
    shell: int | list[int] | None = None  # exact: particle-count shell
    snapshots: int = 11                # simulate/couple: snapshot times on [0, horizon]
    criteria: list[int] | None = None  # acceptance: subset of criterion ids
    fault_injection: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        if "mode" not in d:
            raise ConfigError("config needs a 'mode'")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.horizon < 0:
            raise ConfigError("horizon must be nonnegative")
        if int(self.replicas) < 1:
            raise ConfigError("replicas must be >= 1")
        if self.mode != "acceptance":
            allowed = {"bitstring", "bernoulli", "shell", "pair"}
            bad = sorted(set(self.init) - allowed)
            if bad:
                raise ConfigError(f"unknown init keys: {bad}")
            if len(self.init) > 1:
                raise ConfigError("init takes exactly one of bitstring, bernoulli, shell, pair")
            if self.mode == "couple" and "pair" not in self.init:
                raise ConfigError("couple mode needs init.pair = [eta_bits, xi_bits]")
            self.build()   # space and kernel errors surface here

    def build(self) -> tuple[SiteSpace, Kernel]:
        try:
            space = SiteSpace.from_dict(self.space)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad space description: {exc}") from exc
        return space, Kernel.from_config(self.kernel, space)

    def initial(self, space: SiteSpace, rng: np.random.Generator) -> np.ndarray:
        n = space.size
        if "bitstring" in self.init:
            return as_config(self.init["bitstring"], n)
        if "bernoulli" in self.init:
            return (rng.random(n) < float(self.init["bernoulli"])).astype(np.uint8)
        if "shell" in self.init:
            eta = np.zeros(n, np.uint8)
            eta[rng.choice(n, size=int(self.init["shell"]), replace=False)] = 1
            return eta
        raise ConfigError("this mode needs an initial configuration (init)")


def _canonical(d: dict) -> str:
    return json.dumps(d, sort_keys=True, separators=(",", ":"))


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                             cwd=Path(__file__).resolve().parent, timeout=5)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# -- mode runners: each writes into ``out`` and returns a JSON-able summary --------------

def _run_rates(cfg: ExperimentConfig, out: Path) -> dict:
    space, kernel = cfg.build()
    eta = cfg.initial(space, np.random.default_rng(cfg.seed))
    sources = [cfg.source] if cfg.source is not None else [int(x) for x in np.flatnonzero(eta)]
    reports = []
    rows = []
    for x in sources:
        if not eta[x]:
            raise ConfigError(f"source site {x} is vacant")
        rep = rate_report(kernel, x, eta)
        reports.append(json.loads(rep.to_json()))
        for t in rep.targets:
            rows.append([x, "q", t["site"], repr(t["q"])])
            rows.append([x, "q_bar", t["site"], repr(t["q_bar"])])
        rows.append([x, "cancel", x, repr(rep.cancel)])
        rows.append([x, "delta", "", repr(rep.delta)])
    _write_csv(out / "rates.csv", ["source", "kind", "target", "rate"], rows)
    (out / "rates.json").write_text(json.dumps({"configuration": to_bitstring(eta), "reports": reports},
                                               indent=2, sort_keys=True) + "\n")
    return {"sources": len(sources)}


def _run_exact(cfg: ExperimentConfig, out: Path) -> dict:
    space, kernel = cfg.build()
    gen = build_generator(kernel, shell=cfg.shell)
    gen.write_coo(out / "generator.txt")
    measures = stationary(gen)
    rows = []
    inv = []
    for c, mu in enumerate(measures):
        for i in np.flatnonzero(mu.p):
            rows.append([gen.label(i), c, repr(float(mu.p[i]))])
        rep = invariance_report(gen, mu, max_size=min(3, gen.n_sites))
        inv.append({"class": c, "residual": rep.residual, "cylinder_max": rep.cylinder_max})
    _write_csv(out / "stationary.csv", ["state", "class", "probability"], rows)
    (out / "invariance.json").write_text(json.dumps(inv, indent=2) + "\n")
    return {"states": gen.size, "closed_classes": len(measures)}


def _snapshot_times(cfg: ExperimentConfig) -> np.ndarray:
    return np.linspace(0.0, cfg.horizon, max(2, int(cfg.snapshots)))


def _run_simulate(cfg: ExperimentConfig, out: Path) -> dict:
    space, kernel = cfg.build()
    plan = RngPlan(int(cfg.seed))
    init_rng = np.random.default_rng([int(cfg.seed), 1])
    law: dict[str, int] = {}
    for i in range(int(cfg.replicas)):
        eta0 = cfg.initial(space, init_rng)
        tr = run_single(kernel, eta0, cfg.horizon, plan.replica(i))
        if i == 0:
            tr.write_csv(out / "trajectory.csv")
            (out / "snapshots.txt").write_text("\n".join(tr.snapshot_lines(_snapshot_times(cfg))) + "\n")
        key = to_bitstring(tr.final())
        law[key] = law.get(key, 0) + 1
    _write_csv(out / "final_law.csv", ["state", "count"], sorted(law.items()))
    return {"replicas": int(cfg.replicas), "distinct_final_states": len(law)}


def _run_couple(cfg: ExperimentConfig, out: Path) -> dict:
    space, kernel = cfg.build()
    eta0, xi0 = (as_config(b, space.size) for b in cfg.init["pair"])
    plan = RngPlan(int(cfg.seed))
    rows = []
    for i in range(int(cfg.replicas)):
        tr = run_coupled(kernel, eta0, xi0, cfg.horizon, plan.replica(i))
        if i == 0:
            tr.write_csv(out / "pair_trajectory.csv")
            times = _snapshot_times(cfg)
            lines = [f"{to_bitstring(a)}|{to_bitstring(b)}"
                     for a, b in zip(tr.eta.config_at(times), tr.xi.config_at(times))]
            (out / "snapshots.txt").write_text("\n".join(lines) + "\n")
        e, s = tr.eta.final(), tr.xi.final()
        d = e.astype(int) - s.astype(int)
        rows.append([i, to_bitstring(e), to_bitstring(s), int((d > 0).sum()), int((d < 0).sum()),
                     int(not ((d > 0).any() and (d < 0).any()))])
    _write_csv(out / "final_pairs.csv", ["replica", "eta", "xi", "positive", "negative", "ordered"], rows)
    summary = {"replicas": int(cfg.replicas), "ordered_fraction": float(np.mean([r[-1] for r in rows]))}
    if space.ndim == 1 and space.kind == "segment":
        prof = DiscrepancyProfile.of(Pair(space, e, s), (space.size - 1) // 2)
        summary["last_profile"] = asdict(prof)
    return summary


def _run_acceptance(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> dict:
    rows = run_acceptance(int(cfg.seed), cfg.criteria, cfg.fault_injection, jobs, echo=print)
    _write_csv(out / "acceptance.csv", ["id", "name", "measured", "threshold", "pass"],
               [[r.id, r.name, repr(float(r.measured)), repr(float(r.threshold)), int(r.passed)] for r in rows])
    (out / "acceptance.json").write_text(json.dumps(rows_to_dicts(rows), indent=2, default=float) + "\n")
    return {"criteria": len(rows), "passed": sum(r.passed for r in rows),
            "failed": [r.id for r in rows if not r.passed]}


RUNNERS = {"rates": _run_rates, "exact": _run_exact, "simulate": _run_simulate,
           "couple": _run_couple, "acceptance": _run_acceptance}


def run(cfg: ExperimentConfig, jobs: int = 1) -> tuple[int, Path | None]:
    """Run one validated config; returns (exit status, output directory)."""
    out = Path(os.environ.get("LREP_OUTPUT_DIR") or cfg.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=".lrep-", dir=out.parent))
    scratch.chmod(0o755)
    started = datetime.now(timezone.utc).isoformat()
    try:
        if cfg.mode == "acceptance":
            summary = _run_acceptance(cfg, scratch, jobs)
        else:
            summary = RUNNERS[cfg.mode](cfg, scratch)
        resolved = asdict(cfg)
        (scratch / "config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")
        manifest = {
            "config": resolved, "seed": cfg.seed, "git-describe": _git_describe(),
            "started": started, "finished": datetime.now(timezone.utc).isoformat(),
            "inputs_sha256": hashlib.sha256(_canonical(resolved).encode()).hexdigest(),
            "versions": {"lrep": __version__, "python": platform.python_version(),
                         "numpy": np.__version__, "scipy": scipy.__version__},
            "summary": summary,
        }
        (scratch / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=float) + "\n")
    except BaseException:
        shutil.rmtree(scratch, ignore_errors=True)
        raise
    if out.exists():
        shutil.rmtree(out)
    scratch.rename(out)
    status = EXIT_OK
    if cfg.mode == "acceptance" and summary["failed"]:
        status = 1
    return status, out


# -- argument parsing ----------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lrep", description="Long-range exclusion process toolkit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("rates", "exact", "simulate", "couple", "experiment", "acceptance"):
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="JSON experiment config")
        s.add_argument("--out", help="output directory")
        s.add_argument("--seed", type=int)
        s.add_argument("--jobs", type=int, default=1, help="worker processes (acceptance criteria)")
        s.add_argument("-v", "--verbose", action="store_true")
        if name != "acceptance":
            s.add_argument("--space", help='JSON, e.g. {"kind": "torus", "dims": [5]}')
            s.add_argument("--kernel", help='JSON, e.g. {"nn": 0.7}')
            s.add_argument("--init", help='JSON, e.g. {"bitstring": "11000"}')
            s.add_argument("--horizon", type=float)
            s.add_argument("--replicas", type=int)
        if name == "acceptance":
            s.add_argument("--only", type=int, nargs="*", help="criterion ids; none given means zero rows")
            s.add_argument("--fault-injection", action="store_true",
                           help="perturb the joint coupled move rates")
    return p


def _load(args) -> ExperimentConfig:
    d: dict = {}
    if args.config is not None:
        try:
            d = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
    if args.command != "experiment":
        if "mode" in d and d["mode"] != args.command:
            raise ConfigError(f"config mode {d['mode']!r} does not match subcommand {args.command!r}")
        d["mode"] = args.command
    for key in ("space", "kernel", "init"):
        val = getattr(args, key, None)
        if val is not None:
            try:
                d[key] = json.loads(val)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"--{key} is not valid JSON: {exc}") from exc
    for key in ("horizon", "replicas", "seed", "out"):
        val = getattr(args, key, None)
        if val is not None:
            d[key] = val
    if args.command == "acceptance":
        if args.only is not None:
            d["criteria"] = args.only
        if args.fault_injection:
            d["fault_injection"] = True
    return ExperimentConfig.from_dict(d)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _load(args)
        status, out = run(cfg, jobs=args.jobs)
    except (ConfigError, KernelValidationError, NotComputableError, ValueError, TypeError) as exc:
        print(f"lrep: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalFailure, np.linalg.LinAlgError) as exc:
        print(f"lrep: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    log.info("outputs written to %s", out)
    print(out)
    return status


if __name__ == "__main__":
    sys.exit(main())
