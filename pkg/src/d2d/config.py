"""Run configuration: INI files with one section per module.

Every key has a typed default (see :data:`SCHEMA`). Files and ``--set``
overrides are layered on top. Unknown sections or keys are errors, so
typos do not silently fall back to defaults.
"""

from __future__ import annotations

import configparser
import dataclasses
from typing import Callable

import numpy as np

from .errors import ConfigError
from .hilbert import HilbertDims, ModelParams
from .trajectories import TrajectoryConfig


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "auto", "none") else float(text)


def _opt_int(text: str) -> int | None:
    return None if text.strip().lower() in ("", "auto", "none") else int(text)


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.replace(";", ",").split(",") if t.strip()]


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        value = text.strip()
        if value not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {value!r}")
        return value

    return parse


@dataclasses.dataclass(frozen=True)
class Key:
    default: str
    parse: Callable[[str], object]
    doc: str


SCHEMA: dict[str, dict[str, Key]] = {
    "model": {
        "omega_c": Key("1.0", float, "cavity frequency"),
        "omega_a": Key("1.0", float, "atomic frequency"),
        "lam": Key("0.0", float, "spin-photon-pair coupling λ"),
        "kappa1": Key("0.4", float, "one-photon loss rate"),
        "kappa2": Key("0.1", float, "two-photon loss rate"),
        "n_spins": Key("4", int, "number of emitters N"),
    },
    "dims": {
        "fock_cutoff": Key("40", int, "Fock cutoff M (states |0>..|M-1>)"),
    },
    "run": {
        "seed": Key("0", int, "root seed (overridden by --seed)"),
        "out": Key("out", str, "output directory (overridden by --out)"),
        "max_dim": Key("1500", int, "largest Hilbert dimension accepted by exact diagonalization"),
    },
    "ed": {
        "tol": Key("1e-9", float, "required max-norm of L rho"),
        "sigma": Key("1e-7", float, "shift-invert shift"),
        "k_max": Key("4", int, "largest kernel dimension accepted with --kernel"),
        "kernel": Key("false", _bool, "write a basis of the steady-state manifold instead of one NESS"),
    },
    "trajectory": {
        "n_traj": Key("500", int, "number of trajectories"),
        "t_final": Key("auto", _opt_float, "evolution time; auto = 50/min(kappa_eff, omega_c)"),
        "dt_max": Key("0.5", float, "lockstep step length"),
        "init": Key("infinite-temperature", _choice("infinite-temperature", "haar"), "initial-state ensemble"),
        "jump_tolerance": Key("1e-8", float, "accuracy of the jump condition |psi|^2 = r"),
        "batch_size": Key("256", int, "trajectories propagated together"),
        "method": Key("auto", _choice("auto", "eigen", "dyadic", "ode"), "jump-time locator"),
        "cond_limit": Key("1e6", float, "eigenvector condition number limit for method=auto"),
        "checkpoint_every": Key("auto", _opt_int, "spacing of convergence.csv rows; auto = n_traj/20"),
        "save": Key("full", _choice("full", "photon"), "write the full rho or only the photon reduction"),
    },
    "sweep": {
        "model": Key("cumulant", _choice("mf", "mf-one-loss", "cumulant"), "semiclassical model"),
        "lam_start": Key("0.3", float, "first lambda of the grid"),
        "lam_stop": Key("1.5", float, "last lambda of the grid"),
        "n_points": Key("50", int, "grid size"),
        "lam_values": Key("", _floats, "explicit comma-separated grid (overrides start/stop/n_points)"),
        "family": Key("symmetric", _choice("symmetric", "broken", "all"), "cumulant root family"),
        "refine_folds": Key("false", _bool, "continue new branches back to their fold"),
    },
    "wigner": {
        "input": Key("", str, "density-matrix JSON (overridden by --input)"),
        "n_points": Key("201", int, "grid points per axis"),
        "extent": Key("auto", _opt_float, "grid half-width; auto from <n> and the P(n) tail"),
    },
    "spectrum": {
        "k": Key("8", int, "number of eigenvalues"),
        "sectors": Key("0,1,2,3", _ints, "Z4 blocks to search"),
    },
    "calibrate": {
        "kappa1_values": Key("0.4", _floats, "kappa1 scan values"),
        "kappa2_values": Key("0.1,0.15,0.2,0.25,0.3", _floats, "kappa2 scan values"),
        "target_broken": Key("0.645", float, "target onset of the broken-symmetry family"),
        "target_symmetric": Key("0.82", float, "target onset of the symmetric family"),
    },
}


def default_config_text() -> str:
    """The full default configuration as commented INI."""
    lines = ["# d2d run configuration; every key shown with its default."]
    for section, keys in SCHEMA.items():
        lines.append("")
        lines.append(f"[{section}]")
        for name, key in keys.items():
            lines.append(f"# {key.doc}")
            lines.append(f"{name} = {key.default}")
    return "\n".join(lines) + "\n"


def load_sections(path: str | None = None, overrides: list[str] | None = None) -> dict[str, dict[str, object]]:
    """Defaults, then ``path``, then ``section.key=value`` overrides, parsed by type."""
    raw = {s: {k: key.default for k, key in keys.items()} for s, keys in SCHEMA.items()}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}] in {path}")
            for name, value in parser.items(section):
                if name not in SCHEMA[section]:
                    raise ConfigError(f"unknown key {section}.{name} in {path}")
                raw[section][name] = value
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        target, value = item.split("=", 1)
        target = target.strip()
        if "." in target:
            section, name = target.split(".", 1)
        else:
            owners = [s for s, keys in SCHEMA.items() if target in keys]
            if len(owners) != 1:
                raise ConfigError(f"--set {target}: use section.key ({'ambiguous' if owners else 'unknown key'})")
            section, name = owners[0], target
        if section not in SCHEMA or name not in SCHEMA[section]:
            raise ConfigError(f"--set: unknown key {section}.{name}")
        raw[section][name] = value.strip()
    parsed: dict[str, dict[str, object]] = {}
    for section, keys in SCHEMA.items():
        parsed[section] = {}
        for name, key in keys.items():
            try:
                parsed[section][name] = key.parse(raw[section][name])
            except ValueError as exc:
                raise ConfigError(f"{section}.{name}: {exc}") from exc
    return parsed


@dataclasses.dataclass
class RunConfig:
    """Resolved configuration of one command."""

    model: ModelParams
    dims: HilbertDims
    method: str
    sections: dict
    seed: int
    outputs: str
    trajectory: TrajectoryConfig | None = None
    sweep_grid: np.ndarray | None = None

    @classmethod
    def from_sections(cls, sections: dict, method: str) -> "RunConfig":
        m = sections["model"]
        try:
            model = ModelParams(
                omega_c=m["omega_c"], omega_a=m["omega_a"], lam=m["lam"], kappa1=m["kappa1"],
                kappa2=m["kappa2"], n_spins=m["n_spins"],
            )
            dims = HilbertDims(m["n_spins"], sections["dims"]["fock_cutoff"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        run = sections["run"]
        seed = int(run["seed"])
        if seed < 0 or seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        traj = None
        if method == "traj":
            t = sections["trajectory"]
            try:
                traj = TrajectoryConfig(
                    n_traj=t["n_traj"], t_final=t["t_final"], dt_max=t["dt_max"], seed=seed, init=t["init"],
                    jump_tolerance=t["jump_tolerance"], batch_size=t["batch_size"], method=t["method"],
                    cond_limit=t["cond_limit"], checkpoint_every=t["checkpoint_every"],
                )
            except ValueError as exc:
                raise ConfigError(f"trajectory: {exc}") from exc
        grid = None
        if method in ("mf", "cumulant", "sweep"):
            s = sections["sweep"]
            if s["lam_values"]:
                grid = np.array(sorted(s["lam_values"]), dtype=float)
            else:
                if s["n_points"] < 1:
                    raise ConfigError("sweep.n_points must be >= 1")
                grid = np.linspace(s["lam_start"], s["lam_stop"], s["n_points"])
            if np.any(grid < 0) or np.any(np.diff(grid) <= 0):
                raise ConfigError("sweep grid must be nonnegative and strictly increasing")
        return cls(model, dims, method, sections, seed, str(run["out"]), traj, grid)
