"""Command-line front end.

``d2d <ed|traj|sweep|wigner|spectrum|calibrate> --config FILE [--set key=value ...] [--out DIR] [--seed U64]``
and ``d2d config --print-default``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical
non-convergence, 4 ED budget exceeded, 1 anything else.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
import warnings
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    GridTooNarrowWarning,
    NoLobeDetected,
    fit_superradiant_lobe,
    fock_distribution,
    reduce_photon,
    wigner,
    z4_asymmetry,
)
from .config import RunConfig, default_config_text, load_sections
from .errors import BudgetExceededError, ConfigError, ConvergenceError, D2DError, DegenerateKernelError, TrajectoryError
from .io import read_density, sha256, write_csv, write_density, write_manifest
from .liouvillian import (
    DensityMatrix,
    SteadyStateOptions,
    kernel_basis,
    liouvillian_from_params,
    long_time_limit,
    photon_mass_by_parity,
    spectrum_near_zero,
    steady_state,
)
from .semiclassical import RootOptions, calibrate, sweep
from .trajectories import TrajectoryEngine, run_ensemble

log = logging.getLogger("d2d")

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_BUDGET = 0, 1, 2, 3, 4


class _Run:
    """Collects outputs, warnings and results for the manifest."""

    def __init__(self, command: str, cfg: RunConfig, out: Path):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.files: list[Path] = []
        self.results: dict = {}
        self.warnings: list[str] = []
        self.started = datetime.now(timezone.utc).isoformat(timespec="seconds")
        self.t0 = time.perf_counter()

    def add(self, path: Path) -> None:
        self.files.append(Path(path))

    def finish(self) -> Path:
        manifest = {
            "command": self.command,
            "version": __version__,
            "config": self.cfg.sections,
            "seed": self.cfg.seed,
            "started_utc": self.started,
            "wall_clock_s": time.perf_counter() - self.t0,
            "outputs": {p.name: sha256(p) for p in self.files},
            "results": self.results,
            "warnings": self.warnings,
        }
        return write_manifest(self.out / "manifest.json", manifest)


def _write_pn(run: _Run, rho_ph: DensityMatrix, name: str = "pn.csv"):
    dist = fock_distribution(rho_ph)
    run.add(write_csv(run.out / name, ["n", "probability"], enumerate(dist.probabilities)))
    return dist


def _summary(dist, n_spins: int) -> dict:
    out = {"mean_n": dist.mean, "p0": float(dist.probabilities[0]), "tail_mass": dist.tail_mass}
    try:
        fit = fit_superradiant_lobe(dist, n_spins=n_spins)
        out["lobe"] = {"mu": fit.mu, "sigma": fit.sigma, "mu_over_n": fit.scaled_mu, "rmse": fit.rmse}
    except NoLobeDetected:
        out["lobe"] = None
    return out


def cmd_ed(run: _Run, kernel: bool = False) -> None:
    cfg = run.cfg
    ed = cfg.sections["ed"]
    L = liouvillian_from_params(cfg.model, cfg.dims, max_dim=cfg.sections["run"]["max_dim"])
    if kernel or ed["kernel"]:
        states = kernel_basis(L, k_max=ed["k_max"], sigma=ed["sigma"])
        run.results["kernel_dim"] = len(states)
        rows = []
        for i, rho in enumerate(states):
            run.add(write_density(run.out / f"ness_{i}.json", rho.data, cfg.dims, "composite"))
            dist = _write_pn(run, reduce_photon(rho), f"pn_{i}.csv")
            even, odd = photon_mass_by_parity(rho)
            rows.append((i, even, odd, L.residual(rho), dist.mean))
        run.add(write_csv(run.out / "kernel.csv", ["index", "even_mass", "odd_mass", "residual", "mean_n"], rows))
        return
    opts = SteadyStateOptions(tol=ed["tol"], sigma=ed["sigma"])
    try:
        rho = steady_state(L, opts)
    except DegenerateKernelError as exc:
        msg = f"{exc}; reporting the long-time limit of the maximally mixed state"
        log.warning(msg)
        run.warnings.append(msg)
        d = cfg.dims.total_dim
        rho = long_time_limit(L, DensityMatrix(np.eye(d, dtype=complex) / d, cfg.dims), sigma=ed["sigma"])
    run.add(write_density(run.out / "ness.json", rho.data, cfg.dims, "composite"))
    dist = _write_pn(run, reduce_photon(rho))
    run.results.update(_summary(dist, cfg.model.n_spins))
    run.results["residual"] = L.residual(rho)


def cmd_traj(run: _Run) -> None:
    cfg = run.cfg
    engine = TrajectoryEngine.from_params(cfg.model, cfg.dims, cfg.trajectory)
    res = run_ensemble(cfg.model, cfg.dims, cfg.trajectory, engine=engine)
    rho_ph = reduce_photon(res.rho)
    if cfg.sections["trajectory"]["save"] == "full":
        run.add(write_density(run.out / "rho.json", res.rho.data, cfg.dims, "composite"))
    else:
        run.add(write_density(run.out / "rho_ph.json", rho_ph.data, None, "photon"))
    dist = _write_pn(run, rho_ph)
    run.add(write_csv(run.out / "convergence.csv", ["n_traj", "mean_n", "stderr"],
                      [(int(r[0]), r[1], r[2]) for r in res.convergence]))
    run.results.update(_summary(dist, cfg.model.n_spins))
    run.results.update({"t_final": res.t_final, "locator": res.method, "mean_jumps": float(res.n_jumps.mean())})


def cmd_sweep(run: _Run) -> None:
    cfg = run.cfg
    s = cfg.sections["sweep"]
    result = sweep(cfg.model, cfg.sweep_grid, model=s["model"], options=RootOptions(family=s["family"]),
                   refine_folds=s["refine_folds"])
    rows = [(r.lam, r.branch, r.n, r.jx, r.jy, r.jz, r.max_re, r.stable, r.family) for r in result.rows]
    run.add(write_csv(run.out / "branches.csv",
                      ["lam", "branch", "n", "jx", "jy", "jz", "max_re_eig", "stable", "family"], rows))
    run.results.update({"births": result.births, "deaths": result.deaths, "gaps": result.gaps, "folds": result.folds})


def cmd_wigner(run: _Run, input_path: str | None) -> None:
    cfg = run.cfg
    w_cfg = cfg.sections["wigner"]
    path = input_path or w_cfg["input"]
    if not path:
        raise ConfigError("wigner needs an input density matrix (--input or wigner.input)")
    rho, dims, kind = read_density(Path(path))
    rho_ph = reduce_photon(rho, dims) if kind == "composite" else DensityMatrix(rho, rho.shape[0])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", GridTooNarrowWarning)
        grid = wigner(rho_ph, n_points=w_cfg["n_points"], extent=w_cfg["extent"])
    for wm in caught:
        msg = str(wm.message)
        print(f"warning: {msg}", file=sys.stderr)
        run.warnings.append(msg)
    xx, pp = np.meshgrid(grid.x_axis, grid.p_axis, indexing="ij")
    run.add(write_csv(run.out / "wigner.csv", ["x", "p", "W"],
                      zip(xx.ravel(), pp.ravel(), grid.values.ravel())))
    score = z4_asymmetry(grid)
    z4 = run.out / "z4.txt"
    z4.write_text("%.17g\n" % score, encoding="utf-8")
    run.add(z4)
    run.results.update({"z4_asymmetry": score, "integral": grid.integral(), "boundary_max": grid.boundary_max,
                        "input": str(path)})


def cmd_spectrum(run: _Run) -> None:
    cfg = run.cfg
    sc = cfg.sections["spectrum"]
    L = liouvillian_from_params(cfg.model, cfg.dims, max_dim=cfg.sections["run"]["max_dim"])
    sl = spectrum_near_zero(L, sc["k"], sigma=cfg.sections["ed"]["sigma"], sectors=sc["sectors"])
    rows = [(i, z.real, z.imag, int(q)) for i, (z, q) in enumerate(zip(sl.eigenvalues, sl.sectors))]
    run.add(write_csv(run.out / "spectrum.csv", ["k", "re", "im", "sector"], rows))


def cmd_calibrate(run: _Run) -> None:
    cfg = run.cfg
    c = cfg.sections["calibrate"]
    rows = calibrate(cfg.model, c["kappa1_values"], c["kappa2_values"], (c["target_broken"], c["target_symmetric"]))
    nan = float("nan")
    run.add(write_csv(run.out / "calibration.csv", ["kappa1", "kappa2", "fold_broken", "fold_symmetric", "score"],
                      [(r.kappa1, r.kappa2, nan if r.fold_broken is None else r.fold_broken,
                        nan if r.fold_symmetric is None else r.fold_symmetric, r.score) for r in rows]))


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="d2d", description="Driven-dissipative two-photon Dicke model simulator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (section.key=value)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="root seed (unsigned 64-bit)")
        p.add_argument("-v", "--verbose", action="count", default=0)
        return p

    ed = common(sub.add_parser("ed", help="exact steady state"))
    ed.add_argument("--kernel", action="store_true", help="write a basis of the steady-state manifold")
    common(sub.add_parser("traj", help="quantum-trajectory steady state"))
    common(sub.add_parser("sweep", help="semiclassical branch table over a lambda grid"))
    wg = common(sub.add_parser("wigner", help="Wigner function of a stored density matrix"))
    wg.add_argument("--input", help="density-matrix JSON written by ed or traj")
    common(sub.add_parser("spectrum", help="Liouvillian eigenvalues nearest zero"))
    common(sub.add_parser("calibrate", help="scan loss rates against target onsets"))
    cf = sub.add_parser("config", help="configuration utilities")
    cf.add_argument("--print-default", action="store_true", help="print the default configuration")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "config":
        sys.stdout.write(default_config_text())
        return EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = list(args.set)
        if args.seed is not None:
            overrides.append(f"run.seed={args.seed}")
        if args.out is not None:
            overrides.append(f"run.out={args.out}")
        sections = load_sections(args.config, overrides)
        cfg = RunConfig.from_sections(sections, args.command)
        out = Path(cfg.outputs)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
        run = _Run(args.command, cfg, out)
        if args.command == "ed":
            cmd_ed(run, kernel=args.kernel)
        elif args.command == "traj":
            cmd_traj(run)
        elif args.command == "sweep":
            cmd_sweep(run)
        elif args.command == "wigner":
            cmd_wigner(run, args.input)
        elif args.command == "spectrum":
            cmd_spectrum(run)
        elif args.command == "calibrate":
            cmd_calibrate(run)
        run.finish()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetExceededError as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (ConvergenceError, TrajectoryError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except D2DError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
