"""Command-line entry point: ``frdecomp <command> [flags]``.

Each command fills a :class:`Report` whose checks decide the exit status:
0 when every check passes, 1 when a check fails, 2 for configuration
errors and 3 for any other library error (reported as structured JSON).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import scipy.fft

from . import __version__
from . import averaging as avg
from . import decomposition as dec
from . import dirichlet as dirich
from . import levy
from . import sampling
from ._backend import BACKEND
from .cache import KernelCache
from .config import RunConfig, make_config, read_config_file
from .errors import ConfigError, FRDError
from .lattice import (LatticeKernel, LatticeSpec, green_identity_residual, poincare_residual)
from .report import Report, write_field_csv, write_kernel_csv

logger = logging.getLogger("frdecomp")

COMMANDS = ("poisson", "averaging", "fluctuation", "decompose", "levy", "sample", "verify")
RANGE_TOL = 1e-9
PSD_TOL = 1e-10
RECON_TOL = 1e-8
LEVY_TOL = 1e-6
SCALING_TOL = 1e-9
IDENTITY_TOL = 1e-10
N_SIGMA = 4.0
N_MOMENTA = 50
COV_OFFSETS = ((0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 0), (2, 0, 0),
               (2, 1, 0), (3, 0, 0), (4, 0, 0), (6, 0, 0), (8, 0, 0))


class _Run:
    """Shared state for one command: config, report, output paths and cache."""

    def __init__(self, cfg: RunConfig, report: Report, write: bool):
        self.cfg = cfg
        self.report = report
        self.write = write
        self.out = Path(cfg.out)
        self.cache = KernelCache(cfg.cache_dir) if cfg.cache_dir else None

    def spec(self, n: int | None = None) -> LatticeSpec:
        return LatticeSpec(self.cfg.dim, self.cfg.p_exp, self.cfg.levels if n is None else n)

    def kernel(self, kind: str, build, **params) -> LatticeKernel:
        if self.cache is None:
            return build()
        k, hit = self.cache.fetch(kind, build, **params)
        prov = self.report.provenance
        prov["cache_hits"] = prov.get("cache_hits", 0) + int(hit)
        return k

    def csv(self, kernel: LatticeKernel, name: str) -> None:
        if self.write:
            path = write_kernel_csv(kernel, self.out / f"{name}.csv")
            self.report.provenance.setdefault("files", []).append(path.name)

    @contextmanager
    def timed(self, label: str):
        t0 = time.perf_counter()
        yield
        self.report.timings[label] = self.report.timings.get(label, 0.0) + time.perf_counter() - t0


def spectrum_ratio(kernel: LatticeKernel, min_size: int = 64) -> tuple[float, float]:
    """``(min / max, max)`` of the kernel's torus spectrum on at least ``min_size^d`` points."""
    need = 2 * kernel.box_radius + 1
    size = max(min_size, 1 << (need - 1).bit_length())
    spec = scipy.fft.rfftn(kernel.torus_embedding(size)).real
    top = float(np.max(spec))
    return float(np.min(spec)) / top, top


def _fmt(a: float) -> str:
    return f"{a:g}".replace(".", "p")


# ------------------------------------------------------------------ commands
def cmd_poisson(run: _Run, prefix: str = "") -> None:
    cfg, rep = run.cfg, run.report
    spec = run.spec(0)
    for a in cfg.mass:
        cube = dirich.build_cube(spec, cfg.radius)
        with run.timed("poisson_solve"):
            row = dirich.poisson_kernel(cube, a)
        bound = dirich.defect_bound(a, cfg.radius)
        tag = f"{prefix}poisson[a={a:g}]"
        rep.check(f"{tag} min weight", float(np.min(row.weights)), 0.0, ">=")
        rep.check(f"{tag} defect >= 0", row.defect, 0.0, ">=")
        rep.check(f"{tag} defect <= aR^2/2", row.defect, bound)
        rep.check(f"{tag} mass + defect = 1", abs(row.mass + row.defect - 1.0), 1e-12)
        with run.timed("poisson_walks"):
            est = dirich.walk_exit_oracle(cube, a, None, cfg.samples, cfg.seed)
        tv, se = dirich.walk_tv_check(row, est)
        rep.check(f"{tag} walk TV / aggregate SE", tv / se if se > 0 else tv, N_SIGMA)
        rep.results[tag] = dict(boundary_points=len(cube.boundary), mass=row.mass,
                                defect=row.defect, defect_bound=bound,
                                bound_slack=bound - row.defect, walks=cfg.samples,
                                walk_mass=est.mass, tv=tv, aggregate_se=se, backend=BACKEND)
        if run.write:
            offs = cube.boundary - np.asarray(cube.center)
            table = np.zeros(tuple(2 * cube.half_int + 3 for _ in range(cube.d)))
            for o, w in zip(offs, row.weights):
                table[tuple(o + cube.half_int + 1)] = w
            k = LatticeKernel.centered(spec, table)
            run.csv(k, f"poisson_a{_fmt(a)}")


def cmd_averaging(run: _Run, prefix: str = "") -> None:
    cfg, rep = run.cfg, run.report
    spec = run.spec()
    for a in cfg.mass:
        for m in range(spec.n + 1):
            with run.timed("averaging_build"):
                k = avg.build_averaging_kernel(spec, m, a)
            tag = f"{prefix}averaging[a={a:g},m={m}]"
            bound = dirich.defect_bound(a, k.R)
            rep.check(f"{tag} min density", float(np.min(k.site_masses)), 0.0, ">=")
            rep.check(f"{tag} defect >= 0", k.defect, 0.0, ">=")
            rep.check(f"{tag} defect <= aR^2/2", k.defect, bound)
            rep.check(f"{tag} support - bound", k.density.support_radius() - k.support_bound(),
                      1e-12)
            rep.results[tag] = dict(mass=k.mass, defect=k.defect, defect_bound=bound,
                                    bound_slack=bound - k.defect,
                                    support=k.density.support_radius(),
                                    support_bound=k.support_bound())
            if m >= 1:
                with run.timed("averaging_scaling"):
                    res = avg.scaling_residual(spec, m, a)
                rep.check(f"{tag} scaling relation", res, SCALING_TOL)
            if m == 0:
                run.csv(k.density, f"averaging_a{_fmt(a)}_m0")


def cmd_fluctuation(run: _Run, prefix: str = "") -> None:
    cfg, rep = run.cfg, run.report
    spec = run.spec()
    for a in cfg.mass:
        with run.timed("fluctuation_build"):
            k = run.kernel("fluctuation", lambda: dec.fluctuation_position(spec, a),
                           d=spec.d, p=spec.p, n=spec.n, a=a)
        tag = f"{prefix}fluctuation[a={a:g}]"
        ratio, top = spectrum_ratio(k)
        rep.check(f"{tag} beyond 3L / max", k.meta["max_beyond_textbook_rel"], RANGE_TOL)
        rep.check(f"{tag} min/max spectrum", ratio, -PSD_TOL, ">=")
        rep.results[tag] = dict(gamma0=k((0,) * spec.d), support_sites=k.support_radius_sites(),
                                textbook_radius_sites=k.meta["textbook_radius_sites"],
                                method=k.meta["method"], torus=k.meta["torus"])
        run.csv(k, f"fluctuation_a{_fmt(a)}")


def _momenta(cfg: RunConfig) -> np.ndarray:
    p = cfg.momentum()
    if p is not None:
        return np.atleast_2d(np.asarray(p, dtype=float))
    rng = np.random.default_rng(cfg.seed)
    ps = rng.uniform(-np.pi, np.pi, size=(N_MOMENTA, cfg.dim))
    return ps[np.any(ps != 0, axis=1)]


def cmd_decompose(run: _Run, prefix: str = "") -> None:
    cfg, rep = run.cfg, run.report
    n = max(cfg.levels, 1)
    ps = _momenta(cfg)
    for a in cfg.mass:
        tag = f"{prefix}decompose[a={a:g}]"
        with run.timed("reconstruction"):
            lhs, rhs, res = dec.reconstruct_green(ps, a, n, cfg.dim, cfg.L)
        rep.check(f"{tag} reconstruction (n={n})", float(np.max(res)), RECON_TOL)
        rep.results[tag] = dict(momenta=len(ps), max_residual=float(np.max(res)), levels={})
        for j in range(cfg.levels):
            spec = run.spec(j)
            a_j = float(cfg.L) ** (2 * j) * a
            with run.timed("level_build"):
                k = run.kernel("level", lambda: dec.rescaled_fluctuation(spec, a_j).gamma,
                               d=spec.d, p=spec.p, n=j, a=a_j)
            ratio, top = spectrum_ratio(k)
            rep.check(f"{tag} level {j} beyond 6L / max", k.meta["max_beyond_textbook_rel"], RANGE_TOL)
            rep.check(f"{tag} level {j} min/max spectrum", ratio, -PSD_TOL, ">=")
            rep.results[tag]["levels"][j] = dict(a_j=a_j, gamma0=k((0,) * spec.d),
                                                 support_sites=k.support_radius_sites(),
                                                 textbook_radius_sites=k.meta["textbook_radius_sites"],
                                                 method=k.meta["method"])
            run.csv(k, f"level{j}_a{_fmt(a)}")


def cmd_levy(run: _Run, prefix: str = "") -> None:
    cfg, rep = run.cfg, run.report
    alpha = 1.0 if cfg.alpha is None else cfg.alpha
    tol = max(cfg.tol, 1e-10)
    with run.timed("levy_quadrature"):
        quad = levy.build_quadrature(alpha, tol, cfg.L)
    tag = f"{prefix}levy[alpha={alpha:g}]"
    ts = np.array([0.5, 1.0, 3.0])
    ident = np.abs(quad.scalar(ts) - ts ** (-alpha / 2)) / ts ** (-alpha / 2)
    rep.check(f"{tag} scalar identity", float(ident.max()), LEVY_TOL)
    n = max(cfg.levels, 1)
    p = cfg.momentum() or (1.0, 0.5, 0.0, 0.25)[:cfg.dim]
    with run.timed("levy_reconstruct"):
        r = levy.levy_reconstruct(np.atleast_2d(p), alpha, n, cfg.dim, cfg.L, quad)
    rep.check(f"{tag} direct transform", float(np.max(r["direct_residual"])), LEVY_TOL)
    rep.check(f"{tag} reconstruction (n={n})", float(np.max(r["reconstruction_residual"])),
              LEVY_TOL)
    rep.results[tag] = dict(nodes=quad.n_nodes, h=quad.h, truncation_bound=quad.truncation_bound,
                            discretization_bound=quad.discretization_bound,
                            identity_residual=float(ident.max()), levels={})
    params = levy.LevyParams(alpha, cfg.dim, quad)
    for j in range(cfg.levels):
        spec = run.spec(j)
        with run.timed("levy_level"):
            k = run.kernel("levy", lambda: levy.levy_fluctuation(j, params, cfg.L),
                           d=spec.d, p=spec.p, n=j, alpha=alpha, tol=tol)
        ratio, _ = spectrum_ratio(k)
        rep.check(f"{tag} level {j} beyond 6L / max", k.meta["max_beyond_textbook_rel"], RANGE_TOL)
        rep.check(f"{tag} level {j} min/max spectrum", ratio, -PSD_TOL, ">=")
        rep.results[tag]["levels"][j] = dict(gamma0=k((0,) * spec.d),
                                             support_sites=k.support_radius_sites())
        run.csv(k, f"levy_level{j}")


def cmd_sample(run: _Run, prefix: str = "") -> None:
    cfg, rep = run.cfg, run.report
    a = cfg.mass[0]
    nlev = max(cfg.levels, 1)
    levels = []
    for j in range(nlev):
        spec = run.spec(j)
        a_j = float(cfg.L) ** (2 * j) * a
        with run.timed("level_build"):
            levels.append(dec.rescaled_fluctuation(spec, a_j))
    offsets = [o[:cfg.dim] for o in COV_OFFSETS]
    with run.timed("sampling"):
        study = sampling.covariance_study(levels, offsets, cfg.samples, cfg.seed)
    tag = f"{prefix}sample[a={a:g},levels={nlev}]"
    rep.check(f"{tag} max |z| of covariance", study.max_abs_z, N_SIGMA)
    rep.results[tag] = dict(samples=cfg.samples, torus=study.M,
                            offsets=study.offsets, estimate=study.estimate,
                            stderr=study.stderr, exact=study.exact)
    rep.notes.append("fields are sampled on a periodic torus that holds every level's support")
    if run.write:
        field = sampling.synthesize(levels, cfg.seed, M=study.M)
        path = write_field_csv(field, run.out / "sample.csv")
        rep.provenance.setdefault("files", []).append(path.name)


def cmd_identities(run: _Run, prefix: str = "", n_fields: int = 100) -> None:
    """Localised energy identity and Poincare inequality on random fields."""
    cfg, rep = run.cfg, run.report
    rng = np.random.default_rng(cfg.seed)
    spec = LatticeSpec(cfg.dim, cfg.p_exp, 2)
    worst, gap = 0.0, np.inf
    K = spec.eps.denominator
    for _ in range(n_fields):
        h = LatticeKernel.centered(spec, rng.standard_normal((7,) * cfg.dim))
        phi = LatticeKernel.centered(spec, rng.standard_normal((5,) * cfg.dim))
        a = float(rng.uniform(0, 4))
        worst = max(worst, green_identity_residual(h, phi, a, relative=True))
        u = np.zeros((K + 1,) * cfg.dim)
        u[(slice(1, K),) * cfg.dim] = rng.standard_normal((K - 1,) * cfg.dim)
        lhs, rhs = poincare_residual(LatticeKernel(spec, u, (0,) * cfg.dim))
        gap = min(gap, rhs - lhs)
    rep.check(f"{prefix}identity energy residual", worst, IDENTITY_TOL)
    rep.check(f"{prefix}identity Poincare slack", gap, 0.0, ">=")


def cmd_verify(run: _Run) -> None:
    for name, fn in (("poisson", cmd_poisson), ("averaging", cmd_averaging),
                     ("fluctuation", cmd_fluctuation), ("decompose", cmd_decompose),
                     ("levy", cmd_levy), ("sample", cmd_sample), ("identities", cmd_identities)):
        with run.timed(f"verify_{name}"):
            fn(run, prefix="")


_DISPATCH = dict(poisson=cmd_poisson, averaging=cmd_averaging, fluctuation=cmd_fluctuation,
                 decompose=cmd_decompose, levy=cmd_levy, sample=cmd_sample, verify=cmd_verify)


def run(config: RunConfig, command: str, write: bool = True) -> Report:
    """Execute one command and return its report (files are written when ``write``)."""
    if command not in _DISPATCH:
        raise ConfigError(f"unknown command {command!r}")
    rep = Report(command, config.as_dict())
    rep.provenance.update(version=__version__, backend=BACKEND)
    state = _Run(config, rep, write)
    t0 = time.perf_counter()
    with scipy.fft.set_workers(config.threads):
        _DISPATCH[command](state)
    rep.timings["total"] = time.perf_counter() - t0
    if write:
        rep.write(state.out / f"report_{command}.json")
    return rep


# ---------------------------------------------------------------- argparse
def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="frdecomp", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--dim", type=int)
    common.add_argument("--L", type=int)
    common.add_argument("--levels", type=int)
    common.add_argument("--mass", "--a", dest="mass", help="mass list, e.g. 0,1")
    common.add_argument("--alpha", type=float)
    common.add_argument("--tol", type=float)
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--cache-dir", dest="cache_dir")
    common.add_argument("--out", help="output directory (a .csv path uses its directory)")
    common.add_argument("--samples", type=int)
    common.add_argument("--radius", type=float, help="cube radius for poisson")
    common.add_argument("--p", help="momentum, e.g. 0.3,0.1 (a single value is broadcast)")
    common.add_argument("--quiet", action="store_true")
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return ap


def _error(kind: str, exc: Exception) -> None:
    print(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)}),
          file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k: getattr(args, k) for k in ("dim", "L", "levels", "mass", "alpha", "tol", "seed",
                                            "threads", "cache_dir", "out", "samples", "radius", "p")}
    if flags["out"] and flags["out"].endswith(".csv"):
        flags["out"] = str(Path(flags["out"]).parent)
    try:
        file_values = read_config_file(args.config) if args.config else {}
        cfg = make_config(file_values, flags)
    except (ConfigError, OSError) as exc:
        _error("config", exc)
        return 2
    try:
        rep = run(cfg, args.command)
    except ConfigError as exc:
        _error("config", exc)
        return 2
    except FRDError as exc:
        _error("computation", exc)
        return 3
    if not args.quiet:
        for line in rep.summary_lines():
            print(line)
    print(f"{'PASSED' if rep.passed else 'FAILED'}: {sum(c['passed'] for c in rep.checks)}"
          f"/{len(rep.checks)} checks; report in {Path(cfg.out) / f'report_{args.command}.json'}")
    return 0 if rep.passed else 1


if __name__ == "__main__":
    sys.exit(main())
