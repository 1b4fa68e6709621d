"""Config-driven command line front end.

Subcommands: build-kl, solve-one, mc, taylor, convergence.  Every output
file carries the config hash, seed, and RNG algorithm; identical configs
reproduce identical bytes for any `--threads` value.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .config import (ExperimentConfig, config_hash, load_config,
                     override_config, validate_config)
from .errors import ConfigError, DomainUQError
from .fem import NodalField, h1_norm, save_field
from .fields import (RNG_ALGORITHM, build_coefficient_kl,
                     build_vector_field_kl, draw_sample, load_scalar_field,
                     load_vector_field, save_scalar_field, save_vector_field)
from .mesh import build_disc_mesh, save_mesh
from .perturb import DeformedProblem, taylor_remainders
from .textio import fmt
from .uq import (RunningMoments, l2_norm, mc_estimate, norm_by_name,
                 quadrature_estimate, sample_blocks, save_statistics,
                 slope_fit, smolyak_rule, tree_merge)

VECTOR_FIELD_FILE = "vector_field.txt"
SCALAR_FIELD_FILE = "coefficient.txt"
MANIFEST_FILE = "kl_manifest.txt"


def _header_lines(cfg: ExperimentConfig) -> list[str]:
    return [
        "# schema=1",
        f"# version={__version__}",
        f"# config_hash={config_hash(cfg)}",
        f"# seed={cfg.seed}",
        f"# rng={RNG_ALGORITHM}",
    ]


def _write(path: str, text: str) -> None:
    with open(path, "w") as f:
        f.write(text)
    print(f"wrote {path}")


def _load_artifacts(cfg: ExperimentConfig):
    vpath = os.path.join(cfg.out_dir, VECTOR_FIELD_FILE)
    spath = os.path.join(cfg.out_dir, SCALAR_FIELD_FILE)
    if not (os.path.exists(vpath) and os.path.exists(spath)):
        raise ConfigError(
            f"KL artifacts not found in {cfg.out_dir!r}; run build-kl first")
    vf = load_vector_field(vpath)
    sf = load_scalar_field(spath)
    if vf.level != cfg.mesh_level:
        raise ConfigError(
            f"vector field artifact is for mesh level {vf.level}, "
            f"config says {cfg.mesh_level}")
    return vf, sf


def cmd_build_kl(cfg: ExperimentConfig) -> None:
    os.makedirs(cfg.out_dir, exist_ok=True)
    mesh = build_disc_mesh(cfg.mesh_level)
    vf = build_vector_field_kl(mesh, cfg.kl_tol_v)
    sf = build_coefficient_kl(cfg.grid_cells, cfg.kl_tol_a)
    vpath = os.path.join(cfg.out_dir, VECTOR_FIELD_FILE)
    spath = os.path.join(cfg.out_dir, SCALAR_FIELD_FILE)
    save_vector_field(vf, vpath)
    print(f"wrote {vpath}")
    save_scalar_field(sf, spath)
    print(f"wrote {spath}")
    lines = _header_lines(cfg) + [
        f"mesh_level={cfg.mesh_level}",
        f"vector_modes={vf.n_modes}",
        f"vector_chol_rank={vf.build_info['chol_rank']}",
        f"vector_chol_residual={fmt(vf.build_info['chol_residual'])}",
        f"coeff_modes={sf.n_modes}",
        f"coeff_chol_rank={sf.build_info['chol_rank']}",
        f"coeff_chol_residual={fmt(sf.build_info['chol_residual'])}",
    ]
    _write(os.path.join(cfg.out_dir, MANIFEST_FILE), "\n".join(lines) + "\n")


def _parse_vector(text: str, dim: int, name: str) -> np.ndarray:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError as e:
        raise ConfigError(f"bad {name} vector: {e}") from e
    if len(vals) == 1 and vals[0] == 0.0:
        return np.zeros(dim)
    if len(vals) != dim:
        raise ConfigError(f"{name} has {len(vals)} components, expected {dim}")
    return np.array(vals)


def cmd_solve_one(cfg: ExperimentConfig, y_text: str, z_text: str,
                  eps: float) -> None:
    vf, sf = _load_artifacts(cfg)
    y = _parse_vector(y_text, sf.n_modes, "y")
    z = _parse_vector(z_text, vf.n_modes, "z")
    mesh = build_disc_mesh(cfg.mesh_level)
    dp = DeformedProblem(mesh, vf, sf, z)
    diag: dict = {}
    iters, resids = {}, {}
    u0 = dp.solve_u0(diag_out=diag)
    iters["u0"], resids["u0"] = diag["iterations"], diag["residual"]
    delta = dp.solve_delta_u(y, u0, diag_out=diag)
    iters["delta_u"], resids["delta_u"] = diag["iterations"], diag["residual"]
    ueps = dp.solve_u_eps(y, eps, diag_out=diag)
    iters["u_eps"], resids["u_eps"] = diag["iterations"], diag["residual"]

    for name, fld in (("u_eps", ueps), ("u0", u0), ("delta_u", delta)):
        path = os.path.join(cfg.out_dir, f"{name}.txt")
        save_field(fld, path)
        print(f"wrote {path}")
    dmesh_path = os.path.join(cfg.out_dir, "deformed_mesh.txt")
    save_mesh(dp.deformed, dmesh_path)
    print(f"wrote {dmesh_path}")

    lines = _header_lines(cfg) + [f"eps={fmt(eps)}"]
    for name in ("u0", "delta_u", "u_eps"):
        lines.append(f"{name}_iterations={iters[name]}")
        lines.append(f"{name}_residual={fmt(resids[name])}")
    _write(os.path.join(cfg.out_dir, "solve_one_diagnostics.txt"),
           "\n".join(lines) + "\n")


def cmd_mc(cfg: ExperimentConfig, threads: int) -> None:
    vf, sf = _load_artifacts(cfg)
    mesh = build_disc_mesh(cfg.mesh_level)
    rows = []
    for eps in cfg.eps_list:
        def solver(sample, _eps=eps):
            dp = DeformedProblem(mesh, vf, sf, sample.z)
            return dp.solve_u_eps(sample.y, _eps)

        stats = mc_estimate(solver, (sf.n_modes, vf.n_modes), cfg.n_mc,
                            cfg.seed, threads=threads)
        path = os.path.join(cfg.out_dir, f"mc_stats_eps{eps:g}.txt")
        save_statistics(stats, path)
        print(f"wrote {path}")
        mean_n = norm_by_name(mesh, stats.mean, cfg.norm_mean)
        var_n = norm_by_name(mesh, stats.variance(), cfg.norm_var)
        rows.append(f"{fmt(eps)},{cfg.n_mc},{fmt(mean_n)},{fmt(var_n)}")
    lines = _header_lines(cfg) + [
        f"# norms: mean={cfg.norm_mean} variance={cfg.norm_var}",
        "eps,n_samples,mean_norm,var_norm",
    ] + rows
    _write(os.path.join(cfg.out_dir, "mc.csv"), "\n".join(lines) + "\n")


class SyntheticModel:
    """Closed-form solver stand-in with an exactly quadratic remainder.

    u_eps = u0 + eps * delta + eps^2 * q with a fixed smooth q, u0
    depending on z only and delta odd and linear in y.  Exercises every
    estimator code path without finite element solves.
    """

    N_Y = 4
    N_Z = 6

    def __init__(self, mesh):
        self.level = mesh.level
        r2 = np.sum(mesh.nodes ** 2, axis=1)
        self.base = 0.25 * (1.0 - r2)
        self.q = 0.05 * self.base
        self.coeffs = 0.1 / (1.0 + np.arange(self.N_Y))

    def u0(self, z) -> NodalField:
        scale = 1.0 + 0.2 * float(np.mean(z)) / np.sqrt(3.0)
        return NodalField(self.base * scale, self.level)

    def delta(self, y) -> NodalField:
        return NodalField(self.base * float(self.coeffs @ y), self.level)

    def u_eps(self, y, z, eps: float) -> NodalField:
        vals = (self.u0(z).values + eps * self.delta(y).values
                + eps * eps * self.q)
        return NodalField(vals, self.level)


def cmd_taylor(cfg: ExperimentConfig, synthetic: bool) -> None:
    mesh = build_disc_mesh(cfg.mesh_level)
    if synthetic:
        model = SyntheticModel(mesh)
        dims = (model.N_Y, model.N_Z)
    else:
        vf, sf = _load_artifacts(cfg)
        dims = (sf.n_modes, vf.n_modes)

    eps_grid = [0.0] + list(cfg.eps_list)
    rows = []
    slopes = []
    for s in range(cfg.n_taylor):
        sample = draw_sample(dims[0], dims[1], cfg.seed, s)
        if synthetic:
            rems = []
            u0 = model.u0(sample.z)
            delta = model.delta(sample.y)
            for eps in eps_grid:
                rem = (model.u_eps(sample.y, sample.z, eps).values
                       - u0.values - eps * delta.values)
                rems.append(h1_norm(mesh, NodalField(rem, mesh.level)))
        else:
            rems = taylor_remainders(mesh, vf, sf, sample, eps_grid)
        for eps, rem in zip(eps_grid, rems):
            rows.append(f"{s},{fmt(eps)},{fmt(rem)}")
        positive = [(e, r) for e, r in zip(eps_grid, rems) if e > 0.0]
        slopes.append(slope_fit(positive))

    lines = _header_lines(cfg) + ["sample,eps,remainder_h1"] + rows
    for s, sl in enumerate(slopes):
        lines.append(f"# slope sample={s} {fmt(sl)}")
    lines.append(f"# slope_mean {fmt(float(np.mean(slopes)))}")
    _write(os.path.join(cfg.out_dir, "taylor.csv"), "\n".join(lines) + "\n")


def _paired_sweep(cfg: ExperimentConfig, dims: tuple[int, int], n_nodes: int,
                  factory, threads: int, with_delta: bool = False):
    """Common-random-number sweep over eps with antithetic (y, -y) pairs.

    `factory(sample)` returns (u0_values, solve(sign, eps) -> values,
    delta() -> values).  Returns per-eps (momD, momE, mom0): moments of the
    coupled difference, of u_eps, and of u0, over 2 * n_pairs samples, plus
    the moments of the derivative solve when `with_delta` is set.
    """
    n_pairs = cfg.n_mc // 2
    if n_pairs < 1:
        raise ConfigError("n_mc must be at least 2 for the paired sweep")
    n_eps = len(cfg.eps_list)

    def run_block(block):
        lo, hi = block
        accD = [RunningMoments(n_nodes) for _ in range(n_eps)]
        accE = [RunningMoments(n_nodes) for _ in range(n_eps)]
        acc0 = [RunningMoments(n_nodes) for _ in range(n_eps)]
        accDelta = RunningMoments(n_nodes)
        for p in range(lo, hi):
            sample = draw_sample(dims[0], dims[1], cfg.seed, p)
            try:
                u0, solve, delta = factory(sample)
                delta_vals = delta() if with_delta else None
                for sign in (1.0, -1.0):
                    for ei, eps in enumerate(cfg.eps_list):
                        u = solve(sign, eps)
                        accD[ei].update(u - u0)
                        accE[ei].update(u)
                        acc0[ei].update(u0)
                    if with_delta:
                        accDelta.update(sign * delta_vals)
            except DomainUQError as e:
                raise type(e)(f"sample pair {p}: {e}") from e
        return accD, accE, acc0, accDelta

    blocks = sample_blocks(n_pairs)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_block, blocks))
    else:
        results = [run_block(b) for b in blocks]

    merged = []
    for ei in range(n_eps):
        momD = tree_merge([r[0][ei] for r in results])
        momE = tree_merge([r[1][ei] for r in results])
        mom0 = tree_merge([r[2][ei] for r in results])
        merged.append((momD, momE, mom0))
    mom_delta = tree_merge([r[3] for r in results]) if with_delta else None
    return merged, mom_delta


def cmd_convergence(cfg: ExperimentConfig, synthetic: bool, threads: int,
                    second_order_variance: bool = False) -> None:
    mesh = build_disc_mesh(cfg.mesh_level)

    if synthetic:
        model = SyntheticModel(mesh)
        dims = (model.N_Y, model.N_Z)

        def baseline_solver(z):
            return model.u0(z)

        def factory(sample):
            u0 = model.u0(sample.z).values

            def solve(sign, eps):
                return model.u_eps(sign * sample.y, sample.z, eps).values

            def delta():
                return model.delta(sample.y).values
            return u0, solve, delta
    else:
        vf, sf = _load_artifacts(cfg)
        dims = (sf.n_modes, vf.n_modes)

        def baseline_solver(z):
            return DeformedProblem(mesh, vf, sf, z).solve_u0()

        def factory(sample):
            dp = DeformedProblem(mesh, vf, sf, sample.z)
            u0 = dp.solve_u0()
            a_r_q = dp.rough_qvalues(sample.y)
            K_r = dp.rough_stiffness(a_r_q)

            def solve(sign, eps):
                # u_eps at (sign * y) equals the solve at amplitude sign * eps
                return dp.solve_u_eps_from_parts(a_r_q, K_r, sign * eps).values

            def delta():
                return dp.solve_delta_u(sample.y, u0).values
            return u0.values, solve, delta

    rule = smolyak_rule(dims[1], cfg.quad_level)
    baseline = quadrature_estimate(baseline_solver, rule, threads=threads)
    base_path = os.path.join(cfg.out_dir, "baseline_stats.txt")
    save_statistics(baseline, base_path)
    print(f"wrote {base_path}")

    moments, mom_delta = _paired_sweep(cfg, dims, mesh.n_nodes, factory,
                                       threads, second_order_variance)
    correction = (mom_delta.freeze(mesh.level).variance().values
                  if second_order_variance else None)

    rows = []
    mean_points = []
    var_points = []
    n = 2 * (cfg.n_mc // 2)
    for eps, (momD, momE, mom0) in zip(cfg.eps_list, moments):
        statsD = momD.freeze(mesh.level)
        statsE = momE.freeze(mesh.level)
        stats0 = mom0.freeze(mesh.level)
        err_mean = norm_by_name(mesh, statsD.mean, cfg.norm_mean)
        var_diff = (statsE.variance() - stats0.variance()).values
        if correction is not None:
            var_diff = var_diff - eps * eps * correction
        err_var = norm_by_name(mesh, NodalField(var_diff, mesh.level),
                               cfg.norm_var)
        se = NodalField(np.sqrt(statsD.variance().values / n), mesh.level)
        stderr = l2_norm(mesh, se)
        rows.append(f"{fmt(eps)},{fmt(err_mean)},{fmt(err_var)},"
                    f"{fmt(stderr)},{n}")
        mean_points.append((eps, err_mean))
        var_points.append((eps, err_var))

    lines = _header_lines(cfg) + [
        f"# quad_level={cfg.quad_level} quad_nodes={len(rule.nodes)}",
        f"# norms: mean={cfg.norm_mean} variance={cfg.norm_var}",
        f"# second_order_variance={'on' if second_order_variance else 'off'}",
        "eps,err_mean_h1,err_var_w11,mc_stderr_mean,n_samples",
    ] + rows
    if len(cfg.eps_list) >= 2:
        for label, points in (("slope_mean", mean_points),
                              ("slope_var", var_points)):
            if all(v > 0.0 for _, v in points):
                lines.append(f"# {label} {fmt(slope_fit(points))}")
            else:
                lines.append(f"# {label} undefined")
    _write(os.path.join(cfg.out_dir, "convergence.csv"),
           "\n".join(lines) + "\n")

    for name, points in (("mean", mean_points), ("var", var_points)):
        dat = "\n".join(f"{fmt(e)} {fmt(v)}" for e, v in points) + "\n"
        _write(os.path.join(cfg.out_dir, f"convergence_{name}.dat"), dat)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="domainuq",
        description="Uncertainty quantification for diffusion on randomly "
                    "deformed discs with rough random coefficients.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="path to key=value config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads (results are thread-count "
                            "independent)")
        p.add_argument("--synthetic", action="store_true",
                       help="replace solves by the closed-form model")

    for name in ("build-kl", "solve-one", "mc", "taylor", "convergence"):
        p = sub.add_parser(name)
        add_common(p)
        if name == "solve-one":
            p.add_argument("--y", required=True,
                           help="comma-separated coefficient parameters "
                                "(a single 0 broadcasts)")
            p.add_argument("--z", required=True,
                           help="comma-separated domain parameters "
                                "(a single 0 broadcasts)")
            p.add_argument("--eps", type=float, required=True)
        if name == "convergence":
            p.add_argument("--second-order-variance", action="store_true",
                           help="subtract the quadratic variance correction "
                                "term from the variance error")
    return parser


def run(argv=None) -> None:
    args = build_parser().parse_args(argv)
    cfg = load_config(args.config) if args.config else validate_config(
        ExperimentConfig())
    cfg = override_config(cfg, seed=args.seed, out_dir=args.out)
    os.makedirs(cfg.out_dir, exist_ok=True)
    if args.threads < 1:
        raise ConfigError("--threads must be at least 1")

    if args.command == "build-kl":
        cmd_build_kl(cfg)
    elif args.command == "solve-one":
        cmd_solve_one(cfg, args.y, args.z, args.eps)
    elif args.command == "mc":
        cmd_mc(cfg, args.threads)
    elif args.command == "taylor":
        cmd_taylor(cfg, args.synthetic)
    elif args.command == "convergence":
        cmd_convergence(cfg, args.synthetic, args.threads,
                        args.second_order_variance)


def main(argv=None) -> int:
    try:
        run(argv)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DomainUQError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
