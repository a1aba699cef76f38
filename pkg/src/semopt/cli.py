"""Command-line driver: forward runs, gradient checks, optimization,
convergence studies, checkpoint schedules, and kernel benchmarks.

Exit codes: 0 success, 2 validation error, 3 numeric failure,
4 optimization non-convergence.

Only stdlib is imported at module scope: `--threads` must pin the BLAS
thread pools through environment variables before numpy is first imported,
so the numerical modules are loaded lazily inside `main`.  Results are
independent of the thread count (the per-element matrices are far below the
BLAS threading thresholds); identical configuration and seed give
bitwise-identical CSV bodies.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3
EXIT_NOCONV = 4


def _apply_threads(argv):
    threads = None
    for i, a in enumerate(argv):
        if a == "--threads" and i + 1 < len(argv):
            threads = argv[i + 1]
        elif a.startswith("--threads="):
            threads = a.split("=", 1)[1]
    if threads is not None:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)


def _problem_parent():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("problem")
    g.add_argument("--problem", default="burgers1d",
                   choices=["burgers1d", "advdiff1d", "burgers3d", "diffusion1d"])
    g.add_argument("--elements", type=int, default=None, help="elements per axis")
    g.add_argument("--degree", type=int, default=None, help="polynomial degree")
    g.add_argument("--nu", type=float, default=None, help="viscosity")
    g.add_argument("--horizon", type=float, default=None, help="time horizon T")
    g.add_argument("--steps", type=int, default=None, help="number of fixed steps")
    g.add_argument("--dt", type=float, default=None, help="explicit step size")
    g.add_argument("--scheme", default=None, choices=["euler", "rk3", "cn"])
    g.add_argument("--adaptive", action="store_true", default=None)
    g.add_argument("--tol-a", type=float, default=None, help="absolute step tolerance")
    g.add_argument("--tol-r", type=float, default=None, help="relative step tolerance")
    g.add_argument("--seed", type=int, default=0, help="rng seed")
    g.add_argument("--checkpoint-slots", type=int, default=None,
                   help="binomial snapshot budget (default: store all)")
    g.add_argument("--threads", type=int, default=None,
                   help="BLAS/OpenMP thread count (default: machine parallelism)")
    g.add_argument("--config", default=None,
                   help="key = value file; flags override file entries")
    return p


def build_parser():
    parent = _problem_parent()
    parser = argparse.ArgumentParser(
        prog="semopt",
        description="Matrix-free spectral-element PDE-constrained optimization",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("forward", parents=[parent],
                       help="integrate forward, write snapshot and step log")
    p.add_argument("--output", required=True, help="output prefix")
    p.add_argument("--initial", default=None, help="snapshot file to start from")

    p = sub.add_parser("gradcheck", parents=[parent],
                       help="adjoint vs finite-difference gradient report")
    p.add_argument("--output", required=True)
    p.add_argument("--ndirs", type=int, default=5)
    p.add_argument("--eps", default="1e-5", help="comma list of FD step sizes")

    p = sub.add_parser("optimize", parents=[parent],
                       help="recover the initial condition by LMVM")
    p.add_argument("--output", required=True)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--gtol", type=float, default=1e-8)
    p.add_argument("--ftol", type=float, default=0.0)
    p.add_argument("--memory", type=int, default=5)
    p.add_argument("--start", default="guess", choices=["guess", "exact"])

    p = sub.add_parser("convergence", parents=[parent],
                       help="h/p refinement study of the recovered IC error")
    p.add_argument("--output", required=True)
    p.add_argument("--mode", required=True, choices=["h", "p"])
    p.add_argument("--sweep", required=True, help="comma list of E (h) or N (p)")
    p.add_argument("--max-iters", type=int, default=400)
    p.add_argument("--gtol", type=float, default=1e-12)
    p.add_argument("--memory", type=int, default=30)

    p = sub.add_parser("schedule", help="print a checkpoint schedule as CSV")
    p.add_argument("--output", default=None, help="CSV path (default: stdout)")
    p.add_argument("--steps", type=int, required=True, dest="m")
    p.add_argument("--checkpoint-slots", type=int, default=None,
                   help="slots (omit for store-all)")

    p = sub.add_parser("bench", parents=[parent],
                       help="kernel and integration timings")
    p.add_argument("--output", required=True)
    p.add_argument("--degrees", default="8,12,16,24", help="comma list of N")
    p.add_argument("--reps", type=int, default=3)
    return parser


def _load_config_file(path, parser, argv):
    """Config-file entries become parser defaults; explicit flags still win."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SystemExit(f"{path}:{lineno}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            values[key.replace("-", "_")] = val
    known = set()
    for action in parser._actions:
        known.add(action.dest)
    for sub_action in parser._subparsers._group_actions:
        for sp in sub_action.choices.values():
            for action in sp._actions:
                known.add(action.dest)
    unknown = sorted(set(values) - known)
    if unknown:
        raise ValidationErrorProxy(f"unknown config keys: {', '.join(unknown)}")
    return values


class ValidationErrorProxy(Exception):
    """Raised for config problems before the numeric modules are imported."""


def _coerce(values, parser_args):
    out = {}
    for k, v in values.items():
        if v.lower() in ("true", "false"):
            out[k] = v.lower() == "true"
        else:
            try:
                out[k] = int(v)
            except ValueError:
                try:
                    out[k] = float(v)
                except ValueError:
                    out[k] = v
    return out


def _problem_params(args):
    params = {}
    for key in ("elements", "degree", "nu", "horizon", "steps", "dt",
                "scheme", "checkpoint_slots"):
        val = getattr(args, key, None)
        if val is not None:
            params[key] = val
    if getattr(args, "adaptive", None):
        params["adaptive"] = True
    if getattr(args, "tol_a", None) is not None:
        params["tol_a"] = args.tol_a
    if getattr(args, "tol_r", None) is not None:
        params["tol_r"] = args.tol_r
    if args.problem == "advdiff1d":
        params.setdefault("seed", args.seed)
    return params


def _header_lines(args, version):
    pairs = sorted(
        (k, v) for k, v in vars(args).items()
        if k not in ("command", "func") and v is not None
    )
    lines = [f"# semopt {version}"]
    lines += [f"# {k} = {v}" for k, v in pairs]
    return lines


def _write_csv(path, header_lines, columns, rows):
    def fmt(x):
        if isinstance(x, float):
            return f"{x:.17g}"
        return str(x)

    body = [",".join(columns)]
    body += [",".join(fmt(v) for v in row) for row in rows]
    text = "\n".join(header_lines + body) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


# -- commands -----------------------------------------------------------------


def cmd_forward(args, mods):
    problems, grid_mod = mods["problems"], mods["grid"]
    prob = problems.make_problem(args.problem, **_problem_params(args))
    if args.initial:
        g, u0 = grid_mod.load_field(args.initial)
        if g.nglobal != prob.grid.nglobal:
            raise mods["errors"].ValidationError(
                "initial snapshot does not match the problem grid")
        u0 = prob.grid.mask(u0)
    else:
        u0 = prob.u_guess
    fwd = prob.forward(u0, store=None, keep_log=True)
    grid_mod.save_field(args.output + ".field", prob.grid, fwd.u_final)
    rows = [(n, t, dt, wlte, acc) for (n, t, dt, wlte, acc) in fwd.step_log]
    header = _header_lines(args, mods["version"])
    header.append(f"# steps = {fwd.n_steps}")
    if prob.exact_solution is not None and prob.grid.dim == 1:
        x = prob.grid.node_coordinates()[0]
        err = prob.grid.l2_norm(
            prob.grid.mask(fwd.u_final - prob.exact_solution(x, prob.ts.t_end))
            if prob.grid.has_mask
            else fwd.u_final - prob.exact_solution(x, prob.ts.t_end)
        )
        header.append(f"# terminal_l2_error = {err:.17g}")
    _write_csv(args.output + ".csv", header,
               ["step", "t", "dt", "wlte", "accepted"], rows)
    return EXIT_OK


def cmd_gradcheck(args, mods):
    np = mods["np"]
    problems = mods["problems"]
    prob = problems.make_problem(args.problem, **_problem_params(args))
    eps_list = [float(s) for s in args.eps.split(",") if s]
    if args.ndirs < 1:
        raise mods["errors"].ValidationError("need at least one direction")
    u0 = prob.u_guess
    j0, g = prob.evaluate(u0)
    rng = np.random.default_rng(args.seed)
    rows = []
    worst = 0.0
    for k in range(args.ndirs):
        w = rng.standard_normal(prob.grid.nglobal)
        w = prob.grid.mask(w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            raise mods["errors"].ValidationError("zero perturbation direction")
        w /= nw
        adj = float(np.dot(g, w))
        for eps in eps_list:
            jp, _ = _objective_only(prob, u0 + eps * w, mods)
            jm, _ = _objective_only(prob, u0 - eps * w, mods)
            fd = (jp - jm) / (2.0 * eps)
            rel = abs(fd - adj) / max(abs(adj), 1e-300)
            worst = max(worst, rel)
            rows.append((k, eps, fd, adj, rel))
    header = _header_lines(args, mods["version"])
    header.append(f"# J0 = {j0:.17g}")
    header.append(f"# max_rel_error = {worst:.17g}")
    _write_csv(args.output, header,
               ["direction", "eps", "fd", "adjoint", "rel_error"], rows)
    return EXIT_OK


def _objective_only(prob, u0, mods):
    adjoint, timeloop = mods["adjoint"], mods["timeloop"]
    fwd = timeloop.integrate(prob.op, u0, prob.ts, store_steps=None)
    j, _ = adjoint.terminal_condition(prob.grid, fwd.u_final, prob.u_target)
    return j, fwd


def cmd_optimize(args, mods):
    problems, optimize, grid_mod = mods["problems"], mods["optimize"], mods["grid"]
    prob = problems.make_problem(args.problem, **_problem_params(args))
    if args.start == "exact":
        if prob.u_exact_ic is None:
            raise mods["errors"].ValidationError(
                f"problem {args.problem} has no exact initial condition")
        u0 = prob.u_exact_ic
    else:
        u0 = prob.u_guess
    cfg = optimize.OptimConfig(max_iters=args.max_iters, gtol=args.gtol,
                               ftol=args.ftol, memory=args.memory)
    res = optimize.minimize(prob.evaluate, u0, cfg)
    grid_mod.save_field(args.output + ".field", prob.grid, res.x)
    header = _header_lines(args, mods["version"])
    header.append(f"# status = {res.status}")
    if prob.u_exact_ic is not None:
        header.append(f"# ic_l2_error = {prob.ic_error(res.x):.17g}")
    _write_csv(args.output + ".csv", header,
               ["iter", "J", "grad_norm", "step_length", "fevals", "wall_time_s"],
               res.log)
    if res.status in ("gtol", "ftol") or args.max_iters == 0:
        return EXIT_OK
    return EXIT_NOCONV


def cmd_convergence(args, mods):
    np, problems, optimize = mods["np"], mods["problems"], mods["optimize"]
    sweep = [int(s) for s in args.sweep.split(",") if s]
    if len(sweep) < 3:
        raise mods["errors"].ValidationError("need at least 3 sweep points for a fit")
    params = _problem_params(args)
    rows = []
    for val in sweep:
        p = dict(params)
        if args.mode == "h":
            p["elements"] = val
        else:
            p["degree"] = val
        prob = problems.make_problem(args.problem, **p)
        if prob.u_exact_ic is None:
            raise mods["errors"].ValidationError(
                f"problem {args.problem} has no analytic reference")
        cfg = optimize.OptimConfig(max_iters=args.max_iters, gtol=args.gtol,
                                   memory=args.memory)
        res = optimize.minimize(prob.evaluate, prob.u_exact_ic, cfg)
        rows.append((val, prob.ic_error(res.x), res.iterations, res.value))
    errs = np.array([r[1] for r in rows], dtype=float)
    vals = np.array([r[0] for r in rows], dtype=float)
    header = _header_lines(args, mods["version"])
    if args.mode == "h":
        rate = float(np.polyfit(np.log(1.0 / vals), np.log(np.maximum(errs, 1e-300)), 1)[0])
        header.append(f"# fitted_h_rate = {rate:.6g}")
    else:
        slope, intercept = np.polyfit(vals, np.log(np.maximum(errs, 1e-300)), 1)
        pred = slope * vals + intercept
        logs = np.log(np.maximum(errs, 1e-300))
        ss_res = float(np.sum((logs - pred) ** 2))
        ss_tot = float(np.sum((logs - np.mean(logs)) ** 2))
        r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
        header.append(f"# fitted_p_slope = {float(slope):.6g}")
        header.append(f"# fit_r2 = {r2:.6g}")
    name = "elements" if args.mode == "h" else "degree"
    _write_csv(args.output, header, [name, "ic_l2_error", "iters", "J"], rows)
    return EXIT_OK


def cmd_schedule(args, mods):
    checkpoint = mods["checkpoint"]
    if args.checkpoint_slots is None:
        sched = checkpoint.plan_store_all(args.m)
    else:
        sched = checkpoint.plan_binomial(args.m, args.checkpoint_slots)
    rows = []
    for i, act in enumerate(sched.actions):
        kind = type(act).__name__.lower()
        slot = getattr(act, "slot", "")
        a = getattr(act, "start", getattr(act, "step", ""))
        b = getattr(act, "stop", "")
        rows.append((i, kind, slot, a, b))
    header = [f"# semopt {mods['version']}",
              f"# steps = {sched.n_steps}",
              f"# slots = {sched.slots}",
              f"# recomputed = {sched.recomputed}"]
    _write_csv(args.output, header, ["index", "action", "slot", "step", "stop"], rows)
    return EXIT_OK


def cmd_bench(args, mods):
    np, problems, checkpoint = mods["np"], mods["problems"], mods["checkpoint"]
    adjoint, timeloop = mods["adjoint"], mods["timeloop"]
    degrees = [int(s) for s in args.degrees.split(",") if s]
    reps = max(3, args.reps)
    params = _problem_params(args)
    rows = []
    for n in degrees:
        p = dict(params)
        p["degree"] = n
        prob = problems.make_problem(args.problem, **p)
        u = prob.u_guess
        z = prob.grid.mask(np.random.default_rng(args.seed).standard_normal(prob.grid.nglobal))
        for name, fn in (("apply_rhs", lambda: prob.op.apply_rhs(u)),
                         ("apply_jacobian_transpose",
                          lambda: prob.op.apply_jacobian_transpose(u, z))):
            best = min(_time_it(fn) for _ in range(reps))
            rows.append((name, n, prob.grid.nglobal, best))
        best_f, best_b = [], []
        for _ in range(reps):
            t0 = time.perf_counter()
            fwd = prob.forward(prob.u_guess)
            best_f.append(time.perf_counter() - t0)
            sched = prob.schedule_for(fwd.n_steps)
            _, lam = adjoint.terminal_condition(prob.grid, fwd.u_final, prob.u_target)
            t0 = time.perf_counter()
            adjoint.sweep(prob.op, prob.ts, fwd, sched, lam)
            best_b.append(time.perf_counter() - t0)
        rows.append(("forward_integrate", n, prob.grid.nglobal, min(best_f)))
        rows.append(("adjoint_sweep", n, prob.grid.nglobal, min(best_b)))
        rows.append(("adjoint_over_forward", n, prob.grid.nglobal,
                     min(best_b) / min(best_f)))
    header = _header_lines(args, mods["version"])
    _write_csv(args.output, header, ["operation", "degree", "unknowns", "seconds"], rows)
    return EXIT_OK


def _time_it(fn):
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    _apply_threads(argv)
    parser = build_parser()

    # Two-phase parse so config-file entries act as defaults under flags.
    try:
        pre, _ = parser.parse_known_args(argv)
    except SystemExit as e:
        return EXIT_VALIDATION if e.code not in (0, None) else EXIT_OK
    if getattr(pre, "config", None):
        try:
            file_vals = _load_config_file(pre.config, parser, argv)
        except ValidationErrorProxy as e:
            print(f"semopt: {e}", file=sys.stderr)
            return EXIT_VALIDATION
        except OSError as e:
            print(f"semopt: {e}", file=sys.stderr)
            return EXIT_VALIDATION
        parser.set_defaults(**_coerce(file_vals, None))
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_VALIDATION if e.code not in (0, None) else EXIT_OK

    # Numeric modules are imported only now (see module docstring).
    import numpy as np  # noqa: F401

    from . import __version__, adjoint, checkpoint, errors, grid, optimize, problems, timeloop

    mods = {
        "np": np, "adjoint": adjoint, "checkpoint": checkpoint, "errors": errors,
        "grid": grid, "optimize": optimize, "problems": problems,
        "timeloop": timeloop, "version": __version__,
    }
    commands = {
        "forward": cmd_forward,
        "gradcheck": cmd_gradcheck,
        "optimize": cmd_optimize,
        "convergence": cmd_convergence,
        "schedule": cmd_schedule,
        "bench": cmd_bench,
    }
    try:
        return commands[args.command](args, mods)
    except errors.ValidationError as e:
        print(f"semopt: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except errors.NumericFailure as e:
        print(f"semopt: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
