"""Command-line entry point for the full pipeline.

collect -> train-teacher -> train-forward -> distill -> train-ddpm ->
eval / sweep / bench -> serve -> oracle-check.

Every subcommand echoes its resolved configuration before running so a run is
reproducible from its output header alone.  Seeds are always explicit.
Exit codes: 0 ok, 2 usage, 3 data/format, 4 runtime.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import envs, eval as evalmod, persistence, student as studentmod, teacher as teachermod
from .oracle import FiniteDataset, denoiser_field
from .schedule import ScheduleParams, sigma_ladder

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


def _echo_config(args: argparse.Namespace) -> None:
    pairs = sorted(vars(args).items())
    print("# config " + " ".join(f"{k}={v}" for k, v in pairs if k != "func"))


def _schedule_from_args(args) -> ScheduleParams:
    return ScheduleParams(sigma_min=args.sigma_min, sigma_max=args.sigma_max,
                          sigma_data=args.sigma_data, rho=args.rho, T=args.T)


def _add_schedule_flags(p: argparse.ArgumentParser):
    p.add_argument("--sigma-min", dest="sigma_min", type=float, default=0.002)
    p.add_argument("--sigma-max", dest="sigma_max", type=float, default=80.0)
    p.add_argument("--sigma-data", dest="sigma_data", type=float, default=0.5)
    p.add_argument("--rho", type=float, default=7.0)
    p.add_argument("--T", type=int, default=40)


def _add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--steps", type=int, default=20000)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--layers", type=int, default=3)


def _train_cfg(args) -> teachermod.TrainConfig:
    return teachermod.TrainConfig(lr=args.lr, batch=args.batch,
                                  steps=args.steps, seed=args.seed)


def cmd_collect(args) -> int:
    env = envs.make_env(args.env)
    rng = np.random.default_rng(args.seed)
    ds = envs.collect_dataset(env, args.n, rng)
    persistence.write_dataset(args.out, ds)
    print(f"wrote {len(ds)} transitions "
          f"(state_dim={ds.state_dim}, action_dim={ds.action_dim}) to {args.out}")
    return EXIT_OK


def cmd_train_teacher(args) -> int:
    ds = persistence.read_dataset(args.data)
    cfg = teachermod.TeacherConfig(
        state_dim=ds.state_dim, action_dim=ds.action_dim,
        hidden=args.hidden, layers=args.layers, gamma=args.gamma,
        squared_residual=not args.unsquared,
        schedule=_schedule_from_args(args))
    model, history = teachermod.teacher_train(ds, cfg, _train_cfg(args))
    ckpt = teachermod.teacher_to_checkpoint(
        model, meta={"val_history": [[s, float(e)] for s, e in history]})
    persistence.write_checkpoint(args.out, ckpt)
    print(f"teacher trained: final val denoise error "
          f"{history[-1][1]:.5f}, checkpoint -> {args.out}")
    return EXIT_OK


def cmd_train_forward(args) -> int:
    ds = persistence.read_dataset(args.data)
    cfg = studentmod.ForwardConfig(state_dim=ds.state_dim,
                                   action_dim=ds.action_dim,
                                   hidden=args.hidden, layers=args.layers)
    model, history = studentmod.forward_train(ds, cfg, _train_cfg(args))
    persistence.write_checkpoint(args.out, studentmod.forward_to_checkpoint(
        model, meta={"val_history": [[s, float(e)] for s, e in history]}))
    print(f"forward model trained: final val MSE {history[-1][1]:.6f}, "
          f"checkpoint -> {args.out}")
    return EXIT_OK


def cmd_distill(args) -> int:
    teacher = teachermod.teacher_from_checkpoint(
        persistence.read_checkpoint(args.teacher))
    ds = persistence.read_dataset(args.data)
    mode = {"csa": studentmod.MODE_CSA,
            "csa-dagger": studentmod.MODE_CSA_DAGGER}[args.mode]
    cfg = studentmod.StudentConfig(
        state_dim=ds.state_dim, action_dim=ds.action_dim, mode=mode,
        hidden=teacher.cfg.hidden, layers=teacher.cfg.layers,
        schedule=teacher.cfg.schedule)
    model, history = studentmod.distill_train(teacher, ds, cfg, _train_cfg(args))
    persistence.write_checkpoint(args.out, studentmod.student_to_checkpoint(
        model, meta={"val_history": [[s, float(e)] for s, e in history]}))
    print(f"student ({mode}) distilled: final held-out distill loss "
          f"{history[-1][1]:.6f}, checkpoint -> {args.out}")
    return EXIT_OK


def cmd_train_ddpm(args) -> int:
    ds = persistence.read_dataset(args.data)
    cfg = studentmod.DdpmConfig(state_dim=ds.state_dim, action_dim=ds.action_dim,
                                K=args.K, beta_max=args.beta_max,
                                hidden=args.hidden, layers=args.layers)
    model, history = studentmod.ddpm_train(ds, cfg, _train_cfg(args))
    persistence.write_checkpoint(args.out, studentmod.ddpm_to_checkpoint(
        model, meta={"val_history": [[s, float(e)] for s, e in history]}))
    print(f"ddpm baseline trained: final noise-prediction MSE "
          f"{history[-1][1]:.6f}, checkpoint -> {args.out}")
    return EXIT_OK


def _load_copilot(args):
    name = args.copilot
    if name == "none":
        return evalmod.NoneCopilot()
    ckpt = persistence.read_checkpoint(args.ckpt)
    if name in ("csa", "csa_dagger"):
        model = studentmod.student_from_checkpoint(ckpt)
        phi = None
        if name == "csa_dagger":
            if not args.forward_ckpt:
                raise FileNotFoundError("csa_dagger needs --forward-ckpt")
            phi = studentmod.forward_from_checkpoint(
                persistence.read_checkpoint(args.forward_ckpt))
        return evalmod.CsaCopilot(model, phi)
    if name == "ddpm":
        return evalmod.DdpmCopilot(studentmod.ddpm_from_checkpoint(ckpt))
    raise ValueError(f"unknown copilot {name!r}")


def _add_eval_flags(p):
    p.add_argument("--env", choices=("lander", "slot"), default="lander")
    p.add_argument("--pilot", default="noised",
                   choices=("expert",) + envs.SURROGATE_KINDS)
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--copilot", default="none",
                   choices=("none", "csa", "csa_dagger", "ddpm"))
    p.add_argument("--ckpt", default="")
    p.add_argument("--forward-ckpt", dest="forward_ckpt", default="")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--rollouts", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", default="")


def _emit_table(table: evalmod.MetricsTable, csv_path: str):
    print(table.to_text(), end="")
    if csv_path:
        with open(csv_path, "w") as f:
            f.write(table.to_csv())
        print(f"csv -> {csv_path}")


def cmd_eval(args) -> int:
    copilot = _load_copilot(args)
    cfg = evalmod.EvalConfig(env_name=args.env, pilot_kind=args.pilot,
                             epsilon=args.epsilon, copilot_name=args.copilot,
                             alpha=args.alpha, seeds=args.seeds,
                             rollouts=args.rollouts)
    row = evalmod.evaluate(
        cfg, copilot if args.copilot != "none" else None, base_seed=args.seed)
    _emit_table(evalmod.MetricsTable(rows=[row]), args.csv)
    return EXIT_OK


def cmd_sweep(args) -> int:
    copilot = _load_copilot(args)
    alphas = [float(a) for a in args.alphas.split(",") if a != ""]
    cfg = evalmod.EvalConfig(env_name=args.env, pilot_kind=args.pilot,
                             epsilon=args.epsilon, copilot_name=args.copilot,
                             seeds=args.seeds, rollouts=args.rollouts)
    table = evalmod.alpha_sweep(
        cfg, alphas, copilot if args.copilot != "none" else None,
        base_seed=args.seed)
    _emit_table(table, args.csv)
    return EXIT_OK


def cmd_bench(args) -> int:
    copilot = _load_copilot(args)
    env = envs.make_env(args.env)
    state = env.reset(np.random.default_rng(args.seed))
    view = envs.copilot_view(state)
    a_u = np.array([0.2, 0.3], dtype=np.float32)
    stats = evalmod.latency_bench(copilot, view, a_u, args.alpha,
                                  n_calls=args.n_calls)
    print(f"copilot={args.copilot} alpha={args.alpha} nfe={stats['nfe']} "
          f"p50={stats['lat_p50_us']:.1f}us p99={stats['lat_p99_us']:.1f}us "
          f"mean={stats['lat_mean_us']:.1f}us over {stats['n_calls']} calls")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    env = envs.make_env(args.env)
    eps, success = envs.calibrate_epsilon(env, args.kind,
                                          episodes=args.episodes,
                                          seed=args.seed)
    print(f"kind={args.kind} epsilon={eps:.4f} unassisted_success={success:.3f}")
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    pts = np.array([[-1.0], [1.0]]) if args.fixture == "two-point" else \
        np.array([[-1.0, -0.5], [1.0, 0.5]])
    ds = FiniteDataset(pts)
    schedule = _schedule_from_args(args)
    grid_1d = np.linspace(-args.extent, args.extent, args.grid)
    if ds.dim == 1:
        grid = grid_1d.reshape(-1, 1)
    else:
        grid = np.stack([grid_1d, 0.5 * grid_1d], axis=1)
    lines = ["sigma," + ",".join(f"x{i}" for i in range(ds.dim))
             + "," + ",".join(f"d{i}" for i in range(ds.dim))]
    for sigma in sigma_ladder(schedule):
        field = denoiser_field(ds, float(sigma), grid)
        for x, d in zip(grid, field):
            lines.append(f"{sigma:.6g}," + ",".join(f"{v:.6g}" for v in x)
                         + "," + ",".join(f"{v:.6g}" for v in d))
    out = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as f:
            f.write(out)
        print(f"denoiser field ({len(lines) - 1} rows) -> {args.out}")
    else:
        print(out, end="")
    return EXIT_OK


def cmd_serve(args) -> int:
    from . import service
    service.run_server(host=args.host, port=args.port, ckpt=args.ckpt,
                       forward_ckpt=args.forward_ckpt)
    return EXIT_OK


def _apply_config_file(argv: list[str]) -> list[str]:
    """Merge key=value lines from --config under the explicit flags."""
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    try:
        path = argv[i + 1]
    except IndexError:
        raise SystemExit(EXIT_USAGE)
    rest = argv[:i] + argv[i + 2:]
    injected = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            flag = "--" + key.strip().replace("_", "-")
            if flag not in rest:          # explicit flags win
                injected.extend([flag, value.strip()])
    return rest[:1] + injected + rest[1:]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="csakit",
        description="One-step shared-autonomy copilots for 2D control")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("collect", help="collect expert transitions")
    p.add_argument("--env", choices=("lander", "slot"), required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("train-teacher", help="train the multi-step denoiser")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gamma", type=float, default=0.3)
    p.add_argument("--unsquared", action="store_true",
                   help="use the unsquared residual variant")
    _add_schedule_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("train-forward", help="train the next-state model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_forward)

    p = sub.add_parser("distill", help="distill teacher into a one-step student")
    p.add_argument("--teacher", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=("csa", "csa-dagger"), default="csa")
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("train-ddpm", help="train the partial-diffusion baseline")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--K", type=int, default=50)
    p.add_argument("--beta-max", dest="beta_max", type=float, default=0.1)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_ddpm)

    p = sub.add_parser("eval", help="seeded rollout grid for one config")
    _add_eval_flags(p)
    p.add_argument("--alpha", type=float, default=0.0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="success/crash curves over alpha")
    _add_eval_flags(p)
    p.add_argument("--alphas", default="0,0.2,0.4,0.6,0.8,1.0")
    p.set_defaults(func=cmd_sweep)

    for name in ("bench", "assist-bench"):
        p = sub.add_parser(name, help="per-call latency and NFE micro-benchmark")
        p.add_argument("--env", choices=("lander", "slot"), default="lander")
        p.add_argument("--copilot", choices=("none", "csa", "csa_dagger", "ddpm"),
                       default="csa")
        p.add_argument("--ckpt", default="")
        p.add_argument("--forward-ckpt", dest="forward_ckpt", default="")
        p.add_argument("--alpha", type=float, default=0.5)
        p.add_argument("--n-calls", dest="n_calls", type=int, default=200)
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=cmd_bench)

    p = sub.add_parser("calibrate", help="find the flaw level for ~20% success")
    p.add_argument("--env", choices=("lander", "slot"), default="lander")
    p.add_argument("--kind", choices=envs.SURROGATE_KINDS, required=True)
    p.add_argument("--episodes", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("oracle-check", help="dump the closed-form denoiser field")
    p.add_argument("--fixture", choices=("two-point", "two-mode-2d"),
                   default="two-point")
    p.add_argument("--grid", type=int, default=21)
    p.add_argument("--extent", type=float, default=1.5)
    p.add_argument("--out", default="")
    _add_schedule_flags(p)
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("serve", help="run the realtime session server")
    p.add_argument("--ckpt", default="")
    p.add_argument("--forward-ckpt", dest="forward_ckpt", default="")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8787)
    p.set_defaults(func=cmd_serve)

    return ap


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _apply_config_file(argv)
    except OSError as e:
        print(f"error: cannot read config file: {e}", file=sys.stderr)
        return EXIT_USAGE
    parser = build_parser()
    args = parser.parse_args(argv)
    _echo_config(args)
    try:
        return args.func(args)
    except (persistence.FormatError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
