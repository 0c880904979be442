"""``msbd`` command line: synth, solve, phase, demo2d, verify.

Every command accepts ``--config FILE`` naming a JSON object whose ``"cmd"``
field matches the subcommand; its other keys use the flag names (with
underscores). Explicit flags override config values.
"""

from __future__ import annotations

import argparse
import io as _io
import json
import sys
from pathlib import Path

from . import experiments
from .fourier import Lattice
from .io import atomic_write_text, load_instance, save_instance, save_recovery
from .objective import Objective
from .optimize import PMGD_PRESETS, OptimizerConfig, practical_schedule, random_sphere_init, run, theoretical_schedule
from .precondition import build_preconditioner
from .recovery import accuracy_metric, align, recover, spectral_ratio_metric
from .synthesis import (
    NOISE_PRESETS,
    GroundTruthInstance,
    NoiseSpec,
    gen_complex_gaussian_signal,
    gen_joint_sparse_complex,
    observe,
    random_instance,
)

DEFAULTS = {
    "synth": dict(n=128, dims=None, N=256, theta=0.1, seed=0, kappa=None, noise="none", sigma=None,
                  field="real", s=None, out=None),
    "solve": dict(instance=None, mode="mgd", preset=None, schedule="practical", gamma=None, T=None,
                  radius=None, interval=None, tol=None, rho=5e-4, xi=700.0, T_cap=10000, seed=0,
                  theta=None, record_every=1, out=None, trace=None),
    "phase": dict(kind="real", axis1="n", values1=[], axis2="N", values2=[], trials=20, fixed={},
                  noise=None, seed=0, threads=None, out=None),
    "demo2d": dict(image=None, channel_template=None, N=256, theta=0.01, T=100, gamma=0.05, seed=experiments.DEMO_SEED,
                   outdir="demo2d_out"),
    "verify": dict(seed=0, samples=10000, mc_channels=20000),
}


class CliError(Exception):
    pass


def _number_list(text):
    out = []
    for tok in str(text).replace(";", ",").split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            out.append(int(tok))
        except ValueError:
            out.append(float(tok))
    return out


def _dims(text):
    vals = [int(v) for v in str(text).lower().replace("x", ",").split(",") if v.strip()]
    if not 1 <= len(vals) <= 2:
        raise argparse.ArgumentTypeError(f"dims must be 'n' or 'rows,cols', got {text!r}")
    return vals


def _keyval(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    k, v = text.split("=", 1)
    try:
        v = json.loads(v)
    except json.JSONDecodeError:
        pass
    return k.strip(), v


def effective_config(cmd: str, args: argparse.Namespace) -> dict:
    """Defaults, then the JSON config, then explicit flags."""
    cfg = dict(DEFAULTS[cmd])
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {args.config}: {exc}")
        if not isinstance(loaded, dict):
            raise CliError("config must be a JSON object")
        if loaded.get("cmd", cmd) != cmd:
            raise CliError(f"config is for command {loaded.get('cmd')!r}, not {cmd!r}")
        unknown = set(loaded) - set(cfg) - {"cmd"}
        if unknown:
            raise CliError(f"unknown config fields for {cmd}: {sorted(unknown)}")
        cfg.update({k: v for k, v in loaded.items() if k != "cmd"})
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    cfg["cmd"] = cmd
    return cfg


def _positive_int(name, value):
    if int(value) != value or value < 1:
        raise CliError(f"{name} must be a positive integer, got {value}")
    return int(value)


def cmd_synth(cfg: dict) -> int:
    theta = float(cfg["theta"])
    if not 0 < theta < 1:
        raise CliError(f"invalid parameter theta={theta}: theta must lie in (0, 1)")
    N = _positive_int("N", cfg["N"])
    seed = int(cfg["seed"])
    lat = Lattice(tuple(cfg["dims"]) if cfg["dims"] else (_positive_int("n", cfg["n"]),))
    if cfg["out"] is None:
        raise CliError("synth needs --out")
    if cfg["field"] == "complex":
        s = cfg["s"] if cfg["s"] is not None else max(1, round(theta * lat.n))
        f = gen_complex_gaussian_signal(lat, seed)
        X = gen_joint_sparse_complex(lat, N, int(s), seed)
        gt = GroundTruthInstance(f, X, lat, "complex", int(s) / lat.n, seed, meta={"s": int(s)})
    elif cfg["field"] == "real":
        kappa = cfg["kappa"]
        if kappa is not None and not float(kappa) >= 1:
            raise CliError(f"invalid parameter kappa={kappa}: kappa must be >= 1")
        gt = random_instance(lat, N, theta, seed, None if kappa is None else float(kappa))
    else:
        raise CliError(f"invalid parameter field={cfg['field']!r}: expected real or complex")
    if cfg["sigma"] is not None:
        noise = NoiseSpec(float(cfg["sigma"]))
    else:
        if cfg["noise"] not in NOISE_PRESETS:
            raise CliError(f"invalid parameter noise={cfg['noise']!r}: choose from {sorted(NOISE_PRESETS)}")
        noise = NoiseSpec.preset(cfg["noise"], lat.n, gt.theta)
    obs = observe(gt, noise)
    # The output path is left out so that equal configs give equal bytes.
    recorded = {k: v for k, v in cfg.items() if k != "out"}
    save_instance(cfg["out"], obs, gt, noise.sigma, meta={"config": recorded})
    print(f"wrote {cfg['out']}: lattice {lat}, N={N}, theta={gt.theta:g}, field={gt.field}, sigma={noise.sigma:g}")
    return 0


def _solve_config(cfg: dict, n: int, ndim: int, theta: float) -> OptimizerConfig:
    seed = int(cfg["seed"])
    overrides = {k: v for k, v in dict(gamma=cfg["gamma"], T=cfg["T"]).items() if v is not None}
    if cfg["schedule"] == "theory":
        base = theoretical_schedule(n, theta, float(cfg["rho"]), float(cfg["xi"]), int(cfg["T_cap"]), seed)
        fields = {**base.__dict__, **overrides}
        return OptimizerConfig(**fields)
    if cfg["schedule"] != "practical":
        raise CliError(f"invalid parameter schedule={cfg['schedule']!r}: expected practical or theory")
    if cfg["mode"] == "mgd":
        return practical_schedule(ndim, seed=seed, record_every=int(cfg["record_every"]), **overrides)
    if cfg["mode"] != "pmgd":
        raise CliError(f"invalid parameter mode={cfg['mode']!r}: expected mgd or pmgd")
    if cfg["preset"] is not None:
        base = dict(gamma=0.1 if ndim == 1 else 0.05, T=100, seed=seed, record_every=int(cfg["record_every"]))
        base.update(overrides)
        pert = {k: v for k, v in dict(perturb_radius=cfg["radius"], perturb_interval=cfg["interval"],
                                      grad_tolerance=cfg["tol"]).items() if v is not None}
        return OptimizerConfig.preset(cfg["preset"], **base, **pert)
    missing = [k for k in ("radius", "interval", "tol") if cfg[k] is None]
    if missing:
        raise CliError(f"pmgd without --preset needs {', '.join('--' + m for m in missing)}")
    return practical_schedule(
        ndim, mode="pmgd", seed=seed, record_every=int(cfg["record_every"]),
        perturb_radius=float(cfg["radius"]), perturb_interval=float(cfg["interval"]),
        grad_tolerance=float(cfg["tol"]), **overrides,
    )


def cmd_solve(cfg: dict) -> int:
    if cfg["instance"] is None:
        raise CliError("solve needs an instance file")
    obs, gt, header = load_instance(cfg["instance"])
    p = build_preconditioner(obs, None if cfg["theta"] is None else float(cfg["theta"]))
    opt = _solve_config(cfg, obs.lat.n, obs.lat.ndim, p.theta)
    h0 = random_sphere_init(obs.lat, int(cfg["seed"]), obs.field)
    h, trace = run(Objective(obs, p), h0, opt, ground_truth=gt if gt is not None and gt.field == "real" else None)
    result = recover(obs, p, h)
    result.meta = {"theta": p.theta, "theta_source": p.theta_source, "config": cfg,
                   "optimizer": {k: v for k, v in opt.__dict__.items()}}
    if gt is not None:
        if gt.field == "real":
            result.accuracy = accuracy_metric(gt, p, h)
        else:
            result.accuracy = spectral_ratio_metric(gt.f, result.f_hat, obs.lat)
        result.alignment = align(gt, result)
    out = cfg["out"] or str(Path(cfg["instance"]).with_suffix(".recovery.msbd"))
    trace_path = cfg["trace"] or str(Path(out).with_suffix(".trace.csv"))
    save_recovery(out, result, h)
    buf = _io.StringIO()
    trace.write_csv(buf)
    atomic_write_text(trace_path, buf.getvalue())
    print(f"wrote {out} and {trace_path} ({opt.mode}, T={opt.T}, gamma={opt.gamma:g}"
          f"{', T capped' if opt.capped else ''}, perturbations={trace.perturbations})")
    if result.accuracy is not None:
        label = "accuracy" if gt.field == "real" else "spectral ratio"
        print(f"{label}: {result.accuracy:.6f}")
    print(f"residual: {result.residual:.3e}")
    return 0


def cmd_phase(cfg: dict) -> int:
    fixed = dict(cfg["fixed"] or {})
    if cfg["noise"] is not None:
        fixed["noise"] = cfg["noise"]
    grid = experiments.ExperimentGrid(
        kind=cfg["kind"], axis1=cfg["axis1"], values1=list(cfg["values1"]), axis2=cfg["axis2"],
        values2=list(cfg["values2"]), trials=int(cfg["trials"]), fixed=fixed, master_seed=int(cfg["seed"]),
    )
    result = experiments.run_grid(grid, cfg["threads"])
    if cfg["out"]:
        result.write(cfg["out"], cfg)
        print(f"wrote {cfg['out']} ({len(result.cells)} cells)")
    else:
        sys.stdout.write(result.to_csv())
    return 0


def cmd_demo2d(cfg: dict) -> int:
    res = experiments.demo2d(
        image=cfg["image"], N=int(cfg["N"]), theta=float(cfg["theta"]), T=int(cfg["T"]),
        gamma=float(cfg["gamma"]), seed=int(cfg["seed"]), channel_template=cfg["channel_template"],
        outdir=cfg["outdir"],
    )
    print(f"final accuracy: {res.accuracy:.6f}")
    print(f"accuracy first exceeds 0.5 at t = {res.crossing}")
    print(f"sign {res.sign:+d}, shift {res.shift}, signal error {res.signal_error:.3e}")
    print(f"images and trace written to {cfg['outdir']}")
    return 0


def cmd_verify(cfg: dict) -> int:
    rep = experiments.verify_battery(int(cfg["seed"]), samples=int(cfg["samples"]),
                                     mc_channels=int(cfg["mc_channels"]))
    for line in rep.lines():
        print(line)
    print("all checks passed" if rep.ok else "VIOLATIONS FOUND")
    return 0 if rep.ok else 1


COMMANDS = {"synth": cmd_synth, "solve": cmd_solve, "phase": cmd_phase, "demo2d": cmd_demo2d, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msbd", description="Multichannel sparse blind deconvolution experiments.")
    sub = parser.add_subparsers(dest="cmd", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_, argument_default=None)
        sp.add_argument("--config", help="JSON config file with a matching \"cmd\" field")
        return sp

    sp = add("synth", "generate an instance file")
    sp.add_argument("--n", type=int, help="signal length (1-D)")
    sp.add_argument("--dims", type=_dims, help="lattice, e.g. 64x64")
    sp.add_argument("--N", type=int, help="number of channels")
    sp.add_argument("--theta", type=float, help="Bernoulli probability of a nonzero")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--kappa", type=float, help="condition number bound for the signal spectrum")
    sp.add_argument("--noise", choices=sorted(NOISE_PRESETS))
    sp.add_argument("--sigma", type=float, help="explicit noise level (overrides --noise)")
    sp.add_argument("--field", choices=("real", "complex"))
    sp.add_argument("--s", type=int, help="joint support size (complex field)")
    sp.add_argument("--out", "-o")

    sp = add("solve", "run the optimizer on an instance file")
    sp.add_argument("instance", nargs="?")
    sp.add_argument("--mode", choices=("mgd", "pmgd"))
    sp.add_argument("--preset", choices=sorted(PMGD_PRESETS))
    sp.add_argument("--schedule", choices=("practical", "theory"))
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--T", type=int)
    sp.add_argument("--radius", type=float, help="perturbation radius")
    sp.add_argument("--interval", type=float, help="minimum iterations between perturbations")
    sp.add_argument("--tol", type=float, help="gradient-norm threshold for perturbing")
    sp.add_argument("--rho", type=float, help="neighborhood tolerance for the theory schedule")
    sp.add_argument("--xi", type=float)
    sp.add_argument("--T-cap", dest="T_cap", type=int)
    sp.add_argument("--seed", type=int, help="initialization and perturbation seed")
    sp.add_argument("--theta", type=float, help="override the preconditioner theta")
    sp.add_argument("--record-every", dest="record_every", type=int)
    sp.add_argument("--out", "-o")
    sp.add_argument("--trace")

    sp = add("phase", "Monte-Carlo success-rate grid")
    sp.add_argument("--kind", choices=sorted(experiments.KIND_AXES))
    sp.add_argument("--axis1")
    sp.add_argument("--values1", type=_number_list)
    sp.add_argument("--axis2")
    sp.add_argument("--values2", type=_number_list)
    sp.add_argument("--trials", type=int)
    sp.add_argument("--set", dest="set_", type=_keyval, action="append", metavar="KEY=VALUE",
                    help="fixed parameter, e.g. theta=0.1 (repeatable)")
    sp.add_argument("--noise", choices=sorted(NOISE_PRESETS))
    sp.add_argument("--seed", type=int, help="master seed")
    sp.add_argument("--threads", type=int, help="worker processes (default: $MSBD_THREADS or 1)")
    sp.add_argument("--out", "-o")

    sp = add("demo2d", "2-D blind image deconvolution demo")
    sp.add_argument("--image", help=".pgm or .npy image (default: built-in pattern)")
    sp.add_argument("--channel-template", dest="channel_template", help="image supplying channel values")
    sp.add_argument("--N", type=int)
    sp.add_argument("--theta", type=float)
    sp.add_argument("--T", type=int)
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--outdir")

    sp = add("verify", "run the property battery")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--samples", type=int)
    sp.add_argument("--mc-channels", dest="mc_channels", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = effective_config(args.cmd, args)
        if args.cmd == "phase" and getattr(args, "set_", None):
            cfg["fixed"] = {**(cfg["fixed"] or {}), **dict(args.set_)}
        return COMMANDS[args.cmd](cfg)
    except (CliError, ValueError, OSError, RuntimeError) as exc:
        print(f"msbd {args.cmd}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
