"""Command-line front end: ``pose-dmp {demo,train,merge,couple,verify}``.

Exit codes: 0 success, 1 verification failure, 2 usage or input error.
Every output file is written to a temporary name and renamed into place.
"""
import argparse
from dataclasses import dataclass, field, fields, replace
import json
import os
import sys

import numpy as np

from . import quat, traj_io
from .clock import ExpClock, SigmoidClock
from .coupled import (_batch_all, coupled_rollout, lyapunov_orientation,
                      lyapunov_position, random_initial_states, system_from_scenario,
                      verify_stability)
from .dmp import DmpGains, OrientationDmp, PositionDmp, rollout, train_orientation, train_position
from .errors import ConfigError, PoseDmpError, StabilityViolation
from .merging import (KERNEL_STACK, MOVING_TARGET, STRATEGIES, SWITCH, KernelStackParams,
                      MergePlan, MovingTargetParams, PosePrimitive, SwitchParams, merge,
                      merge_metrics)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
MODEL_FILE_VERSION = 1
METHODS = ("global", "lwr")
# training formulation used for each merge strategy
FORMULATION_OF = {SWITCH: "standard", MOVING_TARGET: "moving_target",
                  KERNEL_STACK: "delayed_goal"}


@dataclass
class RunConfig:
    """Validated settings of one invocation.

    Tunables left at ``None`` were not given; their defaults are applied by
    :meth:`validate`. Keys of a ``--config`` file replace the matching flags.
    """
    subcommand: str
    inputs: list = field(default_factory=list)
    out: str = None
    metrics: str = None
    demos: list = field(default_factory=list)
    dt: float = None
    tau: float = None
    kernels: int = None
    stiffness: float = None
    strategy: str = None
    threshold: float = None
    cross_vel: list = None
    alpha_h: float = None
    seed: int = None
    method: str = None
    speed_threshold: float = None
    angular_threshold: float = None
    workers: int = None
    trial: int = None

    TUNABLES = ("dt", "tau", "kernels", "stiffness", "strategy", "threshold", "cross_vel",
                "alpha_h", "seed", "method", "speed_threshold", "angular_threshold",
                "workers", "trial", "out", "metrics", "demos")

    def apply_config(self, cfg):
        if not isinstance(cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        unknown = sorted(set(cfg) - set(self.TUNABLES))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return replace(self, **cfg)

    def validate(self):
        """Check types and ranges; return a copy with defaults filled in."""
        c = replace(self)
        if c.strategy is not None and c.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {c.strategy!r}")
        if c.method is not None and c.method not in METHODS:
            raise ConfigError(f"unknown regression method {c.method!r}")
        for name in ("dt", "tau", "stiffness", "threshold", "alpha_h",
                     "speed_threshold", "angular_threshold"):
            val = getattr(c, name)
            if val is None:
                continue
            try:
                val = float(val)
            except (TypeError, ValueError):
                raise ConfigError(f"{name} must be a number, got {val!r}") from None
            if not (np.isfinite(val) and val > 0):
                raise ConfigError(f"{name} must be positive, got {val}")
            setattr(c, name, val)
        for name, low in (("kernels", 1), ("seed", 0), ("workers", 1), ("trial", 0)):
            val = getattr(c, name)
            if val is None:
                continue
            if isinstance(val, bool) or int(val) != val or val < low:
                raise ConfigError(f"{name} must be an integer >= {low}, got {val!r}")
            setattr(c, name, int(val))
        if c.cross_vel is not None:
            cv = np.asarray(c.cross_vel, dtype=float).ravel()
            if cv.size not in (3, 6) or not np.all(np.isfinite(cv)):
                raise ConfigError("cross_vel needs 3 (angular) or 6 (linear, angular) numbers")
            c.cross_vel = cv.tolist()
        given = {"threshold": SWITCH, "cross_vel": MOVING_TARGET, "alpha_h": KERNEL_STACK}
        for name, strategy in given.items():
            if getattr(c, name) is not None and c.strategy not in (None, strategy):
                raise ConfigError(f"{name} does not apply to strategy {c.strategy!r}")
        if c.demos is None:
            c.demos = []
        return c

    def crossing(self):
        """Linear and angular crossing velocities from ``cross_vel``."""
        if self.cross_vel is None:
            return None
        cv = np.asarray(self.cross_vel, dtype=float)
        if cv.size == 3:
            return np.zeros(3), cv
        return cv[:3], cv[3:]


def _dumps(obj, indent=1):
    return (json.dumps(obj, sort_keys=True, indent=indent) + "\n").encode()


def _require_files(paths):
    for p in paths:
        if not os.path.isfile(p):
            raise FileNotFoundError(f"no such file: {p}")


def _write_json(path, obj, indent=1):
    traj_io.atomic_write(path, _dumps(obj, indent))


# -- demo --------------------------------------------------------------------

def cmd_demo(cfg):
    """Write the two-rotation merge benchmark as one demonstration file."""
    dt = cfg.dt or 0.01
    demo = traj_io.concatenate(traj_io.benchmark_demos(5.0, dt))
    traj_io.export_trajectory(demo, cfg.out)
    print(f"wrote {len(demo)} samples to {cfg.out}")
    return EXIT_OK


# -- train -------------------------------------------------------------------

def _segments(demo, cfg):
    v_th = cfg.speed_threshold or traj_io.SPEED_THRESHOLD
    w_th = cfg.angular_threshold or traj_io.SPEED_THRESHOLD
    return traj_io.segment_zero_velocity(demo, v_th, w_th)


def _segment_rmse(pos, ori, seg):
    traj = rollout(pos, ori, duration=seg.t[-1] - seg.t[0], dt=seg.dt)
    m = min(len(traj), len(seg))
    e_p = float(np.sqrt(np.mean(np.sum((traj.p[:m] - seg.p[:m]) ** 2, axis=1))))
    e_q = float(np.sqrt(np.mean(quat.qdist(seg.q[:m], traj.q[:m]) ** 2)))
    return e_p, e_q


def train_models(demo, cfg, source=None):
    """Train one position/orientation pair per segment of ``demo``.

    Returns the model document and a list of per-segment RMSE pairs.
    """
    strategy = cfg.strategy or SWITCH
    formulation = FORMULATION_OF[strategy]
    n = cfg.kernels or 15
    gains = DmpGains.critical(cfg.stiffness or 10.0)
    tau = cfg.tau or 1.0
    method = cfg.method or "global"
    crossing = cfg.crossing() or (np.zeros(3), np.zeros(3))
    segs = _segments(demo, cfg)
    doc = {"version": MODEL_FILE_VERSION, "source": source, "strategy": strategy,
           "segments": []}
    errors = []
    for i, s in enumerate(segs):
        seg = s.slice(demo)
        last = i == len(segs) - 1
        if formulation == "delayed_goal":
            T = seg.t[-1] - seg.t[0]
            clock = SigmoidClock(alpha_h=cfg.alpha_h or 1.0, T=T, dt=seg.dt, tau=tau)
        else:
            clock = ExpClock(tau=tau)
        # demos end at rest, so training never sees a crossing velocity; the
        # one given here is stored as the default for merging
        pos = train_position(seg, n, gains, clock, formulation, None, method)
        ori = train_orientation(seg, n, gains, clock, formulation, None, method)
        cv = None
        if formulation == "moving_target":
            cv = (np.zeros(3), np.zeros(3)) if last else crossing
        errors.append(_segment_rmse(pos, ori, seg))
        doc["segments"].append({
            "index": i, "start_index": s.start_index, "end_index": s.end_index,
            "position": pos.to_dict(), "orientation": ori.to_dict(),
            "cross_vel": None if cv is None else [cv[0].tolist(), cv[1].tolist()],
        })
    return doc, errors


def cmd_train(cfg):
    if len(cfg.inputs) != 1:
        raise ConfigError("train takes exactly one demonstration file")
    _require_files(cfg.inputs)
    demo = traj_io.load_demo(cfg.inputs[0])
    doc, errors = train_models(demo, cfg, os.path.basename(cfg.inputs[0]))
    _write_json(cfg.out, doc)
    for i, (e_p, e_q) in enumerate(errors):
        print(f"segment {i}: position RMSE {e_p:.6g} m, orientation RMSE {e_q:.6g} rad")
    print(f"wrote {len(errors)} model pair(s) to {cfg.out}")
    return EXIT_OK


# -- merge -------------------------------------------------------------------

def load_models(paths):
    """Read model files; returns the segment records in order."""
    segs = []
    strategies = set()
    for p in paths:
        with open(p) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{p}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict) or doc.get("version") != MODEL_FILE_VERSION:
            raise ConfigError(f"{p}: not a model file of version {MODEL_FILE_VERSION}")
        strategies.add(doc.get("strategy"))
        for rec in doc["segments"]:
            try:
                rec = dict(rec, position=PositionDmp.from_dict(rec["position"]),
                           orientation=OrientationDmp.from_dict(rec["orientation"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"{p}: malformed model ({exc})") from None
            segs.append(rec)
    if not segs:
        raise ConfigError("no model pairs given")
    return segs, strategies


def merge_models(segs, cfg, strategy):
    prims = [PosePrimitive(r["position"], r["orientation"]) for r in segs]
    if strategy == SWITCH:
        params = SwitchParams((cfg.threshold or 0.01,) * 2)
    elif strategy == MOVING_TARGET:
        crossing = cfg.crossing()
        cv = []
        for r in segs[:-1]:
            if crossing is not None:
                cv.append(crossing)
            elif r.get("cross_vel") is not None:
                cv.append(tuple(np.asarray(x, dtype=float) for x in r["cross_vel"]))
            else:
                cv.append((np.zeros(3), np.zeros(3)))
        params = MovingTargetParams(cv)
    else:
        params = KernelStackParams(cfg.alpha_h or 1.0)
    return merge(MergePlan(prims, strategy, params), cfg.dt or 0.01)


def metrics_document(traj, segs, demo=None):
    """The metrics record; tracking errors need the source demonstration."""
    goals_p = [r["position"].goal for r in segs]
    goals_q = [r["orientation"].goal for r in segs]
    demos = None
    if demo is not None:
        demos = [demo.segment(r["start_index"], r["end_index"] + 1) for r in segs]
    if demos is None:
        m = merge_metrics(traj, [traj], goals_q, goals_p)
        m["e_p_max"] = m["e_o_max"] = None
    else:
        m = merge_metrics(traj, demos, goals_q, goals_p)
    return m


def cmd_merge(cfg):
    _require_files(cfg.inputs + cfg.demos)
    segs, strategies = load_models(cfg.inputs)
    strategy = cfg.strategy
    if strategy is None:
        if len(strategies) != 1:
            raise ConfigError("model files were trained for different strategies; "
                              "pass --strategy")
        strategy = strategies.pop() or SWITCH
    traj = merge_models(segs, cfg, strategy)
    demo = None
    if cfg.demos:
        if len(cfg.demos) != 1:
            raise ConfigError("merge metrics take a single demonstration file")
        demo = traj_io.load_demo(cfg.demos[0])
    m = metrics_document(traj, segs, demo)
    m["strategy"] = strategy
    metrics_path = cfg.metrics or os.path.splitext(cfg.out)[0] + ".metrics.json"
    traj_io.export_trajectory(traj, cfg.out)
    _write_json(metrics_path, m)
    keys = ("e_p_max", "e_o_max", "duration", "max_vel_jump", "max_acc_jump")
    print(json.dumps({k: m[k] for k in keys} | {"via_distances": m["via_distances"]},
                     sort_keys=True))
    return EXIT_OK


# -- couple / verify ---------------------------------------------------------

def _scenario(cfg):
    if len(cfg.inputs) != 1:
        raise ConfigError("expected exactly one scenario file")
    _require_files(cfg.inputs)
    with open(cfg.inputs[0]) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{cfg.inputs[0]}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{cfg.inputs[0]}: scenario must be a JSON object")
    overrides = {"seed": cfg.seed, "dt": cfg.dt, "tau": cfg.tau, "K": cfg.stiffness}
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return system_from_scenario(doc)


def cmd_couple(cfg):
    """Integrate one trial of a coupled scenario and write its states."""
    system, opts = _scenario(cfg)
    trial = cfg.trial or 0
    n = opts["n_trials"]
    if trial >= n:
        raise ConfigError(f"trial {trial} out of range (scenario has {n})")
    rng = np.random.default_rng(opts["seed"])
    st0 = random_initial_states(system, n, rng, opts["spread"]).take([trial])
    batched = np.ndim(system.right.position.goal) > 1
    one = _batch_all(system, n, np.array([trial]) if batched else None)
    t_end = opts["t_end"] or 20.0 * system.tau
    states = coupled_rollout(one, st0, t_end, opts["dt"])
    t = np.arange(len(states)) * opts["dt"]

    def col(name):
        return np.concatenate([getattr(s, name) for s in states]).tolist()

    doc = {"case": system.case, "trial": trial, "dt": opts["dt"], "t": t.tolist()}
    for name in ("p_r", "q_r", "p_l", "q_l", "p_rel", "q_rel"):
        doc[name] = col(name)
    doc["V_p"] = [float(lyapunov_position(one, s)[0]) for s in states]
    doc["V_q"] = [float(lyapunov_orientation(one, s)[0]) for s in states]
    _write_json(cfg.out, doc, indent=None)
    print(f"wrote {len(states)} states to {cfg.out}; final V_p {doc['V_p'][-1]:.3g}, "
          f"V_q {doc['V_q'][-1]:.3g}")
    return EXIT_OK


def cmd_verify(cfg):
    system, opts = _scenario(cfg)
    try:
        report = verify_stability(system, opts["n_trials"], opts["dt"], opts["seed"],
                                  opts["t_end"], opts["spread"], cfg.workers or 1)
    except StabilityViolation as exc:
        if cfg.out:
            _write_json(cfg.out, exc.report)
        first = (exc.report.get("violations") or [None])[0]
        dump = json.dumps(first, sort_keys=True) if first else "preconditions not met"
        print(f"verification failed: {exc}; counterexample: {dump}", file=sys.stderr)
        return EXIT_FAIL
    if cfg.out:
        _write_json(cfg.out, report)
    print(f"case {report['case']}: {report['n_trials']} trials passed; max relative "
          f"dV {report['max_dV_rel']:.3g}, slowest settle {report['max_settle_time']:.3g} s")
    return EXIT_OK


COMMANDS = {"demo": cmd_demo, "train": cmd_train, "merge": cmd_merge,
            "couple": cmd_couple, "verify": cmd_verify}


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors are one line on stderr."""

    def error(self, message):
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    common = _Parser(add_help=False)
    g = common.add_argument_group("settings")
    g.add_argument("--dt", type=float, help="integration or sample time [s]")
    g.add_argument("--tau", type=float, help="time scaling")
    g.add_argument("--kernels", type=int, metavar="N", help="kernels per primitive")
    g.add_argument("--stiffness", type=float, metavar="K", help="scalar stiffness, D = 2 sqrt(K)")
    g.add_argument("--strategy", choices=STRATEGIES)
    g.add_argument("--threshold", type=float, help="switch distance [m and rad]")
    g.add_argument("--cross-vel", type=_floats, metavar="W",
                   help="crossing velocity: 'wx,wy,wz' or 'vx,vy,vz,wx,wy,wz'")
    g.add_argument("--alpha-h", type=float, help="sigmoid clock steepness")
    g.add_argument("--seed", type=int)
    g.add_argument("--method", choices=METHODS, help="weight regression")
    g.add_argument("--config", metavar="JSON", help="settings file; overrides flags")

    parser = _Parser(prog="pose-dmp",
                                     description="Pose motion primitives: train, merge, couple, verify.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("demo", parents=[common], help="write the two-rotation benchmark demo")
    p.add_argument("-o", "--out", required=True)

    p = sub.add_parser("train", parents=[common], help="train model pairs from a demonstration")
    p.add_argument("inputs", nargs=1, metavar="DEMO")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--speed-threshold", type=float, help="segmentation speed [m/s]")
    p.add_argument("--angular-threshold", type=float, help="segmentation speed [rad/s]")

    p = sub.add_parser("merge", parents=[common], help="merge trained primitives")
    p.add_argument("inputs", nargs="+", metavar="MODELS")
    p.add_argument("-o", "--out", required=True, help="trajectory file (.csv or .json)")
    p.add_argument("--metrics", help="metrics file (default: <out>.metrics.json)")
    p.add_argument("--demo", dest="demos", action="append", default=[],
                   help="demonstration the models came from, for tracking errors")

    p = sub.add_parser("couple", parents=[common], help="roll out one coupled trial")
    p.add_argument("inputs", nargs=1, metavar="SCENARIO")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--trial", type=int)

    p = sub.add_parser("verify", parents=[common], help="check coupled stability")
    p.add_argument("inputs", nargs=1, metavar="SCENARIO")
    p.add_argument("-o", "--out", help="report file")
    p.add_argument("--workers", type=int)
    return parser


def _floats(text):
    try:
        return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from None


def parse_config(argv):
    """Parse ``argv`` into a validated :class:`RunConfig`."""
    ns = vars(build_parser().parse_args(argv))
    config_path = ns.pop("config", None)
    names = {f.name for f in fields(RunConfig)}
    cfg = RunConfig(**{k: v for k, v in ns.items() if k in names})
    if config_path is not None:
        _require_files([config_path])
        with open(config_path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{config_path}: invalid JSON ({exc})") from None
        cfg = cfg.apply_config(doc)
    return cfg.validate()


def main(argv=None):
    try:
        cfg = parse_config(argv)
        return COMMANDS[cfg.subcommand](cfg)
    except (PoseDmpError, OSError, ValueError) as exc:
        msg = " ".join(str(exc).split())
        print(f"pose-dmp: error: {msg}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
