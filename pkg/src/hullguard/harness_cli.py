"""Scenario-driven Monte Carlo harness and the `hullguard` command line.

A scenario JSON bundles everything one study needs: the plant, the admissible
polytope, the synthesis knobs, the data-collection recipe, LQR weights for
the nominal optimal controller, the runtime risk budget, and the simulation
setup.  The harness turns a scenario into certificates, piecewise policies,
supervised rollouts, and report artifacts (JSON summary, per-run CSV, SVG or
envelope CSV figures).
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .geometry import build_hull_polytope, build_partitions, export_hull_svg, extract_extreme_points
from .policies import (
    LqrPolicy,
    PartitionedPolicy,
    load_policy_bundle,
    lqr_riccati,
    precompute_partition_gains,
    safe_control,
)
from .supervisor import BPrior, RiskAllocation, SupervisionLog, Supervisor
from .synthesis import (
    HullCertificate,
    InfeasibleSynthesisError,
    SynthesisConfig,
    SynthesisNumericalError,
    canonical_mode,
    synth_data_ce,
    synth_data_minvar,
    synth_model_based,
    synth_open_loop,
    synth_single_baseline,
)
from .systems import LtiSystem, TrajectoryDataset, collect_dataset, simulate_trajectory

CONTROLLERS = ("optimal", "safe", "safe_optimal", "ce_safe")
COMPLIANCE_TOL = 1e-9
SCENARIO_DIR = Path(__file__).parent / "scenarios"


class ScenarioValidationError(ValueError):
    """Scenario file is missing fields, malformed, or inconsistent."""


# --------------------------------------------------------------------------
# scenario configuration
# --------------------------------------------------------------------------

@dataclass
class ScenarioConfig:
    """Everything a study needs, parsed and validated from one JSON file."""

    name: str
    system: LtiSystem
    synthesis: SynthesisConfig
    data_recipe: dict
    lqr_Q: np.ndarray
    lqr_R: np.ndarray
    lqr_require_stable: bool
    risk_epsilon: float
    b_prior: BPrior
    x0: np.ndarray
    horizon: int = 400
    runs: int = 100
    seed: int = 7
    sigma_levels: tuple[float, ...] = ()
    description: str = ""
    raw: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        n = self.system.n
        self.x0 = np.asarray(self.x0, dtype=float).ravel()
        if self.x0.shape[0] != n:
            raise ScenarioValidationError(
                f"x0 has dimension {self.x0.shape[0]}, plant has {n} states")
        if self.lqr_Q.shape != (n, n):
            raise ScenarioValidationError(f"LQR Q must be {n}x{n}")
        if self.lqr_R.shape != (self.system.m, self.system.m):
            raise ScenarioValidationError(f"LQR R must be {self.system.m}x{self.system.m}")
        if self.horizon < 1:
            raise ScenarioValidationError("horizon must be at least 1")
        if self.runs < 1:
            raise ScenarioValidationError("realization count must be at least 1")
        if not 0.0 < self.risk_epsilon < 1.0:
            raise ScenarioValidationError("risk epsilon must lie in (0, 1)")

    @classmethod
    def from_dict(cls, payload: dict) -> "ScenarioConfig":
        try:
            sysd = payload["system"]
            A = np.array(sysd["A"], dtype=float)
            n = A.shape[0]
            if "Sigma" in sysd:
                Sigma = np.array(sysd["Sigma"], dtype=float)
            else:
                Sigma = float(sysd.get("sigma", 0.0)) * np.eye(n)
            system = LtiSystem(
                A=A,
                B=np.array(sysd["B"], dtype=float),
                F=np.array(sysd["F"], dtype=float),
                g=np.array(sysd["g"], dtype=float),
                Sigma=Sigma,
            )
            syn_payload = dict(payload.get("synthesis", {}))
            known = set(SynthesisConfig.__dataclass_fields__)
            unknown = set(syn_payload) - known
            if unknown:
                raise ScenarioValidationError(
                    f"unknown synthesis options: {sorted(unknown)}")
            synthesis = SynthesisConfig.from_dict(syn_payload)
            lqr = payload.get("lqr", {})
            Q = np.array(lqr.get("Q", np.eye(n)), dtype=float)
            R = np.array(lqr.get("R", np.eye(system.m)), dtype=float)
            prior = payload.get("b_prior", {})
            b_prior = BPrior(
                B_n=np.array(prior.get("B_n", system.B), dtype=float),
                Delta_B=np.array(prior.get("Delta_B", np.zeros_like(system.B)), dtype=float),
            )
            return cls(
                name=payload.get("name", "scenario"),
                system=system,
                synthesis=synthesis,
                data_recipe=dict(payload.get("data", {})),
                lqr_Q=Q,
                lqr_R=R,
                lqr_require_stable=bool(lqr.get("require_stable", True)),
                risk_epsilon=float(payload.get("risk", {}).get("epsilon", 0.1)),
                b_prior=b_prior,
                x0=np.array(payload["x0"], dtype=float),
                horizon=int(payload.get("horizon", 400)),
                runs=int(payload.get("runs", 100)),
                seed=int(payload.get("seed", 7)),
                sigma_levels=tuple(payload.get("sigma_levels", ())),
                description=payload.get("description", ""),
                raw=payload,
            )
        except ScenarioValidationError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioValidationError(f"invalid scenario: {exc}") from exc

    @classmethod
    def from_json(cls, path: str | Path) -> "ScenarioConfig":
        try:
            payload = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ScenarioValidationError(f"cannot read scenario {path}: {exc}") from exc
        return cls.from_dict(payload)

    def with_sigma(self, sigma: float) -> "ScenarioConfig":
        system = LtiSystem(A=self.system.A, B=self.system.B, F=self.system.F,
                           g=self.system.g, Sigma=float(sigma) * np.eye(self.system.n))
        return replace(self, system=system)


def load_scenario(name_or_path: str | Path) -> ScenarioConfig:
    """Load a scenario file, or one of the built-ins by bare name."""
    p = Path(name_or_path)
    if p.exists():
        return ScenarioConfig.from_json(p)
    builtin = SCENARIO_DIR / f"{name_or_path}.json"
    if builtin.exists():
        return ScenarioConfig.from_json(builtin)
    raise ScenarioValidationError(
        f"scenario {name_or_path!r} is neither a file nor a built-in "
        f"({', '.join(sorted(q.stem for q in SCENARIO_DIR.glob('*.json')))})")


def make_dataset(scenario: ScenarioConfig) -> TrajectoryDataset:
    """Collect excitation data following the scenario's recipe."""
    recipe = scenario.data_recipe
    if not recipe:
        raise ScenarioValidationError("scenario has no data-collection recipe")
    amp = float(recipe.get("input_amplitude", 1.0))
    m = scenario.system.m
    restart = recipe.get("restart")
    restart_sampler = None
    if restart is not None:
        kind = restart.get("kind")
        if kind == "vertex_mix":
            verts = np.array(restart["vertices"], dtype=float)
            lo = float(restart.get("scale_low", 0.5))
            hi = float(restart.get("scale_high", 1.0))

            def restart_sampler(rng, _v=verts, _lo=lo, _hi=hi):
                weights = rng.dirichlet(np.ones(_v.shape[0]))
                return _v.T @ weights * rng.uniform(_lo, _hi)
        elif kind == "box":
            half = np.array(restart["half_widths"], dtype=float)

            def restart_sampler(rng, _h=half):
                return rng.uniform(-_h, _h)
        else:
            raise ScenarioValidationError(f"unknown restart sampler kind {kind!r}")
    return collect_dataset(
        scenario.system,
        num_samples=int(recipe.get("num_samples", 60)),
        rng=np.random.default_rng(int(recipe.get("seed", 0))),
        input_sampler=lambda rng: rng.uniform(-amp, amp, m),
        restart_sampler=restart_sampler,
        restart_every=recipe.get("restart_every"),
    )


# --------------------------------------------------------------------------
# pipeline stages
# --------------------------------------------------------------------------

def synthesize_scenario(scenario: ScenarioConfig, mode: str,
                        dataset: TrajectoryDataset | None = None) -> HullCertificate:
    """Run one synthesis program on the scenario (collecting data if needed)."""
    mode = canonical_mode(mode)
    polytope = (scenario.system.F, scenario.system.g)
    config = scenario.synthesis
    if mode in ("data_ce", "data_minvar") and dataset is None:
        dataset = make_dataset(scenario)
    if mode == "open_loop":
        return synth_open_loop(scenario.system.A, polytope, config)
    if mode == "model_csie":
        return synth_model_based(scenario.system.A, scenario.system.B, polytope, config)
    if mode == "data_ce":
        return synth_data_ce(dataset, polytope, config)
    if mode == "data_minvar":
        return synth_data_minvar(dataset, polytope, config, scenario.system.Sigma)
    verdict = synth_single_baseline((scenario.system.A, scenario.system.B),
                                    polytope, config)
    if not verdict.feasible:
        raise InfeasibleSynthesisError(
            f"single-ellipsoid baseline is infeasible: {verdict.detail}")
    return verdict.certificate


def build_policy(cert: HullCertificate) -> tuple[PartitionedPolicy, dict]:
    """Partition the certified hull and derive the piecewise-affine policy.

    Returns the policy and the supervision payload (mean closed-loop maps,
    noise gains, ellipsoid shapes) that `simulate` needs at runtime.
    """
    if cert.K is None:
        raise ScenarioValidationError(
            f"{cert.mode} certificate has no feedback gains to partition")
    points, owners = extract_extreme_points(cert.P)
    hull = build_hull_polytope(points, owners)
    policy = precompute_partition_gains(hull, cert.K, source_mode=cert.mode)
    supervision = {
        "mode": cert.mode,
        "delta": cert.config.delta,
        "maps": [m.tolist() for m in cert.supervision_maps()],
        "noise_gains": (list(cert.noise_gains) if cert.noise_gains is not None
                        else [0.0] * cert.n_v),
        "shapes": [p.tolist() for p in cert.P],
    }
    return policy, supervision


def build_supervisor(scenario: ScenarioConfig, policy: PartitionedPolicy,
                     supervision: dict) -> Supervisor:
    maps = [np.array(m, dtype=float) for m in supervision["maps"]]
    gains = [float(v) for v in supervision["noise_gains"]]
    risk = RiskAllocation.uniform(scenario.risk_epsilon, policy.hull.num_facets)
    return Supervisor(policy.hull, policy, maps, gains,
                      scenario.system.Sigma, scenario.b_prior, risk)


def make_lqr(scenario: ScenarioConfig) -> LqrPolicy:
    return lqr_riccati(scenario.system.A, scenario.system.B, scenario.lqr_Q,
                       scenario.lqr_R, require_stable=scenario.lqr_require_stable)


# --------------------------------------------------------------------------
# cost estimation
# --------------------------------------------------------------------------

@dataclass
class CostEstimate:
    mean: float
    stderr: float
    runs_used: int
    excluded: int


def trajectory_cost(states: np.ndarray, inputs: np.ndarray, Q: np.ndarray,
                    R: np.ndarray) -> float:
    """Quadratic running cost plus the terminal state's quadratic form."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    Q = np.atleast_2d(Q)
    R = np.atleast_2d(R)
    run = float(np.einsum("it,ij,jt->", states[:, :-1], Q, states[:, :-1]))
    run += float(np.einsum("it,ij,jt->", inputs, R, inputs))
    return run + float(states[:, -1] @ Q @ states[:, -1])


def estimate_cost(traces: list[tuple[np.ndarray, np.ndarray]], Q: np.ndarray,
                  R: np.ndarray, horizon: int | None = None) -> CostEstimate:
    """Sample mean and standard error of the truncated quadratic cost.

    Diverged runs (non-finite values, or shorter than the requested horizon)
    are excluded from the estimate and counted separately.
    """
    costs = []
    excluded = 0
    for states, inputs in traces:
        states = np.asarray(states, dtype=float)
        inputs = np.asarray(inputs, dtype=float)
        if horizon is not None and states.shape[1] < horizon + 1:
            excluded += 1
            continue
        if horizon is not None:
            states = states[:, : horizon + 1]
            inputs = inputs[:, :horizon]
        if not (np.isfinite(states).all() and np.isfinite(inputs).all()):
            excluded += 1
            continue
        costs.append(trajectory_cost(states, inputs, Q, R))
    if not costs:
        return CostEstimate(0.0, 0.0, 0, excluded)
    arr = np.array(costs)
    stderr = float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else 0.0
    return CostEstimate(float(arr.mean()), stderr, arr.size, excluded)


# --------------------------------------------------------------------------
# Monte Carlo
# --------------------------------------------------------------------------

@dataclass
class MonteCarloReport:
    """Aggregate outcome of seeded rollouts for one controller."""

    controller: str
    scenario: str
    total_runs: int
    compliant_runs: int
    diverged_runs: int
    cost: CostEstimate
    horizon: int
    seed: int
    violation_timeline: np.ndarray
    supervision_counts: dict | None = None
    per_run: list[dict] = field(default_factory=list)
    traces: list[np.ndarray] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "controller": self.controller,
            "scenario": self.scenario,
            "total_runs": self.total_runs,
            "compliant_runs": self.compliant_runs,
            "diverged_runs": self.diverged_runs,
            "cost_estimate": self.cost.mean,
            "cost_stderr": self.cost.stderr,
            "cost_runs_used": self.cost.runs_used,
            "horizon": self.horizon,
            "seed": self.seed,
            "violation_timeline": self.violation_timeline.astype(int).tolist(),
            "supervision_counts": self.supervision_counts,
            "per_run": self.per_run,
        }


def _controller_fn(scenario: ScenarioConfig, controller: str,
                   policy: PartitionedPolicy | None, supervision: dict | None,
                   log: SupervisionLog | None):
    if controller == "optimal":
        return make_lqr(scenario)
    if policy is None:
        raise ScenarioValidationError(f"controller {controller!r} needs a policy file")
    if controller in ("safe", "ce_safe"):
        return lambda t, x: safe_control(policy, x)
    if controller == "safe_optimal":
        if supervision is None:
            raise ScenarioValidationError(
                "policy file carries no supervision data; rebuild it with `partition`")
        sup = build_supervisor(scenario, policy, supervision)
        return sup.supervised_policy(make_lqr(scenario), log=log)
    raise ScenarioValidationError(
        f"unknown controller {controller!r}; choose from {CONTROLLERS}")


def run_monte_carlo(scenario: ScenarioConfig, controller: str,
                    policy: PartitionedPolicy | None = None,
                    supervision: dict | None = None,
                    runs: int | None = None, seed: int | None = None,
                    horizon: int | None = None,
                    keep_traces: bool = True) -> MonteCarloReport:
    """Roll `runs` seeded noise realizations of one controller.

    Run k draws its noise from an independent generator seeded with
    (seed, k), so reports are reproducible and runs are order-independent.
    A run is compliant iff the state satisfies every admissible-set row at
    every step of the horizon.
    """
    runs = scenario.runs if runs is None else int(runs)
    seed = scenario.seed if seed is None else int(seed)
    horizon = scenario.horizon if horizon is None else int(horizon)
    if runs < 1:
        raise ScenarioValidationError("realization count must be at least 1")
    system = scenario.system
    F, g = system.F, system.g
    supervised = controller == "safe_optimal"
    timeline = np.zeros(horizon + 1, dtype=int)
    per_run: list[dict] = []
    traces: list[np.ndarray] = []
    cost_traces: list[tuple[np.ndarray, np.ndarray]] = []
    counts = {"rl_pass": 0, "interpolated": 0, "safe_fallback": 0}
    compliant_runs = 0
    diverged_runs = 0
    for k in range(runs):
        log = SupervisionLog() if supervised else None
        fn = _controller_fn(scenario, controller, policy, supervision, log)
        rng = np.random.default_rng((seed, k))
        states, inputs, _, diverged = simulate_trajectory(
            system, scenario.x0, fn, horizon, rng)
        viol = (F @ states) > (g[:, None] + COMPLIANCE_TOL)
        step_viol = viol.any(axis=0)
        timeline[: step_viol.shape[0]] += step_viol
        compliant = bool(not diverged and not step_viol.any())
        compliant_runs += compliant
        diverged_runs += diverged
        cost = float("nan")
        if not diverged:
            cost = trajectory_cost(states, inputs, scenario.lqr_Q, scenario.lqr_R)
            cost_traces.append((states, inputs))
        per_run.append({"run": k, "compliant": compliant, "diverged": bool(diverged),
                        "cost": cost,
                        "violation_steps": int(step_viol.sum())})
        if supervised and log is not None:
            for mode_name, c in log.counts().items():
                counts[mode_name] += c
        if keep_traces:
            traces.append(states)
    cost_est = estimate_cost(cost_traces, scenario.lqr_Q, scenario.lqr_R, horizon)
    cost_est = CostEstimate(cost_est.mean, cost_est.stderr, cost_est.runs_used,
                            cost_est.excluded + diverged_runs)
    return MonteCarloReport(
        controller=controller,
        scenario=scenario.name,
        total_runs=runs,
        compliant_runs=compliant_runs,
        diverged_runs=diverged_runs,
        cost=cost_est,
        horizon=horizon,
        seed=seed,
        violation_timeline=timeline,
        supervision_counts=counts if supervised else None,
        per_run=per_run,
        traces=traces,
    )


# --------------------------------------------------------------------------
# report artifacts
# --------------------------------------------------------------------------

def _write_runs_csv(path: Path, reports: list[dict]) -> None:
    lines = ["controller,run,compliant,diverged,violation_steps,cost"]
    for rep in reports:
        for row in rep["per_run"]:
            cost = row["cost"]
            cost_str = "" if isinstance(cost, float) and not np.isfinite(cost) else f"{cost:.10g}"
            lines.append(f"{rep['controller']},{row['run']},{int(row['compliant'])},"
                         f"{int(row['diverged'])},{row['violation_steps']},{cost_str}")
    path.write_text("\n".join(lines) + "\n")


def _write_envelopes_csv(path: Path, traces_by_controller: dict[str, list[np.ndarray]]) -> None:
    """Lateral-offset and lateral-velocity envelopes across runs, per step."""
    lines = ["controller,t,y_min,y_mean,y_max,v_min,v_mean,v_max"]
    for controller, traces in sorted(traces_by_controller.items()):
        if not traces:
            continue
        T = min(tr.shape[1] for tr in traces)
        block = np.stack([tr[:, :T] for tr in traces])  # (runs, n, T)
        y, v = block[:, 0, :], block[:, 1, :]
        for t in range(T):
            lines.append(
                f"{controller},{t},{y[:, t].min():.8g},{y[:, t].mean():.8g},"
                f"{y[:, t].max():.8g},{v[:, t].min():.8g},{v[:, t].mean():.8g},"
                f"{v[:, t].max():.8g}")
    path.write_text("\n".join(lines) + "\n")


def compliance_report(report_dir: str | Path, svg: bool = False,
                      max_svg_traces: int = 3) -> dict:
    """Aggregate `simulate` outputs in a directory into summary artifacts.

    Writes summary.json (one timestamp field), runs.csv, and either an SVG
    scene (planar scenarios) or y/v envelope CSVs (the 4D scenario).
    Returns the summary payload.
    """
    report_dir = Path(report_dir)
    report_files = sorted(report_dir.glob("report_*.json"))
    summary: dict = {
        "generated_at": datetime.now(timezone.utc).isoformat(),
        "controllers": {},
    }
    reports = []
    for rf in report_files:
        rep = json.loads(rf.read_text())
        reports.append(rep)
        summary["scenario"] = rep.get("scenario")
        summary["horizon"] = rep.get("horizon")
        summary["controllers"][rep["controller"]] = {
            k: rep[k] for k in ("total_runs", "compliant_runs", "diverged_runs",
                                "cost_estimate", "cost_stderr", "cost_runs_used",
                                "supervision_counts")
        }
    (report_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    _write_runs_csv(report_dir / "runs.csv", reports)

    traces_by_controller: dict[str, list[np.ndarray]] = {}
    state_dim = None
    for rep in reports:
        npz_path = report_dir / f"traces_{rep['controller']}.npz"
        if not npz_path.exists():
            continue
        with np.load(npz_path) as data:
            traces = [data[k] for k in sorted(data.files)]
        traces_by_controller[rep["controller"]] = traces
        if traces:
            state_dim = traces[0].shape[0]

    scenario_path = report_dir / "scenario.json"
    scenario = ScenarioConfig.from_json(scenario_path) if scenario_path.exists() else None
    if state_dim == 2 and svg and scenario is not None:
        policy_path = report_dir / "policy.json"
        if policy_path.exists():
            policy, supervision = load_policy_bundle(policy_path)
            shapes = None
            if supervision and supervision.get("shapes"):
                shapes = [np.array(p, dtype=float) for p in supervision["shapes"]]
            sample = []
            for traces in traces_by_controller.values():
                sample.extend(traces[:max_svg_traces])
            export_hull_svg(report_dir / "figure.svg", policy.hull, Ps=shapes,
                            admissible=(scenario.system.F, scenario.system.g),
                            partitions=policy.regions, trajectories=sample)
    elif state_dim is not None and state_dim >= 3 and traces_by_controller:
        _write_envelopes_csv(report_dir / "envelopes.csv", traces_by_controller)
    return summary


# --------------------------------------------------------------------------
# command line
# --------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    """argparse maps usage errors to exit code 2; this suite reserves 2 for
    infeasible synthesis, so usage problems exit 3 (validation failure)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(3, f"{self.prog}: error: {message}\n")


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hullguard",
                     description="Risk-aware safe-controller synthesis and simulation")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_synth = sub.add_parser("synth", help="synthesize a contractive-hull certificate")
    p_synth.add_argument("--scenario", required=True,
                         help="scenario JSON path or built-in name")
    p_synth.add_argument("--mode", required=True,
                         help="openloop | model | ce | minvar | baseline")
    p_synth.add_argument("--out", required=True, help="certificate JSON to write")
    p_synth.add_argument("--sigma", type=float, default=None,
                         help="override the noise variance (Sigma = sigma * I)")

    p_part = sub.add_parser("partition", help="partition a certified hull into a policy")
    p_part.add_argument("--cert", required=True, help="certificate JSON from `synth`")
    p_part.add_argument("--out", required=True, help="policy JSON to write")

    p_sim = sub.add_parser("simulate", help="run seeded Monte Carlo rollouts")
    p_sim.add_argument("--scenario", required=True)
    p_sim.add_argument("--policy", default=None,
                       help="policy JSON from `partition` (not needed for optimal)")
    p_sim.add_argument("--controller", required=True,
                       help="optimal | safe | safe_optimal | ce_safe")
    p_sim.add_argument("--runs", type=int, default=None)
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--horizon", type=int, default=None)
    p_sim.add_argument("--sigma", type=float, default=None,
                       help="override the noise variance (Sigma = sigma * I)")
    p_sim.add_argument("--out", required=True, help="report directory")

    p_rep = sub.add_parser("report", help="aggregate simulate outputs into artifacts")
    p_rep.add_argument("--in", dest="indir", required=True, help="report directory")
    p_rep.add_argument("--svg", action="store_true",
                       help="emit the planar scene figure")
    return parser


def _cmd_synth(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.sigma is not None:
        scenario = scenario.with_sigma(args.sigma)
    cert = synthesize_scenario(scenario, args.mode)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cert.to_json(out)
    res = max(float(cert.residuals.get("max_psd_violation", 0.0)),
              float(cert.residuals.get("max_equality_violation", 0.0)))
    print(f"{cert.mode}: feasible, objective {cert.objective:.6g}, "
          f"worst residual {res:.2e} -> {out}")
    return 0


def _cmd_partition(args) -> int:
    cert = HullCertificate.from_json(args.cert)
    policy, supervision = build_policy(cert)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    policy.to_json(out, supervision=supervision)
    print(f"{cert.mode}: {policy.hull.vertices.shape[0]} extreme points, "
          f"{len(policy.regions)} regions -> {out}")
    return 0


def _cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.sigma is not None:
        scenario = scenario.with_sigma(args.sigma)
    if args.controller not in CONTROLLERS:
        raise ScenarioValidationError(
            f"unknown controller {args.controller!r}; choose from {CONTROLLERS}")
    policy = supervision = None
    if args.policy is not None:
        policy, supervision = load_policy_bundle(args.policy)
    report = run_monte_carlo(scenario, args.controller, policy=policy,
                             supervision=supervision, runs=args.runs,
                             seed=args.seed, horizon=args.horizon)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"report_{args.controller}.json").write_text(
        json.dumps(report.to_dict(), indent=2) + "\n")
    np.savez(out / f"traces_{args.controller}.npz",
             **{f"run{k:04d}": tr for k, tr in enumerate(report.traces)})
    # copy the resolved inputs so `report` can run on the directory alone
    (out / "scenario.json").write_text(json.dumps(scenario.raw, indent=2) + "\n")
    if args.policy is not None:
        (out / "policy.json").write_text(Path(args.policy).read_text())
    print(f"{args.controller}: {report.compliant_runs}/{report.total_runs} compliant, "
          f"{report.diverged_runs} diverged, cost {report.cost.mean:.6g} "
          f"± {report.cost.stderr:.3g} -> {out}")
    return 0


def _cmd_report(args) -> int:
    summary = compliance_report(args.indir, svg=args.svg)
    ctrls = ", ".join(f"{name}: {info['compliant_runs']}/{info['total_runs']}"
                      for name, info in summary["controllers"].items()) or "no reports"
    print(f"summary -> {Path(args.indir) / 'summary.json'} ({ctrls})")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {"synth": _cmd_synth, "partition": _cmd_partition,
                "simulate": _cmd_simulate, "report": _cmd_report}
    try:
        return handlers[args.command](args)
    except (InfeasibleSynthesisError, SynthesisNumericalError) as exc:
        print(f"synthesis failed: {exc}", file=sys.stderr)
        return 2
    except (ScenarioValidationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
