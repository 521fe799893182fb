"""Command-line front end.

Subcommands: ``synth`` (gains to JSON), ``stabilize`` (solvability report),
``simulate`` (trajectory CSV + cost summary), ``study`` (convergence / nash /
representation), and ``figures`` (canned desk-scale reproductions).  Exit
codes: 0 ok, 2 config error, 3 infeasibility, 4 numerical failure.

Experiment configs are JSON::

    {
      "model":   { ...ModelParams fields... },
      "problem": "social" | "game",
      "horizon": "infinite" | {"kind": "finite", "T": 5.0},
      "sim":     {"N": 50, "dt": 0.01, "T": 10.0, "replications": 1, "seed": 0},
      "study":   {"kind": "convergence", "N_list": [8, 32, 128]}
               | {"kind": "nash", "span": 0.5, "points": 5, "N_list": [50]}
               | {"kind": "representation"}
    }
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .errors import MFLQError, ModelValidationError
from .model import ModelParams, params_from_dict
from .stability import analyze
from .social import SocialGains, social_law, synth_social_finite, synth_social_infinite
from .game import (
    game_law,
    representation_check_game,
    representation_check_social,
    synth_game_finite,
    synth_game_infinite,
)
from .sim import (
    SimConfig,
    affine_deviation_grid,
    convergence_study,
    evaluate_costs,
    export_study_csv,
    export_trajectory_csv,
    meanfield_gap,
    mean_se,
    nash_deviation_search,
    simulate,
)

__all__ = ["main"]

_EXIT = {"config": 2, "infeasible": 3, "numerical": 4}
_FIGURE_SEED = 20

_FMT = "{:.17g}".format


def _jsonify(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    return obj


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(_jsonify(payload), fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# experiment configs
# ---------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class Experiment:
    params: ModelParams
    problem: str
    horizon: dict
    sim: SimConfig | None
    study: dict | None


def _normalize_horizon(h) -> dict:
    if h is None or h == "infinite":
        return {"kind": "infinite"}
    if h == "finite":
        raise ModelValidationError("finite horizon needs a T value")
    if isinstance(h, dict) and h.get("kind") in ("finite", "infinite"):
        if h["kind"] == "finite" and "T" not in h:
            raise ModelValidationError("finite horizon needs a T value")
        return h
    raise ModelValidationError(f"unrecognized horizon setting: {h!r}")


def load_experiment(path: str) -> Experiment:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as e:
        raise ModelValidationError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ModelValidationError(f"config {path} is not valid JSON: {e}") from e
    if "model" not in raw:
        raise ModelValidationError("config is missing the 'model' section")
    params = params_from_dict(raw["model"])
    problem = raw.get("problem", "social")
    if problem not in ("social", "game"):
        raise ModelValidationError("problem must be 'social' or 'game'")
    horizon = _normalize_horizon(raw.get("horizon"))
    sim = None
    if raw.get("sim") is not None:
        try:
            sim = SimConfig(**raw["sim"])
        except TypeError as e:
            raise ModelValidationError(f"bad sim section: {e}") from e
        sim.validate()
    return Experiment(params=params, problem=problem, horizon=horizon,
                      sim=sim, study=raw.get("study"))


def _synthesize(exp: Experiment):
    if exp.problem == "social":
        if exp.horizon["kind"] == "finite":
            return synth_social_finite(exp.params, float(exp.horizon["T"]))
        return synth_social_infinite(exp.params)
    if exp.horizon["kind"] == "finite":
        return synth_game_finite(exp.params, float(exp.horizon["T"]))
    return synth_game_infinite(exp.params)


def _law_for(exp: Experiment, gains):
    return social_law(gains) if isinstance(gains, SocialGains) else game_law(gains)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    exp = load_experiment(args.config)
    gains = _synthesize(exp)
    path = os.path.join(args.out, "gains.json")
    _write_json(path, {"problem": exp.problem, "horizon": exp.horizon,
                       "gains": gains.to_dict()})
    print(f"synthesized {exp.problem} gains ({gains.horizon} horizon) -> {path}")
    return 0


def cmd_stabilize(args) -> int:
    exp = load_experiment(args.config)
    report = analyze(exp.params)
    path = os.path.join(args.out, "stabilization.json")
    _write_json(path, report.to_dict())
    print(report.render())
    print(f"report -> {path}")
    return 0


def cmd_simulate(args) -> int:
    exp = load_experiment(args.config)
    if exp.sim is None:
        raise ModelValidationError("config is missing the 'sim' section")
    cfg = _override_seed(exp.sim, args.seed)
    gains = _synthesize(exp)
    law = _law_for(exp, gains)
    horizon = "finite" if gains.horizon == "finite" else "infinite"
    bundles, reports, gaps = [], [], []
    for rep in range(cfg.replications):
        b = simulate(exp.params, law, cfg, rep)
        bundles.append(b)
        reports.append(evaluate_costs(b, exp.params, horizon))
        if b.xbar_ref is not None:
            gaps.append(meanfield_gap(b, exp.params.rho))
    traj_path = os.path.join(args.out, "trajectories.csv")
    export_trajectory_csv(traj_path, bundles)
    J_soc = [r.J_soc for r in reports]
    summary = {
        "N": cfg.N, "replications": cfg.replications, "seed": cfg.seed,
        "J_soc_mean": mean_se(J_soc)[0], "J_soc_se": mean_se(J_soc)[1],
        "per_agent_mean": mean_se([r.per_agent for r in reports])[0],
    }
    if gaps:
        summary["gap_sup_mean"] = mean_se([g.sup_gap for g in gaps])[0]
        summary["gap_disc_mean"] = mean_se([g.disc_gap for g in gaps])[0]
    cost_path = os.path.join(args.out, "costs.json")
    _write_json(cost_path, summary)
    print(f"trajectories -> {traj_path}\ncosts -> {cost_path}")
    return 0


def cmd_study(args) -> int:
    exp = load_experiment(args.config)
    if exp.study is None:
        raise ModelValidationError("config is missing the 'study' section")
    kind = exp.study.get("kind")
    if kind == "convergence":
        if exp.sim is None:
            raise ModelValidationError("convergence study needs a 'sim' section")
        cfg = _override_seed(exp.sim, args.seed)
        N_list = exp.study.get("N_list")
        if not N_list or len(N_list) < 3:
            raise ModelValidationError("convergence study needs N_list with >= 3 sizes")
        metrics = tuple(exp.study.get("metrics", ("gap", "social")))
        study = convergence_study(exp.params, N_list, cfg,
                                  horizon=exp.horizon["kind"], metrics=metrics,
                                  threads=args.threads)
        path = os.path.join(args.out, "convergence.csv")
        export_study_csv(path, study.rows())
        _write_json(os.path.join(args.out, "convergence.json"), {
            "N_list": list(study.N_list), "gap_slope": study.gap_slope,
            "gap_slope_se": study.gap_slope_se,
            "dJ_scaled": study.dJ_scaled, "flags": list(study.flags),
        })
        for flag in study.flags:
            print(f"warning: {flag}")
        print(f"study -> {path}")
        return 0
    if kind == "nash":
        if exp.problem != "game":
            raise ModelValidationError("nash study requires problem = 'game'")
        if exp.sim is None:
            raise ModelValidationError("nash study needs a 'sim' section")
        cfg = _override_seed(exp.sim, args.seed)
        gains = _synthesize(exp)
        grid = affine_deviation_grid(span=float(exp.study.get("span", 0.5)),
                                     points=int(exp.study.get("points", 5)))
        rows = []
        for N in exp.study.get("N_list", [cfg.N]):
            rep = nash_deviation_search(exp.params, gains, cfg.with_N(int(N)),
                                        grid=grid, threads=args.threads)
            rows.extend(rep.rows())
            print(f"N={N}: max improvement {rep.max_improvement:.6g} "
                  f"(se {rep.max_se:.2g}) at {rep.max_entry}")
        path = os.path.join(args.out, "nash.csv")
        export_study_csv(path, rows)
        print(f"study -> {path}")
        return 0
    if kind == "representation":
        check = (representation_check_social if exp.problem == "social"
                 else representation_check_game)
        report = check(exp.params)
        path = os.path.join(args.out, "representation.json")
        _write_json(path, report.to_dict())
        print(f"{exp.problem} representation check: "
              f"{'PASS' if report.passed else 'FAIL'} -> {path}")
        return 0 if report.passed else 4
    raise ModelValidationError(f"unrecognized study kind: {kind!r}")


# ---------------------------------------------------------------------------
# canned figures
# ---------------------------------------------------------------------------

def _scalar_model(A: float, G: float) -> ModelParams:
    return ModelParams(A=A, B=1.0, G=G, Q=1.0, R=1.0, Gamma=-0.2, eta=5.0,
                       rho=0.6, f=1.0, sigma=0.1, x_bar0=5.0, init_cov=0.5)


def _planar_model() -> ModelParams:
    return ModelParams(
        A=[[0.1, 0.0], [-1.0, 0.2]],
        B=[[1.0], [1.0]],
        G=[[-0.5, 0.0], [0.0, -0.3]],
        Q=np.eye(2), R=[[1.0]],
        Gamma=[[1.0, 0.0], [1.0, 1.0]],
        eta=[0.0, 0.5], rho=0.6, f=[1.0, 1.0], sigma=[0.5, 0.5],
        x_bar0=[5.0, 5.0], init_cov=0.5 * np.eye(2),
    )


def _fig_sim(params: ModelParams, problem: str, seed: int):
    gains = (synth_social_infinite(params) if problem == "social"
             else synth_game_infinite(params))
    cfg = SimConfig(N=50, dt=0.01, T=10.0, replications=1, seed=seed)
    law = social_law(gains) if problem == "social" else game_law(gains)
    return simulate(params, law, cfg, rep=0)


def _population_csv(path, bundle, component: int = 0):
    with open(path, "w", newline="") as fh:
        N = bundle.N
        fh.write(",".join(["t", "xbar", "xavg"] + [f"agent{i}" for i in range(N)]) + "\n")
        for k, t in enumerate(bundle.grid):
            row = [t, bundle.xbar_ref[k, component], bundle.avg[k, component]]
            row += list(bundle.states[k, :, component])
            fh.write(",".join(_FMT(v) for v in row) + "\n")


def _overlay_csv(path, b_soc, b_game):
    with open(path, "w", newline="") as fh:
        fh.write("t,xbar_PS,xavg_PS,xbar_PG,xavg_PG\n")
        for k, t in enumerate(b_soc.grid):
            row = [t, b_soc.xbar_ref[k, 0], b_soc.avg[k, 0],
                   b_game.xbar_ref[k, 0], b_game.avg[k, 0]]
            fh.write(",".join(_FMT(v) for v in row) + "\n")


def make_figure(which: int, out: str, seed: int | None = None) -> str:
    """Write the CSV behind one canned figure and return its path."""
    seed = _FIGURE_SEED if seed is None else seed
    path = os.path.join(out, f"fig{which}.csv")
    if which == 1:
        _population_csv(path, _fig_sim(_scalar_model(0.2, -0.2), "social", seed))
    elif which == 2:
        _population_csv(path, _fig_sim(_scalar_model(1.0, -0.2), "social", seed))
    elif which == 3:
        _population_csv(path, _fig_sim(_scalar_model(0.2, 0.0), "game", seed))
    elif which == 4:
        _population_csv(path, _fig_sim(_scalar_model(1.0, 0.0), "game", seed))
    elif which == 5:
        b_soc = _fig_sim(_scalar_model(0.2, -0.2), "social", seed)
        b_game = _fig_sim(_scalar_model(0.2, 0.0), "game", seed)
        _overlay_csv(path, b_soc, b_game)
    elif which in (6, 7):
        _population_csv(path, _fig_sim(_planar_model(), "social", seed),
                        component=which - 6)
    else:
        raise ModelValidationError(f"no such figure: {which} (valid: 1..7)")
    return path


def cmd_figures(args) -> int:
    if args.which == "all":
        which = list(range(1, 8))
    else:
        try:
            which = [int(w) for w in str(args.which).split(",")]
        except ValueError:
            raise ModelValidationError(f"bad --which value: {args.which!r}")
    for w in which:
        print(f"fig{w} -> {make_figure(w, args.out, args.seed)}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _override_seed(cfg: SimConfig, seed: int | None) -> SimConfig:
    return cfg if seed is None else dataclasses.replace(cfg, seed=seed)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mflq",
        description="Synthesis, stability analysis, and Monte Carlo studies "
                    "for mean-field linear-quadratic control.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_config=True):
        if needs_config:
            sp.add_argument("--config", required=True, help="experiment JSON")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the simulation seed")
        sp.add_argument("--threads", type=int, default=None,
                        help="worker threads (or set MFLQ_THREADS)")

    common(sub.add_parser("synth", help="synthesize gains to JSON"))
    common(sub.add_parser("stabilize", help="stabilization / solvability report"))
    common(sub.add_parser("simulate", help="run the population and export CSVs"))
    common(sub.add_parser("study", help="convergence / nash / representation study"))
    figs = sub.add_parser("figures", help="regenerate canned figure CSVs")
    figs.add_argument("--which", default="all", help="figure number, list, or 'all'")
    common(figs, needs_config=False)
    return p


_COMMANDS = {
    "synth": cmd_synth,
    "stabilize": cmd_stabilize,
    "simulate": cmd_simulate,
    "study": cmd_study,
    "figures": cmd_figures,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.threads is not None:
        os.environ["MFLQ_THREADS"] = str(args.threads)
    os.makedirs(args.out, exist_ok=True)
    try:
        return _COMMANDS[args.command](args)
    except MFLQError as e:
        print(json.dumps({"error": str(e), "category": e.category}),
              file=sys.stderr)
        return _EXIT.get(e.category, 4)


if __name__ == "__main__":
    sys.exit(main())
