"""Command-line harness: spec parsing, seeded runs, CSV/JSON artifacts.

Five subcommands: regress, calibrate, score, dynamics, selftest. A run
can be configured by flags, by a flat INI spec file (one section named
after the subcommand), or both; explicit flags win over the file and
unknown keys are rejected. Every run writes summary.json (validated
against the packaged schema, with the full resolved config echoed into
metadata) and data CSVs that are byte-identical across reruns; the
timestamp lives only in the summary metadata. The only environment
variable honored is SMOOTHCAL_OUT, which overrides the output
directory.

Exit codes: 0 every check passed, 1 a check failed, 2 malformed spec,
3 the fixed-point solver aborted (the period index is printed).
"""

import argparse
import configparser
import csv
import json
import subprocess
import sys
import os
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .dynamics import (preset_game, proof_chain_report, FiniteGame,
                       PRESET_GAMES, run_smooth_calibrated_learning,
                       desk_dynamic_config, tune_dynamic_parameters)
from .forecaster import SolverAbort
from .game import (Adversary, AlternatingForecaster, ConstantForecaster,
                   play, weak_calibrated_forecaster)
from .geometry import unit_box
from .regression import (VARIANTS, default_theta_grid, generate_sequence,
                         regret_report, solve_path, tune_parameters)
from .scores import (SmoothingKernel, Transcript, WeightFunction,
                     averaging_bound, calibration_score, smoothed_score,
                     weak_score)
from .selftest import run_selftest

NE_EPS_GRID = (0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5)


class SpecError(ValueError):
    """Anything wrong with the requested configuration (exit 2)."""


def fmt(x):
    """CSV float format: 17 significant digits, exact round-trip."""
    return format(float(x), ".17g")


# === spec resolution ===========================================


def _f(text):
    return float(text)


def _i(text):
    return int(text)


def _s(text):
    return str(text)


def _opt_f(text):
    return None if str(text).lower() == "none" else float(text)


def _opt_i(text):
    return None if str(text).lower() == "none" else int(text)


# name -> (parser, default); shared keys seed/out/profile are appended
SCHEMAS = {
    "regress": {
        "variant": (_s, "forward"),
        "a": (_f, 1.0),
        "lam": (_opt_f, None),
        "R": (_opt_i, None),
        "d": (_i, 1),
        "T": (_i, 200),
        "kind": (_s, "random"),
        "eps": (_f, 0.5),
    },
    "calibrate": {
        "forecaster": (_s, "weak_calibrated"),
        "adversary": (_s, "threshold:0.5"),
        "T": (_i, 200),
        "kernel": (_s, "tent:0.05"),
    },
    "score": {
        "transcript": (_s, None),
        "kernel": (_s, "tent:0.05"),
        "alpha": (_f, 1.0),
    },
    "dynamics": {
        "game": (_s, "matching_pennies"),
        "T": (_i, 2000),
        "eps": (_f, 0.3),
    },
    "selftest": {},
}

SHARED = {
    "seed": (_i, 0),
    "out": (_s, None),
    "profile": (_s, "desk"),
}


def _full_schema(kind):
    schema = dict(SCHEMAS[kind])
    schema.update(SHARED)
    return schema


def load_spec_file(path, kind):
    """Flat INI with exactly one section, named after the subcommand."""
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keys are case-sensitive, same as the flags
    read = parser.read(path)
    if not read:
        raise SpecError(f"spec file not found: {path}")
    sections = parser.sections()
    if sections != [kind]:
        raise SpecError(
            f"spec file must contain exactly one section [{kind}], "
            f"found {sections}")
    schema = _full_schema(kind)
    out = {}
    for key, raw in parser[kind].items():
        if key not in schema:
            raise SpecError(f"unknown key {key!r} in [{kind}]")
        try:
            out[key] = schema[key][0](raw)
        except ValueError as exc:
            raise SpecError(f"bad value for {key!r}: {exc}") from exc
    return out


def resolve(kind, args):
    """defaults < spec file < explicit flags; all keys echoed back."""
    schema = _full_schema(kind)
    params = {k: default for k, (_, default) in schema.items()}
    if args.spec is not None:
        params.update(load_spec_file(args.spec, kind))
    for key in schema:
        flag = getattr(args, key, None)
        if flag is not None:
            params[key] = schema[key][0](flag)
    return params


# === artifact emission =========================================


def build_id():
    """git-describe of the working tree, 'unknown' outside a checkout."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).parent, capture_output=True, text=True,
            timeout=10)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return "unknown"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(format(float(obj), ".17g"))
    return obj


def load_summary_schema():
    text = resources.files("smoothcal").joinpath(
        "summary_schema.json").read_text()
    return json.loads(text)


def write_summary(out_dir, kind, seed, config, results, checks):
    payload = {
        "kind": kind,
        "metadata": {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "build_id": build_id(),
            "seed": int(seed),
            "config": _jsonable(config),
        },
        "results": _jsonable(results),
        "checks": {k: bool(v) for k, v in checks.items()},
        "pass": all(bool(v) for v in checks.values()),
    }
    jsonschema.validate(payload, load_summary_schema())
    path = Path(out_dir) / "summary.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return payload


def write_csv(out_dir, name, header, rows):
    path = Path(out_dir) / name
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


# === shared builders ===========================================


def parse_kernel(text):
    name, _, arg = text.partition(":")
    if name == "indicator":
        return SmoothingKernel.indicator()
    if name == "tent":
        return SmoothingKernel.tent(float(arg or 0.05))
    if name == "gaussian":
        return SmoothingKernel.gaussian(float(arg or 0.05))
    raise SpecError(f"unknown kernel {text!r} "
                    "(indicator | tent:delta | gaussian:sigma)")


def parse_forecaster(text):
    name, _, arg = text.partition(":")
    try:
        if name == "weak_calibrated":
            return weak_calibrated_forecaster()
        if name == "alternating":
            first, second = (float(v) for v in arg.split(","))
            return AlternatingForecaster(first, second)
        if name == "constant":
            return ConstantForecaster(float(arg))
    except ValueError as exc:
        raise SpecError(f"bad forecaster argument in {text!r}: {exc}")
    raise SpecError(
        f"unknown forecaster {text!r} (weak_calibrated | "
        "alternating:a,b | constant:v)")


def parse_adversary(text):
    name, _, arg = text.partition(":")
    try:
        if name == "threshold":
            return Adversary.threshold(float(arg or 0.5))
        if name == "constant":
            return Adversary.constant(float(arg))
        if name == "seeded_random":
            return Adversary.seeded_random()
        if name == "simulating_best_response":
            return Adversary.simulating_best_response(
                target=arg or "residual")
    except ValueError as exc:
        raise SpecError(f"bad adversary argument in {text!r}: {exc}")
    raise SpecError(
        f"unknown adversary {text!r} (threshold:cut | constant:v | "
        "seeded_random | simulating_best_response[:target])")


def load_game(text):
    """Preset name, or a JSON file {players, shapes, payoffs (flat)}."""
    if text in PRESET_GAMES:
        return preset_game(text)
    path = Path(text)
    if path.suffix != ".json":
        raise SpecError(f"unknown game {text!r}: not a preset "
                        f"({', '.join(PRESET_GAMES)}) or a .json file")
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise SpecError(f"cannot read game file {text!r}: {exc}")
    except json.JSONDecodeError as exc:
        raise SpecError(f"game file {text!r} is not valid JSON: {exc}")
    try:
        players = int(data["players"])
        shapes = [tuple(int(k) for k in s) for s in data["shapes"]]
        flats = data["payoffs"]
    except (KeyError, TypeError, ValueError) as exc:
        raise SpecError(f"game file needs players/shapes/payoffs: {exc}")
    if not (len(shapes) == len(flats) == players):
        raise SpecError("players, shapes, and payoffs disagree in length")
    try:
        payoffs = [np.asarray(f, dtype=float).reshape(s)
                   for f, s in zip(flats, shapes)]
        return FiniteGame.build(payoffs, name=path.stem)
    except ValueError as exc:
        raise SpecError(f"bad game file {text!r}: {exc}")


def transcript_from_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        rows = list(reader)
    if not header or header[0] != "t" or len(header) % 2 == 0:
        raise SpecError(f"{path}: expected header t, c_1..c_m, a_1..a_m")
    m = (len(header) - 1) // 2
    want = ["t"] + [f"c_{j + 1}" for j in range(m)] \
        + [f"a_{j + 1}" for j in range(m)]
    if header != want:
        raise SpecError(f"{path}: expected header {','.join(want)}")
    if not rows:
        raise SpecError(f"{path}: no data rows")
    try:
        data = np.array([[float(v) for v in row[1:]] for row in rows])
    except ValueError as exc:
        raise SpecError(f"{path}: non-numeric cell: {exc}")
    try:
        return Transcript(domain=unit_box(m), forecasts=data[:, :m],
                          actions=data[:, m:])
    except ValueError as exc:
        raise SpecError(f"{path}: {exc}")


def weight_presets(m):
    """Named [0,1]-valued Lipschitz weights over the unit box,
    vectorized over rows of points."""
    def first(c):
        return np.atleast_2d(c)[:, 0]

    return [
        ("unit", WeightFunction(
            fn=lambda c: np.ones(np.atleast_2d(c).shape[0]),
            lipschitz_bound=0.0, name="unit")),
        ("first_coordinate", WeightFunction(
            fn=first, lipschitz_bound=1.0, name="first_coordinate")),
        ("mirror", WeightFunction(
            fn=lambda c: 1.0 - first(c),
            lipschitz_bound=1.0, name="mirror")),
        ("center_tent", WeightFunction(
            fn=lambda c: np.maximum(0.0, 1.0 - 2.0 * np.abs(first(c) - 0.5)),
            lipschitz_bound=2.0, name="center_tent")),
    ]


def score_payload(transcript, kernel, alpha):
    out = {
        "T": transcript.T,
        "m": transcript.m,
        "K_T": calibration_score(transcript),
        "K_smoothed": smoothed_score(transcript, kernel),
        "K_action_smoothed": smoothed_score(transcript, kernel,
                                            variant="action_only"),
        "weak_scores": {name: weak_score(transcript, w)
                        for name, w in weight_presets(transcript.m)},
        "kernel": {"kind": kernel.kind, "param": kernel.param},
    }
    if kernel.kind == "indicator":
        out["averaging_lemma"] = None  # bound is vacuous (L = inf)
    else:
        lhs, rhs, gamma = averaging_bound(
            transcript.forecasts, transcript.residuals(), kernel, alpha)
        out["averaging_lemma"] = {"lhs": lhs, "rhs": rhs, "gamma": gamma,
                                  "alpha": alpha}
    return out


# === subcommands ===============================================


def run_regress(params, out_dir):
    if params["variant"] not in VARIANTS:
        raise SpecError(f"unknown variant {params['variant']!r}")
    if params["kind"] not in ("random", "adversarial"):
        raise SpecError(f"unknown data kind {params['kind']!r}")
    seed = params["seed"]
    d, T = params["d"], params["T"]
    if params["variant"] != "forward" and params["lam"] is None:
        # fill missing discount parameters from the regret target so the
        # bare subcommand works; explicit flags always win
        tuned = tune_parameters(params["eps"], d=d)
        params["lam"] = tuned.lam
        if params["R"] is None:
            params["R"] = tuned.R
    xs, ys = generate_sequence(params["kind"], d, T, seed=seed)
    try:
        path = solve_path(xs, ys, variant=params["variant"], a=params["a"],
                          lam=params["lam"], R=params["R"])
    except ValueError as exc:
        raise SpecError(f"bad regression parameters: {exc}") from exc
    refs = default_theta_grid(d)
    report = regret_report(params["variant"],
                           {"a": params["a"], "lam": params["lam"],
                            "R": params["R"]},
                           xs, ys, refs, eps=params["eps"], path=path)

    # per-step worst windowed average regret over the reference grid
    R_eff = params["R"] or T
    ref_losses = (ys[:, None] - xs @ refs.T) ** 2        # (T, K)
    gap = np.cumsum(path.psi[:, None] - ref_losses, axis=0)
    windowed = gap.copy()
    windowed[R_eff:] = gap[R_eff:] - gap[:-R_eff]
    widths = np.minimum(np.arange(1, T + 1), R_eff)
    worst = (windowed / widths[:, None]).max(axis=1)

    rows = [[t + 1, *[fmt(v) for v in path.theta[t]], fmt(path.psi[t]),
             fmt(worst[t])] for t in range(T)]
    header = ["t"] + [f"theta_{j + 1}" for j in range(d)] \
        + ["psi", "window_regret"]
    write_csv(out_dir, "regression_path.csv", header, rows)

    per_theta = [{
        "theta": list(theta),
        "windowed_avg": report.windowed_avg[tuple(theta)],
        "cumulative_avg": report.cumulative_avg[tuple(theta)],
        "bound_rhs": report.bound_rhs[tuple(theta)],
    } for theta in refs]
    results = {
        "violations": report.violations(),
        "max_margin": report.max_margin(),
        "per_theta": per_theta,
    }
    checks = {"regret_bound_holds": report.violations() == 0}
    return results, checks


def run_calibrate(params, out_dir):
    forecaster = parse_forecaster(params["forecaster"])
    adversary = parse_adversary(params["adversary"])
    kernel = parse_kernel(params["kernel"])
    T, seed = params["T"], params["seed"]
    transcript = play(forecaster, adversary, T, seed=seed)
    m = transcript.m
    header = ["t"] + [f"c_{j + 1}" for j in range(m)] \
        + [f"a_{j + 1}" for j in range(m)]
    rows = [[t + 1, *[fmt(v) for v in transcript.forecasts[t]],
             *[fmt(v) for v in transcript.actions[t]]] for t in range(T)]
    write_csv(out_dir, "transcript.csv", header, rows)
    results = score_payload(transcript, kernel, alpha=1.0)
    checks = {"transcript_complete": transcript.T == T}
    return results, checks


def run_score(params, out_dir):
    if not params["transcript"]:
        raise SpecError("score needs a transcript CSV "
                        "(--transcript or spec key)")
    transcript = transcript_from_csv(params["transcript"])
    kernel = parse_kernel(params["kernel"])
    results = score_payload(transcript, kernel, params["alpha"])
    return results, {}


def run_dynamics(params, out_dir):
    game = load_game(params["game"])
    if params["profile"] == "theory":
        tuned = tune_dynamic_parameters(params["eps"], game.action_counts)
        identities = [{"name": n, "got": g, "want": w}
                      for n, g, w in tuned.identities()]
        exact = all(abs(i["got"] - i["want"])
                    <= 1e-12 * max(1.0, abs(i["want"]))
                    for i in identities)
        results = {"schedule": tuned.to_dict(), "identities": identities}
        return results, {"identities_exact": exact}
    if params["profile"] != "desk":
        raise SpecError(f"unknown profile {params['profile']!r} "
                        "(desk | theory)")

    config = desk_dynamic_config(game, T=params["T"], seed=params["seed"])
    result = run_smooth_calibrated_learning(game, config)
    eps = params["eps"]
    m, n = game.m, game.n
    header = ["t"] + [f"c_{j + 1}" for j in range(m)] \
        + [f"x_{j + 1}" for j in range(m)] \
        + [f"a_{i + 1}" for i in range(n)] + ["in_ne", "br_gap"]
    rows = [[t + 1,
             *[fmt(v) for v in result.forecasts[t]],
             *[fmt(v) for v in result.profiles[t]],
             *[int(v) for v in result.actions[t]],
             int(result.nash_gaps[t] <= eps),
             fmt(result.br_gaps[t])] for t in range(params["T"])]
    write_csv(out_dir, "dynamics_path.csv", header, rows)

    eps_grid = sorted(set(NE_EPS_GRID) | {eps})
    chain = proof_chain_report(result)
    diag = result.diagnostics
    results = {
        "game": {"name": game.name, "players": n,
                 "action_counts": game.action_counts},
        "ne_fraction": [{"eps": e, "fraction": result.ne_fraction(e)}
                        for e in eps_grid],
        "mean_br_gap": float(np.mean(result.br_gaps)),
        "proof_chain": chain,
        "diagnostics": diag,
    }
    checks = {
        "triangle_holds": chain["triangle_holds"],
        "markov_holds": chain["markov_holds"],
        "solver_fine_fraction": diag["fp_fraction_fine"] >= 0.999,
        "solver_below_coarse": diag["fp_max_residual"] <= 1e-3,
    }
    return results, checks


def run_selftest_cmd(params, out_dir):
    results = run_selftest()
    for r in results:
        line = f"{'PASS' if r.ok else 'FAIL'}  {r.name}"
        if r.detail:
            line += f"  ({r.detail})"
        print(line)
    failed = [r.name for r in results if not r.ok]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    payload = {"checks_run": len(results),
               "details": {r.name: r.detail for r in results}}
    checks = {r.name: r.ok for r in results}
    return payload, checks


RUNNERS = {
    "regress": run_regress,
    "calibrate": run_calibrate,
    "score": run_score,
    "dynamics": run_dynamics,
    "selftest": run_selftest_cmd,
}


# === entry point ===============================================


def build_parser():
    parser = argparse.ArgumentParser(
        prog="smoothcal",
        description="Calibration, regression, and game-dynamics runs "
                    "with reproducible CSV/JSON artifacts.")
    # dest must not collide with the regress --kind flag
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "variant": "regression variant: forward | discounted | windowed",
        "a": "ridge weight",
        "lam": "discount factor (or 'none')",
        "R": "window length (or 'none')",
        "d": "regressor dimension",
        "T": "number of periods",
        "kind": "data generator: random | adversarial",
        "eps": "bound/equilibrium tolerance",
        "forecaster": "weak_calibrated | alternating:a,b | constant:v",
        "adversary": "threshold:cut | constant:v | seeded_random | "
                     "simulating_best_response[:target]",
        "kernel": "indicator | tent:delta | gaussian:sigma",
        "transcript": "transcript CSV produced by calibrate",
        "alpha": "domain diameter used by the averaging bound",
        "game": f"preset ({', '.join(PRESET_GAMES)}) or a JSON file",
    }
    for kind, schema in SCHEMAS.items():
        p = sub.add_parser(kind)
        for key in schema:
            p.add_argument(f"--{key}", default=None,
                           help=helps.get(key, ""))
        p.add_argument("--seed", default=None, help="run seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--profile", default=None,
                       help="desk | theory (dynamics only)")
        p.add_argument("--spec", default=None,
                       help="INI spec file with a [{}] section".format(kind))
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    kind = args.command
    try:
        params = resolve(kind, args)
        out_dir = params["out"] or os.environ.get("SMOOTHCAL_OUT") \
            or "smoothcal_out"
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        runner = RUNNERS[kind]
        results, checks = runner(params, out_dir)
    except SpecError as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return 2
    except SolverAbort as exc:
        print(f"solver abort at period {exc.period}: residual "
              f"{exc.residual:.3e}", file=sys.stderr)
        return 3
    config = {k: v for k, v in params.items() if k != "out"}
    summary = write_summary(out_dir, kind, params["seed"], config,
                            results, checks)
    status = "pass" if summary["pass"] else "FAIL"
    print(f"{kind}: {status} ({len(checks)} checks) -> {out_dir}")
    return 0 if summary["pass"] else 1


if __name__ == "__main__":
    sys.exit(main())
