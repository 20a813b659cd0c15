"""Command-line harness: ``trirl {run,baseline,ablate,transfer,check,project-demo}``.

Exit codes: 0 success, 1 configuration error, 2 solver error, 3 invariant
failure. ``TRIRL_THREADS`` sets how many seeds run in parallel processes.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from trirl import driver as drv
from trirl.density import DiscBuffer, buffer_corrected_reward, buffer_push, RatioProvider, unlimited_history_reward
from trirl.mdp import Environment, TabularPolicy, compute_occupancy, load_environment, policy_from_occupancy
from trirl.reward import dual_gradient, dual_objective
from trirl.solver import SolverError, soft_value_iteration
from trirl import trpl

log = logging.getLogger("trirl")

CSV_COLUMNS = ("iter", "dual", "reverse_kl", "eta", "eps_tr", "expected_kl", "align_lhs", "align_rhs",
               "thm1_residual", "wall_ms")
VARIANT_FLAGS = {"max-eta": "max_eta", "tr-loss": "tr_loss", "retro-eta": "retrospective_eta"}
HARNESS_KEYS = {"env", "ablation"}
CONFIG_DIR = Path(__file__).parent / "configs"


class InvariantFailure(RuntimeError):
    pass


# ------------------------------------------------------------------ config

def parse_seeds(text: str) -> list[int]:
    """'3', '0,2,5' or an inclusive range '0..9'."""
    out: list[int] = []
    try:
        for part in text.split(","):
            part = part.strip()
            if ".." in part:
                a, b = part.split("..")
                out.extend(range(int(a), int(b) + 1))
            elif part:
                out.append(int(part))
    except ValueError as exc:
        raise drv.ConfigError(f"config key 'seeds': cannot parse {text!r}") from exc
    if not out:
        raise drv.ConfigError("config key 'seeds': empty seed list")
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path: str | None, overrides: list[str], variant: str | None, mode: str | None) -> dict:
    """Merge the JSON file, --set overrides and flags; validate everything."""
    doc: dict = {}
    if path is not None:
        if not Path(path).exists() and (CONFIG_DIR / f"{path}.json").exists():
            path = str(CONFIG_DIR / f"{path}.json")
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except FileNotFoundError as exc:
            raise drv.ConfigError(f"config file {path!r} not found") from exc
        except json.JSONDecodeError as exc:
            raise drv.ConfigError(f"config file {path!r} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise drv.ConfigError("config file must hold a JSON object")
    for item in overrides:
        if "=" not in item:
            raise drv.ConfigError(f"override {item!r} is not key=value")
        key, val = item.split("=", 1)
        doc[key.strip()] = _parse_value(val)
    if variant is not None:
        doc["variant"] = VARIANT_FLAGS[variant]
    if mode is not None:
        doc["mode"] = mode
    harness = {k: doc.pop(k) for k in list(doc) if k in HARNESS_KEYS}
    cfg = drv.ExperimentConfig.from_dict(doc)
    harness.setdefault("env", "gridworld-5x5")
    try:
        env = load_environment(harness["env"])
    except FileNotFoundError as exc:
        raise drv.ConfigError(f"config key 'env': {exc}") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise drv.ConfigError(f"config key 'env': {exc}") from exc
    return {"cfg": cfg, "env": env, "env_name": harness["env"], "ablation": harness.get("ablation")}


# ------------------------------------------------------------------ output

def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, float) else str(x)


def write_csv(path: Path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([r.iter, _fmt(r.dual_value), _fmt(r.reverse_kl), _fmt(r.eta), _fmt(r.epsilon_tr),
                        _fmt(r.expected_kl), _fmt(r.alignment_lhs), _fmt(r.alignment_rhs),
                        _fmt(r.theorem1_residual), _fmt(r.wall_time)])


def validate_csv(path: Path) -> list[str]:
    """Schema problems in an emitted trace (empty list when valid)."""
    problems = []
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        return [f"bad header {rows[0] if rows else None}"]
    for n, row in enumerate(rows[1:]):
        if len(row) != len(CSV_COLUMNS):
            problems.append(f"row {n}: {len(row)} fields")
            continue
        try:
            it = int(row[0])
            vals = [float(v) for v in row[1:]]
        except ValueError:
            problems.append(f"row {n}: non-numeric field")
            continue
        if it != n:
            problems.append(f"row {n}: iter {it} out of sequence")
        if any(math.isnan(v) for v in vals):
            problems.append(f"row {n}: NaN")
    return problems


def _write_tables(path: Path, res: drv.RunResult, mdp) -> None:
    sol = soft_value_iteration(mdp, res.final_reward, polish=1)
    doc = {
        "reward": res.final_reward.tolist(),
        "reward_shaped": sol.policy.log_probs.tolist(),
        "policy": res.final_policy.probs.tolist(),
        "occupancy": None if res.final_occupancy is None else res.final_occupancy.tolist(),
    }
    path.write_text(json.dumps(doc))


# -------------------------------------------------------------- per-seed work

def _one_seed(verb: str, env_name: str, cfg: drv.ExperimentConfig, seed: int, ablation: str | None):
    env = load_environment(env_name)
    cfg = replace(cfg, seed=seed)
    pe, oe = drv.expert_for(env, seed)
    if verb == "run":
        return {"main": drv.run_trirl(env.mdp, oe, cfg, pe)}
    if verb == "baseline":
        return {"main": drv.run_mce_irl(env.mdp, oe, cfg, pe)}
    if verb == "ablate":
        return {"main": drv.run_ablation(env.mdp, oe, cfg, ablation or "uncorrected_buffer", pe)}
    if verb == "transfer":
        flipped = env.mirrored()
        pe_t, oe_t = drv.expert_for(flipped, seed) if env.expert_policy is None else (pe, oe)
        trained, retrained, moved = drv.run_transfer(env.mdp, flipped.mdp, oe, cfg, oe_t, drv.mirror_reward(env), pe)
        goal = {flipped.grid.state(c) for c in flipped.grid.goal_cells}
        start = int(np.argmax(flipped.mdp.initial_dist))
        reaches = bool(set(drv.greedy_path(flipped.mdp, moved.final_policy, start)) & goal)
        gap = float(np.abs(retrained.final_policy.probs - trained.final_policy.probs).max())
        return {"main": trained, "retrain": retrained, "transfer": moved,
                "extra": {"retrain_policy_gap": gap, "transfer_reaches_goal": reaches}}
    raise drv.ConfigError(f"unknown verb {verb!r}")


def _mean_std(xs) -> dict:
    a = np.asarray(xs, dtype=float)
    return {"mean": float(a.mean()), "std": float(a.std()), "n": int(a.size)}


def cmd_runs(args, verb: str) -> int:
    conf = load_config(args.config, args.set or [], args.variant, args.mode)
    cfg: drv.ExperimentConfig = conf["cfg"]
    if args.no_wall_time:
        cfg = replace(cfg, record_time=False)
    if verb == "ablate" and args.which:
        conf["ablation"] = args.which
    if conf["ablation"] is not None and conf["ablation"] not in drv.ABLATIONS:
        raise drv.ConfigError(f"config key 'ablation': must be one of {drv.ABLATIONS}")
    if verb == "transfer" and conf["env"].grid is None:
        raise drv.ConfigError("config key 'env': transfer needs a gridworld")
    seeds = parse_seeds(args.seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(conf["env_name"]).stem
    jobs = int(os.environ.get("TRIRL_THREADS", "1") or 1)
    work = [(verb, conf["env_name"], cfg, s, conf["ablation"]) for s in seeds]
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_one_seed, *zip(*work)))
    else:
        results = [_one_seed(*w) for w in work]

    runs, failures = [], []
    for seed, res in zip(seeds, results):
        entry = {"seed": seed}
        for part in ("main", "retrain", "transfer"):
            if part not in res:
                continue
            r: drv.RunResult = res[part]
            suffix = "" if part == "main" else f"_{part}"
            write_csv(out / f"{stem}_{verb}{suffix}_seed{seed}.csv", r.records)
            mdp = conf["env"].mdp if part != "transfer" else conf["env"].mirrored().mdp
            _write_tables(out / f"{stem}_{verb}{suffix}_seed{seed}_final.json", r, mdp)
            entry[part] = r.summary()
        entry.update(res.get("extra", {}))
        runs.append(entry)
        main = res["main"]
        guarded = main.kind in ("trirl", "tr_loss")
        if guarded and main.dual_violations:
            failures.append(f"seed {seed}: {main.dual_violations} dual decreases")
        exact_thm1 = cfg.mode == "exact" and cfg.variant != "retrospective_eta"
        if guarded and exact_thm1 and main.summary()["max_theorem1_residual"] > 1e-6:
            failures.append(f"seed {seed}: step-correction residual above 1e-6")
    finals = [e["main"]["final_reverse_kl"] for e in runs]
    summary = {"verb": verb, "env": conf["env_name"], "config": cfg.to_dict(), "ablation": conf["ablation"],
               "seeds": seeds, "final_reverse_kl": _mean_std(finals), "runs": runs, "invariant_failures": failures}
    if verb == "transfer":
        summary["transfer_success"] = sum(e["transfer_reaches_goal"] for e in runs)
        summary["retrain_policy_gap_max"] = max(e["retrain_policy_gap"] for e in runs)
    (out / f"{stem}_{verb}_summary.json").write_text(json.dumps(summary, indent=2))
    kl = summary["final_reverse_kl"]
    print(f"{verb} {conf['env_name']}: {len(seeds)} seeds, final reverse KL {kl['mean']:.3e} +- {kl['std']:.3e}")
    if failures:
        for f in failures:
            print(f"invariant failure: {f}", file=sys.stderr)
        return 3
    return 0


# ------------------------------------------------------------------- check

def run_checks(env_names=("two-state-a", "two-state-b")) -> dict:
    """Fast invariant suite on the small tabular fixtures."""
    checks = []

    def add(name, env, value, threshold, ok=None):
        passed = bool(value <= threshold) if ok is None else bool(ok)
        checks.append({"name": name, "env": env, "value": float(value), "threshold": threshold, "passed": passed})

    for name in env_names:
        env: Environment = load_environment(name)
        mdp = env.mdp
        pe, oe = drv.expert_for(env)
        rng = np.random.default_rng(0)
        pi = TabularPolicy(rng.dirichlet(np.ones(mdp.n_actions), size=mdp.n_states))
        occ = compute_occupancy(mdp, pi)
        d = occ.state_marginal
        ppi = np.einsum("sa,sat->st", pi.probs, mdp.transition)
        add("flow_conservation", name, np.abs((1 - mdp.gamma) * mdp.initial_dist + mdp.gamma * ppi.T @ d - d).max(), 1e-10)
        add("occupancy_normalized", name, abs(occ.rho.sum() - 1.0), 1e-10)
        add("occupancy_round_trip", name, np.abs(policy_from_occupancy(occ).probs - pi.probs).max(), 1e-9)
        r = rng.normal(size=(mdp.n_states, mdp.n_actions))
        sol = soft_value_iteration(mdp, r)
        add("boltzmann_consistency", name, np.abs(sol.policy.probs * np.exp(sol.v)[:, None] - np.exp(sol.q)).max(), 1e-8)
        beta = 10.0
        g = dual_gradient(mdp, r, oe, beta)
        h = 1e-5
        fd = np.zeros_like(r)
        for idx in np.ndindex(r.shape):
            e = np.zeros_like(r)
            e[idx] = h
            fd[idx] = (dual_objective(mdp, r + e, oe, beta) - dual_objective(mdp, r - e, oe, beta)) / (2 * h)
        add("dual_gradient_fd", name, np.abs(fd - g).max() / max(np.abs(g).max(), 1e-12), 1e-4)
        cfg = drv.ExperimentConfig(beta=100.0, max_iters=200, record_time=False)
        res = drv.run_trirl(mdp, oe, cfg)
        s = res.summary()
        add("theorem1_residual", name, s["max_theorem1_residual"], 1e-6)
        add("alignment_identity", name, s["max_alignment_gap"], 1e-8)
        add("dual_monotone", name, res.dual_violations, 0)
        buf = DiscBuffer.empty(3, r.shape, 0.6, 100.0)
        logits, etas = [], []
        for k in range(8):
            lg = rng.normal(size=r.shape)
            eta = float(rng.exponential(5.0))
            buf = buffer_push(buf, RatioProvider("exact", lg), eta, pi)
            logits.append(lg)
            etas.append(eta)
        full = unlimited_history_reward(np.zeros_like(r), logits, etas, 0.6, 100.0)
        add("buffer_exact_fit", name, np.abs(buffer_corrected_reward(buf) - full).max(), 1e-12)
    mu, eta = trpl.project_mean(np.array([2.0]), np.array([0.0]), np.eye(1), 0.5)
    add("trpl_worked_case", "gaussian-1d", abs(eta - 1.0) + abs(mu[0] - 1.0), 0.0)
    return {"passed": all(c["passed"] for c in checks), "checks": checks}


def cmd_check(args) -> int:
    names = tuple(args.env) if args.env else ("two-state-a", "two-state-b")
    report = run_checks(names)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "check_report.json").write_text(json.dumps(report, indent=2))
    for c in report["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']:<22} {c['env']:<14} {c['value']:.3e} (<= {c['threshold']:g})")
    return 0 if report["passed"] else 3


# ------------------------------------------------------------ project demo

def project_demo(dims: int, seed: int, zeta_mu: float = trpl.ZETA_MU, zeta_sigma: float = trpl.ZETA_SIGMA,
                 count: int = 1) -> dict:
    """Project ``count`` random Gaussian pairs and report multipliers and bound residuals."""
    if dims < 1:
        raise drv.ConfigError("config key 'dims': must be at least 1")
    rows, violations = [], 0
    for k in range(count):
        pred, old = trpl.random_instance(seed + k, dims)
        res = trpl.project(pred, old, zeta_mu, zeta_sigma)
        bad = res.d_mean_after > zeta_mu + 1e-8 or res.d_cov_after > zeta_sigma + 1e-8
        violations += bad
        rows.append({"seed": seed + k, "eta_mu": res.eta_mu, "eta_sigma": res.eta_sigma,
                     "eta": trpl.aggregate_eta([res.eta_mu], res.eta_sigma),
                     "mean_residual": res.d_mean_after - zeta_mu, "cov_residual": res.d_cov_after - zeta_sigma})
    return {"dims": dims, "zeta_mu": zeta_mu, "zeta_sigma": zeta_sigma, "instances": rows, "violations": violations}


def cmd_project_demo(args) -> int:
    if args.worked:
        mu, eta = trpl.project_mean(np.array([2.0]), np.array([0.0]), np.eye(1), 0.5)
        print(f"worked case: eta_mu={eta!r} mu={float(mu[0])!r}")
        return 0
    rep = project_demo(args.dims, args.seed, args.zeta_mu, args.zeta_sigma, args.count)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"project_demo_d{args.dims}.json").write_text(json.dumps(rep, indent=2))
    for r in rep["instances"][: args.show]:
        print(f"seed {r['seed']}: eta_mu={r['eta_mu']:.6g} eta_sigma={r['eta_sigma']:.6g} "
              f"mean_res={r['mean_residual']:.2e} cov_res={r['cov_residual']:.2e}")
    print(f"{len(rep['instances'])} instances, {rep['violations']} bound violations")
    return 0 if rep["violations"] == 0 else 3


# -------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trirl", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)
    for verb in ("run", "baseline", "ablate", "transfer"):
        sp = sub.add_parser(verb)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out", default="results", help="output directory")
        sp.add_argument("--seeds", default="0", help="e.g. 0..9 or 0,3,5")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        sp.add_argument("--variant", choices=sorted(VARIANT_FLAGS))
        sp.add_argument("--mode", choices=["exact", "sampled"])
        sp.add_argument("--no-wall-time", action="store_true", help="write wall_ms as 0 for byte-stable traces")
        if verb == "ablate":
            sp.add_argument("--which", choices=drv.ABLATIONS)
    sp = sub.add_parser("check")
    sp.add_argument("--out", default="results")
    sp.add_argument("--env", action="append", help="fixture name (repeatable)")
    sp = sub.add_parser("project-demo")
    sp.add_argument("--dims", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--count", type=int, default=1000)
    sp.add_argument("--zeta-mu", type=float, default=trpl.ZETA_MU)
    sp.add_argument("--zeta-sigma", type=float, default=trpl.ZETA_SIGMA)
    sp.add_argument("--show", type=int, default=5, help="instances to print")
    sp.add_argument("--worked", action="store_true", help="print the one-dimensional worked case")
    sp.add_argument("--out")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("TRIRL_LOG", "WARNING").upper(), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "check":
            return cmd_check(args)
        if args.verb == "project-demo":
            return cmd_project_demo(args)
        return cmd_runs(args, args.verb)
    except drv.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 2
    except InvariantFailure as exc:
        print(f"invariant failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
