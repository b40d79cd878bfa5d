"""Command-line interface: fit-prior, update, calibrate, simulate.

Every command reads one JSON config (one block per command, named
``fit_prior``, ``update``, ``calibrate``, ``simulate``); flags override
config values. Exit codes: 0 success, 2 invalid input, 3 numerical
non-convergence, 4 infeasible elicitation.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from typing import Optional

import numpy as np

from . import capital, conjugate, elicitation
from .distributions import GammaParams, NormalInvChiSqParams, NormalParams
from .empirical_bayes import bank_posterior, fit_mle, fit_mom, predictive_counts
from .errors import ConvergenceError, InfeasibleError, OpBayesError, ValidationError
from .ingest import fmt, ingest_counts, ingest_losses, write_table

EXIT_OK, EXIT_INVALID, EXIT_CONVERGENCE, EXIT_INFEASIBLE = 0, 2, 3, 4
TRAJECTORY_COLUMNS = ["step", "alpha_hat", "beta_hat", "bayes_estimate", "mle_estimate"]


def _round(x):
    """Float rounded to 12 significant digits (JSON output)."""
    if isinstance(x, float):
        if not math.isfinite(x):
            return str(x)
        return float(fmt(x))
    if isinstance(x, dict):
        return {k: _round(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_round(v) for v in x]
    if isinstance(x, np.generic):
        return _round(x.item())
    return x


def _dump(obj) -> str:
    return json.dumps(_round(obj), indent=2, sort_keys=True) + "\n"


def _block(config, name):
    block = config.get(name)
    if not isinstance(block, dict):
        raise ValidationError(f"config has no {name!r} block")
    return block


def _setting(config, block, key, default=None):
    if key in block:
        return block[key]
    return config.get(key, default)


def _path(config, p):
    base = config.get("_base_dir", ".")
    return p if os.path.isabs(p) else os.path.join(base, p)


def _gamma(spec) -> GammaParams:
    return GammaParams(float(spec["alpha"]), float(spec["beta"]),
                       spec.get("lower_trunc"), spec.get("upper_trunc"))


def _normal(spec) -> NormalParams:
    return NormalParams(float(spec["mu"]), float(spec["sigma"]),
                        spec.get("lower_trunc"), spec.get("upper_trunc"))


def _interval(block, key="interval"):
    iv = block.get(key)
    if iv is None:
        return None
    if len(iv) != 2:
        raise ValidationError(f"{key} needs two numbers")
    return float(iv[0]), float(iv[1])


# -- fit-prior ----------------------------------------------------------------

def _params_dict(p):
    if isinstance(p, GammaParams):
        d = {"alpha": p.alpha, "beta": p.beta}
        if p.lower_trunc is not None:
            d["lower_trunc"] = p.lower_trunc
        if p.upper_trunc is not None:
            d["upper_trunc"] = p.upper_trunc
        return d
    if isinstance(p, NormalParams):
        return {"mu": p.mu, "sigma": p.sigma}
    raise TypeError(type(p))


def _report_dict(family, report):
    if not isinstance(report, elicitation.FitReport):
        return {"family": family, "params": _params_dict(report), "residuals": [],
                "equations": ["closed_form"], "converged": True}
    return {"family": family, "params": _params_dict(report.params),
            "residuals": list(report.residuals), "equations": list(report.equations),
            "converged": bool(report.converged), "exact": bool(report.exact),
            "iterations": report.iterations}


def cmd_fit_prior(config) -> dict:
    """Fit a prior from the expert opinions in the ``fit_prior`` block."""
    b = _block(config, "fit_prior")
    family = b.get("family")
    prob = float(b.get("prob", elicitation.DEFAULT_PROB))
    if "constraints" in b:
        cons = [elicitation.Constraint(**c) for c in b["constraints"]]
        rep = elicitation.fit_least_squares(
            cons, family=family or "gamma", lower_bound=float(b.get("lower_bound", 0.0)),
            threshold=float(b.get("threshold", 1.0)),
            sigma=None if b.get("sigma") is None else float(b["sigma"]))
    elif family == "poisson_gamma":
        if "vco" in b:
            rep = elicitation.fit_poisson_gamma_vco(float(b["mean"]), float(b["vco"]))
        else:
            rep = elicitation.fit_poisson_gamma(float(b["mean"]), _interval(b), prob)
    elif family == "lognormal_mu":
        sigma = float(b["sigma"])
        if "vco" in b:
            expected = float(b.get("expected_quantile", b.get("mean")))
            rep = elicitation.fit_lognormal_mu_prior_vco(sigma, expected, float(b["vco"]), b.get("q"))
        elif "q" in b:
            rep = elicitation.fit_lognormal_mu_prior_from_quantile(
                sigma, float(b["q"]), float(b["expected_quantile"]), _interval(b), prob)
        else:
            rep = elicitation.fit_lognormal_mu_prior_from_mean(sigma, float(b["mean"]), _interval(b), prob)
    elif family == "pareto_gamma":
        B = float(b.get("lower_bound", 0.0))
        if "loss_interval" in b:
            a_, b_ = _interval(b, "loss_interval")
            rep = elicitation.fit_pareto_gamma_from_mean_interval(
                B, float(b["threshold"]), a_, b_, prob, b.get("companion"))
        elif "quantile_interval" in b:
            a_, b_ = _interval(b, "quantile_interval")
            rep = elicitation.fit_pareto_gamma_from_quantile_interval(
                B, float(b["threshold"]), float(b["q"]), a_, b_, prob, b.get("companion"))
        else:
            rep = elicitation.fit_pareto_gamma(B, float(b["mean"]), _interval(b), prob)
    else:
        raise ValidationError(f"unknown prior family {family!r}")
    return _report_dict(family or "least_squares", rep)


# -- update ---------------------------------------------------------------------

def _update_data(config, b, family):
    if "data" in b:
        return [float(x) for x in b["data"]]
    if family == "poisson_gamma":
        if "counts" not in b:
            raise ValidationError("update needs 'data' or a 'counts' file")
        panel = ingest_counts(_path(config, b["counts"]))
        banks = {bk.bank_id: bk for bk in panel.banks}
        bid = b.get("bank_id")
        if bid is None:
            if len(banks) != 1:
                raise ValidationError("counts file holds several banks; set 'bank_id'")
            bid = next(iter(banks))
        if bid not in banks:
            raise ValidationError(f"bank {bid!r} not in counts file")
        return [float(c) for c in banks[bid].counts]
    if "losses" not in b:
        raise ValidationError("update needs 'data' or a 'losses' file")
    cells = ingest_losses(_path(config, b["losses"]))
    cid = b.get("cell_id")
    if cid is None:
        if len(cells) != 1:
            raise ValidationError("losses file holds several cells; set 'cell_id'")
        cid = next(iter(cells))
    if cid not in cells:
        raise ValidationError(f"cell {cid!r} not in losses file")
    return [float(x) for x in cells[cid].amounts]


def cmd_update(config) -> list:
    """Posterior trajectory rows ``(step, alpha_hat, beta_hat, bayes, mle)``.

    For ``lognormal_mu`` the two parameter columns hold the posterior
    location and scale of mu; for ``pareto`` losses below the threshold are
    an error unless ``exclude_below_threshold`` is set.
    """
    b = _block(config, "update")
    family = b.get("family")
    data = _update_data(config, b, family)
    rows = []
    if family == "poisson_gamma":
        prior = _gamma(b["prior"])
        total = 0.0
        for k, post in enumerate(conjugate.poisson_gamma_trajectory(prior, data), start=1):
            total += data[k - 1]
            rows.append((k, post.params.alpha, post.params.beta, post.mean, total / k))
    elif family == "pareto":
        prior = _gamma(b["prior"])
        L = float(b["threshold"])
        if b.get("exclude_below_threshold"):
            data = [x for x in data if x >= L]
        post = conjugate.ParetoXiPosterior(prior, L, 0, prior)
        s = 0.0
        for k, x in enumerate(data, start=1):
            post = conjugate.pareto_xi_step(post, x)
            s += math.log(x / L)
            rows.append((k, post.params.alpha, post.params.beta, post.mean,
                         math.inf if s == 0.0 else k / s))
    elif family == "lognormal_mu":
        prior = _normal(b["prior"])
        sigma = float(b["sigma"])
        post = conjugate.NormalMuPosterior(prior, sigma, 0, prior)
        s = 0.0
        for k, x in enumerate(data, start=1):
            if not x > 0:
                raise ValidationError("losses must be positive")
            y = math.log(x)
            post = conjugate.lognormal_mu_step(post, y)
            s += y
            rows.append((k, post.params.mu, post.params.sigma, post.params.mean, s / k))
    else:
        raise ValidationError(f"unknown update family {family!r}")
    return rows


# -- calibrate --------------------------------------------------------------------

def _hyper_dict(h):
    return {"alpha": h.alpha, "beta": h.beta, "lambda0": h.lambda0, "sigma0_sq": h.sigma0_sq,
            "method": h.method, "loglik": h.loglik, "sigma0_sq_raw": h.sigma0_sq_raw,
            "homogeneous": h.homogeneous, "boundary": h.boundary, "message": h.message}


def cmd_calibrate(config) -> dict:
    """Maximum-likelihood and moment estimates of the Gamma rate prior, side by side,
    plus each bank's posterior and next-year count distribution (from the MLE)."""
    b = _block(config, "calibrate")
    panel = ingest_counts(_path(config, b["counts"]), bool(b.get("prescaled", False)))
    if panel.n_banks < 2:
        raise ValidationError("calibration needs at least two banks")
    mom = fit_mom(panel, int(b.get("inverse_k_power", 2)))
    mle = fit_mle(panel)
    out = {"banks": panel.n_banks, "mle": _hyper_dict(mle), "mom": _hyper_dict(mom)}
    next_v = float(b.get("next_exposure", 1.0))
    if not mle.boundary:
        per_bank = []
        for bank in panel.banks:
            post = bank_posterior(mle, bank, panel.prescaled)
            nb = predictive_counts(post, next_v)
            per_bank.append({"bank_id": bank.bank_id, "alpha": post.alpha, "beta": post.beta,
                             "mean": post.mean, "negbin_r": nb.r, "negbin_p": nb.p})
        out["posteriors"] = per_bank
    return out


# -- simulate ---------------------------------------------------------------------

def _cell_model(spec, floor):
    f = spec["frequency"]
    freq = float(f["rate"]) if "rate" in f else _gamma(f)
    s = spec["severity"]
    fam = s.get("family")
    if fam == "lognormal":
        mu = s["mu"]
        sev = capital.LogNormalSeverity(_normal(mu) if isinstance(mu, dict) else float(mu),
                                        float(s["sigma"]))
    elif fam == "lognormal_joint":
        sev = capital.JointLogNormalSeverity(NormalInvChiSqParams(
            float(s["nu"]), float(s["beta"]), float(s["theta"]), float(s["phi"])))
    elif fam == "pareto":
        xi = s["xi"]
        sev = capital.ParetoSeverity(_gamma(xi) if isinstance(xi, dict) else float(xi),
                                     float(s["threshold"]))
    else:
        raise ValidationError(f"unknown severity family {fam!r}")
    return capital.RiskCellModel(str(spec["cell_id"]), freq, sev, float(spec.get("exposure", 1.0)),
                                 floor, bool(spec.get("acknowledge_infinite_mean", False)))


def build_models(block):
    floor = block.get("variance_floor")
    floor = None if floor is None else capital.FloorSpec(float(floor))
    cells = block.get("cells")
    if not cells:
        raise ValidationError("simulate block lists no cells")
    models = [_cell_model(c, floor) for c in cells]
    cop = block.get("copula")
    if cop is None or cop.get("kind", "gaussian") == "independent":
        copula = capital.CopulaSpec()
    else:
        ids = [m.cell_id for m in models]
        coupling = []
        for cell, kind in cop["coupling"]:
            if isinstance(cell, str):
                if cell not in ids:
                    raise ValidationError(f"copula refers to unknown cell {cell!r}")
                cell = ids.index(cell)
            coupling.append((int(cell), kind))
        copula = capital.CopulaSpec.gaussian(cop["correlation"], coupling)
    return models, copula


def cmd_simulate(config, out_dir: Optional[str] = None) -> capital.CapitalResult:
    """Run the capital simulation; with ``out_dir`` write ``cell_samples.csv``,
    ``total_samples.csv`` and ``summary.json``."""
    b = _block(config, "simulate")
    models, copula = build_models(b)
    seed = _setting(config, b, "seed")
    if seed is None:
        raise ValidationError("simulate needs a seed")
    K = int(_setting(config, b, "samples", capital.DEFAULT_SAMPLES))
    q = float(_setting(config, b, "quantile", capital.DEFAULT_QUANTILE))
    workers = int(_setting(config, b, "workers", 1))
    result = capital.run_copula(models, copula, K, int(seed), workers, q,
                                bool(b.get("interpolate", False)))
    if out_dir is not None:
        write_simulation(result, out_dir)
    return result


def write_simulation(result: capital.CapitalResult, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    reps = np.arange(result.n_samples)
    cells = result.per_cell_samples
    with open(os.path.join(out_dir, "cell_samples.csv"), "w", encoding="utf-8") as fh:
        fh.write(",".join(["rep"] + result.cell_ids) + "\n")
        for k in reps:
            fh.write(",".join([str(k)] + [fmt(v) for v in cells[k]]) + "\n")
    write_table(os.path.join(out_dir, "total_samples.csv"), ["rep", "total"],
                ((str(k), v) for k, v in zip(reps, result.total_samples)))
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        fh.write(_dump(result.summary()))


# -- entry point ------------------------------------------------------------------

def load_config(path) -> dict:
    if path is None:
        return {"_base_dir": "."}
    try:
        with open(path, encoding="utf-8") as fh:
            config = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(config, dict):
        raise ValidationError(f"{path}: top level must be an object")
    config["_base_dir"] = os.path.dirname(os.path.abspath(path))
    return config


def _parser():
    p = argparse.ArgumentParser(prog="opbayes",
                                description="Conjugate Bayesian operational-risk modelling.")
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", help="output file (directory for simulate)")
    common.add_argument("--audit", action="store_true",
                        help="refuse to fall back on defaults for the seed")
    sub.add_parser("fit-prior", parents=[common], help="fit a prior to expert opinions")
    sub.add_parser("update", parents=[common], help="posterior trajectory CSV")
    cal = sub.add_parser("calibrate", parents=[common], help="industry-panel hyperparameters")
    cal.add_argument("--seed", type=int)
    sim = sub.add_parser("simulate", parents=[common], help="Monte Carlo capital")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--samples", type=int)
    sim.add_argument("--quantile", type=float)
    sim.add_argument("--workers", type=int)
    return p


def _write_text(text, out):
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)


def _run(args) -> int:
    config = load_config(args.config)
    block_name = args.command.replace("-", "_")
    if args.command in ("simulate", "calibrate"):
        block = config.setdefault(block_name, {})
        for key in ("seed", "samples", "quantile", "workers"):
            val = getattr(args, key, None)
            if val is not None:
                block[key] = val
        if _setting(config, block, "seed") is None:
            if args.audit:
                raise ValidationError("audit mode: an explicit seed is required")
            block["seed"] = 0
            print("warning: no seed given, using 0", file=sys.stderr)
        q = _setting(config, block, "quantile")
        if q is not None and not 0 < float(q) < 1:
            raise ValidationError("quantile must lie in (0, 1)")

    if args.command == "fit-prior":
        res = cmd_fit_prior(config)
        _write_text(_dump(res), args.out)
        if args.out is not None:
            print(f"{res['family']}: " + ", ".join(f"{k} = {fmt(v)}" for k, v in res["params"].items()))
    elif args.command == "update":
        rows = cmd_update(config)
        if args.out is not None:
            write_table(args.out, TRAJECTORY_COLUMNS, rows)
        else:
            lines = [",".join(TRAJECTORY_COLUMNS)]
            lines += [",".join([str(r[0])] + [fmt(v) for v in r[1:]]) for r in rows]
            sys.stdout.write("\n".join(lines) + "\n")
    elif args.command == "calibrate":
        res = cmd_calibrate(config)
        _write_text(_dump(res), args.out)
        if args.out is not None:
            for m in ("mle", "mom"):
                h = res[m]
                print(f"{m}: alpha = {h['alpha']}, beta = {h['beta']}, lambda0 = {fmt(h['lambda0'])}, "
                      f"sigma0^2 = {fmt(h['sigma0_sq'])}{'  [' + h['message'] + ']' if h['message'] else ''}")
    else:
        result = cmd_simulate(config, args.out)
        summary = _dump(result.summary())
        if args.out is None:
            sys.stdout.write(summary)
        else:
            print(f"total q{result.quantile:g} = {fmt(result.total_quantile)}, "
                  f"sum of cell quantiles = {fmt(result.sum_of_quantiles)}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _run(args)
    except InfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if getattr(exc, "report", None) is not None:
            print(f"residual report: {exc.report}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if getattr(exc, "report", None) is not None:
            print(f"residual report: {exc.report}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (OpBayesError, KeyError, TypeError, ValueError) as exc:
        msg = f"missing config key {exc}" if isinstance(exc, KeyError) else str(exc)
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
