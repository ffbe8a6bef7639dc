#!/usr/bin/env python3
"""Desk-scale Monte Carlo and smoke checks. Prints one PASS/FAIL line per check; exit 1 if any failed."""
import argparse
import json
import tempfile
import time
from pathlib import Path

from dmlpanel.cli import estimate as estimate_cmd
from dmlpanel.dictionary import DictionarySpec, PairPolicy, build_dictionary
from dmlpanel.estimator import ALL_METHODS, EstimatorConfig, Method
from dmlpanel.panel import write_csv
from dmlpanel.simulation import DGPConfig, generate_dataset, render_markdown, run_monte_carlo

DML = Method.DML
LASSO = Method.LASSO_PLUG_IN
OLS_LINEAR = Method.OLS_LINEAR
OLS_POLY = Method.OLS_POLY


class Checks:
    def __init__(self) -> None:
        self.failed = 0

    def check(self, name: str, ok: bool, detail: str = "") -> None:
        if not ok:
            self.failed += 1
        print(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else ""))


def simulate(N: int, T: int, h: int, trials: int, seed: int, jobs: int):
    started = time.monotonic()
    summary = run_monte_carlo(DGPConfig(N=N, T=T, h=h, seed=seed), ALL_METHODS, trials, EstimatorConfig(seed=seed), DictionarySpec(), jobs=jobs)
    print(render_markdown(summary))
    print(f"elapsed {time.monotonic() - started:.0f}s, penalties r_L={summary.r_L} r_alpha={summary.r_alpha}")
    return summary.methods, summary


def headline(checks: Checks, trials: int, seed: int, jobs: int) -> None:
    print("== N=1000, T=2, h=20 ==")
    s, summary = simulate(1000, 2, 20, trials, seed, jobs)
    dml, lasso = s[DML], s[LASSO]
    checks.check("dictionary size 244", summary.p == 244, f"p={summary.p}")
    checks.check("true value in [2.85, 3.05]", 2.85 <= dml.true_value <= 3.05, f"{dml.true_value:.4f}")
    checks.check("|bias DML| < 0.05", abs(dml.bias) < 0.05, f"{dml.bias:.4f}")
    checks.check("|bias Lasso| in [0.15, 0.45]", 0.15 <= abs(lasso.bias) <= 0.45, f"{lasso.bias:.4f}")
    checks.check("|bias DML| < |bias Lasso| / 3", abs(dml.bias) < abs(lasso.bias) / 3)
    checks.check("coverage DML in [0.85, 0.97]", 0.85 <= dml.coverage <= 0.97, f"{dml.coverage:.3f}")
    checks.check("coverage Lasso < 0.5", lasso.coverage < 0.5, f"{lasso.coverage:.3f}")
    checks.check("SD OLS Poly > SD DML", s[OLS_POLY].sd > dml.sd, f"{s[OLS_POLY].sd:.4f} vs {dml.sd:.4f}")
    checks.check(
        "MSE tau DML below both OLS fits",
        dml.mse_tau < s[OLS_POLY].mse_tau and dml.mse_tau < s[OLS_LINEAR].mse_tau,
        f"{dml.mse_tau:.4f} / {s[OLS_POLY].mse_tau:.4f} / {s[OLS_LINEAR].mse_tau:.4f}",
    )
    ratio = s[OLS_POLY].mse_gamma_out / max(dml.mse_gamma_out, lasso.mse_gamma_out)
    checks.check("OLS Poly cross-fold MSE gamma > 3x the Lasso fits", ratio > 3.0, f"ratio {ratio:.2f}")


def ten_covariates(checks: Checks, trials: int, seed: int, jobs: int) -> None:
    for T in (2, 5):
        print(f"== N=1000, T={T}, h=10 ==")
        s, summary = simulate(1000, T, 10, trials, seed, jobs)
        checks.check(f"T={T}: dictionary size 124", summary.p == 124, f"p={summary.p}")
        checks.check(f"T={T}: |bias DML| < |bias Lasso|", abs(s[DML].bias) < abs(s[LASSO].bias), f"{s[DML].bias:.4f} vs {s[LASSO].bias:.4f}")
        checks.check(f"T={T}: coverage DML >= 0.85", s[DML].coverage >= 0.85, f"{s[DML].coverage:.3f}")


def csv_smoke(checks: Checks, seed: int) -> None:
    print("== estimate on a 5000-unit CSV panel ==")
    spec = DictionarySpec(3, PairPolicy.ALL_PAIRS, include_intercept=False)
    print(f"dictionary size {build_dictionary(spec, 2).p}")
    with tempfile.TemporaryDirectory() as tmp:
        data = write_csv(generate_dataset(DGPConfig(N=5000, T=2, h=2, seed=seed)), Path(tmp) / "panel.csv", include_weight=False)
        out = Path(tmp) / "out"
        started = time.monotonic()
        code = estimate_cmd.main([
            "--data", str(data), "--seed", str(seed), "--pair-policy", PairPolicy.ALL_PAIRS.value,
            "--no-intercept", "--out", str(out),
        ])
        elapsed = time.monotonic() - started
        checks.check("estimate exits 0", code == 0, f"code {code}, {elapsed:.0f}s")
        if code != 0:
            return
        doc = json.loads((out / "report.json").read_text(encoding="utf-8"))
    reports = {r["method"]: r for r in doc["reports"]}
    checks.check("all five methods reported", set(reports) == {m.value for m in ALL_METHODS})
    checks.check("dictionary size 36", reports[DML.value]["p"] == 36)
    checks.check("ten pairwise comparisons", len(doc["comparisons"]) == 10)
    checks.check(
        "SE DML < SE OLS Poly",
        reports[DML.value]["se"] < reports[OLS_POLY.value]["se"],
        f"{reports[DML.value]['se']:.4g} vs {reports[OLS_POLY.value]['se']:.4g}",
    )
    checks.check("runtime under 2 minutes", elapsed < 120, f"{elapsed:.0f}s")


def main() -> int:
    p = argparse.ArgumentParser(description="Desk-scale acceptance checks")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--ten-covariate-trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=20240501)
    p.add_argument("--jobs", type=int, default=-1)
    p.add_argument("--only", choices=["headline", "ten-covariates", "csv"], help="Run a single group")
    args = p.parse_args()

    checks = Checks()
    if args.only in (None, "headline"):
        headline(checks, args.trials, args.seed, args.jobs)
    if args.only in (None, "ten-covariates"):
        ten_covariates(checks, args.ten_covariate_trials, args.seed, args.jobs)
    if args.only in (None, "csv"):
        csv_smoke(checks, args.seed)
    print("--")
    print(f"{checks.failed} check(s) failed" if checks.failed else "all checks passed")
    return 1 if checks.failed else 0


if __name__ == "__main__":
    raise SystemExit(main())
