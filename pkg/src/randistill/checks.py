"""Self-check suites behind ``randistill check``.

``analytic`` replays the closed-form identities and orderings against
frozen constants and small grids; ``nn`` exercises the gradient and
determinism contracts of the network engine; ``e2e`` runs a miniature
experiment end to end.  Each item prints one pass/fail line.
"""

from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analytic, families, nn
from .analytic import LinearRep
from .rng import make_rng

PAPER_RHO = ((0.1, 0.5), (0.9, 0.5))


@dataclass
class CheckItem:
    name: str
    passed: bool
    detail: str


def _close(a: float, b: float, tol: float = 1e-9) -> bool:
    return abs(a - b) <= tol


def check_rel_perf() -> CheckItem:
    got = analytic.rel_perf(-1.0, 1.0, 2.0)
    want = 12.0 / 5.0 - 0.5 * math.log(5.0)
    ok = _close(got, want)
    for a, d in ((-1.0, 6.0), (0.0, 5.0), (1.0, 10.0)):
        ok &= _close(analytic.rel_perf(a, a, 2.0), -0.5 * math.log(d / 2.0))
    # Positivity at couplings just outside the ambiguous band of the
    # quadratic boundary: 6 and -2.
    ok &= analytic.rel_perf(6.0, 0.0, 2.0) > 0
    ok &= analytic.rel_perf(-2.0, 0.0, 2.0) > 0
    return CheckItem("relative-performance closed forms", ok, f"rel_perf(-1,1,2)={got:.12f}")


def check_cross_kl() -> CheckItem:
    worst = max(abs(analytic.cross_kl(a, a, 2.0)) for a in np.arange(-3.0, 3.01, 0.25))
    return CheckItem("cross-KL vanishes at equal couplings", worst <= 1e-12, f"max |kl|={worst:.2e}")


def check_gap_table(rho=PAPER_RHO) -> CheckItem:
    f = analytic.gap_posterior(rho)
    want = {(1, 1): 0.5, (0, 1): 0.5, (1, 0): 0.9, (0, 0): 0.1}
    ok = all(_close(f[k], v) for k, v in want.items())
    return CheckItem("discrete-family posterior table", ok, f"f={f.tolist()}")


def check_prop3() -> CheckItem:
    got = analytic.prop3_criterion(7.0, 1.0)
    want = 4.0 - 0.5 * math.log(3.0)
    ok = _close(got, want) and analytic.prop3_criterion(1.0, 1.0) < 0
    return CheckItem("information-criterion value", ok, f"criterion(7,1)={got:.12f}")


def minimax_argmin(
    kl_fn=None, b_grid: np.ndarray | None = None, a_grid: np.ndarray | None = None
) -> tuple[float, np.ndarray]:
    """argmin_b of max_a kl_fn(a, b) over the given grids.

    Defaults to the separated-covariate family, whose identity
    representation is uncorrelating and whose minimax member is therefore
    the independence coupling b = 0.
    """
    kl_fn = analytic.prop_cross_kl if kl_fn is None else kl_fn
    b_grid = np.arange(-2.0, 2.0 + 1e-12, 0.05) if b_grid is None else b_grid
    a_grid = np.arange(-3.0, 3.0 + 1e-12, 0.1) if a_grid is None else a_grid
    worst = np.array([max(kl_fn(a, b) for a in a_grid) for b in b_grid])
    return float(b_grid[int(np.argmin(worst))]), worst


def check_minimax() -> CheckItem:
    t0 = time.time()
    b_star, _ = minimax_argmin()
    dt = time.time() - t0
    ok = abs(b_star) <= 0.05 + 1e-12 and dt < 5.0
    return CheckItem(
        "independence coupling is minimax for the separated-covariate family",
        ok,
        f"argmin_b={b_star:.2f} ({dt:.2f}s)",
    )


def check_landscape() -> CheckItem:
    hi = analytic.eq5_landscape(LinearRep(1.0, 1.0), 20.0)
    lo = analytic.eq5_landscape(LinearRep(-1.0, 1.0), 20.0)
    grid = np.linspace(-2.0, 2.0, 41)
    values = analytic.landscape_grid(20.0, grid)
    i, j = 10, 30  # (-1, 1): weak local max, strict transverse to its ray
    neighborhood = values[i - 1 : i + 2, j - 1 : j + 2]
    ok = hi > lo and values[i, j] >= neighborhood.max() and values.max() - hi < 0.005
    return CheckItem(
        "penalized-landscape orderings (label ridge above nuisance ridge)",
        ok,
        f"value(1,1)={hi:.6f} value(-1,1)={lo:.6f} grid max={values.max():.6f}",
    )


def check_optimal_linear() -> CheckItem:
    want = analytic.optimal_linear_accuracy()
    data = families.sample_binary_gaussian(-0.9, 10**6, seed=1)
    r = data.x.sum(axis=1)
    acc = float(((r >= 1.0).astype(float) == data.y).mean())
    ok = abs(acc - want) <= 0.01 and abs(want - 0.62) <= 0.02
    return CheckItem(
        "summed-covariate oracle accuracy", ok, f"analytic={want:.4f} monte-carlo={acc:.4f}"
    )


def analytic_suite() -> list[CheckItem]:
    return [
        check_rel_perf(),
        check_cross_kl(),
        check_gap_table(),
        check_prop3(),
        check_minimax(),
        check_landscape(),
        check_optimal_linear(),
    ]


ARCHITECTURES = (
    nn.MlpSpec((2, 16, 1)),
    nn.MlpSpec((1, 16, 1)),
    nn.MlpSpec((3, 16, 16, 1)),
    nn.MlpSpec((1, 16, 1), output="linear"),
    nn.MlpSpec((2, 16, 1), output="linear"),
    nn.MlpSpec((1, 1)),
    nn.MlpSpec((2, 1), output="linear"),
)


def check_gradients() -> list[CheckItem]:
    items = []
    rng = make_rng(0, "misc")
    for spec in ARCHITECTURES:
        model = nn.init(spec, seed=7)
        x = rng.normal(size=(16, spec.layer_sizes[0]))
        y = (rng.random(16) < 0.5).astype(float)
        w = rng.random(16) + 0.5
        res = nn.grad_check(model, (x, y, w))
        items.append(
            CheckItem(
                f"gradient check {spec.layer_sizes}",
                res.passed,
                f"worst rel err {res.worst_rel_err:.2e} at {res.worst_index}",
            )
        )
    return items


def check_determinism() -> CheckItem:
    spec = nn.MlpSpec((2, 16, 1))
    rng = make_rng(1, "misc")
    x = rng.normal(size=(200, 2))
    y = (rng.random(200) < 0.5).astype(float)
    w = np.ones(200)
    opt = nn.OptConfig(learning_rate=1e-2, epochs=5, batch_size=64, seed=9)
    m1 = nn.train_binary(nn.init(spec, 9), x, y, w, opt)
    m2 = nn.train_binary(nn.init(spec, 9), x, y, w, opt)
    ok = np.array_equal(m1.params, m2.params)
    return CheckItem("bit-identical retraining", ok, "params equal" if ok else "params differ")


def nn_suite() -> list[CheckItem]:
    return [*check_gradients(), check_determinism()]


def e2e_suite() -> list[CheckItem]:
    """Miniature experiment through the CLI entry points."""
    from . import cli

    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp) / "run"
        config = {
            "family": {"kind": "BinaryGaussian", "a": 0.5},
            "train_a": 0.5,
            "test_a": -0.9,
            "n_train": 2000,
            "n_test": 500,
            "method": ["erm", "oracle_linear"],
            "k_folds": 2,
            "seeds": [1],
            "output_dir": str(out),
            "erm_opt": {"epochs": 30},
        }
        cfg_path = Path(tmp) / "config.json"
        cfg_path.write_text(cli.json.dumps(config))
        code = cli.main(["run", str(cfg_path)])
        rows = (out / "results.csv").read_text().strip().splitlines()
        ok = code == 0 and len(rows) == 1 + 4  # header + 2 methods x 2 splits
        items = [CheckItem("miniature run exits cleanly", ok, f"exit={code} rows={len(rows)-1}")]
        code2 = cli.main(["run", str(cfg_path), "--out", str(out) + "_again"])
        same = (out / "results.csv").read_bytes() == (
            Path(str(out) + "_again") / "results.csv"
        ).read_bytes()
        items.append(
            CheckItem("rerun is byte-identical", code2 == 0 and same, f"exit={code2}")
        )
    return items


SUITES = {"analytic": analytic_suite, "nn": nn_suite, "e2e": e2e_suite}


def run_suite(name: str, out_dir: Path | None = None) -> list[CheckItem]:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    items = SUITES[name]()
    if name == "analytic" and out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        analytic.write_landscape_csv(
            out_dir / "landscape_lambda20.csv", 20.0, np.linspace(-2.0, 2.0, 41)
        )
    return items
