"""Smoke test for the sdelab_py extension module.

Build and install first:
    pip install maturin
    maturin build --release -m crates/python/Cargo.toml
    pip install target/wheels/sdelab_py-*.whl
then run `python python/smoke_test.py` from the repository root.
"""

import math
import pathlib
import sys

import sdelab_py as sl

ROOT = pathlib.Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol


def main():
    gbm = sl.parse_model("dS=a*S dt+b*S dW")
    assert gbm == "dS = a*S dt + b*S dW", gbm
    assert sl.param_names("dS = a*(b - S) dt + c*sqrt(S) dW") == ["a", "b", "c"]

    paths = sl.simulate(gbm, {"a": 0.05, "b": 0.2}, n_paths=4, steps=10, seed=7)
    assert len(paths) == 4 and all(len(p) == 11 and p[0] == 100.0 for p in paths)
    assert paths == sl.simulate(gbm, {"a": 0.05, "b": 0.2}, n_paths=4, steps=10, seed=7)

    var, cvar = sl.var_cvar([float(i) for i in range(1, 101)], 0.95)
    assert (var, cvar) == (95.0, 98.0), (var, cvar)
    assert close(sl.max_drawdown([100, 120, 90, 110, 80]), 1 / 3)
    assert sl.rsi([float(i) for i in range(15)]) == 100.0
    assert sl.similarity(gbm, gbm) == 1.0

    hist = sl.simulate(gbm, {"a": 0.05, "b": 0.2}, n_paths=1, steps=252, seed=3)[0]
    fit = sl.calibrate(gbm, hist, init={"a": 0.1, "b": 0.3}, n_paths=1, seed=3)
    assert close(fit["params"]["a"], 0.05, 0.02) and close(fit["params"]["b"], 0.2, 0.05), fit["params"]

    rep = sl.risk_report(gbm, {"a": 0.05, "b": 0.2}, [100.0] * 30, n_paths=2000, seed=1)
    assert rep["var"] > 0 and rep["cvar"] >= rep["var"] and math.isfinite(rep["mdd"])

    try:
        sl.parse_model("dS = a*S dt +")
    except sl.SdelabError as e:
        assert "column" in str(e)
    else:
        raise AssertionError("expected a parse error")

    cir = [float(l.split(",")[1]) for l in (FIXTURES / "prices/cir_selfconsistent.csv").read_text().splitlines()[1:]]
    # same settings as fixtures/configs/discover_cir.json
    out = sl.discover(cir, iterations=6, seed=42, calib_seed=42, benchmark_pool=True)
    assert out["best"] == "dS = a*(b - S) dt + c*sqrt(S) dW", out["best"]
    assert out["records"][0]["model"] == gbm

    res = sl.backtest(
        str(FIXTURES / "prices/backtest_small.csv"),
        config=str(FIXTURES / "configs/backtest_fast.json"),
        news=str(FIXTURES / "news/synthetic_spx.json"),
    )
    assert res["status"] == "completed" and res["lookahead_ok"]
    assert len(res["equity"]) == len(res["decisions"]) + 1

    print("smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
