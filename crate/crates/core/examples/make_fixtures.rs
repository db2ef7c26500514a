//! Regenerates the synthetic fixtures under `fixtures/`.
//!
//! cargo run -p sdelab --release --example make_fixtures -- fixtures

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use sdelab::data::PricePath;
use sdelab::metrics::evaluate_candidate;
use sdelab::{parse_model, simulate, ParamVector, SimConfig};

const CIR: &str = "dS = a*(b - S) dt + c*sqrt(S) dW";
const GBM: &str = "dS = a*S dt + b*S dW";
/// Seed shared by the CIR history and the calibration noise in its config.
const CIR_SEED: u64 = 42;

fn one_path(model: &str, params: &str, seed: u64, steps: usize, s0: f64) -> Vec<f64> {
    let m = parse_model(model).expect("fixture model parses");
    let p: ParamVector = params.parse().expect("fixture params parse");
    let cfg = SimConfig { n_paths: 1, steps, seed, s0, ..SimConfig::default() };
    simulate(&m, &p, &cfg).expect("fixture simulation").path(0).to_vec()
}

/// Tilts a path by a log-linear factor so that last/first equals `ratio`.
fn pin_total_return(mut closes: Vec<f64>, ratio: f64) -> Vec<f64> {
    let n = (closes.len() - 1) as f64;
    let tilt = ratio.ln() - (closes[closes.len() - 1] / closes[0]).ln();
    for (i, c) in closes.iter_mut().enumerate() {
        *c *= (tilt * i as f64 / n).exp();
    }
    closes
}

fn write_prices(path: &Path, start: NaiveDate, closes: Vec<f64>) {
    PricePath::from_closes(start, closes).expect("positive closes").write_csv(path).expect("write prices");
    println!("wrote {}", path.display());
}

fn write_json(path: &Path, v: &serde_json::Value) {
    std::fs::write(path, serde_json::to_string_pretty(v).expect("json") + "\n").expect("write json");
    println!("wrote {}", path.display());
}

fn main() {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    for sub in ["prices", "configs", "metrics"] {
        std::fs::create_dir_all(root.join(sub)).expect("create fixture dirs");
    }
    let d = |y, m, day| NaiveDate::from_ymd_opt(y, m, day).expect("valid date");

    // CIR history whose calibration noise matches the generating noise.
    let cir = one_path(CIR, "a=0.5,b=100,c=1", CIR_SEED, 252, 100.0);
    write_prices(&root.join("prices/cir_selfconsistent.csv"), d(2020, 1, 1), cir.clone());
    write_json(
        &root.join("configs/discover_cir.json"),
        &serde_json::json!({
            "seed": CIR_SEED,
            "discovery": { "calib": { "n_paths": 1 }, "calib_seed": CIR_SEED, "eval_paths": 32 }
        }),
    );

    // A year of prices rising 37.2% end to end.
    let aapl = pin_total_return(one_path(GBM, "a=0.3,b=0.25", 2024, 251, 185.0), 1.372);
    write_prices(&root.join("prices/aapl_like.csv"), d(2024, 1, 2), aapl);

    // Backtest fixtures: an index-like path whose trading window covers the
    // bundled news dates, and a short one for quick runs.
    let spx = one_path(GBM, "a=0.08,b=0.18", 500, 239, 3800.0);
    write_prices(&root.join("prices/spx_like.csv"), d(2022, 6, 27), spx);
    let small =
        one_path("dS = a*S dt + b*S dW + S dJ", "a=0.05,b=0.2,lambda=12,mu_j=-0.02,sigma_j=0.05", 77, 89, 100.0);
    write_prices(&root.join("prices/backtest_small.csv"), d(2023, 1, 2), small);
    let fast = serde_json::json!({
        "seed": 11,
        "backtest": {
            "symbol": "SPX",
            "lookback": 60,
            "recal_window": 40,
            "block": 10,
            "calib": { "n_paths": 8, "max_iters": 20 },
            "risk": { "n_paths": 500 },
            "discovery": { "iterations": 4, "eval_paths": 8, "calib": { "n_paths": 8, "max_iters": 40 } }
        }
    });
    write_json(&root.join("configs/backtest_fast.json"), &fast);

    // GBM ensemble judged against the CIR history: a mediocre fit used to
    // pin the metrics sub-score.
    let gbm = parse_model(GBM).expect("gbm parses");
    let ens = simulate(
        &gbm,
        &"a=0.05,b=0.2".parse().expect("params"),
        &SimConfig { n_paths: 64, seed: CIR_SEED + 1000, ..SimConfig::default() },
    )
    .expect("gbm ensemble");
    let eval = evaluate_candidate(&ens, &cir).expect("evaluation");
    write_json(
        &root.join("metrics/gbm_vs_cir_comparison.json"),
        &serde_json::to_value(&eval.comparison).expect("json"),
    );
}
