//! Mollify the atoms, solve on a fine grid and extrapolate the pairings in ε.

use std::path::Path;

use singular_renewal::load_config;
use singular_renewal::oracle::{convergence_report, default_battery, default_oracle_horizon, Profile, ReportOptions};
use singular_renewal::smooth_solver::{solve, SolveOptions};

fn main() -> singular_renewal::Result<()> {
    let cfg = load_config(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/demo.toml"))?;
    let sol = solve(&cfg, &SolveOptions::default())?;
    let horizon = default_oracle_horizon(&cfg)?;
    let battery = default_battery(&cfg, &sol, horizon);
    let eps: Vec<f64> = [8.0, 4.0, 2.0, 1.0].iter().map(|k| k * 1e-3 * cfg.horizon).collect();
    let opts = ReportOptions { profile: Profile::Poly4, step_ratio: 8.0, horizon: Some(horizon) };
    let report = convergence_report(&cfg, &sol, &eps, &battery, &opts)?;
    for r in &report.results {
        println!("{:<22} pairings {:?}", r.name, r.pairings);
        println!("{:<22} limit {} hybrid {} rel_err {:.2e} rate {:?}", "", r.extrapolated, r.hybrid, r.rel_err, r.rate);
    }
    Ok(())
}
