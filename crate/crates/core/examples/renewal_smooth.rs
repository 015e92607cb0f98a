//! Classical renewal problem: hybrid march against the brute-force grid at three steps.

use std::path::Path;

use singular_renewal::load_config;
use singular_renewal::oracle::solve_regularized;
use singular_renewal::smooth_solver::{solve, SolveOptions};

fn main() -> singular_renewal::Result<()> {
    let cfg = load_config(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/smooth.toml"))?;
    let h = 1e-3 * cfg.horizon;
    let hyb = solve(&cfg, &SolveOptions { grid_step: Some(h), ..Default::default() })?;
    println!("residual {:.2e} (bound {:.2e})", hyb.diagnostics.residual, hyb.diagnostics.residual_bound);
    let mut prev: Option<f64> = None;
    for stride in [4usize, 2, 1] {
        let grid = solve_regularized(&cfg, 4.0 * h * stride as f64, h * stride as f64)?;
        let mut err: f64 = 0.0;
        for k in 0..=grid.nt {
            for i in 0..=grid.nx {
                err = err.max((grid.value(i, k).unwrap() - hyb.value(i * stride, k * stride)).abs());
            }
        }
        let order = prev.map(|p| (p / err).log2());
        println!("h = {:.4e}  max |hybrid - grid| = {err:.3e}  order {order:?}", grid.h);
        prev = Some(err);
    }
    let k = hyb.trace.times.len() / 2;
    println!("v_r({}) = {}", hyb.trace.times[k], hyb.trace.v_r[k]);
    Ok(())
}
