//! A Dirac mass at x = 0.25 moves along x = t + 0.25, weighted by the survival factor.

use std::path::Path;

use singular_renewal::load_config;
use singular_renewal::smooth_solver::{solve, SolveOptions};
use singular_renewal::testfn::TestFn;

fn main() -> singular_renewal::Result<()> {
    let cfg = load_config(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/delta_transport.toml"))?;
    let sol = solve(&cfg, &SolveOptions::default())?;
    for term in &sol.terms {
        println!("line x = t - ({}): constants {:?}", term.line.offset, term.constants);
    }
    let phi = TestFn::bump(0.3, 0.9, 0.1, 0.6);
    println!("<u, phi> = {}", sol.pairing(&cfg, &phi));
    println!("smooth part of the pairing = {}", sol.smooth_pairing(&phi));
    Ok(())
}
