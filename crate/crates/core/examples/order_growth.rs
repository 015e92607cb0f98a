//! A δ' fertility atom raises the order of each reflected line by one.

use std::path::Path;

use singular_renewal::load_config;
use singular_renewal::smooth_solver::{solve, SolveOptions};

fn main() -> singular_renewal::Result<()> {
    let cfg = load_config(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/order_growth.toml"))?;
    let sol = solve(&cfg, &SolveOptions::default())?;
    for e in &sol.ledger.entries {
        println!(
            "t = {:<6} generation {} emitted order {} (effective {:?}, singular order {:?})",
            e.time, e.generation, e.emitted_order, e.effective_order, e.singular_order
        );
    }
    println!("max order per generation: {:?}", sol.ledger.max_order_by_generation());
    Ok(())
}
