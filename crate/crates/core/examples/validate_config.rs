//! Assumption checks, including the triple-intersection gate and its perturbation.

use std::path::Path;

use singular_renewal::load_config;
use singular_renewal::model::check_assumptions;

fn main() -> singular_renewal::Result<()> {
    let mut cfg = load_config(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/a4_violation.toml"))?;
    for shift in [0.0, 1e-3] {
        cfg.boundary_atoms[0].location = 2.0 + shift;
        println!("t1 = {}", cfg.boundary_atoms[0].location);
        for v in check_assumptions(&cfg) {
            println!("  {} {:?}: {}", v.id, v.status, v.witness);
        }
    }
    Ok(())
}
