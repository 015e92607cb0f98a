//! Emission events generated by reflections at a fertility atom and by a boundary atom.

use std::path::Path;

use singular_renewal::characteristics::{build_singular_support, regions};
use singular_renewal::load_config;

fn main() -> singular_renewal::Result<()> {
    let cfg = load_config(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/demo.toml"))?;
    let sup = build_singular_support(&cfg)?;
    for e in &sup.events {
        println!("t = {:<6} generation {} {:?}, order <= {}", e.time, e.generation, e.kind, e.max_delta_order);
    }
    for r in regions(&sup.events, &cfg) {
        println!("region {}: {} < t - x <= {}", r.index, r.lower, r.upper);
    }
    Ok(())
}
