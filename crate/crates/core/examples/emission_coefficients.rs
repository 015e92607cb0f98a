//! Coefficients F_k of ∫ S δ^(n)(x - y) δ^(m)(x - t + τ) dx = Σ F_k δ^(k)(t - t*).

use singular_renewal::function::SmoothFunction;
use singular_renewal::model::{DataAtom, ModelConfig};
use singular_renewal::singular::{delta_product_coeffs, sigma_jet};
use singular_renewal::jet::Jet;

fn main() {
    let unit = Jet::constant(3, 3, 1.0);
    for (n, m) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
        println!("S = 1, (n, m) = ({n}, {m}): {:?}", delta_product_coeffs(n, m, &unit));
    }

    let mut cfg = ModelConfig::empty(1.0, 0.5);
    cfg.p = SmoothFunction::expression("-0.5 - 0.2*sin(x + 2*t)").unwrap();
    cfg.initial_atoms = vec![DataAtom::new(1.0, 0, 0.25)];
    let (y, t_star) = (0.6, 0.35);
    for (n, m) in [(0u32, 0u32), (1, 0), (0, 1)] {
        let sigma = sigma_jet(&cfg, y, t_star, n as usize, m as usize, 64);
        println!("S from p, (n, m) = ({n}, {m}): {:?}", delta_product_coeffs(n, m, &sigma));
    }
}
