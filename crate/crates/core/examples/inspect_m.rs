//! Print learned calibration strengths of a converted checkpoint.
use std::path::Path;

fn main() {
    let path = std::env::args().nth(1).expect("checkpoint path");
    let net = instcal_core::checkpoint::load(Path::new(&path)).unwrap();
    for layer in net.norm_layers() {
        for suffix in ["m_mu", "m_sigma"] {
            let name = format!("{layer}.{suffix}");
            if let Some(p) = net.store.get(&name) {
                let d = &p.tensor.data;
                let mean = d.iter().sum::<f64>() / d.len() as f64;
                let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                println!("{name}: mean {mean:.3} range [{lo:.3}, {hi:.3}]");
            }
        }
    }
}
