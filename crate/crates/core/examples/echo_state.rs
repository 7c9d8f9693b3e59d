//! Stacked reservoirs forget their initial condition: two copies driven by
//! different histories converge once they see the same inputs.

use fbff::networks::{spectral_radius, EchoState, ReservoirSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = ReservoirSpec {
        seed: 1,
        inputs: 1,
        units: 100,
        layers: 3,
        rho: 0.5,
        leak: 1.0,
    };
    let mut a = EchoState::new(spec)?;
    let mut b = EchoState::new(spec)?;
    for l in 0..spec.layers {
        println!(
            "layer {l} spectral radius {:.4}",
            spectral_radius(spec.units, a.recurrent(l))
        );
    }
    for t in 0..20 {
        a.step(&[(t as f64).sin()])?;
        b.step(&[-1.0])?;
    }
    for t in 0..30 {
        let u = [0.2 * t as f64];
        a.step(&u)?;
        b.step(&u)?;
        if t % 5 == 0 {
            let gap = a
                .features()
                .iter()
                .zip(b.features())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            println!("step {t:2}: max feature gap {gap:.2e}");
        }
    }
    Ok(())
}
