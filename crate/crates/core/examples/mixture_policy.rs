//! Composes a feedback and a feedforward student-t policy and shows how the
//! mixture ratio follows their entropies and separation.

use fbff::distributions::StudentT;
use fbff::policy::{compose_and_sample, draw_policy_noise, mixture_ratio, Component, PolicyPair};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for (h_fb, h_ff, d) in [
        (1.0, 2.0, 0.1),
        (1.0, 1.0, 0.5),
        (2.0, 1.0, 0.1),
        (1.0, 2.0, 0.0),
    ] {
        let w = mixture_ratio(h_fb, h_ff, d, 10.0)?;
        println!("H_fb {h_fb} H_ff {h_ff} d {d}: w = {w:.5}");
    }

    let fb = StudentT::new(vec![0.5, -0.2], vec![0.3, 0.3], 10.0)?;
    let ff = StudentT::new(vec![0.0, 0.0], vec![1.0, 1.0], 10.0)?;
    let pair = PolicyPair::new(fb, ff, 10.0)?;
    println!(
        "\nsharp FB vs broad FF: w = {:.4}, d = {:.4}",
        pair.w, pair.d
    );

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 10_000;
    let mut from_fb = 0;
    for _ in 0..n {
        let noise = draw_policy_noise(&mut rng, &pair);
        if compose_and_sample(&pair, &noise)?.component == Component::Fb {
            from_fb += 1;
        }
    }
    println!(
        "{n} composed draws, {:.3} taken from FB",
        from_fb as f64 / n as f64
    );
    Ok(())
}
