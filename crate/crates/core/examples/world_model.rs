//! One evaluation of the latent dynamics model's loss and its gradient.

use fbff::autodiff::{ParamStore, Tape};
use fbff::networks::{DofMode, StudentTHead};
use fbff::world_model::{reexpress_action, ModelNoise, ModelWeights, WorldModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let (ds, da, dh) = (4, 1, 16);
    let dof = DofMode::Learned { init: 10.0 };
    let model = WorldModel::new(&mut store, ds, da, dh, 6, 32, dof, &mut rng)?;
    let fb = StudentTHead::new(&mut store, "fb", ds, 32, da, dof, &mut rng)?;
    let ff = StudentTHead::new(&mut store, "ff", dh, 32, da, dof, &mut rng)?;

    let mut t = Tape::new(&store);
    let s = t.constant(vec![0.1, 0.0, -0.05, 0.2]);
    let s_next = t.constant(vec![0.11, 0.02, -0.04, 0.15]);
    let h = t.constant(vec![0.0; dh]);
    let pf = fb.forward(&mut t, s)?;
    let pg = ff.forward(&mut t, h)?;
    // the executed action re-enters the graph through the head that produced it
    let a = reexpress_action(&mut t, &pf, &[0.4])?;
    let noise = ModelNoise::draw(&mut rng, model.latent_dim(), 10.0, da, 10.0);
    let weights = ModelWeights {
        beta_z: 1e-2,
        beta_a: 1e-4,
        eta: 1e-4,
    };
    let parts = model.loss(&mut t, s, s_next, h, &pf, &pg, 0.5, a, &noise, weights)?;
    println!("reconstruction  {:9.4}", t.scalar(parts.recon));
    println!("KL(q || prior)  {:9.4}", t.scalar(parts.kl_z));
    println!("H(fb || ff)     {:9.4}", t.scalar(parts.ce_policy));
    println!("total           {:9.4}", t.scalar(parts.total));

    t.backward(parts.total)?;
    let grads = t.take_param_grads();
    let norm = |ids: &[_]| -> f64 {
        ids.iter()
            .map(|&id| {
                grads
                    .get(id)
                    .into_iter()
                    .flatten()
                    .map(|g| g * g)
                    .sum::<f64>()
            })
            .sum::<f64>()
            .sqrt()
    };
    println!(
        "\n|grad| model {:.3e}, fb head {:.3e}",
        norm(&model.param_ids()),
        norm(&fb.param_ids())
    );
    Ok(())
}
