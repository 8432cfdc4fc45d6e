//! Poke at a Gaussian variational layer directly: sample weights, compare
//! the closed-form output variance against a Monte-Carlo estimate, and see
//! how the three prior families weigh the same coefficient.
//!
//! ```sh
//! cargo run --example variational_layer_basics
//! ```

use bdecf::bayes::{GaussianVariationalLayer, PriorSpec};
use bdecf::error::Result;
use bdecf::uncertainty::{activation_stats, uncertainty_score, UncertaintyScoreParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let layer = GaussianVariationalLayer::init(6, 3, PriorSpec::gsm_default(), &mut rng);
    println!(
        "layer 6 -> 3: first weight mu {:.4}, sigma {:.4}",
        layer.mu_w[0],
        layer.sigma_w(0)
    );

    // Every sample keeps its eps, so log q(w) is exact at the draw.
    let s = layer.sample(&mut rng);
    println!(
        "one draw: log q(w) = {:.3}, log P(w) = {:.3}, kl sample = {:.3}",
        layer.log_posterior(&s),
        layer.log_prior(&s),
        layer.kl_sample(&s)
    );

    // Closed form: var(z_j) = sum_i sigma_w[j,i]^2 h_i^2 + sigma_b[j]^2.
    let h = [0.3, -1.2, 0.0, 0.8, 0.5, -0.1];
    let stats = activation_stats(&layer, &h)?;
    let mut mc_var = vec![0.0; 3];
    let mut mc_mean = vec![0.0; 3];
    let n = 20_000;
    for _ in 0..n {
        let z = layer.forward(&h, &layer.sample(&mut rng));
        for j in 0..3 {
            mc_mean[j] += z[j];
            mc_var[j] += z[j] * z[j];
        }
    }
    println!("unit  closed-form var  monte carlo ({n} draws)");
    for j in 0..3 {
        let mean = mc_mean[j] / n as f64;
        let var = mc_var[j] / n as f64 - mean * mean;
        println!("{j:>4}  {:<16.5}  {var:.5}", stats.var_z[j]);
    }

    let params = UncertaintyScoreParams::default();
    for var in [0.0, 1.0 / 80.0, 0.1, 1.0] {
        println!(
            "uncertainty score at var {var:<7}: {:.4}",
            uncertainty_score(var, &params)?
        );
    }

    println!("\nlog density of w = 0.05 under each prior:");
    for prior in PriorSpec::default_cycle() {
        println!("{:<10} {:.4}", prior.family_name(), prior.log_density(0.05));
    }
    Ok(())
}
