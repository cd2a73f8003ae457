//! The label process from the ground up: draw a partition one step at a
//! time, watch the rich-get-richer effect, and score a whole label
//! sequence in closed form.
//!
//! Run with `cargo run --example crp_basics`.

use neural_dpmm::crp::{crp_baseline_nll, crp_log_prob, crp_sample, CrpState};
use neural_dpmm::rng::RngStream;

fn main() {
    let alpha = 1.0;
    let mut rng = RngStream::from_seed(7);

    // Step through one draw by hand to show the predictive at each step.
    let mut state = CrpState::new(alpha).unwrap();
    println!("step-by-step draw (alpha = {alpha}):");
    for t in 0..10 {
        let probs = state.predictive();
        let z = state.sample_next(&mut rng);
        state.observe(z).unwrap();
        let shown: Vec<String> = probs.iter().map(|p| format!("{p:.2}")).collect();
        println!(
            "  t={t:<2} p(class)=[{}] -> chose {z}",
            shown.join(", ")
        );
    }

    // The same process as a one-shot sampler, scored in closed form.
    let labels = crp_sample(alpha, 20, &mut rng).unwrap();
    let log_p = crp_log_prob(&labels, alpha).unwrap();
    println!("\nsampled labels: {labels:?}");
    println!("log p(labels)  = {log_p:.4}");
    println!("per-step nll   = {:.4}", crp_baseline_nll(&labels, alpha).unwrap());

    // Averaged over many draws the per-step score settles near its
    // long-run value; this is the number a label-only predictor earns.
    let episodes = 2000;
    let t = 100;
    let mut total = 0.0;
    for i in 0..episodes {
        let mut ep_rng = RngStream::from_seed(1000 + i);
        let labels = crp_sample(alpha, t, &mut ep_rng).unwrap();
        total += crp_baseline_nll(&labels, alpha).unwrap();
    }
    println!(
        "\nmean per-step nll over {episodes} sequences of length {t}: {:.4}",
        total / episodes as f64
    );
}
