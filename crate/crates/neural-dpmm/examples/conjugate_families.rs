//! Conjugate component families: accumulate sufficient statistics, get
//! posterior predictive densities in closed form, and compose a zero
//! gate over a continuous body for sparse nonnegative data.

use neural_dpmm::expfam::{
    hurdle_compose, log_predictive, posterior_update, BetaBernoulli, HyperParams, IidProduct,
    LogNormalNig, NigHyper,
};

fn main() {
    // Gaussian with unknown mean and variance under its conjugate prior.
    let nig = NigHyper {
        m: 0.0,
        lambda: 0.01,
        a: 2.0,
        b: 2.0,
    };
    let family = IidProduct::new(nig, 1).unwrap();
    let mut hyper = HyperParams::prior_for(&family);

    println!("gaussian component, prior predictive then posterior predictive:");
    println!("  p(x=0.5 | prior)      = exp({:.4})", log_predictive(&family, &hyper, &[0.5]).unwrap());
    for &x in &[0.9, 1.1, 1.0, 0.95] {
        hyper = posterior_update(&family, &hyper, &[x]).unwrap();
    }
    // Four observations near 1.0 pull the predictive there.
    println!("  after observing 0.9 1.1 1.0 0.95:");
    println!("  p(x=1.0 | data)       = exp({:.4})", log_predictive(&family, &hyper, &[1.0]).unwrap());
    println!("  p(x=0.0 | data)       = exp({:.4})", log_predictive(&family, &hyper, &[0.0]).unwrap());

    // A coin with a Beta prior; counts are the whole posterior.
    let coin = BetaBernoulli { a: 1.0, b: 1.0 };
    let mut h = HyperParams::prior_for(&coin);
    for &x in &[1.0, 1.0, 1.0, 0.0] {
        h = posterior_update(&coin, &h, &[x]).unwrap();
    }
    println!("\ncoin after 3 heads / 1 tail:");
    println!("  p(heads) = {:.4}", log_predictive(&coin, &h, &[1.0]).unwrap().exp());

    // Sparse nonnegative data: a gate decides zero vs nonzero, and a
    // log-normal body models the nonzero magnitudes.
    let gated = hurdle_compose(LogNormalNig::new(nig), 1.0, 1.0).unwrap();
    let mut h = HyperParams::prior_for(&gated);
    let observations = [0.0, 2.5, 0.0, 3.1, 2.8, 0.0];
    for x in &observations {
        h = posterior_update(&gated, &h, std::slice::from_ref(x)).unwrap();
    }
    println!("\nhurdle component after {observations:?}:");
    println!("  p(x=0)    = {:.4}", log_predictive(&gated, &h, &[0.0]).unwrap().exp());
    println!("  log p(2.7) = {:.4}", log_predictive(&gated, &h, &[2.7]).unwrap());
    println!("  log p(30)  = {:.4}", log_predictive(&gated, &h, &[30.0]).unwrap());
}
