//! Adam parameter updates over lists of matrices.

use super::Scalar;
use ndarray::Array2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdamOutcome {
    Applied,
    /// A gradient contained a non-finite element; parameters, moments,
    /// and the step counter were left untouched.
    SkippedNonFinite,
}

/// First and second moment estimates for one parameter list, plus the
/// update hyperparameters. The moment buffers mirror the parameter
/// shapes exactly.
#[derive(Clone, Debug)]
pub struct AdamState<T: Scalar> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    step: u64,
    m: Vec<Array2<T>>,
    v: Vec<Array2<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shapes: &[(usize, usize)], lr: T) -> Self {
        Self {
            lr,
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            epsilon: T::from_f64(1e-8),
            step: 0,
            m: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            v: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Raw moment buffers, for checkpointing.
    pub fn moments(&self) -> (&[Array2<T>], &[Array2<T>]) {
        (&self.m, &self.v)
    }

    /// Restores moments and step counter saved by an earlier run.
    /// Shapes must match the state's construction shapes.
    pub fn restore(&mut self, m: Vec<Array2<T>>, v: Vec<Array2<T>>, step: u64) {
        assert_eq!(m.len(), self.m.len());
        assert_eq!(v.len(), self.v.len());
        for (new, old) in m.iter().zip(&self.m) {
            assert_eq!(new.dim(), old.dim());
        }
        for (new, old) in v.iter().zip(&self.v) {
            assert_eq!(new.dim(), old.dim());
        }
        self.m = m;
        self.v = v;
        self.step = step;
    }

    /// One bias-corrected update. Any non-finite gradient element skips
    /// the whole step so a single bad minibatch cannot poison the
    /// moments.
    pub fn update(&mut self, params: &mut [Array2<T>], grads: &[Array2<T>]) -> AdamOutcome {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        for g in grads {
            if g.iter().any(|x| !x.is_finite()) {
                return AdamOutcome::SkippedNonFinite;
            }
        }
        self.step += 1;
        let b1t = self.beta1.powi(self.step as i32);
        let b2t = self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            assert_eq!(p.dim(), g.dim());
            azip_update(p, g, m, v, self.beta1, self.beta2, b1t, b2t, self.lr, self.epsilon);
        }
        AdamOutcome::Applied
    }
}

#[allow(clippy::too_many_arguments)]
fn azip_update<T: Scalar>(
    p: &mut Array2<T>,
    g: &Array2<T>,
    m: &mut Array2<T>,
    v: &mut Array2<T>,
    beta1: T,
    beta2: T,
    b1t: T,
    b2t: T,
    lr: T,
    epsilon: T,
) {
    let one = T::one();
    ndarray::Zip::from(p)
        .and(g)
        .and(m)
        .and(v)
        .for_each(|p, &g, m, v| {
            *m = beta1 * *m + (one - beta1) * g;
            *v = beta2 * *v + (one - beta2) * g * g;
            let m_hat = *m / (one - b1t);
            let v_hat = *v / (one - b2t);
            *p = *p - lr * m_hat / (v_hat.sqrt() + epsilon);
        });
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_gradient_leaves_parameters_and_advances_the_counter() {
        let mut state: AdamState<f64> = AdamState::new(&[(1, 2)], 0.01);
        let mut params = vec![array![[1.0, -2.0]]];
        let grads = vec![Array2::zeros((1, 2))];
        assert_eq!(state.update(&mut params, &grads), AdamOutcome::Applied);
        assert_eq!(params[0], array![[1.0, -2.0]]);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn constant_gradient_moves_against_its_sign() {
        let mut state: AdamState<f64> = AdamState::new(&[(1, 2)], 0.01);
        let mut params = vec![array![[0.5, -0.5]]];
        let grads = vec![array![[2.0, -3.0]]];
        let mut prev = params[0].clone();
        for _ in 0..25 {
            state.update(&mut params, &grads);
            assert!(params[0][(0, 0)] < prev[(0, 0)]);
            assert!(params[0][(0, 1)] > prev[(0, 1)]);
            prev = params[0].clone();
        }
    }

    #[test]
    fn non_finite_gradient_skips_the_step() {
        let mut state: AdamState<f64> = AdamState::new(&[(1, 2)], 0.01);
        let mut params = vec![array![[1.0, 1.0]]];
        let before = state.clone();
        let grads = vec![array![[f64::NAN, 0.0]]];
        assert_eq!(
            state.update(&mut params, &grads),
            AdamOutcome::SkippedNonFinite
        );
        assert_eq!(params[0], array![[1.0, 1.0]]);
        assert_eq!(state.step_count(), 0);
        assert_eq!(state.moments().0, before.moments().0);
        let inf = vec![array![[0.0, f64::INFINITY]]];
        assert_eq!(state.update(&mut params, &inf), AdamOutcome::SkippedNonFinite);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut state: AdamState<f64> = AdamState::new(&[(1, 4)], 0.01);
        let mut params = vec![array![[0.5, -0.5, 0.5, -0.5]]];
        for _ in 0..5000 {
            let grads = vec![params[0].mapv(|w| 2.0 * w)];
            state.update(&mut params, &grads);
        }
        let norm: f64 = params[0].iter().map(|w| w * w).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "norm {norm}");
    }

    #[test]
    fn restore_resumes_the_trajectory_exactly() {
        let grads_for = |p: &Array2<f32>| vec![p.mapv(|w| 2.0 * w + 0.1)];
        let mut full: AdamState<f32> = AdamState::new(&[(2, 2)], 0.05);
        let mut params_full = vec![array![[1.0f32, -1.0], [0.5, 2.0]]];
        for _ in 0..10 {
            let g = grads_for(&params_full[0]);
            full.update(&mut params_full, &g);
        }

        let mut first: AdamState<f32> = AdamState::new(&[(2, 2)], 0.05);
        let mut params = vec![array![[1.0f32, -1.0], [0.5, 2.0]]];
        for _ in 0..4 {
            let g = grads_for(&params[0]);
            first.update(&mut params, &g);
        }
        let (m, v) = first.moments();
        let (m, v) = (m.to_vec(), v.to_vec());
        let step = first.step_count();

        let mut second: AdamState<f32> = AdamState::new(&[(2, 2)], 0.05);
        second.restore(m, v, step);
        for _ in 0..6 {
            let g = grads_for(&params[0]);
            second.update(&mut params, &g);
        }
        assert_eq!(params[0], params_full[0]);
        assert_eq!(second.step_count(), full.step_count());
    }
}
