use super::{Result, Tensor, TensorError};

/// Moment estimates and hyperparameters for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zero moments for parameters of the given sizes.
    pub fn new(lr: f64, sizes: impl IntoIterator<Item = usize>) -> Self {
        let sizes: Vec<usize> = sizes.into_iter().collect();
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params(lr: f64, params: &[Tensor]) -> Self {
        Self::new(lr, params.iter().map(Tensor::len))
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, i: usize) -> &[f64] {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &[f64] {
        &self.v[i]
    }
}

/// One bias-corrected Adam update. All gradients are checked for
/// finiteness before anything is modified.
pub fn adam_step(params: &mut [Tensor], grads: &[Vec<f64>], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TensorError::ShapeMismatch {
            op: "adam_step",
            dim: "parameter count".into(),
            expected: state.m.len(),
            got: grads.len().min(params.len()),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                dim: format!("parameter {i}"),
                expected: p.len(),
                got: g.len(),
            });
        }
        if let Some(element) = g.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFiniteGradient { index: i, element });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (k, &gk) in g.iter().enumerate() {
            m[k] = b1 * m[k] + (1.0 - b1) * gk;
            v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
        }
        // lr = 0 must leave parameters bit-identical, including signed zeros.
        if state.lr == 0.0 {
            continue;
        }
        for (k, w) in p.data_mut().iter_mut().enumerate() {
            let mhat = m[k] / bc1;
            let vhat = v[k] / bc2;
            *w -= state.lr * mhat / (vhat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for g in [0.3, -7.0, 1e-3] {
            let mut p = vec![Tensor::scalar(1.0)];
            let mut st = AdamState::for_params(1e-4, &p);
            adam_step(&mut p, &[vec![g]], &mut st).unwrap();
            // m̂ = g, v̂ = g², so the step is lr·g/(|g| + ε).
            let expected = 1.0 - 1e-4 * g / (g.abs() + 1e-8);
            assert!((p[0].item() - expected).abs() < 1e-15);
            assert!((p[0].item() - (1.0 - 1e-4 * g.signum())).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_gradient_keeps_value_and_counts_step() {
        let mut p = vec![Tensor::scalar(2.5)];
        let mut st = AdamState::for_params(1e-3, &p);
        adam_step(&mut p, &[vec![0.0]], &mut st).unwrap();
        assert_eq!(p[0].item(), 2.5);
        assert_eq!(st.step(), 1);
    }

    #[test]
    fn zero_lr_is_bit_identical() {
        let init = vec![Tensor::from_vec(vec![3], vec![-0.0, 1.5, -3.25]).unwrap()];
        let mut p = init.clone();
        let mut st = AdamState::for_params(0.0, &p);
        for _ in 0..5 {
            adam_step(&mut p, &[vec![0.1, -2.0, 4.0]], &mut st).unwrap();
        }
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&p[0]), bits(&init[0]));
    }

    #[test]
    fn steps_are_deterministic() {
        let run = || {
            let mut p = vec![Tensor::from_vec(vec![2], vec![0.1, 0.2]).unwrap()];
            let mut st = AdamState::for_params(1e-2, &p);
            for k in 0..3 {
                adam_step(&mut p, &[vec![k as f64, -1.0]], &mut st).unwrap();
            }
            (p, st)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_side_effects() {
        let mut p = vec![Tensor::scalar(1.0)];
        let mut st = AdamState::for_params(1e-3, &p);
        let err = adam_step(&mut p, &[vec![f64::NAN]], &mut st).unwrap_err();
        assert!(matches!(err, TensorError::NonFiniteGradient { index: 0, element: 0 }));
        assert_eq!(st.step(), 0);
        assert_eq!(p[0].item(), 1.0);
    }
}
