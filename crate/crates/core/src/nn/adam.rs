use super::{NnError, Param, Result, Scalar};

/// First/second moment estimates for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

/// Adam with bias correction. Moment slots are matched to parameters by
/// position, so callers must pass parameters in a stable order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub states: Vec<AdamState<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, states: Vec::new() }
    }

    pub fn step<'a, I>(&mut self, params: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a mut Param<T>>,
        T: 'a,
    {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - self.beta1), T::from_f64(1.0 - self.beta2));
        let (lr, eps) = (T::from_f64(self.lr), T::from_f64(self.eps));
        let (bc1, bc2) = (T::from_f64(bc1), T::from_f64(bc2));
        for (i, p) in params.into_iter().enumerate() {
            if i == self.states.len() {
                self.states.push(AdamState { m: vec![T::zero(); p.len()], v: vec![T::zero(); p.len()] });
            }
            let st = &mut self.states[i];
            if st.m.len() != p.len() {
                return Err(NnError::Contract(format!("adam: parameter {i} has {} entries, state has {}", p.len(), st.m.len())));
            }
            for (((w, &g), m), v) in p.value.iter_mut().zip(&p.grad).zip(&mut st.m).zip(&mut st.v) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> Param<f64> {
        Param::new(vec![1], vec![v])
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [0.3, -5.0, 1e-3] {
            let mut p = scalar_param(1.0);
            p.grad[0] = g;
            let mut opt = Adam::new(0.01);
            opt.step([&mut p]).unwrap();
            let slack = (0.01 * 1e-8 / (g.abs() + 1e-8)).abs() + 1e-15;
            assert!(((p.value[0] - 1.0) + 0.01 * g.signum()).abs() <= slack, "{g}");
        }
    }

    #[test]
    fn zero_grad_leaves_params() {
        let mut p = scalar_param(2.5);
        let mut opt = Adam::new(0.1);
        opt.step([&mut p]).unwrap();
        assert_eq!(p.value[0], 2.5);
        assert_eq!(opt.t, 1);
    }

    #[test]
    fn zero_lr_is_noop() {
        let mut p = scalar_param(-0.7);
        let mut opt = Adam::new(0.0);
        for k in 0..10 {
            p.grad[0] = k as f64 - 3.0;
            opt.step([&mut p]).unwrap();
        }
        assert_eq!(p.value[0], -0.7);
        assert!(opt.states[0].v[0] >= 0.0);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = scalar_param(1.0);
        let mut opt = Adam::new(0.1);
        for _ in 0..100 {
            p.grad[0] = 2.0 * p.value[0];
            opt.step([&mut p]).unwrap();
        }
        assert!(p.value[0].abs() < 0.05, "{}", p.value[0]);
    }

    #[test]
    fn mismatched_state_rejected() {
        let mut opt = Adam::<f64>::new(0.1);
        opt.step([&mut scalar_param(0.0)]).unwrap();
        let mut wide = Param::new(vec![2], vec![0.0, 0.0]);
        assert!(opt.step([&mut wide]).is_err());
    }
}
