//! First-order optimizers for the iterative solvers: adaptive-moment
//! updates (the default) and plain gradient descent (used where a
//! monotone trace matters).

/// Adaptive-moment estimator with bias correction.
pub struct Adam {
    pub step: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, step: f64) -> Self {
        Adam {
            step,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.step * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Which update rule an iterative solve uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    GradientDescent,
}

pub enum Optimizer {
    Adam(Adam),
    Gd { step: f64 },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n_params: usize, step: f64) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(n_params, step)),
            OptimizerKind::GradientDescent => Optimizer::Gd { step },
        }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        match self {
            Optimizer::Adam(a) => a.update(params, grads),
            Optimizer::Gd { step } => {
                for (p, g) in params.iter_mut().zip(grads.iter()) {
                    *p -= *step * g;
                }
            }
        }
    }
}
