use super::Mlp;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64, cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            lr,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grad: &Mlp) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let mut k = 0;
        for (p, g) in net.params_mut().zip(grad.params()) {
            for (pi, gi) in p.iter_mut().zip(g) {
                self.m[k] = beta1 * self.m[k] + (1.0 - beta1) * gi;
                self.v[k] = beta2 * self.v[k] + (1.0 - beta2) * gi * gi;
                *pi -= self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + eps);
                k += 1;
            }
        }
    }
}
