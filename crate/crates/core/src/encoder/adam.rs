use serde::{Deserialize, Serialize};

use super::params::Params;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
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

/// Dense bias-corrected Adam over every tensor of a `Params`.
pub struct Adam {
    pub cfg: AdamConfig,
    pub lr: f64,
    t: u64,
    m: Params,
    v: Params,
}

impl Adam {
    pub fn new(params: &Params, lr: f64, cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            lr,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut Params, grads: &Params) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let lr = self.lr;
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use rand::SeedableRng;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let cfg = EncoderConfig::tiny();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut p = Params::init(&cfg, 6, &mut rng);
        let before = p.clone();
        let mut g = p.zeros_like();
        g.lnf_b[[0, 0]] = 3.0;
        g.lnf_b[[0, 1]] = -0.5;
        let mut opt = Adam::new(&p, 0.01, AdamConfig::default());
        opt.step(&mut p, &g);
        assert!((before.lnf_b[[0, 0]] - p.lnf_b[[0, 0]] - 0.01).abs() < 1e-9);
        assert!((p.lnf_b[[0, 1]] - before.lnf_b[[0, 1]] - 0.01).abs() < 1e-9);
        assert_eq!(p.tok_emb, before.tok_emb);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let cfg = EncoderConfig::tiny();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut p = Params::init(&cfg, 6, &mut rng);
        let mut opt = Adam::new(&p, 0.05, AdamConfig::default());
        for _ in 0..500 {
            let mut g = p.zeros_like();
            g.lnf_g = &p.lnf_g * 2.0;
            opt.step(&mut p, &g);
        }
        assert!(p.lnf_g.iter().all(|x| x.abs() < 0.05));
    }
}
