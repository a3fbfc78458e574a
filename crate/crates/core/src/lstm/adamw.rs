use super::network::LstmParams;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 0.001,
            weight_decay: 0.004,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Clone, Debug)]
pub struct Moments {
    pub m: LstmParams,
    pub v: LstmParams,
}

impl Moments {
    pub fn zeros_like(p: &LstmParams) -> Self {
        Moments {
            m: LstmParams::zeros(p.hidden, p.dense),
            v: LstmParams::zeros(p.hidden, p.dense),
        }
    }
}

/// Scalar AdamW update; returns the new `(theta, m, v)`.
pub fn adamw_scalar(
    theta: f64,
    g: f64,
    m: f64,
    v: f64,
    t: u64,
    c: &AdamWConfig,
) -> (f64, f64, f64) {
    let m = c.beta1 * m + (1.0 - c.beta1) * g;
    let v = c.beta2 * v + (1.0 - c.beta2) * g * g;
    let m_hat = m / (1.0 - c.beta1.powi(t as i32));
    let v_hat = v / (1.0 - c.beta2.powi(t as i32));
    let theta = theta
        - c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon)
        - c.learning_rate * c.weight_decay * theta;
    (theta, m, v)
}

/// One decoupled-weight-decay step over every tensor. `t` starts at 1.
pub fn adamw_step(
    params: &mut LstmParams,
    grads: &LstmParams,
    moments: &mut Moments,
    t: u64,
    config: &AdamWConfig,
) {
    assert!(t >= 1, "adamw step counter starts at 1");
    let Moments { m, v } = moments;
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(m.tensors_mut())
        .zip(v.tensors_mut())
    {
        for k in 0..p.data.len() {
            let (theta, mk, vk) =
                adamw_scalar(p.data[k], g.data[k], m.data[k], v.data[k], t, config);
            p.data[k] = theta;
            m.data[k] = mk;
            v.data[k] = vk;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let c = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let (theta, m, v) = adamw_scalar(0.0, 1.0, 0.0, 0.0, 1, &c);
        assert!((theta + 0.001).abs() < 1e-10);
        assert!((m - 0.1).abs() < 1e-15);
        assert!((v - 0.001).abs() < 1e-15);
    }

    #[test]
    fn decay_alone_shrinks() {
        let c = AdamWConfig {
            weight_decay: 0.01,
            learning_rate: 0.1,
            ..AdamWConfig::default()
        };
        let (theta, _, _) = adamw_scalar(2.0, 0.0, 0.0, 0.0, 3, &c);
        assert!((theta - 2.0 * (1.0 - 0.1 * 0.01)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_no_decay_is_noop() {
        let c = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let (theta, m, v) = adamw_scalar(-0.75, 0.0, 0.0, 0.0, 1, &c);
        assert_eq!(theta, -0.75);
        assert_eq!((m, v), (0.0, 0.0));
    }

    #[test]
    fn tensor_step_matches_scalar() {
        let mut p = LstmParams::init(3, 4, 11);
        let before = p.clone();
        let mut g = LstmParams::init(3, 4, 12);
        g.scale(0.5);
        let mut mom = Moments::zeros_like(&p);
        let c = AdamWConfig::default();
        adamw_step(&mut p, &g, &mut mom, 1, &c);
        let (expected, _, _) =
            adamw_scalar(before.dense2_b.data[2], g.dense2_b.data[2], 0.0, 0.0, 1, &c);
        assert_eq!(p.dense2_b.data[2], expected);
    }
}
