//! AdamW with decoupled weight decay over flat parameter slices.

pub struct AdamW {
    lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    weight_decay: f32,
    t: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    cursor: usize,
}

impl AdamW {
    pub fn new(lr: f32) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
            cursor: 0,
        }
    }

    /// Starts one optimization step; tensors must then be visited in the
    /// same order on every step.
    pub fn begin_step(&mut self) {
        self.t += 1;
        self.cursor = 0;
    }

    pub fn update(&mut self, params: &mut [f32], grads: &[f32]) {
        debug_assert_eq!(params.len(), grads.len());
        if self.cursor == self.m.len() {
            self.m.push(vec![0.0; params.len()]);
            self.v.push(vec![0.0; params.len()]);
        }
        let m = &mut self.m[self.cursor];
        let v = &mut self.v[self.cursor];
        let bias1 = 1.0 - self.beta1.powi(self.t as i32);
        let bias2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            params[i] -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * params[i]);
        }
        self.cursor += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descends_on_a_quadratic() {
        // minimize f(x) = (x - 3)^2
        let mut x = vec![0.0f32];
        let mut opt = AdamW::new(0.1);
        for _ in 0..500 {
            let grad = vec![2.0 * (x[0] - 3.0)];
            opt.begin_step();
            opt.update(&mut x, &grad);
        }
        assert!((x[0] - 3.0).abs() < 0.2, "x = {}", x[0]);
    }

    #[test]
    fn state_is_per_tensor() {
        let mut a = vec![1.0f32];
        let mut b = vec![1.0f32];
        let mut opt = AdamW::new(0.01);
        opt.begin_step();
        opt.update(&mut a, &[1.0]);
        opt.update(&mut b, &[-1.0]);
        assert!(a[0] < 1.0);
        assert!(b[0] > 1.0);
    }
}
