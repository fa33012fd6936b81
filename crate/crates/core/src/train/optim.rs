/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update; `scales[i]` multiplies the step size of tensor `i`.
    pub fn step(&mut self, params: Vec<&mut Vec<f32>>, grads: &[Vec<f32>], scales: &[f64]) {
        assert_eq!(params.len(), grads.len());
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let b1 = self.beta1;
        let b2 = self.beta2;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let lr = self.lr * scales.get(i).copied().unwrap_or(1.0);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..p.len() {
                let gk = g[k] as f64;
                let mk = b1 * m[k] as f64 + (1.0 - b1) * gk;
                let vk = b2 * v[k] as f64 + (1.0 - b2) * gk * gk;
                m[k] = mk as f32;
                v[k] = vk as f32;
                p[k] -= (lr * (mk / c1) / ((vk / c2).sqrt() + self.eps)) as f32;
            }
        }
    }
}

/// Full step size until 80% of the stage, a tenth of it afterwards.
pub fn step_schedule(base_lr: f64, iteration: usize, total: usize) -> f64 {
    if iteration * 5 >= total * 4 {
        base_lr * 0.1
    } else {
        base_lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_drops_late() {
        assert_eq!(step_schedule(1.0, 79, 100), 1.0);
        assert_eq!(step_schedule(1.0, 80, 100), 0.1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut opt = Adam::new(0.1);
        let mut p = vec![1.0f32, -1.0];
        opt.step(vec![&mut p], &[vec![3.0, -0.5]], &[]);
        assert!((p[0] - 0.9).abs() < 1e-6 && (p[1] + 0.9).abs() < 1e-6, "{p:?}");
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut opt = Adam::new(0.05);
        let mut p = vec![4.0f32];
        for _ in 0..2000 {
            let g = vec![2.0 * (p[0] - 1.5)];
            opt.step(vec![&mut p], &[g], &[]);
        }
        assert!((p[0] - 1.5).abs() < 1e-2, "{p:?}");
    }
}
