use super::OptimError;

fn check(g: &[f64], n: usize) -> Result<(), OptimError> {
    if g.len() != n {
        return Err(OptimError::Dimension { expected: n, got: g.len() });
    }
    if let Some((i, v)) = g.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(OptimError::NonFiniteGradient { index: i, value: *v });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, dim: usize) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; dim], v: vec![0.0; dim], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// `θ ← θ − lr·m̂/(√v̂ + ε)`.
    pub fn step(&mut self, x: &mut [f64], g: &[f64]) -> Result<(), OptimError> {
        check(g, self.m.len())?;
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..x.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            x[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    acc: Vec<f64>,
}

impl RmsProp {
    pub fn new(lr: f64, dim: usize) -> Self {
        RmsProp { lr, rho: 0.9, eps: 1e-8, acc: vec![0.0; dim] }
    }

    /// `a ← ρa + (1−ρ)g²`, `θ ← θ − lr·g/(√a + ε)`.
    pub fn step(&mut self, x: &mut [f64], g: &[f64]) -> Result<(), OptimError> {
        check(g, self.acc.len())?;
        for i in 0..x.len() {
            self.acc[i] = self.rho * self.acc[i] + (1.0 - self.rho) * g[i] * g[i];
            x[i] -= self.lr * g[i] / (self.acc[i].sqrt() + self.eps);
        }
        Ok(())
    }

    pub fn accumulator(&self) -> &[f64] {
        &self.acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_is_lr() {
        let mut a = Adam::new(0.01, 1);
        let mut x = [0.0];
        a.step(&mut x, &[1.0]).unwrap();
        assert!((x[0] + 0.01 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut a = Adam::new(0.1, 3);
        let mut r = RmsProp::new(0.1, 3);
        let mut x = [1.0, -2.0, 3.0];
        for _ in 0..20 {
            a.step(&mut x, &[0.0; 3]).unwrap();
            r.step(&mut x, &[0.0; 3]).unwrap();
        }
        assert_eq!(x, [1.0, -2.0, 3.0]);
    }

    #[test]
    fn rejects_bad_gradients() {
        let mut a = Adam::new(0.1, 2);
        let mut x = [0.0, 0.0];
        assert!(matches!(a.step(&mut x, &[0.0, f64::NAN]), Err(OptimError::NonFiniteGradient { index: 1, .. })));
        assert!(matches!(a.step(&mut x, &[0.0]), Err(OptimError::Dimension { .. })));
    }
}
