//! Adaptive per-term loss weights.

use crate::lowering::TermKind;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ReweightError {
    #[error("bad weight scheme `{text}`: {message}")]
    Parse { text: String, message: String },
    #[error("term {term}: gradient has length {got}, expected {expected}")]
    GradientLength { term: usize, expected: usize, got: usize },
    #[error("expected {expected} values, one per term, got {got}")]
    TermCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightScheme {
    /// Constant weights; `None` means all ones.
    Fixed(Option<Vec<f64>>),
    LossGradients { gamma: f64, update_every: usize, clamp_eps: f64 },
    MiniMax { lr_pde: f64, lr_bc: f64, update_every: usize },
}

impl WeightScheme {
    pub fn loss_gradients() -> Self {
        WeightScheme::LossGradients { gamma: 0.1, update_every: 10, clamp_eps: 1e-7 }
    }

    pub fn minimax() -> Self {
        WeightScheme::MiniMax { lr_pde: 1e-4, lr_bc: 1e-2, update_every: 1 }
    }

    pub fn is_adaptive(&self) -> bool {
        !matches!(self, WeightScheme::Fixed(_))
    }

    pub fn short_name(&self) -> &'static str {
        match self {
            WeightScheme::Fixed(_) => "fixed",
            WeightScheme::LossGradients { .. } => "lossgrad",
            WeightScheme::MiniMax { .. } => "minimax",
        }
    }
}

impl FromStr for WeightScheme {
    type Err = ReweightError;

    /// `fixed[:w1,w2,...]`, `lossgrad[:gamma=..][:every=..][:eps=..]`,
    /// `minimax[:lrpde=..][:lrbc=..][:every=..]`.
    fn from_str(text: &str) -> Result<Self, ReweightError> {
        let err = |m: String| ReweightError::Parse { text: text.to_string(), message: m };
        let mut parts = text.trim().split(':');
        let head = parts.next().unwrap_or("").trim().to_ascii_lowercase();
        let opts: Vec<&str> = parts.map(str::trim).collect();
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| err(format!("`{s}` is not a number")));
        fn kv<'a>(o: &'a str, err: &dyn Fn(String) -> ReweightError) -> Result<(&'a str, &'a str), ReweightError> {
            o.split_once('=').map(|(k, v)| (k.trim(), v.trim())).ok_or_else(|| err(format!("expected key=value, got `{o}`")))
        }
        let every = |v: &str| match v.parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(err(format!("`{v}` is not a positive count"))),
        };
        match head.as_str() {
            "fixed" => match opts.as_slice() {
                [] => Ok(WeightScheme::Fixed(None)),
                [list] => {
                    let w = list.split(',').map(num).collect::<Result<Vec<_>, _>>()?;
                    if w.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                        return Err(err("weights must be positive".into()));
                    }
                    Ok(WeightScheme::Fixed(Some(w)))
                }
                _ => Err(err("expected fixed[:w1,w2,...]".into())),
            },
            "lossgrad" => {
                let WeightScheme::LossGradients { mut gamma, mut update_every, mut clamp_eps } = Self::loss_gradients() else {
                    unreachable!()
                };
                for o in opts {
                    match kv(o, &err)? {
                        ("gamma", v) => gamma = num(v)?,
                        ("every", v) => update_every = every(v)?,
                        ("eps", v) => clamp_eps = num(v)?,
                        (k, _) => return Err(err(format!("unknown option `{k}`"))),
                    }
                }
                if !(0.0..=1.0).contains(&gamma) || !(clamp_eps > 0.0) {
                    return Err(err("need gamma in [0,1] and eps > 0".into()));
                }
                Ok(WeightScheme::LossGradients { gamma, update_every, clamp_eps })
            }
            "minimax" => {
                let WeightScheme::MiniMax { mut lr_pde, mut lr_bc, mut update_every } = Self::minimax() else { unreachable!() };
                for o in opts {
                    match kv(o, &err)? {
                        ("lrpde", v) => lr_pde = num(v)?,
                        ("lrbc", v) => lr_bc = num(v)?,
                        ("every", v) => update_every = every(v)?,
                        (k, _) => return Err(err(format!("unknown option `{k}`"))),
                    }
                }
                if !(lr_pde >= 0.0 && lr_bc >= 0.0) {
                    return Err(err("learning rates must be non-negative".into()));
                }
                Ok(WeightScheme::MiniMax { lr_pde, lr_bc, update_every })
            }
            _ => Err(err("expected fixed, lossgrad or minimax".into())),
        }
    }
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightScheme::Fixed(None) => write!(f, "fixed"),
            WeightScheme::Fixed(Some(w)) => {
                let s: Vec<String> = w.iter().map(|x| x.to_string()).collect();
                write!(f, "fixed:{}", s.join(","))
            }
            WeightScheme::LossGradients { gamma, update_every, clamp_eps } => {
                write!(f, "lossgrad:gamma={gamma}:every={update_every}:eps={clamp_eps}")
            }
            WeightScheme::MiniMax { lr_pde, lr_bc, update_every } => {
                write!(f, "minimax:lrpde={lr_pde}:lrbc={lr_bc}:every={update_every}")
            }
        }
    }
}

/// `α_i ← (1−γ)α_i + γ / (mean_j |∂C_i/∂θ_j| + ε)`. Terms whose gradient
/// is not finite keep their weight.
pub fn update_loss_gradients(weights: &mut [f64], grads: &[Vec<f64>], gamma: f64, clamp_eps: f64) -> Result<(), ReweightError> {
    if grads.len() != weights.len() {
        return Err(ReweightError::TermCount { expected: weights.len(), got: grads.len() });
    }
    let n = grads.first().map_or(0, Vec::len);
    for (i, g) in grads.iter().enumerate() {
        if g.len() != n {
            return Err(ReweightError::GradientLength { term: i, expected: n, got: g.len() });
        }
    }
    for (a, g) in weights.iter_mut().zip(grads) {
        let mean = if n == 0 { 0.0 } else { g.iter().map(|x| x.abs()).sum::<f64>() / n as f64 };
        if !mean.is_finite() {
            continue;
        }
        let target = 1.0 / (mean + clamp_eps);
        *a = (1.0 - gamma) * *a + gamma * target;
    }
    Ok(())
}

/// `α_i ← α_i + lr·C_i` with the interior or boundary rate by term kind.
/// Negative or non-finite losses are ignored.
pub fn update_minimax(weights: &mut [f64], kinds: &[TermKind], losses: &[f64], lr_pde: f64, lr_bc: f64) -> Result<(), ReweightError> {
    if losses.len() != weights.len() || kinds.len() != weights.len() {
        return Err(ReweightError::TermCount { expected: weights.len(), got: losses.len().min(kinds.len()) });
    }
    for ((a, k), c) in weights.iter_mut().zip(kinds).zip(losses) {
        if c.is_finite() && *c > 0.0 {
            let lr = if *k == TermKind::Interior { lr_pde } else { lr_bc };
            let next = *a + lr * c;
            if next.is_finite() {
                *a = next;
            }
        }
    }
    Ok(())
}

/// Weights plus the bookkeeping for their update cadence.
#[derive(Debug, Clone, PartialEq)]
pub struct Reweighter {
    pub scheme: WeightScheme,
    kinds: Vec<TermKind>,
    weights: Vec<f64>,
}

impl Reweighter {
    pub fn new(scheme: WeightScheme, kinds: Vec<TermKind>) -> Result<Self, ReweightError> {
        let weights = match &scheme {
            WeightScheme::Fixed(Some(w)) => {
                if w.len() != kinds.len() {
                    return Err(ReweightError::TermCount { expected: kinds.len(), got: w.len() });
                }
                w.clone()
            }
            _ => vec![1.0; kinds.len()],
        };
        Ok(Reweighter { scheme, kinds, weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Whether step `iter` (0-based) updates the weights.
    pub fn due(&self, iter: usize) -> bool {
        match self.scheme {
            WeightScheme::Fixed(_) => false,
            WeightScheme::LossGradients { update_every, .. } | WeightScheme::MiniMax { update_every, .. } => {
                iter % update_every == 0
            }
        }
    }

    /// Whether the update needs per-term gradients (else per-term losses).
    pub fn needs_gradients(&self) -> bool {
        matches!(self.scheme, WeightScheme::LossGradients { .. })
    }

    /// Apply the update for step `iter` if due. `grads` is required for
    /// loss-gradient weighting, `losses` for minimax.
    pub fn update(&mut self, iter: usize, losses: &[f64], grads: Option<&[Vec<f64>]>) -> Result<bool, ReweightError> {
        if !self.due(iter) {
            return Ok(false);
        }
        match self.scheme {
            WeightScheme::Fixed(_) => return Ok(false),
            WeightScheme::LossGradients { gamma, clamp_eps, .. } => {
                let Some(g) = grads else { return Ok(false) };
                update_loss_gradients(&mut self.weights, g, gamma, clamp_eps)?;
            }
            WeightScheme::MiniMax { lr_pde, lr_bc, .. } => update_minimax(&mut self.weights, &self.kinds, losses, lr_pde, lr_bc)?,
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_gradient_formula() {
        let mut w = vec![1.0];
        update_loss_gradients(&mut w, &[vec![0.5, -0.5]], 1.0, 1e-300).unwrap();
        assert!((w[0] - 2.0).abs() < 1e-12);
        let mut w = vec![3.0];
        update_loss_gradients(&mut w, &[vec![0.25]], 0.0, 1e-7).unwrap();
        assert_eq!(w, vec![3.0]);
        let mut w = vec![1.0];
        update_loss_gradients(&mut w, &[vec![0.0, 0.0]], 1.0, 1e-7).unwrap();
        assert!((w[0] - 1e7).abs() < 1e-3);
    }

    #[test]
    fn minimax_rates_by_kind() {
        let mut w = vec![1.0, 1.0];
        update_minimax(&mut w, &[TermKind::Interior, TermKind::Boundary], &[1.0, 1.0], 0.01, 0.1).unwrap();
        assert!((w[0] - 1.01).abs() < 1e-15 && (w[1] - 1.1).abs() < 1e-15);
        let mut w = vec![1.0];
        update_minimax(&mut w, &[TermKind::Interior], &[2.0], 0.1, 0.0).unwrap();
        assert!((w[0] - 1.2).abs() < 1e-15);
        update_minimax(&mut w, &[TermKind::Interior], &[0.0], 0.1, 0.0).unwrap();
        assert!((w[0] - 1.2).abs() < 1e-15);
    }

    #[test]
    fn cadence_is_honored() {
        let mut r = Reweighter::new("lossgrad:every=3:gamma=1".parse().unwrap(), vec![TermKind::Interior]).unwrap();
        let g = vec![vec![0.5]];
        let mut changed = Vec::new();
        for i in 0..7 {
            changed.push(r.update(i, &[1.0], Some(&g)).unwrap());
        }
        assert_eq!(changed, [true, false, false, true, false, false, true]);
    }

    #[test]
    fn length_mismatch() {
        let mut w = vec![1.0, 1.0];
        assert!(update_loss_gradients(&mut w, &[vec![1.0], vec![1.0, 2.0]], 0.5, 1e-7).is_err());
        assert!(Reweighter::new(WeightScheme::Fixed(Some(vec![1.0])), vec![TermKind::Interior; 2]).is_err());
    }

    #[test]
    fn parse_round_trip() {
        for s in ["fixed", "fixed:1,2.5", "lossgrad", "lossgrad:gamma=0.5:every=5", "minimax:lrpde=0.001:lrbc=0.1"] {
            let w: WeightScheme = s.parse().unwrap();
            assert_eq!(w.to_string().parse::<WeightScheme>().unwrap(), w);
        }
        for bad in ["adaptive", "lossgrad:gamma=2", "minimax:lr=1", "fixed:0", "lossgrad:every=0"] {
            assert!(bad.parse::<WeightScheme>().is_err(), "{bad}");
        }
    }
}
