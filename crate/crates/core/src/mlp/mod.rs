//! Fully connected networks with second-order input jets.
//!
//! A forward pass carries the value, first derivatives along selected input
//! axes and pure second derivatives along a subset of those axes through
//! every layer. The reverse pass differentiates any function of that jet
//! with respect to the flat parameter vector.

mod io;

pub use io::{read_params_binary, read_params_text, write_params_binary, write_params_text};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// All network weights, laid out layer by layer as a row-major weight matrix
/// followed by the bias vector, optionally followed by physical parameters.
pub type FlatParams = Vec<f64>;

#[derive(Debug, Error, PartialEq)]
pub enum MlpError {
    #[error("parameter vector has length {got}, expected {expected}")]
    ParamLength { expected: usize, got: usize },
    #[error("input has length {got}, expected {expected}")]
    InputLength { expected: usize, got: usize },
    #[error("layer {layer} takes {got} inputs but the previous layer emits {expected}")]
    LayerMismatch { layer: usize, expected: usize, got: usize },
    #[error("network needs at least one layer with nonzero width")]
    Empty,
    #[error("jet requests second derivative on axis {0} without its first derivative")]
    BadPlan(usize),
    #[error("non-finite network output {0}")]
    NonFinite(f64),
    #[error("malformed parameter file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Gelu,
    Identity,
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl Activation {
    pub fn parse(name: &str) -> Option<Activation> {
        Some(match name {
            "sigmoid" => Activation::Sigmoid,
            "tanh" => Activation::Tanh,
            "gelu" => Activation::Gelu,
            "identity" | "linear" => Activation::Identity,
            _ => return None,
        })
    }

    /// Value and first three derivatives.
    #[inline]
    pub fn eval4(self, z: f64) -> [f64; 4] {
        match self {
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-z).exp());
                let d1 = s * (1.0 - s);
                [s, d1, d1 * (1.0 - 2.0 * s), d1 * (1.0 - 6.0 * s + 6.0 * s * s)]
            }
            Activation::Tanh => {
                let t = z.tanh();
                let d1 = 1.0 - t * t;
                [t, d1, -2.0 * t * d1, -2.0 * d1 * (1.0 - 3.0 * t * t)]
            }
            Activation::Gelu => {
                let cdf = 0.5 * (1.0 + libm::erf(z * INV_SQRT_2));
                let pdf = INV_SQRT_2PI * (-0.5 * z * z).exp();
                [z * cdf, cdf + z * pdf, pdf * (2.0 - z * z), pdf * (z * z * z - 4.0 * z)]
            }
            Activation::Identity => [z, 1.0, 0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layer {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

impl Layer {
    fn param_count(&self) -> usize {
        self.input * self.output + self.output
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    layers: Vec<Layer>,
}

impl MlpSpec {
    pub fn new(layers: Vec<Layer>) -> Result<Self, MlpError> {
        if layers.is_empty() || layers.iter().any(|l| l.input == 0 || l.output == 0) {
            return Err(MlpError::Empty);
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].output != w[1].input {
                return Err(MlpError::LayerMismatch { layer: i + 1, expected: w[0].output, got: w[1].input });
            }
        }
        Ok(MlpSpec { layers })
    }

    /// Hidden layers share one activation; the output layer is linear.
    pub fn dense(input: usize, hidden: &[usize], output: usize, act: Activation) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output);
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| Layer {
                input: dims[i],
                output: dims[i + 1],
                activation: if i + 1 == n { Activation::Identity } else { act },
            })
            .collect();
        MlpSpec::new(layers).expect("dense dims are positive")
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    fn widest(&self) -> usize {
        self.layers.iter().map(|l| l.output.max(l.input)).max().unwrap_or(1)
    }

    fn check_params(&self, params: &[f64]) -> Result<(), MlpError> {
        if params.len() != self.param_count() {
            return Err(MlpError::ParamLength { expected: self.param_count(), got: params.len() });
        }
        Ok(())
    }
}

/// Glorot-uniform weights, zero biases. Deterministic per seed.
pub fn init_params(spec: &MlpSpec, seed: u64) -> FlatParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(spec.param_count());
    for l in spec.layers() {
        let bound = (6.0 / (l.input + l.output) as f64).sqrt();
        for _ in 0..l.input * l.output {
            out.push(rng.gen_range(-bound..bound));
        }
        out.extend(std::iter::repeat(0.0).take(l.output));
    }
    out
}

/// Plain forward pass.
pub fn forward(spec: &MlpSpec, params: &[f64], x: &[f64]) -> Result<Vec<f64>, MlpError> {
    spec.check_params(params)?;
    if x.len() != spec.input_dim() {
        return Err(MlpError::InputLength { expected: spec.input_dim(), got: x.len() });
    }
    let mut a = x.to_vec();
    let mut off = 0;
    for l in spec.layers() {
        let (w, rest) = params[off..].split_at(l.input * l.output);
        let b = &rest[..l.output];
        off += l.param_count();
        a = (0..l.output)
            .map(|j| {
                let row = &w[j * l.input..(j + 1) * l.input];
                let z = b[j] + row.iter().zip(&a).map(|(p, q)| p * q).sum::<f64>();
                l.activation.eval4(z)[0]
            })
            .collect();
    }
    if let Some(bad) = a.iter().find(|v| !v.is_finite()) {
        return Err(MlpError::NonFinite(*bad));
    }
    Ok(a)
}

/// Which derivative channels a jet pass carries. Channel 0 is the value,
/// then one channel per entry of `first`, then one per entry of `second`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct JetPlan {
    first: Vec<usize>,
    second: Vec<usize>,
    /// For each second channel, the index into `first` of the same axis.
    pair: Vec<usize>,
}

impl JetPlan {
    pub fn new(mut first: Vec<usize>, mut second: Vec<usize>) -> Result<Self, MlpError> {
        first.sort_unstable();
        first.dedup();
        second.sort_unstable();
        second.dedup();
        let pair = second
            .iter()
            .map(|s| first.iter().position(|f| f == s).ok_or(MlpError::BadPlan(*s)))
            .collect::<Result<_, _>>()?;
        Ok(JetPlan { first, second, pair })
    }

    /// First derivatives on every axis, second on `second`.
    pub fn full(input_dim: usize, second: &[usize]) -> Result<Self, MlpError> {
        JetPlan::new((0..input_dim).collect(), second.to_vec())
    }

    pub fn value_only() -> Self {
        JetPlan::default()
    }

    pub fn channels(&self) -> usize {
        1 + self.first.len() + self.second.len()
    }

    pub fn first_axes(&self) -> &[usize] {
        &self.first
    }

    pub fn second_axes(&self) -> &[usize] {
        &self.second
    }

    /// Channel holding the first derivative along `axis`.
    pub fn first_channel(&self, axis: usize) -> Option<usize> {
        self.first.iter().position(|&a| a == axis).map(|p| 1 + p)
    }

    /// Channel holding the second derivative along `axis`.
    pub fn second_channel(&self, axis: usize) -> Option<usize> {
        self.second.iter().position(|&a| a == axis).map(|p| 1 + self.first.len() + p)
    }

    /// For each second channel, the position in `first_axes` of its axis.
    pub fn second_pairs(&self) -> &[usize] {
        &self.pair
    }

    /// Merge two plans.
    pub fn union(&self, other: &JetPlan) -> JetPlan {
        let mut f = self.first.clone();
        f.extend_from_slice(&other.first);
        let mut s = self.second.clone();
        s.extend_from_slice(&other.second);
        JetPlan::new(f, s).expect("both plans valid")
    }
}

/// Buffers for one jet pass, reusable across points.
#[derive(Debug, Clone, Default)]
pub struct JetWorkspace {
    /// Post-activation channels per layer; `acts[0]` is the input jet.
    acts: Vec<Vec<f64>>,
    /// Pre-activation channels per layer.
    pre: Vec<Vec<f64>>,
    /// Activation derivatives σ', σ'', σ''' per layer.
    deriv: Vec<Vec<[f64; 3]>>,
    adj: Vec<f64>,
    adj_prev: Vec<f64>,
    zbar: Vec<f64>,
}

impl JetWorkspace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Output channels of the last forward pass, `channels × output_dim`.
    pub fn output(&self) -> &[f64] {
        self.acts.last().map_or(&[], |v| v.as_slice())
    }
}

/// Forward jet pass. Output channels are left in `ws.output()`.
pub fn jet_forward(
    spec: &MlpSpec,
    params: &[f64],
    x: &[f64],
    plan: &JetPlan,
    ws: &mut JetWorkspace,
) -> Result<(), MlpError> {
    spec.check_params(params)?;
    let n_in = spec.input_dim();
    if x.len() != n_in {
        return Err(MlpError::InputLength { expected: n_in, got: x.len() });
    }
    if let Some(&a) = plan.first.iter().find(|&&a| a >= n_in) {
        return Err(MlpError::BadPlan(a));
    }
    let nc = plan.channels();
    let nl = spec.layers.len();
    ws.acts.resize_with(nl + 1, Vec::new);
    ws.pre.resize_with(nl, Vec::new);
    ws.deriv.resize_with(nl, Vec::new);

    let input = &mut ws.acts[0];
    input.clear();
    input.resize(nc * n_in, 0.0);
    input[..n_in].copy_from_slice(x);
    for (i, &axis) in plan.first.iter().enumerate() {
        input[(1 + i) * n_in + axis] = 1.0;
    }

    let nf = plan.first.len();
    let mut off = 0;
    for (li, l) in spec.layers.iter().enumerate() {
        let (ni, no) = (l.input, l.output);
        let w = &params[off..off + ni * no];
        let b = &params[off + ni * no..off + ni * no + no];
        off += l.param_count();

        let (before, after) = ws.acts.split_at_mut(li + 1);
        let prev = &before[li];
        let z = &mut ws.pre[li];
        z.clear();
        z.resize(nc * no, 0.0);
        for c in 0..nc {
            let a = &prev[c * ni..(c + 1) * ni];
            let zc = &mut z[c * no..(c + 1) * no];
            for j in 0..no {
                let row = &w[j * ni..(j + 1) * ni];
                let mut s = 0.0;
                for k in 0..ni {
                    s += row[k] * a[k];
                }
                zc[j] = s;
            }
        }
        for j in 0..no {
            z[j] += b[j];
        }

        let out = &mut after[0];
        out.clear();
        out.resize(nc * no, 0.0);
        let d = &mut ws.deriv[li];
        d.clear();
        d.reserve(no);
        for j in 0..no {
            let [s0, s1, s2, s3] = l.activation.eval4(z[j]);
            d.push([s1, s2, s3]);
            out[j] = s0;
            for f in 0..nf {
                out[(1 + f) * no + j] = s1 * z[(1 + f) * no + j];
            }
            for (s, &f) in plan.pair.iter().enumerate() {
                let z1 = z[(1 + f) * no + j];
                let z2 = z[(1 + nf + s) * no + j];
                out[(1 + nf + s) * no + j] = s2 * z1 * z1 + s1 * z2;
            }
        }
    }
    if let Some(bad) = ws.output().iter().find(|v| !v.is_finite()) {
        return Err(MlpError::NonFinite(*bad));
    }
    Ok(())
}

/// Reverse pass after [`jet_forward`] with the same arguments. `seed` is the
/// adjoint of the output channels (`channels × output_dim`); the parameter
/// gradient is added to `grad`.
pub fn jet_backward(spec: &MlpSpec, params: &[f64], plan: &JetPlan, ws: &mut JetWorkspace, seed: &[f64], grad: &mut [f64]) {
    let nc = plan.channels();
    let nf = plan.first.len();
    let nl = spec.layers.len();
    debug_assert_eq!(seed.len(), nc * spec.output_dim());
    debug_assert_eq!(grad.len(), spec.param_count());

    let mut offsets = Vec::with_capacity(nl);
    let mut off = 0;
    for l in &spec.layers {
        offsets.push(off);
        off += l.param_count();
    }

    let cap = nc * spec.widest();
    ws.adj.clear();
    ws.adj.extend_from_slice(seed);
    ws.adj.reserve(cap);
    for li in (0..nl).rev() {
        let l = spec.layers[li];
        let (ni, no) = (l.input, l.output);
        let z = &ws.pre[li];
        let d = &ws.deriv[li];
        let zb = &mut ws.zbar;
        zb.clear();
        zb.resize(nc * no, 0.0);
        let ab = &ws.adj;
        for j in 0..no {
            let [s1, s2, s3] = d[j];
            let mut z0 = ab[j] * s1;
            for f in 0..nf {
                let ab1 = ab[(1 + f) * no + j];
                zb[(1 + f) * no + j] = ab1 * s1;
                z0 += ab1 * s2 * z[(1 + f) * no + j];
            }
            for (s, &f) in plan.pair.iter().enumerate() {
                let ab2 = ab[(1 + nf + s) * no + j];
                if ab2 == 0.0 {
                    continue;
                }
                let z1 = z[(1 + f) * no + j];
                let z2 = z[(1 + nf + s) * no + j];
                zb[(1 + nf + s) * no + j] = ab2 * s1;
                zb[(1 + f) * no + j] += 2.0 * ab2 * s2 * z1;
                z0 += ab2 * (s3 * z1 * z1 + s2 * z2);
            }
            zb[j] = z0;
        }

        let o = offsets[li];
        let w = &params[o..o + ni * no];
        let prev = &ws.acts[li];
        {
            let (gw, gb) = grad[o..o + ni * no + no].split_at_mut(ni * no);
            for c in 0..nc {
                let a = &prev[c * ni..(c + 1) * ni];
                let zc = &zb[c * no..(c + 1) * no];
                for j in 0..no {
                    let g = zc[j];
                    if g == 0.0 {
                        continue;
                    }
                    let row = &mut gw[j * ni..(j + 1) * ni];
                    for k in 0..ni {
                        row[k] += g * a[k];
                    }
                }
            }
            for j in 0..no {
                gb[j] += zb[j];
            }
        }
        if li == 0 {
            break;
        }
        let ap = &mut ws.adj_prev;
        ap.clear();
        ap.resize(nc * ni, 0.0);
        for c in 0..nc {
            let zc = &zb[c * no..(c + 1) * no];
            let apc = &mut ap[c * ni..(c + 1) * ni];
            for j in 0..no {
                let g = zc[j];
                if g == 0.0 {
                    continue;
                }
                let row = &w[j * ni..(j + 1) * ni];
                for k in 0..ni {
                    apc[k] += g * row[k];
                }
            }
        }
        std::mem::swap(&mut ws.adj, &mut ws.adj_prev);
    }
}

/// Value, all first derivatives and the requested pure second derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub value: Vec<f64>,
    /// `first[i][k]`: derivative of output `k` along input axis `i`.
    pub first: Vec<Vec<f64>>,
    /// `(axis, d²y/dx_axis²)` per requested axis.
    pub second: Vec<(usize, Vec<f64>)>,
}

pub fn input_jet(spec: &MlpSpec, params: &[f64], x: &[f64], second_axes: &[usize]) -> Result<Jet, MlpError> {
    let plan = JetPlan::full(spec.input_dim(), second_axes)?;
    let mut ws = JetWorkspace::new();
    jet_forward(spec, params, x, &plan, &mut ws)?;
    let no = spec.output_dim();
    let out = ws.output();
    let chan = |c: usize| out[c * no..(c + 1) * no].to_vec();
    Ok(Jet {
        value: chan(0),
        first: (0..spec.input_dim()).map(|i| chan(1 + i)).collect(),
        second: plan.second.iter().map(|&a| (a, chan(plan.second_channel(a).expect("planned")))).collect(),
    })
}

/// Gradient of `loss(jet channels)` with respect to parameters. The closure
/// returns the loss and its derivative with respect to each output channel.
pub fn loss_param_gradient<F>(
    spec: &MlpSpec,
    params: &[f64],
    x: &[f64],
    plan: &JetPlan,
    loss: F,
) -> Result<(f64, Vec<f64>), MlpError>
where
    F: FnOnce(&[f64]) -> (f64, Vec<f64>),
{
    let mut ws = JetWorkspace::new();
    jet_forward(spec, params, x, plan, &mut ws)?;
    let (value, seed) = loss(ws.output());
    if !value.is_finite() {
        return Err(MlpError::NonFinite(value));
    }
    let mut grad = vec![0.0; params.len()];
    jet_backward(spec, params, plan, &mut ws, &seed, &mut grad);
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glorot_bounds_and_zero_bias() {
        let spec = MlpSpec::dense(2, &[16, 16], 1, Activation::Sigmoid);
        assert_eq!(spec.param_count(), 2 * 16 + 16 + 16 * 16 + 16 + 16 + 1);
        let p = init_params(&spec, 7);
        assert_eq!(p, init_params(&spec, 7));
        assert_ne!(p, init_params(&spec, 8));
        let b0 = (6.0f64 / 18.0).sqrt();
        assert!(p[..32].iter().all(|w| w.abs() <= b0));
        assert!(p[32..48].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn identity_layer_is_affine() {
        let spec = MlpSpec::new(vec![Layer { input: 2, output: 1, activation: Activation::Identity }]).unwrap();
        let p = vec![2.0, -3.0, 0.5];
        let j = input_jet(&spec, &p, &[1.0, 1.0], &[0, 1]).unwrap();
        assert_eq!(j.value, vec![-0.5]);
        assert_eq!(j.first, vec![vec![2.0], vec![-3.0]]);
        assert_eq!(j.second, vec![(0, vec![0.0]), (1, vec![0.0])]);
    }

    #[test]
    fn single_sigmoid_unit_closed_form() {
        // y = σ(w x + b)
        let spec = MlpSpec::new(vec![Layer { input: 1, output: 1, activation: Activation::Sigmoid }]).unwrap();
        let (w, b, x) = (1.3, -0.4, 0.7);
        let j = input_jet(&spec, &[w, b], &[x], &[0]).unwrap();
        let s = 1.0 / (1.0 + (-(w * x + b) as f64).exp());
        assert!((j.value[0] - s).abs() < 1e-15);
        assert!((j.first[0][0] - w * s * (1.0 - s)).abs() < 1e-15);
        assert!((j.second[0].1[0] - w * w * s * (1.0 - s) * (1.0 - 2.0 * s)).abs() < 1e-15);
    }

    #[test]
    fn activation_derivatives_match_differences() {
        for act in [Activation::Sigmoid, Activation::Tanh, Activation::Gelu, Activation::Identity] {
            for &z in &[-2.5, -0.3, 0.0, 0.8, 3.1] {
                let h = 1e-5;
                let d = act.eval4(z);
                for k in 0..3 {
                    let fd = (act.eval4(z + h)[k] - act.eval4(z - h)[k]) / (2.0 * h);
                    assert!((fd - d[k + 1]).abs() < 1e-8, "{act:?} z={z} k={k}: {fd} vs {}", d[k + 1]);
                }
            }
        }
    }

    #[test]
    fn length_errors() {
        let spec = MlpSpec::dense(2, &[3], 1, Activation::Tanh);
        assert!(matches!(forward(&spec, &[0.0; 3], &[0.0, 0.0]), Err(MlpError::ParamLength { .. })));
        let p = init_params(&spec, 0);
        assert!(matches!(forward(&spec, &p, &[0.0]), Err(MlpError::InputLength { .. })));
        assert!(matches!(JetPlan::new(vec![0], vec![1]), Err(MlpError::BadPlan(1))));
    }

    #[test]
    fn output_gradient_of_constant_target() {
        // d/dθ (N(x) - c)² = 2(N - c) dN/dθ; for the bias of the last layer dN/db = 1.
        let spec = MlpSpec::dense(1, &[4], 1, Activation::Tanh);
        let p = init_params(&spec, 3);
        let (val, g) = loss_param_gradient(&spec, &p, &[0.2], &JetPlan::value_only(), |out| {
            let r = out[0] - 1.0;
            (r * r, vec![2.0 * r])
        })
        .unwrap();
        let n = forward(&spec, &p, &[0.2]).unwrap()[0];
        assert!((val - (n - 1.0).powi(2)).abs() < 1e-15);
        assert!((g[g.len() - 1] - 2.0 * (n - 1.0)).abs() < 1e-14);
    }
}
