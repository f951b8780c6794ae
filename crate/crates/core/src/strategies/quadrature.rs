//! h-adaptive cubature over boxes.
//!
//! One dimension uses the 7/15-point Gauss–Kronrod pair with bisection.
//! Two or more dimensions use the Genz–Malik degree-7 rule with its embedded
//! degree-5 rule for the error estimate; the worst region is split in half
//! along the axis with the largest fourth divided difference. Integrands may
//! be vector valued; regions are shared across components.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[derive(Debug, Clone, PartialEq)]
pub struct IntegralEstimate {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VecIntegralEstimate {
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
    /// Rule applications, one per region evaluated.
    pub evaluations: usize,
    pub converged: bool,
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights at XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

struct Region {
    center: Vec<f64>,
    half: Vec<f64>,
    value: Vec<f64>,
    error: Vec<f64>,
    norm: f64,
    split_axis: usize,
    /// Creation order, for deterministic tie-breaking.
    id: usize,
}

impl PartialEq for Region {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Region {}
impl PartialOrd for Region {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Region {
    fn cmp(&self, other: &Self) -> Ordering {
        self.norm.total_cmp(&other.norm).then_with(|| other.id.cmp(&self.id))
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct Rule<'a, F> {
    f: &'a mut F,
    m: usize,
    point: Vec<f64>,
    buf: Vec<f64>,
}

impl<'a, E, F: FnMut(&[f64], &mut [f64]) -> Result<(), E>> Rule<'a, F> {
    fn call(&mut self, out: &mut [f64]) -> Result<(), E> {
        out.iter_mut().for_each(|o| *o = 0.0);
        (self.f)(&self.point, out)
    }

    /// Gauss–Kronrod on `[c - h, c + h]`.
    fn kronrod(&mut self, c: f64, h: f64, value: &mut [f64], error: &mut [f64]) -> Result<usize, E> {
        let m = self.m;
        let mut gauss = vec![0.0; m];
        value.iter_mut().for_each(|v| *v = 0.0);
        let mut buf = std::mem::take(&mut self.buf);
        buf.resize(m, 0.0);
        for (i, (&x, &w)) in XGK.iter().zip(&WGK).enumerate() {
            let signs: &[f64] = if x == 0.0 { &[1.0] } else { &[1.0, -1.0] };
            for &s in signs {
                self.point[0] = c + s * h * x;
                self.call(&mut buf)?;
                for k in 0..m {
                    value[k] += w * buf[k];
                    if i % 2 == 1 {
                        gauss[k] += WG[i / 2] * buf[k];
                    }
                }
            }
        }
        for k in 0..m {
            value[k] *= h;
            error[k] = (value[k] - gauss[k] * h).abs();
        }
        self.buf = buf;
        Ok(0)
    }

    /// Genz–Malik on the box `center ± half`. Returns the split axis.
    fn genz_malik(&mut self, center: &[f64], half: &[f64], value: &mut [f64], error: &mut [f64]) -> Result<usize, E> {
        let n = center.len();
        let m = self.m;
        let nf = n as f64;
        let (l2s, l3, l4, l5) = ((9.0f64 / 70.0).sqrt(), (9.0f64 / 10.0).sqrt(), (9.0f64 / 10.0).sqrt(), (9.0f64 / 19.0).sqrt());
        let w = [
            (12824.0 - 9120.0 * nf + 400.0 * nf * nf) / 19683.0,
            980.0 / 6561.0,
            (1820.0 - 400.0 * nf) / 19683.0,
            200.0 / 19683.0,
            6859.0 / 19683.0 / 2f64.powi(n as i32),
        ];
        let w5 = [(729.0 - 950.0 * nf + 50.0 * nf * nf) / 729.0, 245.0 / 486.0, (265.0 - 100.0 * nf) / 1458.0, 25.0 / 729.0];
        let mut s = vec![vec![0.0; m]; 5];
        let mut buf = std::mem::take(&mut self.buf);
        buf.resize(m, 0.0);
        let mut f0 = vec![0.0; m];
        self.point.copy_from_slice(center);
        self.call(&mut f0)?;
        s[0].copy_from_slice(&f0);
        let mut diffs = vec![0.0; n];
        let mut t2 = vec![0.0; m];
        let mut t3 = vec![0.0; m];
        for i in 0..n {
            t2.iter_mut().for_each(|v| *v = 0.0);
            t3.iter_mut().for_each(|v| *v = 0.0);
            for (lam, acc) in [(l2s, &mut t2), (l3, &mut t3)] {
                for sign in [1.0, -1.0] {
                    self.point.copy_from_slice(center);
                    self.point[i] += sign * lam * half[i];
                    self.call(&mut buf)?;
                    acc.iter_mut().zip(&buf).for_each(|(a, b)| *a += b);
                }
            }
            let mut d = 0.0;
            for k in 0..m {
                s[1][k] += t2[k];
                s[2][k] += t3[k];
                d += (t2[k] - 2.0 * f0[k] - (l2s * l2s / (l3 * l3)) * (t3[k] - 2.0 * f0[k])).abs();
            }
            diffs[i] = d;
        }
        for i in 0..n {
            for j in i + 1..n {
                for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                    self.point.copy_from_slice(center);
                    self.point[i] += si * l4 * half[i];
                    self.point[j] += sj * l4 * half[j];
                    self.call(&mut buf)?;
                    s[3].iter_mut().zip(&buf).for_each(|(a, b)| *a += b);
                }
            }
        }
        for corner in 0..(1usize << n) {
            for i in 0..n {
                let sign = if (corner >> i) & 1 == 1 { -1.0 } else { 1.0 };
                self.point[i] = center[i] + sign * l5 * half[i];
            }
            self.call(&mut buf)?;
            s[4].iter_mut().zip(&buf).for_each(|(a, b)| *a += b);
        }
        let vol: f64 = half.iter().map(|h| 2.0 * h).product();
        for k in 0..m {
            let i7 = w[0] * s[0][k] + w[1] * s[1][k] + w[2] * s[2][k] + w[3] * s[3][k] + w[4] * s[4][k];
            let i5 = w5[0] * s[0][k] + w5[1] * s[1][k] + w5[2] * s[2][k] + w5[3] * s[3][k];
            value[k] = vol * i7;
            error[k] = (vol * (i7 - i5)).abs();
        }
        self.buf = buf;
        // Split where the fourth difference is largest; among near-ties take
        // the widest side.
        let dmax = diffs.iter().cloned().fold(0.0, f64::max);
        let mut axis = 0;
        let mut best_width = -1.0;
        for i in 0..n {
            if diffs[i] >= dmax * (1.0 - 1e-10) - 1e-300 && half[i] > best_width {
                axis = i;
                best_width = half[i];
            }
        }
        Ok(axis)
    }

    fn apply(&mut self, center: &[f64], half: &[f64], value: &mut [f64], error: &mut [f64]) -> Result<usize, E> {
        if center.len() == 1 {
            self.kronrod(center[0], half[0], value, error)
        } else {
            self.genz_malik(center, half, value, error)
        }
    }
}

/// Vector-valued adaptive integration. `f(x, out)` fills `out` (length `m`,
/// zeroed before each call). Stops when `‖Σ err‖ ≤ max(abstol, reltol‖Σ value‖)`
/// or after `maxiters` region evaluations.
pub fn integrate_adaptive_vec<E, F>(
    mut f: F,
    m: usize,
    lower: &[f64],
    upper: &[f64],
    reltol: f64,
    abstol: f64,
    maxiters: usize,
) -> Result<VecIntegralEstimate, E>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<(), E>,
{
    let n = lower.len();
    if n == 0 {
        let mut values = vec![0.0; m];
        f(&[], &mut values)?;
        return Ok(VecIntegralEstimate { values, errors: vec![0.0; m], evaluations: 1, converged: true });
    }
    let mut rule = Rule { f: &mut f, m, point: vec![0.0; n], buf: Vec::new() };
    let mut next_id = 0;
    let mut make = |rule: &mut Rule<'_, F>, center: Vec<f64>, half: Vec<f64>| -> Result<Region, E> {
        let mut value = vec![0.0; m];
        let mut error = vec![0.0; m];
        let split_axis = rule.apply(&center, &half, &mut value, &mut error)?;
        let norm = l2(&error);
        next_id += 1;
        Ok(Region { center, half, value, error, norm, split_axis, id: next_id })
    };
    let center: Vec<f64> = lower.iter().zip(upper).map(|(a, b)| 0.5 * (a + b)).collect();
    let half: Vec<f64> = lower.iter().zip(upper).map(|(a, b)| 0.5 * (b - a)).collect();
    let first = make(&mut rule, center, half)?;
    let mut total_v = first.value.clone();
    let mut total_e = first.error.clone();
    let mut heap = BinaryHeap::new();
    heap.push(first);
    let mut evaluations = 1;
    let done = |v: &[f64], e: &[f64]| l2(e) <= abstol.max(reltol * l2(v));
    let mut converged = done(&total_v, &total_e);
    while !converged && evaluations + 2 <= maxiters {
        let worst = heap.pop().expect("heap never empties");
        let ax = worst.split_axis;
        let mut half = worst.half.clone();
        half[ax] *= 0.5;
        let mut c1 = worst.center.clone();
        c1[ax] -= half[ax];
        let mut c2 = worst.center.clone();
        c2[ax] += half[ax];
        let r1 = make(&mut rule, c1, half.clone())?;
        let r2 = make(&mut rule, c2, half)?;
        evaluations += 2;
        for k in 0..m {
            total_v[k] += r1.value[k] + r2.value[k] - worst.value[k];
            total_e[k] += r1.error[k] + r2.error[k] - worst.error[k];
        }
        heap.push(r1);
        heap.push(r2);
        converged = done(&total_v, &total_e);
    }
    // Re-sum to shed the drift of incremental updates.
    let mut values = vec![0.0; m];
    let mut errors = vec![0.0; m];
    for r in heap.iter() {
        for k in 0..m {
            values[k] += r.value[k];
            errors[k] += r.error[k];
        }
    }
    let converged = done(&values, &errors);
    Ok(VecIntegralEstimate { values, errors, evaluations, converged })
}

/// Scalar form of [`integrate_adaptive_vec`].
pub fn integrate_adaptive<E, F>(
    mut f: F,
    lower: &[f64],
    upper: &[f64],
    reltol: f64,
    abstol: f64,
    maxiters: usize,
) -> Result<IntegralEstimate, E>
where
    F: FnMut(&[f64]) -> Result<f64, E>,
{
    let r = integrate_adaptive_vec(
        |x, out| {
            out[0] = f(x)?;
            Ok(())
        },
        1,
        lower,
        upper,
        reltol,
        abstol,
        maxiters,
    )?;
    Ok(IntegralEstimate { value: r.values[0], error: r.errors[0], evaluations: r.evaluations, converged: r.converged })
}
