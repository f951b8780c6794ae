//! Finite-difference reference solutions for problems whose fields have no
//! closed form, plus the ODE integrator used to synthesize inverse-problem
//! data.
//!
//! All spatial operators are second-order central differences. Time stepping
//! is Crank-Nicolson for diffusion and BDF2 (first step backward Euler) for
//! the battery models, whose Neumann conditions are enforced as algebraic
//! rows so the stored tables satisfy them exactly at the grid level.

use std::f64::consts::PI;
use std::fmt::Write as _;
use thiserror::Error;

pub const SOLVER_VERSION: &str = "fd-1";
pub const MIN_RESOLUTION: usize = 32;

#[derive(Debug, Error, PartialEq)]
pub enum ReferenceError {
    #[error("resolution {0} is below the minimum of {MIN_RESOLUTION}")]
    Resolution(usize),
    #[error("no reference solver for `{0}`")]
    Unknown(String),
    #[error("singular linear system at row {0}")]
    Singular(usize),
    #[error("line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("point {point:?} lies outside the table")]
    OutOfRange { point: Vec<f64> },
}

/// Values on a tensor grid, row-major with the last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub axes: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

impl Table {
    pub fn new(axes: Vec<Vec<f64>>, values: Vec<f64>) -> Self {
        assert_eq!(axes.iter().map(Vec::len).product::<usize>(), values.len(), "table shape");
        Table { axes, values }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.axes.len()];
        for k in (0..self.axes.len().saturating_sub(1)).rev() {
            s[k] = s[k + 1] * self.axes[k + 1].len();
        }
        s
    }

    pub fn at(&self, idx: &[usize]) -> f64 {
        let s = self.strides();
        self.values[idx.iter().zip(&s).map(|(i, s)| i * s).sum::<usize>()]
    }

    /// Multilinear interpolation. Points within 1e-12 of the grid edge are
    /// clamped onto it.
    pub fn interp(&self, x: &[f64]) -> Result<f64, ReferenceError> {
        let s = self.strides();
        let mut base = 0;
        let mut cells = Vec::with_capacity(x.len());
        for (k, (&xk, ax)) in x.iter().zip(&self.axes).enumerate() {
            let (lo, hi) = (ax[0], ax[ax.len() - 1]);
            let tol = 1e-12 * (hi - lo).abs().max(1.0);
            if !(xk >= lo - tol && xk <= hi + tol) {
                return Err(ReferenceError::OutOfRange { point: x.to_vec() });
            }
            let xk = xk.clamp(lo, hi);
            let j = match ax.partition_point(|&a| a <= xk) {
                0 => 0,
                p => (p - 1).min(ax.len() - 2),
            };
            let w = (xk - ax[j]) / (ax[j + 1] - ax[j]);
            base += j * s[k];
            cells.push((s[k], w));
        }
        let mut acc = 0.0;
        for corner in 0..1usize << cells.len() {
            let mut off = base;
            let mut w = 1.0;
            for (k, &(stride, t)) in cells.iter().enumerate() {
                if corner >> k & 1 == 1 {
                    off += stride;
                    w *= t;
                } else {
                    w *= 1.0 - t;
                }
            }
            if w != 0.0 {
                acc += w * self.values[off];
            }
        }
        Ok(acc)
    }
}

/// Reference fields of one problem, keyed by dependent-variable name.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet {
    pub problem: String,
    pub resolution: usize,
    pub fields: Vec<(String, Table)>,
}

impl ReferenceSet {
    pub fn field(&self, dvar: &str) -> Option<&Table> {
        self.fields.iter().find(|(n, _)| n == dvar).map(|(_, t)| t)
    }

    /// CSV with a three-line `#` header, then `field,x1..xk,value` rows.
    /// Axis values are listed in the header as well so that tables
    /// round-trip without re-inferring the grid.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# problem {}", self.problem);
        let _ = writeln!(s, "# resolution {}", self.resolution);
        let _ = writeln!(s, "# solver {SOLVER_VERSION}");
        for (name, t) in &self.fields {
            for (k, ax) in t.axes.iter().enumerate() {
                let _ = write!(s, "axis,{name},{k}");
                for a in ax {
                    let _ = write!(s, ",{a:e}");
                }
                s.push('\n');
            }
        }
        for (name, t) in &self.fields {
            let s_len: Vec<usize> = t.axes.iter().map(Vec::len).collect();
            let mut idx = vec![0; s_len.len()];
            for v in &t.values {
                let _ = write!(s, "value,{name}");
                for (k, &i) in idx.iter().enumerate() {
                    let _ = write!(s, ",{:e}", t.axes[k][i]);
                }
                let _ = writeln!(s, ",{v:e}");
                for k in (0..idx.len()).rev() {
                    idx[k] += 1;
                    if idx[k] < s_len[k] {
                        break;
                    }
                    idx[k] = 0;
                }
            }
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, ReferenceError> {
        let err = |line: usize, m: &str| ReferenceError::Csv { line, message: m.to_string() };
        let mut lines = text.lines().enumerate();
        let mut header = |key: &str| -> Result<String, ReferenceError> {
            let (i, l) = lines.next().ok_or_else(|| err(0, "truncated header"))?;
            l.strip_prefix("# ")
                .and_then(|r| r.strip_prefix(key))
                .map(|r| r.trim().to_string())
                .ok_or_else(|| err(i + 1, &format!("expected `# {key}`")))
        };
        let problem = header("problem")?;
        let resolution = header("resolution")?.parse().map_err(|_| err(2, "bad resolution"))?;
        let solver = header("solver")?;
        if solver != SOLVER_VERSION {
            return Err(err(3, &format!("unsupported solver version `{solver}`")));
        }
        let mut axes: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
        let mut values: Vec<(String, Vec<f64>)> = Vec::new();
        for (i, l) in lines {
            if l.trim().is_empty() {
                continue;
            }
            let mut cols = l.split(',');
            let kind = cols.next().unwrap_or("");
            let name = cols.next().ok_or_else(|| err(i + 1, "missing field name"))?.to_string();
            let nums = |c: std::str::Split<'_, char>| -> Result<Vec<f64>, ReferenceError> {
                c.map(|v| v.trim().parse::<f64>().map_err(|_| err(i + 1, "bad number"))).collect()
            };
            match kind {
                "axis" => {
                    let k: usize = cols.next().and_then(|v| v.parse().ok()).ok_or_else(|| err(i + 1, "bad axis index"))?;
                    let vals = nums(cols)?;
                    match axes.iter_mut().find(|(n, _)| *n == name) {
                        Some((_, a)) if a.len() == k => a.push(vals),
                        None if k == 0 => axes.push((name, vec![vals])),
                        _ => return Err(err(i + 1, "axes out of order")),
                    }
                }
                "value" => {
                    let row = nums(cols)?;
                    let v = *row.last().ok_or_else(|| err(i + 1, "empty row"))?;
                    match values.iter_mut().find(|(n, _)| *n == name) {
                        Some((_, vs)) => vs.push(v),
                        None => values.push((name, vec![v])),
                    }
                }
                _ => return Err(err(i + 1, "expected `axis` or `value`")),
            }
        }
        let mut fields = Vec::new();
        for (name, ax) in axes {
            let vals = values.iter().find(|(n, _)| *n == name).map(|(_, v)| v.clone()).unwrap_or_default();
            if ax.iter().map(Vec::len).product::<usize>() != vals.len() {
                return Err(err(0, &format!("field `{name}` has {} values for its grid", vals.len())));
            }
            fields.push((name, Table::new(ax, vals)));
        }
        Ok(ReferenceSet { problem, resolution, fields })
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect()
}

/// Dense LU with partial pivoting; factor once, solve many times.
struct Lu {
    n: usize,
    a: Vec<f64>,
    piv: Vec<usize>,
}

impl Lu {
    fn factor(n: usize, mut a: Vec<f64>) -> Result<Lu, ReferenceError> {
        let mut piv: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let p = (k..n).max_by(|&i, &j| a[i * n + k].abs().total_cmp(&a[j * n + k].abs())).expect("non-empty");
            if a[p * n + k].abs() < 1e-300 {
                return Err(ReferenceError::Singular(k));
            }
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
                piv.swap(k, p);
            }
            for i in k + 1..n {
                let f = a[i * n + k] / a[k * n + k];
                if f == 0.0 {
                    continue;
                }
                a[i * n + k] = f;
                for j in k + 1..n {
                    a[i * n + j] -= f * a[k * n + j];
                }
            }
        }
        Ok(Lu { n, a, piv })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.piv.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for j in 0..i {
                x[i] -= self.a[i * n + j] * x[j];
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                x[i] -= self.a[i * n + j] * x[j];
            }
            x[i] /= self.a[i * n + i];
        }
        x
    }
}

/// Thomas algorithm for a tridiagonal system; `a` sub, `b` main, `c` super.
fn tridiag(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = c[0] / b[0];
    dp[0] = d[0] / b[0];
    for i in 1..n {
        let m = b[i] - a[i] * cp[i - 1];
        cp[i] = if i + 1 < n { c[i] / m } else { 0.0 };
        dp[i] = (d[i] - a[i] * dp[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    x
}

fn check_resolution(n: usize) -> Result<(), ReferenceError> {
    if n < MIN_RESOLUTION {
        Err(ReferenceError::Resolution(n))
    } else {
        Ok(())
    }
}

/// `u_t = D u_xx + (e^{-t} − π²) sin(πx)` on `[0,1] × [−1,1]`, `u(0,x) = sin(πx)`,
/// homogeneous Dirichlet ends. `n` intervals in x and `n` steps in t.
pub fn diffusion1d(n: usize, diffusivity: f64) -> Result<Table, ReferenceError> {
    check_resolution(n)?;
    let xs = linspace(-1.0, 1.0, n);
    let ts = linspace(0.0, 1.0, n);
    let h = 2.0 / n as f64;
    let dt = 1.0 / n as f64;
    let r = diffusivity * dt / (h * h);
    let m = n - 1;
    let force = |t: f64, x: f64| ((-t).exp() - PI * PI) * (PI * x).sin();
    let mut u: Vec<f64> = xs.iter().map(|&x| (PI * x).sin()).collect();
    u[0] = 0.0;
    u[n] = 0.0;
    let mut values = u.clone();
    let sub = vec![-0.5 * r; m];
    let main = vec![1.0 + r; m];
    for k in 0..n {
        let (t0, t1) = (ts[k], ts[k + 1]);
        let rhs: Vec<f64> = (1..n)
            .map(|i| {
                u[i] + 0.5 * r * (u[i - 1] - 2.0 * u[i] + u[i + 1]) + 0.5 * dt * (force(t0, xs[i]) + force(t1, xs[i]))
            })
            .collect();
        let inner = tridiag(&sub, &main, &sub, &rhs);
        u[1..n].copy_from_slice(&inner);
        values.extend_from_slice(&u);
    }
    Ok(Table::new(vec![ts, xs], values))
}

/// Closed form for the diffusion benchmark:
/// `u = (A e^{−t} + B + C e^{−Dπ²t}) sin(πx)` with `A = 1/(Dπ² − 1)`,
/// `B = −1/D`, `C = 1 − A − B`.
pub fn diffusion1d_exact(t: f64, x: f64, d: f64) -> f64 {
    let k = d * PI * PI;
    let a = 1.0 / (k - 1.0);
    let b = -1.0 / d;
    let c = 1.0 - a - b;
    (a * (-t).exp() + b + c * (-k * t).exp()) * (PI * x).sin()
}

/// Spherical diffusion `c_t = D (c_rr + 2 c_r / r)` on `r ∈ [0,1]` with
/// `c_r(0) = 0`, `c_r(1) = flux`, `c(0,r) = c0`.
///
/// The two Neumann conditions are second-order one-sided rows of the linear
/// system, so every stored time level after the first satisfies them to
/// rounding; the `2 c_r / r` singularity at the centre is never evaluated.
pub fn spherical_diffusion(n: usize, d: f64, flux: f64, c0: f64, t_end: f64) -> Result<Table, ReferenceError> {
    check_resolution(n)?;
    let rs = linspace(0.0, 1.0, n);
    let h = 1.0 / n as f64;
    // The initial state violates the surface flux, so the solution has a
    // thin early layer; step finely and store every fourth level.
    const STRIDE: usize = 4;
    let steps = 4 * STRIDE * n;
    let ts = linspace(0.0, t_end, steps / STRIDE);
    let dt = t_end / steps as f64;
    let size = n + 1;
    // Spatial operator L on interior rows.
    let lap = |i: usize| -> [(usize, f64); 3] {
        let r = rs[i];
        [
            (i - 1, d * (1.0 / (h * h) - 1.0 / (r * h))),
            (i, -2.0 * d / (h * h)),
            (i + 1, d * (1.0 / (h * h) + 1.0 / (r * h))),
        ]
    };
    let system = |beta: f64| -> Result<Lu, ReferenceError> {
        let mut a = vec![0.0; size * size];
        a[0] = -3.0;
        a[1] = 4.0;
        a[2] = -1.0;
        for i in 1..n {
            a[i * size + i] += 1.0;
            for (j, v) in lap(i) {
                a[i * size + j] -= beta * v;
            }
        }
        let last = n * size;
        a[last + n - 2] = 1.0;
        a[last + n - 1] = -4.0;
        a[last + n] = 3.0;
        Lu::factor(size, a)
    };
    let euler = system(dt)?;
    let bdf2 = system(2.0 / 3.0 * dt)?;
    let mut prev = vec![c0; size];
    let mut values = prev.clone();
    let boundary = |b: &mut Vec<f64>| {
        b[0] = 0.0;
        b[n] = 2.0 * h * flux;
    };
    let mut rhs = prev.clone();
    boundary(&mut rhs);
    let mut cur = euler.solve(&rhs);
    for step in 2..=steps {
        let mut rhs: Vec<f64> = cur.iter().zip(&prev).map(|(c, p)| (4.0 * c - p) / 3.0).collect();
        boundary(&mut rhs);
        let next = bdf2.solve(&rhs);
        prev = std::mem::replace(&mut cur, next);
        if step % STRIDE == 0 {
            values.extend_from_slice(&cur);
        }
    }
    Ok(Table::new(vec![ts, rs], values))
}

/// End of the simulated window for the single-particle model. Surface
/// concentrations stay inside (0, 1) well past this point.
pub const SPM_T_END: f64 = 0.15;
pub const SPM_DN: f64 = 8.813457647415216;
pub const SPM_DP: f64 = 22.598609352346717;
pub const SPM_FLUX_N: f64 = -0.14182855923368468;
pub const SPM_FLUX_P: f64 = 0.03237700710041634;
pub const SPM_Q_RATE: f64 = 4.27249308415467;

pub fn spm(n: usize) -> Result<ReferenceSet, ReferenceError> {
    let cn = spherical_diffusion(n, SPM_DN, SPM_FLUX_N, 0.8, SPM_T_END)?;
    let cp = spherical_diffusion(n, SPM_DP, SPM_FLUX_P, 0.6, SPM_T_END)?;
    let ts = cn.axes[0].clone();
    let q = Table::new(vec![ts.clone()], ts.iter().map(|t| SPM_Q_RATE * t).collect());
    Ok(ReferenceSet { problem: "spm".into(), resolution: n, fields: vec![("Q".into(), q), ("cn".into(), cn), ("cp".into(), cp)] })
}

/// Source of the reduced P2D model: 1 on the negative electrode, 0 on the
/// separator, −1 on the positive electrode.
pub fn p2d_source(x: f64) -> f64 {
    if x < 0.4 {
        1.0
    } else if x < 0.6 {
        0.0
    } else {
        -1.0
    }
}

/// `G(x) = ∫₀ˣ ∫₀^s f`.
fn p2d_source_double_integral(x: f64) -> f64 {
    if x < 0.4 {
        0.5 * x * x
    } else if x < 0.6 {
        0.08 + 0.4 * (x - 0.4)
    } else {
        let s = x - 0.6;
        0.16 + 0.4 * s - 0.5 * s * s
    }
}

pub const P2D_T_END: f64 = 1.0;

/// `c_t = c_xx + f` with zero-flux ends and `c(0,x) = 1`, then
/// `φ = c(x) − c(0) − G(x)` from integrating `φ_xx = c_xx − f` twice with
/// `φ(0) = 0` and `φ_x(1) = 0` (the source integrates to zero).
pub fn reduced_p2d(n: usize) -> Result<ReferenceSet, ReferenceError> {
    check_resolution(n)?;
    let xs = linspace(0.0, 1.0, n);
    let h = 1.0 / n as f64;
    let steps = 4 * n;
    let ts = linspace(0.0, P2D_T_END, steps);
    let dt = P2D_T_END / steps as f64;
    let size = n + 1;
    // Cell-averaged source so the discontinuities are resolved consistently.
    let src: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let (a, b) = ((x - 0.5 * h).max(0.0), (x + 0.5 * h).min(1.0));
            let f = |s: f64| {
                if s < 0.4 {
                    s
                } else if s < 0.6 {
                    0.4
                } else {
                    0.4 - (s - 0.6)
                }
            };
            (f(b) - f(a)) / (b - a)
        })
        .collect();
    // Ghost-node Neumann: the end rows use 2(c₁ − c₀)/h².
    let system = |beta: f64| {
        let k = beta / (h * h);
        let mut sub = vec![-k; size];
        let main = vec![1.0 + 2.0 * k; size];
        let mut sup = vec![-k; size];
        sup[0] = -2.0 * k;
        sub[n] = -2.0 * k;
        (sub, main, sup)
    };
    let (ea, eb, ec) = system(dt);
    let (ba, bb, bc) = system(2.0 / 3.0 * dt);
    let mut prev = vec![1.0; size];
    let mut ce = prev.clone();
    let rhs: Vec<f64> = prev.iter().zip(&src).map(|(c, f)| c + dt * f).collect();
    let mut cur = tridiag(&ea, &eb, &ec, &rhs);
    ce.extend_from_slice(&cur);
    for _ in 1..steps {
        let rhs: Vec<f64> =
            cur.iter().zip(&prev).zip(&src).map(|((c, p), f)| (4.0 * c - p) / 3.0 + 2.0 / 3.0 * dt * f).collect();
        let next = tridiag(&ba, &bb, &bc, &rhs);
        prev = std::mem::replace(&mut cur, next);
        ce.extend_from_slice(&cur);
    }
    let mut phi = Vec::with_capacity(ce.len());
    for row in ce.chunks(size) {
        phi.extend(row.iter().zip(&xs).map(|(c, &x)| c - row[0] - p2d_source_double_integral(x)));
    }
    let axes = vec![ts, xs];
    Ok(ReferenceSet {
        problem: "reduced_p2d".into(),
        resolution: n,
        fields: vec![("ce".into(), Table::new(axes.clone(), ce)), ("phie".into(), Table::new(axes, phi))],
    })
}

pub fn diffusion_reference(n: usize) -> Result<ReferenceSet, ReferenceError> {
    Ok(ReferenceSet { problem: "diffusion1d".into(), resolution: n, fields: vec![("u".into(), diffusion1d(n, 1.0)?)] })
}

/// Reference tables by problem id.
pub fn reference_solve(id: &str, n: usize) -> Result<ReferenceSet, ReferenceError> {
    match id {
        "diffusion1d" => diffusion_reference(n),
        "spm" => spm(n),
        "reduced_p2d" => reduced_p2d(n),
        _ => Err(ReferenceError::Unknown(id.to_string())),
    }
}

/// Classical RK4 for an autonomous system; returns the state after every
/// `record_every` steps, starting with `y0`.
pub fn rk4<F: Fn(&[f64], &mut [f64])>(f: F, y0: &[f64], dt: f64, steps: usize, record_every: usize) -> Vec<Vec<f64>> {
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut out = vec![y.clone()];
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for s in 1..=steps {
        f(&y, &mut k1);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * dt * k1[i];
        }
        f(&tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * dt * k2[i];
        }
        f(&tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + dt * k3[i];
        }
        f(&tmp, &mut k4);
        for i in 0..n {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if s % record_every == 0 {
            out.push(y.clone());
        }
    }
    out
}

/// Lorenz trajectory from `(1, 0, 0)` sampled every 0.01 on `[0, 1]`
/// (101 states), integrated at `dt = 1e-4`.
pub fn lorenz_samples(sigma: f64, rho: f64, beta: f64) -> (Vec<f64>, Vec<[f64; 3]>) {
    let f = |y: &[f64], dy: &mut [f64]| {
        dy[0] = sigma * (y[1] - y[0]);
        dy[1] = y[0] * (rho - y[2]) - y[1];
        dy[2] = y[0] * y[1] - beta * y[2];
    };
    let states = rk4(f, &[1.0, 0.0, 0.0], 1e-4, 10_000, 100);
    let ts = (0..states.len()).map(|i| i as f64 * 0.01).collect();
    (ts, states.into_iter().map(|s| [s[0], s[1], s[2]]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_is_exact_on_bilinear_data() {
        let axes = vec![vec![0.0, 0.5, 2.0], vec![-1.0, 1.0]];
        let f = |a: f64, b: f64| 1.0 + 2.0 * a - b + 0.5 * a * b;
        let mut v = Vec::new();
        for &a in &axes[0] {
            for &b in &axes[1] {
                v.push(f(a, b));
            }
        }
        let t = Table::new(axes, v);
        for (a, b) in [(0.1, 0.3), (1.7, -0.9), (2.0, 1.0), (0.0, -1.0)] {
            assert!((t.interp(&[a, b]).unwrap() - f(a, b)).abs() < 1e-14);
        }
        assert!(t.interp(&[2.1, 0.0]).is_err());
    }

    #[test]
    fn lu_solves_a_permuted_system() {
        let a = vec![0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0];
        let lu = Lu::factor(3, a.clone()).unwrap();
        let x = lu.solve(&[3.0, 2.0, 4.0]);
        for i in 0..3 {
            let r: f64 = (0..3).map(|j| a[i * 3 + j] * x[j]).sum();
            assert!((r - [3.0, 2.0, 4.0][i]).abs() < 1e-14);
        }
    }

    #[test]
    fn initial_rows() {
        let d = diffusion1d(32, 1.0).unwrap();
        for (j, &x) in d.axes[1].iter().enumerate() {
            assert!((d.at(&[0, j]) - (PI * x).sin()).abs() < 1e-15);
        }
        let s = spm(32).unwrap();
        assert!(s.field("cn").unwrap().values[..33].iter().all(|&v| v == 0.8));
        assert!(s.field("cp").unwrap().values[..33].iter().all(|&v| v == 0.6));
        let p = reduced_p2d(32).unwrap();
        assert!(p.field("ce").unwrap().values[..33].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn rejects_coarse_grids() {
        assert_eq!(diffusion1d(16, 1.0).unwrap_err(), ReferenceError::Resolution(16));
        assert!(matches!(reference_solve("burgers", 64), Err(ReferenceError::Unknown(_))));
    }

    #[test]
    fn csv_round_trip() {
        let s = reduced_p2d(32).unwrap();
        let back = ReferenceSet::from_csv(&s.to_csv()).unwrap();
        assert_eq!(back.problem, "reduced_p2d");
        assert_eq!(back.resolution, 32);
        for ((n1, t1), (n2, t2)) in s.fields.iter().zip(&back.fields) {
            assert_eq!(n1, n2);
            assert_eq!(t1.axes.len(), t2.axes.len());
            for (a, b) in t1.values.iter().zip(&t2.values) {
                assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
            }
        }
        assert_eq!(s.to_csv().lines().take(3).filter(|l| l.starts_with('#')).count(), 3);
    }

    #[test]
    fn rk4_is_fourth_order_on_exponential() {
        let f = |y: &[f64], d: &mut [f64]| d[0] = -y[0];
        let e1 = (rk4(f, &[1.0], 0.1, 10, 10)[1][0] - (-1.0f64).exp()).abs();
        let e2 = (rk4(f, &[1.0], 0.05, 20, 20)[1][0] - (-1.0f64).exp()).abs();
        assert!((e1 / e2).log2() > 3.9, "{}", (e1 / e2).log2());
    }
}

#[cfg(test)]
mod convergence {
    use super::*;

    fn max_err(n: usize) -> f64 {
        let t = diffusion1d(n, 1.0).unwrap();
        let mut e: f64 = 0.0;
        for (i, &ti) in t.axes[0].iter().enumerate() {
            for (j, &xj) in t.axes[1].iter().enumerate() {
                e = e.max((t.at(&[i, j]) - diffusion1d_exact(ti, xj, 1.0)).abs());
            }
        }
        e
    }

    #[test]
    fn diffusion_is_second_order() {
        let (a, b, c) = (max_err(32), max_err(64), max_err(128));
        let (p1, p2) = ((a / b).log2(), (b / c).log2());
        assert!(p1 > 1.8 && p2 > 1.8, "{a:e} {b:e} {c:e} {p1} {p2}");
    }

    #[test]
    fn battery_tables_refine_consistently() {
        for id in ["spm", "reduced_p2d"] {
            let coarse = reference_solve(id, 64).unwrap();
            let fine = reference_solve(id, 128).unwrap();
            for (name, tc) in &coarse.fields {
                let tf = fine.field(name).unwrap();
                let scale = tf.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let mut worst: f64 = 0.0;
                for (i, &t) in tc.axes[0].iter().enumerate().skip(1) {
                    if tc.dim() == 1 {
                        worst = worst.max((tc.at(&[i]) - tf.interp(&[t]).unwrap()).abs());
                        continue;
                    }
                    for (j, &x) in tc.axes[1].iter().enumerate() {
                        worst = worst.max((tc.at(&[i, j]) - tf.interp(&[t, x]).unwrap()).abs());
                    }
                }
                eprintln!("{id}/{name}: {worst:e} (scale {scale})");
                assert!(worst < 1e-3 * scale, "{id}/{name}: {worst:e}");
            }
        }
    }
}
