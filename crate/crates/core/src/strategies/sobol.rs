//! Sobol sequence in up to 21 dimensions, Gray-code order, Joe–Kuo
//! direction numbers. Index 0 (the origin) is never emitted.

/// Maximum supported dimension.
pub const MAX_DIM: usize = 21;

const BITS: usize = 32;

// (degree s, coefficient a, initial m_1..m_s) for dimensions 2..=21.
const JOE_KUO: [(u32, u32, &[u32]); MAX_DIM - 1] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
    (5, 11, &[1, 1, 5, 1, 1]),
    (5, 13, &[1, 1, 1, 3, 11]),
    (5, 14, &[1, 3, 5, 5, 31]),
    (6, 1, &[1, 3, 3, 9, 7, 49]),
    (6, 13, &[1, 1, 1, 15, 21, 21]),
    (6, 16, &[1, 3, 1, 13, 27, 49]),
    (6, 19, &[1, 1, 1, 15, 7, 5]),
    (6, 22, &[1, 3, 1, 15, 13, 25]),
    (6, 25, &[1, 1, 5, 5, 19, 61]),
    (7, 1, &[1, 3, 7, 11, 23, 15, 103]),
    (7, 4, &[1, 3, 7, 13, 13, 15, 69]),
];

fn directions(dim: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim == 0 {
        for (k, vk) in v.iter_mut().enumerate() {
            *vk = 1 << (BITS - 1 - k);
        }
        return v;
    }
    let (s, a, m) = JOE_KUO[dim - 1];
    let s = s as usize;
    for k in 0..s.min(BITS) {
        v[k] = m[k] << (BITS - 1 - k);
    }
    for k in s..BITS {
        let mut x = v[k - s] ^ (v[k - s] >> s);
        for l in 1..s {
            if (a >> (s - 1 - l)) & 1 == 1 {
                x ^= v[k - l];
            }
        }
        v[k] = x;
    }
    v
}

/// Stateful generator. Successive calls to [`Sobol::next_point`] walk the
/// sequence; blocks drawn one after another never repeat a point.
#[derive(Debug, Clone)]
pub struct Sobol {
    dirs: Vec<[u32; BITS]>,
    state: Vec<u32>,
    index: u64,
}

impl Sobol {
    pub fn new(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "Sobol dimension {dim} outside 1..={MAX_DIM}");
        Sobol { dirs: (0..dim).map(directions).collect(), state: vec![0; dim], index: 0 }
    }

    /// Generator positioned so the next point is sequence index `skip + 1`.
    pub fn skipping(dim: usize, skip: u64) -> Self {
        let mut s = Sobol::new(dim);
        let gray = skip ^ (skip >> 1);
        for (d, st) in s.state.iter_mut().enumerate() {
            let mut x = 0;
            for k in 0..BITS {
                if (gray >> k) & 1 == 1 {
                    x ^= s.dirs[d][k];
                }
            }
            *st = x;
        }
        s.index = skip;
        s
    }

    pub fn dim(&self) -> usize {
        self.state.len()
    }

    /// Sequence index of the last emitted point.
    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn next_point(&mut self, out: &mut [f64]) {
        let c = self.index.trailing_ones() as usize;
        assert!(c < BITS, "Sobol sequence exhausted");
        self.index += 1;
        for (d, st) in self.state.iter_mut().enumerate() {
            *st ^= self.dirs[d][c];
            out[d] = *st as f64 / 4_294_967_296.0;
        }
    }
}

/// The first `n` points after skipping the origin and `skip` further points.
pub fn sobol_points(n: usize, dim: usize, skip: u64) -> Vec<Vec<f64>> {
    let mut s = Sobol::skipping(dim, skip);
    (0..n)
        .map(|_| {
            let mut p = vec![0.0; dim];
            s.next_point(&mut p);
            p
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_dimension_is_van_der_corput() {
        let p = sobol_points(3, 1, 0);
        assert_eq!(p, vec![vec![0.5], vec![0.75], vec![0.25]]);
    }

    #[test]
    fn matches_reference_generator() {
        // Unscrambled 21-dimensional points from an independent
        // implementation using the same direction-number file.
        let idx37 = [
            0.921875, 0.640625, 0.578125, 0.921875, 0.765625, 0.296875, 0.171875, 0.796875, 0.609375, 0.171875,
            0.015625, 0.078125, 0.578125, 0.859375, 0.109375, 0.484375, 0.796875, 0.421875, 0.046875, 0.140625,
            0.953125,
        ];
        let idx1000 = [
            0.2197265625, 0.0966796875, 0.5185546875, 0.6767578125, 0.2802734375, 0.9072265625, 0.0458984375,
            0.8994140625, 0.5009765625, 0.0693359375, 0.0849609375, 0.2548828125, 0.1611328125, 0.3837890625,
            0.1435546875, 0.3701171875, 0.7197265625, 0.3447265625, 0.9912109375, 0.7255859375, 0.5224609375,
        ];
        assert_eq!(sobol_points(1, 21, 36)[0], idx37.to_vec());
        assert_eq!(sobol_points(1000, 21, 0)[999], idx1000.to_vec());
    }

    #[test]
    fn skipping_matches_walking() {
        let all = sobol_points(40, 7, 0);
        let tail = sobol_points(10, 7, 30);
        assert_eq!(&all[30..], &tail[..]);
    }

    #[test]
    fn dyadic_blocks_are_stratified() {
        // The first 2^k points hit each interval of width 2^-k once per axis.
        for d in 1..=MAX_DIM {
            let pts = sobol_points(15, d, 0);
            for axis in 0..d {
                let mut seen = [false; 16];
                seen[0] = true; // the skipped origin
                for p in &pts {
                    let cell = (p[axis] * 16.0) as usize;
                    assert!(!seen[cell], "dim {d} axis {axis}");
                    seen[cell] = true;
                }
            }
        }
    }
}
