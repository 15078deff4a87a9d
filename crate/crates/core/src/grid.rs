//! Uniform 1D grids, four-point Lagrange interpolation, high-order finite
//! differences and sampled time signals.

/// Uniform grid `a + j * step`, `j = 0..=n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Uniform {
    pub a: f64,
    pub b: f64,
    pub n: usize,
}

impl Uniform {
    pub fn new(a: f64, b: f64, n: usize) -> Self {
        assert!(n >= 1 && b > a);
        Uniform { a, b, n }
    }

    pub fn step(&self) -> f64 {
        (self.b - self.a) / self.n as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        if j == self.n {
            self.b
        } else {
            self.a + j as f64 * self.step()
        }
    }

    pub fn len(&self) -> usize {
        self.n + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n).map(|j| self.node(j)).collect()
    }

    /// Stencil start and weights for four-point Lagrange interpolation at `x`.
    /// Points outside the grid are clamped to the ends.
    pub fn stencil(&self, x: f64) -> (usize, [f64; 4]) {
        let h = self.step();
        let u = ((x - self.a) / h).clamp(0.0, self.n as f64);
        if self.n < 3 {
            // linear fallback
            let j = (u.floor() as usize).min(self.n - 1);
            let f = u - j as f64;
            let mut w = [0.0; 4];
            w[0] = 1.0 - f;
            w[1] = f;
            return (j, w);
        }
        let j = (u.floor() as isize).clamp(0, self.n as isize - 1) as usize;
        let s = (j as isize - 1).clamp(0, self.n as isize - 3) as usize;
        let p = u - s as f64;
        // nodes at 0,1,2,3 relative to s
        let w = [
            -(p - 1.0) * (p - 2.0) * (p - 3.0) / 6.0,
            p * (p - 2.0) * (p - 3.0) / 2.0,
            -p * (p - 1.0) * (p - 3.0) / 2.0,
            p * (p - 1.0) * (p - 2.0) / 6.0,
        ];
        (s, w)
    }

    pub fn interp(&self, vals: &[f64], x: f64) -> f64 {
        let (s, w) = self.stencil(x);
        let m = if self.n < 3 { 2 } else { 4 };
        (0..m).map(|k| w[k] * vals[s + k]).sum()
    }
}

/// Derivative of sampled values on a uniform grid of spacing `h` with a
/// sixth-order stencil (one-sided near the ends).
pub fn fd_derivative(vals: &[f64], h: f64) -> Vec<f64> {
    let n = vals.len();
    let mut out = vec![0.0; n];
    if n < 7 {
        for i in 0..n {
            let (a, b) = if i == 0 {
                (0, 1.min(n - 1))
            } else if i == n - 1 {
                (n - 2, n - 1)
            } else {
                (i - 1, i + 1)
            };
            out[i] = (vals[b] - vals[a]) / ((b - a) as f64 * h);
        }
        return out;
    }
    const C: [f64; 3] = [3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0];
    for i in 3..n - 3 {
        let mut d = 0.0;
        for (k, c) in C.iter().enumerate() {
            d += c * (vals[i + k + 1] - vals[i - k - 1]);
        }
        out[i] = d / h;
    }
    // one-sided sixth-order weights for offsets 0..=6 at positions 0, 1, 2
    const B: [[f64; 7]; 3] = [
        [-49.0 / 20.0, 6.0, -15.0 / 2.0, 20.0 / 3.0, -15.0 / 4.0, 6.0 / 5.0, -1.0 / 6.0],
        [-1.0 / 6.0, -77.0 / 60.0, 5.0 / 2.0, -5.0 / 3.0, 5.0 / 6.0, -1.0 / 4.0, 1.0 / 30.0],
        [1.0 / 30.0, -2.0 / 5.0, -7.0 / 12.0, 4.0 / 3.0, -1.0 / 2.0, 2.0 / 15.0, -1.0 / 60.0],
    ];
    for (i, row) in B.iter().enumerate() {
        let mut d = 0.0;
        let mut e = 0.0;
        for k in 0..7 {
            d += row[k] * vals[k];
            e += row[k] * vals[n - 1 - k];
        }
        out[i] = d / h;
        out[n - 1 - i] = -e / h;
    }
    out
}

/// A signal sampled on a uniform time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSignal {
    pub grid: Uniform,
    pub vals: Vec<f64>,
}

impl TimeSignal {
    pub fn from_fn(grid: Uniform, f: impl Fn(f64) -> f64) -> Self {
        let vals = grid.nodes().into_iter().map(f).collect();
        TimeSignal { grid, vals }
    }

    pub fn zeros(grid: Uniform) -> Self {
        TimeSignal {
            grid,
            vals: vec![0.0; grid.len()],
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        if t <= self.grid.a {
            return if t == self.grid.a { self.vals[0] } else { 0.0 };
        }
        self.grid.interp(&self.vals, t)
    }

    pub fn derivative(&self) -> TimeSignal {
        TimeSignal {
            grid: self.grid,
            vals: fd_derivative(&self.vals, self.grid.step()),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale_add(&self, a: f64, other: &TimeSignal, b: f64) -> TimeSignal {
        TimeSignal {
            grid: self.grid,
            vals: self
                .vals
                .iter()
                .zip(&other.vals)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        }
    }
}

/// A space-time field sampled on a tensor grid, `vals[n * (nx + 1) + j]`
/// at `(x_j, t_n)`, evaluated by four-point Lagrange interpolation in each
/// direction. Times before the start of the grid give zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Field2 {
    pub xg: Uniform,
    pub tg: Uniform,
    pub vals: Vec<f64>,
}

impl Field2 {
    pub fn zeros(xg: Uniform, tg: Uniform) -> Self {
        Field2 {
            xg,
            tg,
            vals: vec![0.0; xg.len() * tg.len()],
        }
    }

    pub fn from_fn(xg: Uniform, tg: Uniform, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut out = Self::zeros(xg, tg);
        for n in 0..tg.len() {
            let t = tg.node(n);
            for j in 0..xg.len() {
                out.vals[n * xg.len() + j] = f(xg.node(j), t);
            }
        }
        out
    }

    pub fn get(&self, j: usize, n: usize) -> f64 {
        self.vals[n * self.xg.len() + j]
    }

    pub fn at(&self, x: f64, t: f64) -> f64 {
        if t < self.tg.a {
            return 0.0;
        }
        let (sx, wx) = self.xg.stencil(x);
        let (st, wt) = self.tg.stencil(t);
        let mx = if self.xg.n < 3 { 2 } else { 4 };
        let mt = if self.tg.n < 3 { 2 } else { 4 };
        let nx = self.xg.len();
        let mut acc = 0.0;
        for b in 0..mt {
            let row = &self.vals[(st + b) * nx + sx..];
            let mut r = 0.0;
            for a in 0..mx {
                r += wx[a] * row[a];
            }
            acc += wt[b] * r;
        }
        acc
    }

    /// Values at grid column `j` as a time signal.
    pub fn column(&self, j: usize) -> TimeSignal {
        TimeSignal {
            grid: self.tg,
            vals: (0..self.tg.len()).map(|n| self.get(j, n)).collect(),
        }
    }

    pub fn d_x(&self) -> Field2 {
        let nx = self.xg.len();
        let mut vals = Vec::with_capacity(self.vals.len());
        for row in self.vals.chunks(nx) {
            vals.extend(fd_derivative(row, self.xg.step()));
        }
        Field2 {
            xg: self.xg,
            tg: self.tg,
            vals,
        }
    }

    pub fn d_t(&self) -> Field2 {
        let nx = self.xg.len();
        let mut out = Self::zeros(self.xg, self.tg);
        let mut col = vec![0.0; self.tg.len()];
        for j in 0..nx {
            for (n, c) in col.iter_mut().enumerate() {
                *c = self.vals[n * nx + j];
            }
            for (n, d) in fd_derivative(&col, self.tg.step()).into_iter().enumerate() {
                out.vals[n * nx + j] = d;
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            let pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                let (mut q1, mut q2) = (1.0, 0.0);
                for j in 0..n {
                    let q3 = q2;
                    q2 = q1;
                    q1 = ((2 * j + 1) as f64 * z * q2 - j as f64 * q3) / (j + 1) as f64;
                }
                let qp = n as f64 * (z * q1 - q2) / (z * z - 1.0);
                x[i] = -z;
                w[i] = 2.0 / ((1.0 - z * z) * qp * qp);
                break;
            }
        }
    }
    (x, w)
}

/// Composite Gauss-Legendre quadrature of `f` over [a, b].
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize, order: usize) -> f64 {
    let (x, w) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut s = 0.0;
    for p in 0..panels {
        let c = a + (p as f64 + 0.5) * h;
        for k in 0..order {
            s += w[k] * f(c + 0.5 * h * x[k]);
        }
    }
    s * 0.5 * h
}

/// Least-squares slope and intercept of y against x, with the standard error
/// of the slope.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let se = if x.len() > 2 {
        let rss: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (b - icpt - slope * a).powi(2))
            .sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    (slope, icpt, se)
}
