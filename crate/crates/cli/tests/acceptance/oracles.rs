//! Reference computations that share no numerical code with the library.

use rand::Rng as _;
use rand_distr::StandardNormal;
use tracefa_core::rng::Rng;
use tracefa_core::transition::ResourceSufficientStats;
use tracefa_core::{GaussianBelief, Matrix, Vector};

pub fn normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn random_spd(rng: &mut Rng, k: usize, scale: f64, ridge: f64) -> Matrix {
    let l = Matrix::from_fn(k, k, |_, _| scale * normal(rng));
    &l * l.transpose() + Matrix::identity(k, k) * ridge
}

// Gauss–Kronrod 7/15 nodes and weights.
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
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_94,
    0.417_959_183_673_469_4,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let pair = f(c - h * XGK[i]) + f(c + h * XGK[i]);
        kronrod += WGK[i] * pair;
        if i % 2 == 1 {
            gauss += WG[i / 2] * pair;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive Gauss–Kronrod integral of `f` over `[a, b]` to absolute `tol`,
/// or to rounding level on each panel.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn go(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (v, err) = gk15(f, a, b);
        if err <= tol.max(1e-15 * v.abs()) || depth == 0 {
            return v;
        }
        let m = 0.5 * (a + b);
        go(f, a, m, 0.5 * tol, depth - 1) + go(f, m, b, 0.5 * tol, depth - 1)
    }
    go(f, a, b, tol, 40)
}

/// Exact posterior moments and evidence of `N(m, V)` times
/// `Φ(±(wᵀc − μ))`, by quadrature along the direction `a = wᵀc`.
pub fn probit_posterior(prior: &GaussianBelief, w: &Vector, mu: f64, correct: bool) -> (Vector, Matrix, f64) {
    let sign = if correct { 1.0 } else { -1.0 };
    let alpha = w.dot(&prior.mean);
    let vw = &prior.cov * w;
    let beta = w.dot(&vw);
    let sd = beta.sqrt();
    let lik = |u: f64| normal_cdf(sign * (alpha + sd * u - mu)) * normal_pdf(u);
    let (lo, hi) = (-14.0, 14.0);
    let tol = 1e-13 * integrate(&lik, lo, hi, 1e-8);
    let z = integrate(&lik, lo, hi, tol);
    let m1 = integrate(&|u| u * lik(u), lo, hi, tol) / z;
    let m2 = integrate(&|u| (u - m1) * (u - m1) * lik(u), lo, hi, tol) / z;
    let mean_a = alpha + sd * m1;
    let var_a = beta * m2;
    let mean = &prior.mean + &vw * ((mean_a - alpha) / beta);
    let outer = &vw * vw.transpose();
    let cov = &prior.cov - &outer / beta + outer * (var_a / (beta * beta));
    (mean, cov, z)
}

/// Simpson weight of node `i` of `n` (odd) equally spaced nodes.
fn simpson(i: usize, n: usize) -> f64 {
    if i == 0 || i == n - 1 {
        1.0
    } else if i % 2 == 1 {
        4.0
    } else {
        2.0
    }
}

/// One-concept model for the grid oracle.
#[derive(Debug, Clone)]
pub struct ScalarModel {
    pub prior_mean: f64,
    pub prior_var: f64,
    /// `(w, μ, correct)` per time instance.
    pub obs: Vec<Option<(f64, f64, bool)>>,
    /// `(1 + D, d, Γ)` into each time instance after the first.
    pub trans: Vec<(f64, f64, f64)>,
}

pub struct ScalarPosterior {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// `E[c(t) c(t−1)]` for `t >= 1`.
    pub cross: Vec<f64>,
}

pub const GRID: usize = 20001;
const INNER: usize = 401;
const HALF_WIDTH: f64 = 12.0;

/// Gaussian moment projection of one probit update on a grid.
fn grid_update(m: f64, v: f64, (w, mu, y): (f64, f64, bool)) -> (f64, f64) {
    let sign = if y { 1.0 } else { -1.0 };
    let sd = v.sqrt();
    let h = 2.0 * HALF_WIDTH * sd / (GRID - 1) as f64;
    let node = |i: usize| m - HALF_WIDTH * sd + i as f64 * h;
    let dens: Vec<f64> = (0..GRID)
        .map(|i| {
            let c = node(i);
            simpson(i, GRID) * (-(c - m) * (c - m) / (2.0 * v)).exp() * normal_cdf(sign * (w * c - mu))
        })
        .collect();
    let z: f64 = dens.iter().sum();
    let mean = dens.iter().enumerate().map(|(i, p)| p * node(i)).sum::<f64>() / z;
    let var = dens.iter().enumerate().map(|(i, p)| p * (node(i) - mean).powi(2)).sum::<f64>() / z;
    (mean, var)
}

/// Forward moment projection and backward smoothing of the scalar model,
/// with every integral done on a grid. The backward density is
/// `q(c) ∫ N(c'; a c + d, Γ) p̂(c') / q̃(c') dc'`.
pub fn scalar_smoother(model: &ScalarModel) -> ScalarPosterior {
    let t_len = model.obs.len();
    let mut filt = Vec::with_capacity(t_len);
    let mut pred = Vec::with_capacity(t_len);
    let (mut m, mut v) = (model.prior_mean, model.prior_var);
    for t in 0..t_len {
        if t > 0 {
            let (a, d, g) = model.trans[t - 1];
            let (fm, fv) = filt[t - 1];
            m = a * fm + d;
            v = a * a * fv + g;
        }
        pred.push((m, v));
        filt.push(match model.obs[t] {
            Some(o) => grid_update(m, v, o),
            None => (m, v),
        });
    }

    let mut mean = vec![0.0; t_len];
    let mut var = vec![0.0; t_len];
    let mut cross = vec![0.0; t_len.saturating_sub(1)];
    (mean[t_len - 1], var[t_len - 1]) = filt[t_len - 1];
    for t in (0..t_len - 1).rev() {
        let (a, d, g) = model.trans[t];
        let (fm, fv) = filt[t];
        let (pm, pv) = pred[t + 1];
        let (sm, sv) = (mean[t + 1], var[t + 1]);
        let fsd = fv.sqrt();
        let h = 2.0 * HALF_WIDTH * fsd / (GRID - 1) as f64;
        let gsd = g.sqrt();
        let hi = 2.0 * HALF_WIDTH * gsd / (INNER - 1) as f64;
        let (mut w0, mut w1, mut w2, mut x) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..GRID {
            let c = fm - HALF_WIDTH * fsd + i as f64 * h;
            let q = (-(c - fm) * (c - fm) / (2.0 * fv)).exp();
            let centre = a * c + d;
            let (mut i0, mut i1) = (0.0, 0.0);
            for k in 0..INNER {
                let cn = centre - HALF_WIDTH * gsd + k as f64 * hi;
                let e = -(cn - centre).powi(2) / (2.0 * g) - (cn - sm).powi(2) / (2.0 * sv)
                    + (cn - pm).powi(2) / (2.0 * pv);
                let f = simpson(k, INNER) * e.exp();
                i0 += f;
                i1 += f * cn;
            }
            let wt = simpson(i, GRID) * q;
            w0 += wt * i0;
            w1 += wt * i0 * c;
            w2 += wt * i0 * c * c;
            x += wt * i1 * c;
        }
        mean[t] = w1 / w0;
        var[t] = w2 / w0 - mean[t] * mean[t];
        cross[t] = x / w0;
    }
    ScalarPosterior { mean, var, cross }
}

/// Pairwise AUC: `(2·wins + ties) / (2·P·Q)` over positive–negative pairs.
pub fn pairwise_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let (mut twice, mut pos, mut neg) = (0u128, 0u128, 0u128);
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            neg += 1;
            continue;
        }
        pos += 1;
        for (j, &sj) in scores.iter().enumerate() {
            if !labels[j] {
                twice += if si > sj { 2 } else if si == sj { 1 } else { 0 };
            }
        }
    }
    (pos > 0 && neg > 0).then(|| twice as f64 / (2 * pos * neg) as f64)
}

fn largest_eigenvalue(m: &Matrix) -> f64 {
    m.clone().symmetric_eigenvalues().max()
}

/// Transition M-step objective written out from the raw moment sums:
/// `½ Σ_r Γ_r⁻¹ E[(Δ_r − A_r c̃)²] + γ Σ D`.
pub struct TransitionOracle {
    k: usize,
    prev: Matrix,
    delta_cross: Matrix,
    delta_second: Vector,
    inv_noise: Vector,
    gamma: f64,
}

impl TransitionOracle {
    pub fn new(stats: &ResourceSufficientStats, noise_var: &Vector, gamma: f64) -> Self {
        let k = stats.cur.nrows();
        let prev = stats.prev.clone();
        let delta_cross = &stats.cross - prev.rows(0, k);
        let delta_second = Vector::from_fn(k, |r, _| {
            stats.cur[(r, r)] - 2.0 * stats.cross[(r, r)] + stats.prev[(r, r)]
        });
        TransitionOracle { k, prev, delta_cross, delta_second, inv_noise: noise_var.map(|g| 1.0 / g), gamma }
    }

    pub fn objective(&self, a: &Matrix) -> f64 {
        let mut v = 0.0;
        for r in 0..self.k {
            let row = a.row(r);
            let quad = (row * &self.prev).dot(&row);
            v += 0.5 * self.inv_noise[r] * (self.delta_second[r] - 2.0 * row.dot(&self.delta_cross.row(r)) + quad);
        }
        let l1: f64 = (0..self.k).flat_map(|r| (0..self.k).map(move |c| (r, c))).map(|(r, c)| a[(r, c)].abs()).sum();
        v + self.gamma * l1
    }

    /// Proximal gradient with step `1/(10L)` from `a`.
    pub fn projected_gradient(&self, mut a: Matrix, iters: usize) -> Matrix {
        let lip = largest_eigenvalue(&self.prev) * self.inv_noise.max();
        let step = 0.1 / lip;
        self.project(&mut a, 0.0);
        for _ in 0..iters {
            let mut g = &a * &self.prev - &self.delta_cross;
            for r in 0..self.k {
                g.row_mut(r).scale_mut(self.inv_noise[r]);
            }
            a -= g * step;
            self.project(&mut a, step * self.gamma);
        }
        a
    }

    fn project(&self, a: &mut Matrix, shrink: f64) {
        for r in 0..self.k {
            for c in 0..self.k {
                a[(r, c)] = if c > r { 0.0 } else { (a[(r, c)] - shrink).max(0.0) };
            }
        }
    }
}

/// Unscented question objective `Σ u (−log Φ(s w̃ᵀx̃)) + λ‖w‖₁`.
pub struct QuestionOracle {
    /// `(x̃, u, s)` per sigma point, with `x̃ = [x; −1]`.
    rows: Vec<(Vector, f64, f64)>,
    lambda: f64,
}

impl QuestionOracle {
    pub fn new(responses: &[(bool, tracefa_core::question::SigmaSet)], lambda: f64) -> Self {
        let mut rows = Vec::new();
        for (y, set) in responses {
            for (p, &u) in set.points.iter().zip(&set.weights) {
                let x = Vector::from_iterator(p.len() + 1, p.iter().copied().chain([-1.0]));
                rows.push((x, u, if *y { 1.0 } else { -1.0 }));
            }
        }
        QuestionOracle { rows, lambda }
    }

    pub fn objective(&self, w: &Vector) -> f64 {
        let k = w.len() - 1;
        let smooth: f64 = self.rows.iter().map(|(x, u, s)| -u * normal_cdf(s * w.dot(x)).ln()).sum();
        smooth + self.lambda * w.rows(0, k).iter().map(|v| v.abs()).sum::<f64>()
    }

    pub fn projected_gradient(&self, mut w: Vector, iters: usize) -> Vector {
        let k = w.len() - 1;
        let mut hess_bound = Matrix::zeros(k + 1, k + 1);
        for (x, u, _) in &self.rows {
            hess_bound += x * x.transpose() * *u;
        }
        let step = 0.1 / largest_eigenvalue(&hess_bound);
        let project = |w: &mut Vector, shrink: f64| {
            for v in w.rows_mut(0, k).iter_mut() {
                *v = (*v - shrink).max(0.0);
            }
        };
        project(&mut w, 0.0);
        for _ in 0..iters {
            let mut g = Vector::zeros(k + 1);
            for (x, u, s) in &self.rows {
                let z = s * w.dot(x);
                g -= x * (u * s * normal_pdf(z) / normal_cdf(z));
            }
            w -= g * step;
            project(&mut w, step * self.lambda);
        }
        w
    }
}
