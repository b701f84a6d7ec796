//! Order-parameter equations for the tempered Hopfield picture: the finite-C
//! saddle point, the extensive-C (AGS) system with its decimated variant,
//! phase boundaries and the D_KL curves.

mod quadrature;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use quadrature::{gauss_hermite, gauss_legendre, Rule, SplitGaussian};

use crate::error::{invalid, Error, Result};
use crate::mixture::{h_max_for_v, XiTable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum XiLaw {
    /// xi uniform on {-1, +1}
    #[default]
    Binary,
    /// xi = tanh(H) / (2 sqrt v) with H ~ U[-h_max, h_max]
    TanhUniform { h_max: f64 },
}

impl XiLaw {
    /// Tanh-uniform law whose polarization variance is `v`.
    pub fn tanh_uniform_for(v: f64) -> Result<Self> {
        Ok(Self::TanhUniform { h_max: h_max_for_v(v)? })
    }
}

/// Which expression of the decimation D_KL to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DklForm {
    /// E[(bh - bh_ref) tanh bh + log cosh bh_ref - log cosh bh] with bh_ref = atanh(2 sqrt(v) xi)
    #[default]
    Expectation,
    /// Stein-reduced closed form of the expectation (agrees at a solved state).
    ClosedForm,
    /// Closed form with `atanh(2 xi v)`, `1 - 4 v xi^2`, no 1/2 and a 2 rho sqrt(v) field.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MFParams {
    pub beta: f64,
    pub eta: f64,
    pub v: f64,
    pub rho: f64,
    pub s: usize,
    pub h: Vec<f64>,
    pub xi_law: XiLaw,
    /// Gaussian-average nodes per piece around the tanh step
    pub order: usize,
    pub legendre_order: usize,
    /// observed-site field is `field_scale * rho * sqrt(v) * xi^1`
    pub field_scale: f64,
    pub damping: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for MFParams {
    fn default() -> Self {
        Self {
            beta: 1.0,
            eta: 0.04,
            v: 0.15,
            rho: 0.0,
            s: 1,
            h: vec![0.0],
            xi_law: XiLaw::Binary,
            order: 24,
            legendre_order: 20,
            field_scale: 1.0,
            damping: 0.3,
            tol: 1e-10,
            max_iters: 200_000,
        }
    }
}

impl MFParams {
    pub fn new(beta: f64, eta: f64, v: f64) -> Self {
        Self {
            beta,
            eta,
            v,
            ..Self::default()
        }
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn with_law(mut self, law: XiLaw) -> Self {
        self.xi_law = law;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(invalid(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(invalid(format!("eta must be non-negative, got {}", self.eta)));
        }
        if !(self.v > 0.0 && 4.0 * self.v < 1.0) {
            return Err(invalid(format!("need 0 < 4v < 1, got v = {}", self.v)));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(invalid(format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        if self.s == 0 || self.h.len() != self.s {
            return Err(invalid("need s >= 1 and one field entry per condensed component"));
        }
        if self.order < 20 || self.legendre_order < 2 {
            return Err(invalid("quadrature order must be at least 20"));
        }
        if let XiLaw::TanhUniform { h_max } = self.xi_law {
            if !(h_max > 0.0 && h_max.is_finite()) {
                return Err(invalid("h_max must be positive"));
            }
            if self.s > 3 {
                return Err(invalid("tanh-uniform law supports s <= 3"));
            }
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(invalid("damping must lie in [0, 1)"));
        }
        if !(self.field_scale >= 0.0 && self.field_scale.is_finite()) {
            return Err(invalid("field_scale must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MFState {
    pub mu: Vec<f64>,
    pub q: f64,
    pub r: f64,
    /// 2 sqrt(w) = tanh(beta sqrt(v))
    pub w: f64,
    pub converged: bool,
    pub residual: f64,
    pub iterations: usize,
}

impl MFState {
    pub fn init(mu: Vec<f64>, q: f64) -> Self {
        Self {
            mu,
            q,
            r: 0.0,
            w: 0.0,
            converged: false,
            residual: f64::INFINITY,
            iterations: 0,
        }
    }

    pub fn paramagnetic(s: usize) -> Self {
        Self::init(vec![0.0; s], 0.0)
    }

    pub fn spin_glass(s: usize) -> Self {
        Self::init(vec![0.0; s], 0.5)
    }

    /// Condensed on the first component.
    pub fn mattis(s: usize) -> Self {
        let mut mu = vec![0.0; s];
        mu[0] = 0.9;
        Self::init(mu, 0.9)
    }
}

struct Grid {
    z: SplitGaussian,
    xi: Vec<(Vec<f64>, f64)>,
}

impl Grid {
    fn new(p: &MFParams) -> Self {
        let one_d: Vec<(f64, f64)> = match p.xi_law {
            XiLaw::Binary => vec![(-1.0, 0.5), (1.0, 0.5)],
            XiLaw::TanhUniform { h_max } => {
                let gl = gauss_legendre(p.legendre_order);
                let scale = 2.0 * p.v.sqrt();
                gl.nodes
                    .iter()
                    .zip(&gl.weights)
                    .map(|(&x, &w)| ((h_max * x).tanh() / scale, 0.5 * w))
                    .collect()
            }
        };
        let mut xi: Vec<(Vec<f64>, f64)> = vec![(Vec::new(), 1.0)];
        for _ in 0..p.s {
            xi = xi
                .iter()
                .flat_map(|(v, w)| {
                    one_d.iter().map(move |&(x, wx)| {
                        let mut v = v.clone();
                        v.push(x);
                        (v, w * wx)
                    })
                })
                .collect();
        }
        Self {
            z: SplitGaussian::new(p.order),
            xi,
        }
    }

    /// Calls `f(xi, z, weight, beta * h)` over the joint grid.
    fn for_each<F: FnMut(&[f64], f64, f64, f64)>(&self, p: &MFParams, mu: &[f64], r: f64, mut f: F) {
        let keep = 1.0 - p.rho;
        let sigma = (keep * p.eta * r).max(0.0).sqrt();
        let ext = p.field_scale * p.rho * p.v.sqrt();
        for (xi, wx) in &self.xi {
            let mut a = ext * xi[0];
            for c in 0..p.s {
                a += xi[c] * (keep * mu[c] + p.h[c]);
            }
            if sigma == 0.0 {
                f(xi, 0.0, *wx, p.beta * a);
                continue;
            }
            self.z.for_each(-a / sigma, |z, wz| f(xi, z, wx * wz, p.beta * (a + sigma * z)));
        }
    }
}

fn r_of_q(p: &MFParams, q: f64) -> Result<f64> {
    let d = 1.0 - p.beta * (1.0 - p.rho) * (1.0 - q);
    if d.abs() < 1e-12 {
        return Err(Error::Diverged {
            iterations: 0,
            residual: f64::INFINITY,
        });
    }
    Ok(q / (d * d))
}

fn ags_map(p: &MFParams, grid: &Grid, mu: &[f64], q: f64) -> Result<(Vec<f64>, f64, f64)> {
    let r = r_of_q(p, q)?;
    let mut mu_new = vec![0.0; p.s];
    let mut q_new = 0.0;
    grid.for_each(p, mu, r, |xi, _, w, bh| {
        let t = bh.tanh();
        for c in 0..mu_new.len() {
            mu_new[c] += w * xi[c] * t;
        }
        q_new += w * t * t;
    });
    Ok((mu_new, q_new, r))
}

fn w_of(p: &MFParams) -> f64 {
    let t = (p.beta * p.v.sqrt()).tanh();
    0.25 * t * t
}

/// Largest violation of the three self-consistency equations at `state`.
pub fn ags_residual(params: &MFParams, state: &MFState) -> Result<f64> {
    params.validate()?;
    let grid = Grid::new(params);
    let (mu, q, r) = ags_map(params, &grid, &state.mu, state.q)?;
    let mut res = (q - state.q).abs().max((r - state.r).abs());
    for (a, b) in mu.iter().zip(&state.mu) {
        res = res.max((a - b).abs());
    }
    Ok(res)
}

/// Damped fixed-point iteration on `(mu, q)` with `r` slaved to `q`.
pub fn solve_ags(params: &MFParams, init: &MFState) -> Result<MFState> {
    params.validate()?;
    if init.mu.len() != params.s || !(0.0..=1.0).contains(&init.q) {
        return Err(invalid("init must have s overlaps and q in [0, 1]"));
    }
    let grid = Grid::new(params);
    let mut d = params.damping;
    let mut mu = init.mu.clone();
    let mut q = init.q;
    if (1.0 - params.beta * (1.0 - params.rho) * (1.0 - q)).abs() < 1e-6 {
        // starting on the r pole; move toward q = 1
        q += 0.5 * (1.0 - q);
    }
    let mut prev = f64::INFINITY;
    let mut streak = 0;
    for it in 1..=params.max_iters {
        let (mu_new, q_new, _) = ags_map(params, &grid, &mu, q).map_err(|_| Error::Diverged {
            iterations: it,
            residual: f64::INFINITY,
        })?;
        let mut change = (q_new - q).abs();
        for c in 0..params.s {
            change = change.max((mu_new[c] - mu[c]).abs());
        }
        if !change.is_finite() {
            return Err(Error::Diverged {
                iterations: it,
                residual: change,
            });
        }
        for c in 0..params.s {
            mu[c] = d * mu[c] + (1.0 - d) * mu_new[c];
        }
        q = d * q + (1.0 - d) * q_new;
        if change < params.tol {
            return finish(params, &grid, mu, q, true, it);
        }
        if change > prev && change > 1e-6 {
            // oscillation near the pole of r: damp harder
            d = (1.0 - 0.7 * (1.0 - d)).min(0.98);
            // slow escape from an unstable point is not divergence
            streak = if change > 1.05 * prev { streak + 1 } else { 0 };
            if streak >= 50 {
                return Err(Error::Diverged {
                    iterations: it,
                    residual: change,
                });
            }
        } else {
            streak = 0;
        }
        prev = change;
    }
    finish(params, &grid, mu, q, false, params.max_iters)
}

fn finish(p: &MFParams, grid: &Grid, mu: Vec<f64>, q: f64, converged: bool, iterations: usize) -> Result<MFState> {
    let r = r_of_q(p, q)?;
    let (mu_new, q_new, _) = ags_map(p, grid, &mu, q)?;
    let mut residual = (q_new - q).abs();
    for c in 0..p.s {
        residual = residual.max((mu_new[c] - mu[c]).abs());
    }
    Ok(MFState {
        mu,
        q,
        r,
        w: w_of(p),
        converged,
        residual,
        iterations,
    })
}

/// Runs the paramagnetic, spin-glass and Mattis starts and keeps the
/// distinct converged states.
pub fn solve_branches(params: &MFParams) -> Result<Vec<MFState>> {
    params.validate()?;
    let mut out: Vec<MFState> = Vec::new();
    let mut glass = MFState::spin_glass(params.s);
    let b = params.beta * (1.0 - params.rho);
    if b * (1.0 - glass.q) > 0.9 {
        // keep clear of the pole of r
        glass.q = 1.0 - 0.5 / b;
    }
    for init in [MFState::paramagnetic(params.s), glass, MFState::mattis(params.s)] {
        let st = match solve_ags(params, &init) {
            Ok(st) if st.converged => st,
            _ => continue,
        };
        let dup = out.iter().any(|o| {
            (o.q - st.q).abs() < 1e-6 && o.mu.iter().zip(&st.mu).all(|(a, b)| (a - b).abs() < 1e-6)
        });
        if !dup {
            out.push(st);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteCState {
    pub mu: Vec<f64>,
    pub converged: bool,
    pub residual: f64,
    pub iterations: usize,
}

/// One application of the finite-C saddle-point map.
pub fn finite_c_map(xi: &XiTable, beta: f64, v: f64, mu: &[f64]) -> Vec<f64> {
    let c = xi.xi.len();
    let n = xi.mean.len();
    let s = 2.0 * v.sqrt();
    let mut out = vec![0.0; c];
    let mut u = vec![0.0; c];
    for i in 0..n {
        let m = xi.mean[i];
        // field sign follows the coupling expansion (+2 sqrt(v) xi_mean)
        let mut field = s * m;
        for k in 0..c {
            u[k] = xi.xi[k][i] - m;
            field += beta * u[k] * mu[k];
        }
        let t = field.tanh();
        for k in 0..c {
            out[k] += u[k] * t;
        }
    }
    out.iter_mut().for_each(|x| *x /= n as f64);
    out
}

/// Damped iteration of the finite-C saddle point from `init`.
pub fn solve_finite_c(xi: &XiTable, beta: f64, v: f64, init: &[f64]) -> Result<FiniteCState> {
    let c = xi.xi.len();
    if c == 0 || init.len() != c {
        return Err(invalid("init must have one overlap per component"));
    }
    if !(beta > 0.0) || !(v > 0.0) {
        return Err(invalid("beta and v must be positive"));
    }
    let (mut damping, tol, max_iters) = (0.3, 1e-10, 200_000);
    let mut mu = init.to_vec();
    let mut prev = f64::INFINITY;
    let mut streak = 0;
    for it in 1..=max_iters {
        let new = finite_c_map(xi, beta, v, &mu);
        let change = new.iter().zip(&mu).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if !change.is_finite() {
            return Err(Error::Diverged {
                iterations: it,
                residual: change,
            });
        }
        for k in 0..c {
            mu[k] = damping * mu[k] + (1.0 - damping) * new[k];
        }
        if change < tol {
            let residual = residual_of(xi, beta, v, &mu);
            return Ok(FiniteCState {
                mu,
                converged: true,
                residual,
                iterations: it,
            });
        }
        if change > prev && change > 1e-6 {
            damping = (1.0 - 0.7 * (1.0 - damping)).min(0.98);
            streak = if change > 1.05 * prev { streak + 1 } else { 0 };
            if streak >= 50 {
                return Err(Error::Diverged {
                    iterations: it,
                    residual: change,
                });
            }
        } else {
            streak = 0;
        }
        prev = change;
    }
    let residual = residual_of(xi, beta, v, &mu);
    Ok(FiniteCState {
        mu,
        converged: false,
        residual,
        iterations: max_iters,
    })
}

fn residual_of(xi: &XiTable, beta: f64, v: f64, mu: &[f64]) -> f64 {
    finite_c_map(xi, beta, v, mu)
        .iter()
        .zip(mu)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub eta: f64,
    pub tg: f64,
    /// 1 + sqrt(eta)
    pub tg_linear: f64,
    /// None when no condensed branch was found
    pub tm: Option<f64>,
    pub tg_solves: usize,
    pub tm_solves: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PhaseDiagram {
    pub points: Vec<PhasePoint>,
}

impl PhaseDiagram {
    /// `eta,Tg,TM`; TM is empty when undefined.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["eta", "Tg", "TM"])?;
        for p in &self.points {
            let tm = p.tm.map(|t| t.to_string()).unwrap_or_default();
            w.write_record([p.eta.to_string(), p.tg.to_string(), tm])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn phase_params(eta: f64, temp: f64, law: XiLaw) -> MFParams {
    MFParams {
        beta: 1.0 / temp,
        eta,
        xi_law: law,
        damping: 0.0,
        tol: 1e-14,
        max_iters: 2_000_000,
        ..MFParams::default()
    }
}

/// Highest temperature where a small `q` grows at zero overlap.
pub fn spin_glass_onset(eta: f64, law: XiLaw) -> Result<(f64, usize)> {
    if !(eta > 0.0) {
        return Err(invalid("eta must be positive"));
    }
    // follow q from just above zero until it clearly grows or dies
    let glassy = |t: f64| -> Result<bool> {
        let p = phase_params(eta, t, law);
        p.validate()?;
        let grid = Grid::new(&p);
        let q0 = 1e-8;
        let mut q = q0;
        for _ in 0..2000 {
            q = ags_map(&p, &grid, &[0.0], q)?.1;
            if q > 100.0 * q0 {
                return Ok(true);
            }
            if q < 0.01 * q0 {
                return Ok(false);
            }
        }
        Ok(q > q0)
    };
    // below T = 1 the small-q branch of r is cut off by its pole
    let (mut lo, mut hi) = (1.0 + 0.01 * eta.sqrt(), 1.0 + 4.0 * eta.sqrt().max(0.5));
    if !glassy(lo)? || glassy(hi)? {
        return Err(Error::NoBracket { lo, hi });
    }
    let mut solves = 2;
    while hi - lo > 1e-7 {
        let mid = 0.5 * (lo + hi);
        solves += 1;
        if glassy(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi), solves))
}

/// Highest temperature where a condensed branch survives, followed from low
/// temperature by continuation and then bisected.
pub fn mattis_onset(eta: f64, law: XiLaw) -> Result<(Option<f64>, usize)> {
    let condensed = |st: &MFState| st.converged && st.mu[0].abs() > 1e-3;
    let solve = |t: f64, init: &MFState| {
        let mut p = phase_params(eta, t, law);
        p.tol = 1e-11;
        p.damping = 0.2;
        p.max_iters = 50_000;
        solve_ags(&p, init)
    };
    let mut t = 0.1;
    let mut state = solve(t, &MFState::init(vec![1.0], 1.0))?;
    let mut solves = 1;
    if !condensed(&state) {
        return Ok((None, solves));
    }
    let step = 0.02;
    let t_fail = loop {
        let next = t + step;
        solves += 1;
        match solve(next, &state) {
            Ok(st) if condensed(&st) => {
                t = next;
                state = st;
            }
            _ => break next,
        }
        if t > 10.0 {
            return Err(Error::NoBracket { lo: 0.1, hi: t });
        }
    };
    let (mut lo, mut hi) = (t, t_fail);
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        solves += 1;
        match solve(mid, &state) {
            Ok(st) if condensed(&st) => {
                lo = mid;
                state = st;
            }
            _ => hi = mid,
        }
    }
    Ok((Some(lo), solves))
}

/// Spin-glass and Mattis lines over an eta grid (binary patterns).
pub fn phase_boundaries(etas: &[f64]) -> Result<PhaseDiagram> {
    let points = crate::par::map_slice(etas, |&eta| -> Result<PhasePoint> {
        let (tg, tg_solves) = spin_glass_onset(eta, XiLaw::Binary)?;
        let (tm, tm_solves) = mattis_onset(eta, XiLaw::Binary)?;
        Ok(PhasePoint {
            eta,
            tg,
            tg_linear: 1.0 + eta.sqrt(),
            tm,
            tg_solves,
            tm_solves,
        })
    });
    Ok(PhaseDiagram {
        points: points.into_iter().collect::<Result<_>>()?,
    })
}

fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// KL between the fully-observed belief `(1 + tanh(beta sqrt v) xi)/2` and the
/// reference `(1 + 2 sqrt(v) xi)/2`, xi = +-1.
pub fn dkl_rho1(beta: f64, v: f64) -> f64 {
    let sw = 0.5 * (beta * v.sqrt()).tanh();
    let sv = v.sqrt();
    let term = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln() };
    term(0.5 + sw, 0.5 + sv) + term(0.5 - sw, 0.5 - sv)
}

/// Mean KL between hidden-site beliefs and the reference marginals, evaluated
/// at a state solved under the same (decimated) parameters.
pub fn mf_decimation_dkl(params: &MFParams, state: &MFState, form: DklForm) -> Result<f64> {
    params.validate()?;
    let grid = Grid::new(params);
    let sv = params.v.sqrt();
    let b = params.beta;
    let keep = 1.0 - params.rho;
    let mu = state.mu[0];
    match form {
        DklForm::Expectation => {
            let mut acc = 0.0;
            grid.for_each(params, &state.mu, state.r, |xi, _, w, bh| {
                let bref = (2.0 * sv * xi[0]).atanh();
                acc += w * ((bh - bref) * bh.tanh() + log_cosh(bref) - log_cosh(bh));
            });
            Ok(acc)
        }
        DklForm::ClosedForm | DklForm::Literal => {
            let literal = form == DklForm::Literal;
            let field = if literal { 2.0 } else { params.field_scale };
            let mut p = params.clone();
            p.field_scale = field;
            let mut acc = 0.0;
            grid.for_each(&p, &state.mu, state.r, |xi, _, w, bh| {
                let t = bh.tanh();
                // log(1 - tanh^2 x) = -2 log cosh x
                let log_ratio = -2.0 * log_cosh(bh) - (1.0 - 4.0 * params.v * xi[0] * xi[0]).ln();
                let (half, bref) = if literal {
                    (1.0, (2.0 * xi[0] * params.v).atanh())
                } else {
                    (0.5, (2.0 * sv * xi[0]).atanh())
                };
                acc += w * (half * log_ratio - bref * t);
            });
            let head = b * mu * (keep * mu + field * params.rho * sv)
                + b * b * state.r * params.eta * keep * (1.0 - state.q);
            Ok(head + acc)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MFCurvePoint {
    pub rho: f64,
    pub dkl: f64,
    pub state: MFState,
}

/// Condensed-branch D_KL over a rho grid. `base.rho` is ignored.
pub fn mf_dkl_curve(base: &MFParams, rho_grid: &[f64], form: DklForm) -> Result<Vec<MFCurvePoint>> {
    base.validate()?;
    rho_grid
        .iter()
        .map(|&rho| {
            let p = MFParams { rho, ..base.clone() };
            p.validate()?;
            let state = solve_ags(&p, &MFState::mattis(p.s))?;
            let dkl = mf_decimation_dkl(&p, &state, form)?;
            Ok(MFCurvePoint { rho, dkl, state })
        })
        .collect()
}

/// `rho,dkl_mf`
pub fn write_mf_curve_csv<W: Write>(curve: &[MFCurvePoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rho", "dkl_mf"])?;
    for p in curve {
        w.write_record([p.rho.to_string(), p.dkl.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneResult {
    pub beta: f64,
    pub alpha: f64,
    pub q: f64,
    pub r: f64,
    /// overlap, q and r equations
    pub residuals: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneConfig {
    pub field_scale: f64,
    pub order: usize,
    pub beta_max: f64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            field_scale: 1.0,
            order: 24,
            beta_max: 30.0,
        }
    }
}

struct Tune {
    v: f64,
    eta: f64,
    rho: f64,
    a: f64,
    z: SplitGaussian,
}

impl Tune {
    fn moments(&self, beta: f64, q: f64) -> Option<(f64, f64, f64)> {
        let d = 1.0 - beta * (1.0 - self.rho) * (1.0 - q);
        if d.abs() < 1e-12 {
            return None;
        }
        let r = q / (d * d);
        let sigma = ((1.0 - self.rho) * self.eta * r).sqrt();
        if sigma == 0.0 {
            let t = (beta * self.a).tanh();
            return Some((t, t * t, r));
        }
        let (mut m1, mut m2) = (0.0, 0.0);
        self.z.for_each(-self.a / sigma, |z, w| {
            let t = (beta * (sigma * z + self.a)).tanh();
            m1 += w * t;
            m2 += w * t * t;
        });
        Some((m1, m2, r))
    }

    /// Inner (q, r) solve at fixed beta.
    fn inner(&self, beta: f64) -> Option<(f64, f64, f64)> {
        let mut q: f64 = 0.9;
        for _ in 0..200_000 {
            let (_, q_new, _) = self.moments(beta, q)?;
            if !q_new.is_finite() {
                return None;
            }
            let change = (q_new - q).abs();
            q = 0.5 * q + 0.5 * q_new;
            if change < 1e-14 {
                let (m1, _, r) = self.moments(beta, q)?;
                return Some((m1 - 2.0 * self.v.sqrt(), q, r));
            }
        }
        None
    }
}

/// Inverse temperature at which the condensed overlap equals `2 sqrt v`
/// at observed fraction `rho` (binary patterns).
pub fn tune_alpha_of_rho(v: f64, eta: f64, rho: f64, config: &TuneConfig) -> Result<TuneResult> {
    if !(v > 0.0 && 4.0 * v < 1.0) || !(eta >= 0.0) || !(0.0..=1.0).contains(&rho) {
        return Err(invalid("need 0 < 4v < 1, eta >= 0 and rho in [0, 1]"));
    }
    let sv = v.sqrt();
    let t = Tune {
        v,
        eta,
        rho,
        a: (1.0 - rho) * 2.0 * sv + config.field_scale * rho * sv,
        z: SplitGaussian::new(config.order),
    };
    if !(t.a > 0.0) {
        return Err(Error::NoBracket {
            lo: 0.0,
            hi: config.beta_max,
        });
    }
    // scan for the first sign change, then bisect
    let n = 400;
    let ratio = (config.beta_max / 1e-3f64).powf(1.0 / n as f64);
    let mut prev: Option<(f64, f64)> = None;
    let mut bracket = None;
    let mut b = 1e-3;
    for _ in 0..=n {
        if let Some((f, _, _)) = t.inner(b) {
            if let Some((pb, pf)) = prev {
                if pf < 0.0 && f >= 0.0 {
                    bracket = Some((pb, b));
                    break;
                }
            }
            prev = Some((b, f));
        }
        b *= ratio;
    }
    let (mut lo, mut hi) = bracket.ok_or(Error::NoBracket {
        lo: 1e-3,
        hi: config.beta_max,
    })?;
    for _ in 0..200 {
        if hi - lo <= 1e-14 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        match t.inner(mid) {
            Some((f, _, _)) if f < 0.0 => lo = mid,
            Some(_) => hi = mid,
            None => return Err(Error::NoBracket { lo, hi }),
        }
    }
    let beta = 0.5 * (lo + hi);
    let (_, q, r) = t.inner(beta).ok_or(Error::NoBracket { lo, hi })?;
    let (m1, m2, r_check) = t.moments(beta, q).ok_or(Error::NoBracket { lo, hi })?;
    Ok(TuneResult {
        beta,
        alpha: beta * eta / (4.0 * v),
        q,
        r,
        residuals: [(m1 - 2.0 * sv).abs(), (m2 - q).abs(), (r_check - r).abs()],
    })
}
