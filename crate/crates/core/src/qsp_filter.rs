//! Polynomial Heaviside filters in the Chebyshev basis.
//!
//! A filter is `p(x) = ½ ± ½·f_n(x)/ν` where `f_n` is the degree-`n`
//! Chebyshev truncation of `erf(k·x)` and `ν ≥ 1` renormalizes so that
//! `0 ≤ p ≤ 1` on `[-1, 1]`. Right-step filters pass `x > 0`, left-step
//! filters pass `x < 0`.
//!
//! Certificate: for `|x| ≥ w/2`,
//! `|p(x) − step(x)| ≤ ½·(erfc(k·w/2) + τ_n·(1 + [ν > 1]))` where `τ_n` is the
//! absolute tail sum of the discarded coefficients. The degree is the
//! smallest odd `n` meeting `ε_H` under this bound, minimized over a fixed
//! geometric grid of `k`; the result is then re-measured on a dense grid.

use num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erfc, erfc_inv};

use crate::error::{Error, Flag, Result};
use crate::real::{c, f, Real};
use crate::window_simulator::SpectralWindow;

/// Highest degree the synthesizer will attempt.
pub const MAX_DEGREE: usize = 400_000;

/// Dense verification grid size (per half-line).
pub const VERIFY_POINTS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    /// 1 for x < 0.
    LeftStep,
    /// 1 for x > 0.
    RightStep,
}

impl Orientation {
    fn sign(self) -> f64 {
        match self {
            Orientation::LeftStep => -1.0,
            Orientation::RightStep => 1.0,
        }
    }

    pub fn step(self, x: f64) -> f64 {
        match self {
            Orientation::LeftStep => (x < 0.0) as u8 as f64,
            Orientation::RightStep => (x > 0.0) as u8 as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterPolynomial<T: Real> {
    /// Coefficients of `p` itself in the Chebyshev basis `T_0..T_d`.
    pub cheb_coeffs: Vec<T>,
    pub degree: usize,
    pub transition_width: f64,
    pub eps_h: f64,
    pub orientation: Orientation,
    /// Steepness of the underlying error function.
    pub k: f64,
    /// Analytic error bound on the certified domain.
    pub certified_bound: f64,
    /// Error measured on the dense verification grid.
    pub measured_error: f64,
}

impl<T: Real> FilterPolynomial<T> {
    /// Clenshaw evaluation; valid for any real `x` but only meaningful on `[-1, 1]`.
    pub fn eval(&self, x: T) -> T {
        clenshaw(&self.cheb_coeffs, x)
    }

    pub fn cast<U: Real>(&self) -> FilterPolynomial<U> {
        FilterPolynomial {
            cheb_coeffs: self.cheb_coeffs.iter().map(|&a| c::<U>(f(a))).collect(),
            degree: self.degree,
            transition_width: self.transition_width,
            eps_h: self.eps_h,
            orientation: self.orientation,
            k: self.k,
            certified_bound: self.certified_bound,
            measured_error: self.measured_error,
        }
    }

    /// Same polynomial with the pass region mirrored (`p(x) → p(−x)`).
    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        for (j, a) in out.cheb_coeffs.iter_mut().enumerate() {
            if j % 2 == 1 {
                *a = -*a;
            }
        }
        out.orientation = match self.orientation {
            Orientation::LeftStep => Orientation::RightStep,
            Orientation::RightStep => Orientation::LeftStep,
        };
        out
    }
}

pub fn clenshaw<T: Real>(coeffs: &[T], x: T) -> T {
    let two_x = x + x;
    let mut b1 = T::zero();
    let mut b2 = T::zero();
    for &a in coeffs.iter().skip(1).rev() {
        let b0 = a + two_x * b1 - b2;
        b2 = b1;
        b1 = b0;
    }
    coeffs.first().copied().unwrap_or_else(T::zero) + x * b1 - b2
}

/// Chebyshev coefficients of `erf(k·x)` from a DCT on `m` Chebyshev nodes.
/// Even coefficients vanish by symmetry and are set to zero.
fn erf_coefficients(k: f64, m: usize) -> Vec<f64> {
    let two_m = 2 * m;
    let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); two_m];
    for i in 0..m {
        let th = std::f64::consts::PI * (i as f64 + 0.5) / m as f64;
        let v = erf(k * th.cos());
        buf[i] = Complex::new(v, 0.0);
        buf[two_m - 1 - i] = Complex::new(v, 0.0);
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(two_m).process(&mut buf);
    (0..m)
        .map(|j| {
            if j % 2 == 0 {
                return 0.0;
            }
            let ang = -std::f64::consts::PI * j as f64 / two_m as f64;
            let tw = Complex::new(ang.cos(), ang.sin());
            (tw * buf[j]).re / m as f64
        })
        .collect()
}

struct Candidate {
    k: f64,
    degree: usize,
    coeffs: Vec<f64>,
    tail: f64,
    bound: f64,
}

fn candidate(k: f64, delta: f64, eps_h: f64) -> Option<Candidate> {
    let tail_budget = 2.0 * eps_h - erfc(k * delta);
    if tail_budget <= 0.0 {
        return None;
    }
    let n_est = ((13.0 * k).ceil() as usize).max(64);
    let m = (4 * n_est).next_power_of_two().max(4096);
    if n_est > 4 * MAX_DEGREE {
        return None;
    }
    let a = erf_coefficients(k, m);
    // suffix sums of |a_j|
    let mut tail = vec![0.0; m + 1];
    for j in (0..m).rev() {
        tail[j] = tail[j + 1] + a[j].abs();
    }
    let norm_needed = |n: usize| erf(k) + tail[n + 1] > 1.0;
    let bound_at = |n: usize| {
        let t = tail[n + 1];
        0.5 * (erfc(k * delta) + if norm_needed(n) { 2.0 * t } else { t })
    };
    // bound is non-increasing in n: binary search over odd degrees
    let (mut lo, mut hi) = (0usize, (m - 1) | 1);
    if hi >= m {
        hi -= 2;
    }
    if bound_at(hi) > eps_h {
        return None;
    }
    while hi - lo > 2 {
        let mut mid = (lo + hi) / 2 | 1;
        if mid >= hi {
            mid = hi - 2;
        }
        if bound_at(mid) <= eps_h {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let degree = hi;
    if degree > MAX_DEGREE {
        return None;
    }
    Some(Candidate { k, degree, coeffs: a[..=degree].to_vec(), tail: tail[degree + 1], bound: bound_at(degree) })
}

/// Steepness grid: fixed geometric lattice `k = 1.015^i`, scanned over the
/// useful range `[1, 1.8]·k*` with `k*` the erf-tail threshold.
fn k_grid(delta: f64, eps_h: f64) -> Vec<f64> {
    let k_star = erfc_inv(2.0 * eps_h) / delta;
    let r: f64 = 1.015;
    let i0 = (k_star.ln() / r.ln()).floor() as i64;
    let i1 = ((1.8 * k_star).ln() / r.ln()).ceil() as i64;
    (i0..=i1).map(|i| r.powi(i as i32)).filter(|&k| k > k_star).collect()
}

/// Synthesize the minimal-degree filter for `transition_width` and `eps_h`.
pub fn synthesize_heaviside(transition_width: f64, eps_h: f64, orientation: Orientation) -> Result<FilterPolynomial<f64>> {
    if !(transition_width > 0.0 && transition_width < 1.0) {
        return Err(Error::domain(format!("transition width {transition_width} outside (0, 1)")));
    }
    if !(eps_h > 0.0 && eps_h < 0.5) {
        return Err(Error::domain(format!("eps_h {eps_h} outside (0, 0.5)")));
    }
    if transition_width * eps_h < 1e-9 {
        return Err(Error::Synthesis(format!(
            "width {transition_width} at precision {eps_h} is below the numerical floor"
        )));
    }
    let delta = transition_width / 2.0;
    let best = k_grid(delta, eps_h)
        .into_iter()
        .filter_map(|k| candidate(k, delta, eps_h))
        .min_by(|a, b| a.degree.cmp(&b.degree).then(a.k.partial_cmp(&b.k).unwrap()))
        .ok_or_else(|| Error::Synthesis(format!("no degree ≤ {MAX_DEGREE} certifies width {transition_width}")))?;

    let nu = if erf(best.k) + best.tail > 1.0 { erf(best.k) + best.tail } else { 1.0 };
    let s = orientation.sign();
    let mut coeffs: Vec<f64> = best.coeffs.iter().map(|a| 0.5 * s * a / nu).collect();
    coeffs[0] = 0.5;
    let mut filt = FilterPolynomial {
        degree: coeffs.len() - 1,
        cheb_coeffs: coeffs,
        transition_width,
        eps_h,
        orientation,
        k: best.k,
        certified_bound: best.bound,
        measured_error: 0.0,
    };
    let (err, lo, hi) = measure(&filt);
    filt.measured_error = err;
    if err > eps_h || lo < -1e-12 || hi > 1.0 + eps_h {
        return Err(Error::Synthesis(format!(
            "verification failed: error {err:e}, range [{lo}, {hi}]"
        )));
    }
    Ok(filt)
}

/// Dense-grid measurement: (sup error on the certified domain, min p, max p).
pub fn measure(p: &FilterPolynomial<f64>) -> (f64, f64, f64) {
    let delta = p.transition_width / 2.0;
    let n = VERIFY_POINTS;
    let mut pts: Vec<f64> = (0..=n).map(|i| delta + (1.0 - delta) * i as f64 / n as f64).collect();
    // refinement next to the band edge and the endpoint
    let h = (1.0 - delta).min(8.0 / p.degree.max(1) as f64);
    pts.extend((0..=n / 5).map(|i| delta + h * i as f64 / (n / 5) as f64));
    pts.extend((0..=n / 5).map(|i| 1.0 - h * i as f64 / (n / 5) as f64));
    let mut err: f64 = 0.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in &pts {
        for xx in [x, -x] {
            let v = p.eval(xx);
            err = err.max((v - p.orientation.step(xx)).abs());
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    // the band itself only needs the range check
    for i in 0..=n / 5 {
        let x = -delta + 2.0 * delta * i as f64 / (n / 5) as f64;
        let v = p.eval(x);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (err, lo, hi)
}

/// Affine degree law `d = slope·(λ′/Δ) + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub const DEGREE_FIT: DegreeFit = DegreeFit { slope: 4.7571, intercept: 321.2051, r_squared: 0.969733 };

impl DegreeFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// `⌈4.7571·x + 321.2051⌉`
pub fn fit_degree(lambda_prime_over_delta: f64) -> Result<u64> {
    if !(lambda_prime_over_delta > 0.0) || !lambda_prime_over_delta.is_finite() {
        return Err(Error::domain("λ′/Δ must be positive"));
    }
    Ok(DEGREE_FIT.eval(lambda_prime_over_delta).ceil() as u64)
}

/// Ordinary least-squares affine fit `(slope, intercept, R²)`.
pub fn fit_affine(xs: &[f64], ys: &[f64]) -> DegreeFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    DegreeFit { slope, intercept, r_squared: 1.0 - ss_res / ss_tot }
}

/// Result of a filter response evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Response<T: Real> {
    pub value: T,
    pub flags: Vec<Flag>,
}

/// Normalized filter argument for energy `e` against threshold `e_th`.
///
/// The walk operator of the shifted block encoding has eigenphases
/// `θ = arccos((E − E_th)/λ′)`; a Chebyshev-basis polynomial acts on
/// `cos θ`. `λ′` is the smallest normalization that keeps the spectral
/// support inside `[-1, 1]` for this threshold.
pub fn walk_argument<T: Real>(e: T, e_th: T, window: &SpectralWindow<T>) -> T {
    let lam = window.normalization(e_th);
    let y = (e - e_th) / lam;
    let theta = y.max(-T::one()).min(T::one()).acos();
    theta.cos()
}

/// `pL(m_L(E))·pR(m_R(E))`: left filter at `E_hi`, right filter at `E_lo`.
pub fn window_response<T: Real>(
    p_l: &FilterPolynomial<T>,
    p_r: &FilterPolynomial<T>,
    energy: T,
    window: &SpectralWindow<T>,
) -> Response<T> {
    let mut flags = Vec::new();
    if energy < window.e_min || energy > window.e_max {
        flags.push(Flag::new("outside_support", format!("energy {} outside [E_min, E_max]", f(energy))));
    }
    let half = window.delta / c::<T>(2.0);
    if (energy - window.e_hi).abs() < half || (energy - window.e_lo).abs() < half {
        flags.push(Flag::new("transition_band", format!("energy {} inside a transition band", f(energy))));
    }
    let xl = walk_argument(energy, window.e_hi, window);
    let xr = walk_argument(energy, window.e_lo, window);
    Response { value: p_l.eval(xl) * p_r.eval(xr), flags }
}

/// Filters for both window edges at the widths the window requires.
pub fn window_filters(window: &SpectralWindow<f64>, eps_h: f64) -> Result<(FilterPolynomial<f64>, FilterPolynomial<f64>)> {
    let wl = window.required_width(window.e_hi);
    let wr = window.required_width(window.e_lo);
    let p_l = synthesize_heaviside(wl.min(0.999), eps_h, Orientation::LeftStep)?;
    let p_r = synthesize_heaviside(wr.min(0.999), eps_h, Orientation::RightStep)?;
    Ok((p_l, p_r))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coarse_filter_is_certified() {
        let p = synthesize_heaviside(0.5, 0.1, Orientation::RightStep).unwrap();
        let (err, lo, hi) = measure(&p);
        assert!(err <= 0.1 && lo >= 0.0 && hi <= 1.1);
        assert!(p.degree % 2 == 1);
        assert!(p.cheb_coeffs[p.degree] != 0.0);
        // sanity band against the fit law at λ′/Δ = 2
        assert!((p.degree as f64) < 2.0 * DEGREE_FIT.eval(2.0));
    }

    #[test]
    fn midpoint_is_one_half() {
        for o in [Orientation::LeftStep, Orientation::RightStep] {
            let p = synthesize_heaviside(0.1, 0.01, o).unwrap();
            assert!((p.eval(0.0) - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn orientations_are_mirror_images() {
        let r = synthesize_heaviside(0.2, 0.05, Orientation::RightStep).unwrap();
        let l = synthesize_heaviside(0.2, 0.05, Orientation::LeftStep).unwrap();
        for i in 0..50 {
            let x = -1.0 + i as f64 / 25.0;
            assert!((r.eval(x) - l.eval(-x)).abs() < 1e-14);
        }
        assert_eq!(r.mirrored().cheb_coeffs, l.cheb_coeffs);
    }

    #[test]
    fn fit_degree_values() {
        assert_eq!(fit_degree(100.0).unwrap(), 797);
        assert_eq!(fit_degree(1000.0).unwrap(), 5079);
        assert_eq!(fit_degree(1e-9).unwrap(), 322);
        assert!(fit_degree(0.0).is_err());
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(synthesize_heaviside(0.0, 0.1, Orientation::LeftStep).is_err());
        assert!(synthesize_heaviside(0.5, 0.6, Orientation::LeftStep).is_err());
        assert!(matches!(synthesize_heaviside(1e-7, 0.001, Orientation::LeftStep), Err(Error::Synthesis(_))));
    }

    #[test]
    fn affine_fit_recovers_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x + 1.0).collect();
        let fit = fit_affine(&xs, &ys);
        assert!((fit.slope - 3.0).abs() < 1e-12 && (fit.intercept - 1.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_precision_evaluation_tracks_double() {
        let p = synthesize_heaviside(0.3, 0.05, Orientation::RightStep).unwrap();
        let q: FilterPolynomial<f32> = p.cast();
        for i in 0..=20 {
            let x = -1.0 + i as f64 / 10.0;
            assert!((q.eval(x as f32) as f64 - p.eval(x)).abs() < 1e-4);
        }
    }
}
