//! Scalar quantities of the unit-noise AWGN channel `Y = X + Z`, `Z ~ N(0, 1)`.
//!
//! All information quantities are in nats. Information densities are taken
//! against the i.i.d. `N(0, 1 + P)` output law; the gap to the true output
//! law of spherical codewords is bounded by `ln J(P)` per spherical segment.

use std::f64::consts::{PI, SQRT_2};
use std::sync::OnceLock;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of Gauss–Hermite nodes used for polynomial moments.
pub const HERMITE_NODES: usize = 64;

fn check_snr(function: &'static str, snr: f64) -> Result<()> {
    if snr.is_finite() && snr > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(function, format!("SNR must be positive and finite, got {snr}")))
    }
}

/// Channel constants derived from the SNR `P`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub snr: f64,
    /// `C(P) = ½ ln(1 + P)`.
    pub capacity: f64,
    /// `V(P) = P(P + 2) / (2(1 + P)²)`.
    pub dispersion: f64,
    /// `J(P)`, the uniform bound on the spherical-to-Gaussian output density ratio.
    pub j_constant: f64,
}

impl ChannelParams {
    pub fn new(snr: f64) -> Result<Self> {
        check_snr("ChannelParams::new", snr)?;
        Ok(Self {
            snr,
            capacity: capacity(snr)?,
            dispersion: dispersion(snr)?,
            j_constant: j_constant(snr)?,
        })
    }

    pub fn ln_j(&self) -> f64 {
        self.j_constant.ln()
    }

    /// The ε-capacity `C(P) / (1 − ε)`.
    pub fn eps_capacity(&self, eps: f64) -> f64 {
        self.capacity / (1.0 - eps)
    }

    /// Coefficients `(c, d)` of `A = C + c(1 − Z² + dZ)`.
    pub fn a_coefficients(&self) -> (f64, f64) {
        (self.snr / (2.0 * (1.0 + self.snr)), 2.0 / self.snr.sqrt())
    }
}

/// Mean, variance and third central moment of the per-symbol term `A₁`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSet {
    pub mean: f64,
    pub variance: f64,
    pub mu3: f64,
}

impl MomentSet {
    pub fn sigma(&self) -> f64 {
        self.variance.sqrt()
    }

    /// Moments of `−A₁`: the lower tail of a sum is the upper tail of its negation.
    pub fn reflected(&self) -> Self {
        Self {
            mean: -self.mean,
            variance: self.variance,
            mu3: -self.mu3,
        }
    }
}

pub fn capacity(snr: f64) -> Result<f64> {
    check_snr("capacity", snr)?;
    Ok(0.5 * snr.ln_1p())
}

pub fn dispersion(snr: f64) -> Result<f64> {
    check_snr("dispersion", snr)?;
    let q = 1.0 + snr;
    Ok(snr * (snr + 2.0) / (2.0 * q * q))
}

/// `J(P) = 27·sqrt(π/8)·(1 + P)/sqrt(1 + 2P)`.
pub fn j_constant(snr: f64) -> Result<f64> {
    check_snr("j_constant", snr)?;
    Ok(27.0 * (PI / 8.0).sqrt() * (1.0 + snr) / (1.0 + 2.0 * snr).sqrt())
}

/// The `k`-fold nested natural logarithm `ln(ln(…ln(x)))`.
///
/// Defined only while every intermediate argument is positive.
pub fn nested_log(k: u32, x: f64) -> Result<f64> {
    nested_log_with_derivative(k, x).map(|(v, _)| v)
}

/// `ln_(k)(x)` together with its derivative in `x`.
///
/// The derivative is `Π_{i<k} 1/ln_(i)(x)` with `ln_(0)(x) = x`.
pub fn nested_log_with_derivative(k: u32, x: f64) -> Result<(f64, f64)> {
    if k == 0 {
        return Err(Error::domain("nested_log", "depth k must be at least 1"));
    }
    let mut value = x;
    let mut derivative = 1.0;
    for depth in 0..k {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::domain(
                "nested_log",
                format!("ln_({depth})({x}) = {value} is not positive, ln_({k}) undefined"),
            ));
        }
        derivative /= value;
        value = value.ln();
    }
    Ok((value, derivative))
}

/// Smallest `x` with `ln_(k)(x) ≥ 0`: `1, e, e^e, e^(e^e), …`.
pub fn nested_log_floor(k: u32) -> f64 {
    (1..k).fold(1.0_f64, |acc, _| acc.exp())
}

/// Binary entropy in nats. Endpoints return 0; arguments outside `[0, 1]` give NaN.
pub fn binary_entropy(eps: f64) -> f64 {
    if !(0.0..=1.0).contains(&eps) {
        return f64::NAN;
    }
    if eps == 0.0 || eps == 1.0 {
        return 0.0;
    }
    -eps * eps.ln() - (1.0 - eps) * (-eps).ln_1p()
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Complementary Gaussian distribution function `Q(x) = P[N(0,1) > x]`.
pub fn q_function(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(x / SQRT_2)
}

/// Functional inverse of [`q_function`].
pub fn q_inverse(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain("q_inverse", format!("probability must lie in (0, 1), got {p}")));
    }
    // Q^{-1}(p) = Φ^{-1}(1 − p) = −Φ^{-1}(p).
    let mut x = -acklam_inverse_cdf(p);
    for _ in 0..50 {
        let density = normal_pdf(x);
        if density == 0.0 {
            break;
        }
        let step = (q_function(x) - p) / density;
        x += step;
        if step.abs() <= 1e-15 * (1.0 + x.abs()) {
            break;
        }
    }
    Ok(x)
}

/// Rational approximation of the standard normal quantile (relative error ~1e-9).
fn acklam_inverse_cdf(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549671464517777e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p > 1.0 - P_LOW {
        -tail((-2.0 * (-p).ln_1p()).sqrt())
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Per-symbol information density against the `N(0, 1 + P)` output law:
/// `ln N(y; x, 1) − ln N(y; 0, 1 + P)`.
pub fn info_density_increment(x: f64, y: f64, snr: f64) -> f64 {
    let e = y - x;
    0.5 * snr.ln_1p() - 0.5 * e * e + y * y / (2.0 * (1.0 + snr))
}

/// Nodes and weights of the `n`-point Gauss–Hermite rule for the standard
/// normal weight, so that `Σ wᵢ f(xᵢ) ≈ E[f(Z)]`. Golub–Welsch construction.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

fn hermite64() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_hermite(HERMITE_NODES))
}

/// `E[f(Z)]` for `Z ~ N(0, 1)` by 64-point Gauss–Hermite quadrature.
pub fn normal_expectation(f: impl Fn(f64) -> f64) -> f64 {
    let (nodes, weights) = hermite64();
    nodes.iter().zip(weights).map(|(&x, &w)| w * f(x)).sum()
}

/// Moments of `A₁ = C(P) + P/(2(1+P))·(1 − Z² + (2/√P) Z)`.
///
/// Mean and variance are the closed forms `C(P)` and `V(P)`; the third
/// central moment integrates the degree-6 polynomial exactly by quadrature.
pub fn a_moments(snr: f64) -> Result<MomentSet> {
    let params = ChannelParams::new(snr)?;
    let (c, d) = params.a_coefficients();
    let mu3 = normal_expectation(|z| (c * (1.0 - z * z + d * z)).powi(3));
    Ok(MomentSet {
        mean: params.capacity,
        variance: params.dispersion,
        mu3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::LN_2;

    #[test]
    fn capacity_examples() {
        assert_abs_diff_eq!(capacity(1.0).unwrap(), 0.5 * LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(capacity(3.0).unwrap(), LN_2, epsilon = 1e-15);
        assert!(capacity(1e-300).unwrap() < 1e-299);
        assert!(capacity(0.0).is_err());
        assert!(capacity(-1.0).is_err());
    }

    #[test]
    fn dispersion_examples() {
        assert_abs_diff_eq!(dispersion(1.0).unwrap(), 0.375, epsilon = 1e-15);
        assert!(dispersion(1e-12).unwrap() < 1e-11);
        assert_abs_diff_eq!(dispersion(1e9).unwrap(), 0.5, epsilon = 1e-9);
        assert!(dispersion(0.0).is_err());
    }

    #[test]
    fn nested_log_examples() {
        assert_abs_diff_eq!(nested_log(1, std::f64::consts::E).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(nested_log(3, 1000.0).unwrap(), 0.6593, epsilon = 5e-4);
        assert!(nested_log(2, 1.0).is_err());
        assert!(nested_log(1, 0.0).is_err());
        assert!(nested_log(0, 10.0).is_err());
        // ln ln ln(e^e) = ln 1 = 0 is the edge of the next depth's domain.
        assert_abs_diff_eq!(nested_log(3, nested_log_floor(3)).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn nested_log_derivative_matches_finite_difference() {
        for k in 1..=3 {
            let x = 5000.0;
            let (_, d) = nested_log_with_derivative(k, x).unwrap();
            let h = 1e-3;
            let fd = (nested_log(k, x + h).unwrap() - nested_log(k, x - h).unwrap()) / (2.0 * h);
            assert_abs_diff_eq!(d, fd, epsilon = 1e-10);
        }
    }

    #[test]
    fn j_constant_examples() {
        let base = 27.0 * (PI / 8.0).sqrt();
        assert_abs_diff_eq!(j_constant(1.0).unwrap(), 19.537, epsilon = 1e-3);
        assert_abs_diff_eq!(j_constant(1e-12).unwrap(), base, epsilon = 1e-9);
        assert_abs_diff_eq!(base, 16.920, epsilon = 1e-3);
        assert_abs_diff_eq!(j_constant(4.0).unwrap(), 28.200, epsilon = 1e-3);
        assert!(ChannelParams::new(1.0).unwrap().j_constant > 1.0);
    }

    #[test]
    fn binary_entropy_examples() {
        assert_abs_diff_eq!(binary_entropy(0.5), LN_2, epsilon = 1e-15);
        assert_eq!(binary_entropy(0.0), 0.0);
        assert_eq!(binary_entropy(1.0), 0.0);
        // series oracle −ε ln ε + ε − ε²/2 for small ε
        let e: f64 = 0.001;
        let series = -e * e.ln() + e - e * e / 2.0;
        assert_abs_diff_eq!(binary_entropy(e), series, epsilon = 1e-9);
        assert_abs_diff_eq!(binary_entropy(e), 0.0079075, epsilon = 1e-6);
        assert!(binary_entropy(1.5).is_nan());
    }

    #[test]
    fn q_inverse_examples() {
        assert_abs_diff_eq!(q_inverse(0.5).unwrap(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(q_inverse(1e-3).unwrap(), 3.0902, epsilon = 1e-4);
        assert!(q_inverse(0.0).is_err());
        assert!(q_inverse(1.0).is_err());
        assert!(q_inverse(f64::NAN).is_err());
        // deep tail: still inverts to the forward function
        let x = q_inverse(1e-20).unwrap();
        assert!((q_function(x) / 1e-20 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn info_density_increment_examples() {
        let s = 1.0_f64.sqrt();
        assert_abs_diff_eq!(info_density_increment(s, s, 1.0), 0.5 * LN_2 + 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(info_density_increment(0.0, 0.0, 1.0), 0.346574, epsilon = 1e-6);
        assert_abs_diff_eq!(info_density_increment(1.0, -1.0, 1.0), -1.403426, epsilon = 1e-6);
    }

    #[test]
    fn a_moments_match_closed_forms() {
        let m = a_moments(1.0).unwrap();
        assert_abs_diff_eq!(m.mean, 0.346574, epsilon = 1e-6);
        assert_abs_diff_eq!(m.variance, 0.375, epsilon = 1e-15);
        assert!(a_moments(0.0).is_err());
        for snr in [0.01, 0.5, 1.0, 4.0, 100.0] {
            let p = ChannelParams::new(snr).unwrap();
            let (c, d) = p.a_coefficients();
            let m = a_moments(snr).unwrap();
            // symbolic expansion with E[Z²]=1, E[Z⁴]=3, E[Z⁶]=15:
            // E[(1 − Z² + dZ)³] = (1 − 3 + 9 − 15) + 3d²(1 − 3) = −8 − 6d²
            let symbolic = c.powi(3) * (-8.0 - 6.0 * d * d);
            assert_abs_diff_eq!(m.mu3, symbolic, epsilon = 1e-12 * (1.0 + symbolic.abs()));
            // quadrature of the mean and variance agrees with the closed forms
            let mean = normal_expectation(|z| p.capacity + c * (1.0 - z * z + d * z));
            let var = normal_expectation(|z| (c * (1.0 - z * z + d * z)).powi(2));
            assert_abs_diff_eq!(mean, p.capacity, epsilon = 1e-12);
            assert_abs_diff_eq!(var, p.dispersion, epsilon = 1e-12);
        }
    }

    #[test]
    fn gauss_hermite_integrates_even_moments() {
        let (x, w) = gauss_hermite(HERMITE_NODES);
        let moment = |k: i32| x.iter().zip(&w).map(|(x, w)| w * x.powi(k)).sum::<f64>();
        assert_abs_diff_eq!(moment(0), 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(moment(2), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(moment(4), 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(moment(6), 15.0, epsilon = 1e-11);
        assert_abs_diff_eq!(moment(3), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn dispersion_bounded_and_capacity_increasing_on_grid() {
        let grid: Vec<f64> = (0..=80).map(|i| 10f64.powf(-2.0 + 4.0 * i as f64 / 80.0)).collect();
        for w in grid.windows(2) {
            let v = dispersion(w[0]).unwrap();
            assert!(v > 0.0 && v < 0.5);
            assert!(capacity(w[1]).unwrap() > capacity(w[0]).unwrap());
        }
    }
}
