//! Closed-form time integrals of oscillating exponentials over one segment.
//!
//! Everything is expressed through divided differences of `exp` on the
//! imaginary axis, which stay finite and accurate through resonances.

use num_complex::Complex64;

const TAYLOR_RADIUS: f64 = 0.1;
const TAYLOR_TERMS: usize = 25;

/// `sin(x)/x` with the removable singularity filled in.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// First divided difference of `exp` at `i x` and `i y`.
pub fn dd1(x: f64, y: f64) -> Complex64 {
    Complex64::from_polar(sinc(0.5 * (x - y)), 0.5 * (x + y))
}

/// Second divided difference of `exp` at `i a`, `i b`, `i c`.
pub fn dd2(a: f64, b: f64, c: f64) -> Complex64 {
    let mut p = [a, b, c];
    p.sort_by(f64::total_cmp);
    let [lo, mid, hi] = p;
    let width = hi - lo;
    if width < TAYLOR_RADIUS {
        let centre = (lo + mid + hi) / 3.0;
        let w = [lo - centre, mid - centre, hi - centre];
        // complete homogeneous polynomials h_k(w), built one variable at a time
        let mut h = [0.0_f64; TAYLOR_TERMS];
        let mut power = 1.0;
        for slot in h.iter_mut() {
            *slot = power;
            power *= w[0];
        }
        for &wm in &w[1..] {
            for k in 1..TAYLOR_TERMS {
                h[k] += wm * h[k - 1];
            }
        }
        let mut sum = Complex64::new(0.0, 0.0);
        let mut ik = Complex64::new(1.0, 0.0);
        let mut factorial = 2.0;
        for (k, hk) in h.iter().enumerate() {
            sum += ik * (hk / factorial);
            ik *= Complex64::i();
            factorial *= (k + 3) as f64;
        }
        Complex64::from_polar(1.0, centre) * sum
    } else {
        (dd1(mid, hi) - dd1(lo, mid)) / Complex64::new(0.0, width)
    }
}

/// `int_{t0}^{t0+h} exp(i nu t) dt`.
pub fn exp_integral(nu: f64, t0: f64, h: f64) -> Complex64 {
    dd1(nu * t0, nu * (t0 + h)) * h
}

/// `int_{t0}^{t0+h} cos(mu t + phi) dt`.
pub fn cos_integral(mu: f64, phi: f64, t0: f64, h: f64) -> f64 {
    h * (mu * (t0 + 0.5 * h) + phi).cos() * sinc(0.5 * mu * h)
}

/// `int_{t0}^{t0+h} dt1 int_{t0}^{t1} dt2 exp(i nu1 t1 + i nu2 t2)`.
pub fn triangle_integral(nu1: f64, nu2: f64, t0: f64, h: f64) -> Complex64 {
    let base = (nu1 + nu2) * t0;
    dd2(base, base + nu1 * h, base + (nu1 + nu2) * h) * (h * h)
}

/// Coefficients of `sin(mu t + phi) = c+ e^{i mu t} + c- e^{-i mu t}`.
fn sine_components(phi: f64) -> [Complex64; 2] {
    let half = Complex64::new(0.0, -0.5);
    [
        Complex64::from_polar(1.0, phi) * half,
        -Complex64::from_polar(1.0, -phi) * half,
    ]
}

/// `int_{t0}^{t0+h} sin(mu t + phi) exp(i omega t) dt`.
pub fn sine_drive_integral(mu: f64, omega: f64, phi: f64, t0: f64, h: f64) -> Complex64 {
    let [plus, minus] = sine_components(phi);
    plus * exp_integral(omega + mu, t0, h) + minus * exp_integral(omega - mu, t0, h)
}

/// Time-ordered double integral over one segment of
/// `sin(mu t1 + phi_a) e^{i omega t1} sin(mu t2 + phi_b) e^{-i omega t2}`, `t2 < t1`.
pub fn sine_drive_triangle(
    mu: f64,
    omega: f64,
    phi_a: f64,
    phi_b: f64,
    t0: f64,
    h: f64,
) -> Complex64 {
    let ca = sine_components(phi_a);
    let cb = sine_components(phi_b);
    let signs = [1.0, -1.0];
    let mut total = Complex64::new(0.0, 0.0);
    for (c1, s1) in ca.iter().zip(signs) {
        for (c2, s2) in cb.iter().zip(signs) {
            total += c1 * c2 * triangle_integral(s1 * mu + omega, s2 * mu - omega, t0, h);
        }
    }
    total
}
