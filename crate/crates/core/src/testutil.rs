//! Independent quadrature used as a reference in unit tests.

use num_complex::Complex64;
use std::sync::OnceLock;

const ORDER: usize = 12;

fn rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = ORDER;
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for i in 0..n {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            nodes.push(x);
            weights.push(2.0 / ((1.0 - x * x) * dp * dp));
        }
        (nodes, weights)
    })
}

fn panel<F: Fn(f64) -> Complex64>(f: &F, a: f64, b: f64) -> Complex64 {
    let (nodes, weights) = rule();
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    nodes
        .iter()
        .zip(weights)
        .map(|(x, w)| f(mid + half * x) * (w * half))
        .sum()
}

fn adapt<F: Fn(f64) -> Complex64>(f: &F, a: f64, b: f64, whole: Complex64, depth: usize) -> Complex64 {
    let m = 0.5 * (a + b);
    let left = panel(f, a, m);
    let right = panel(f, m, b);
    let refined = left + right;
    if depth == 0 || (refined - whole).norm() <= 1e-15 * (1.0 + refined.norm()) {
        refined
    } else {
        adapt(f, a, m, left, depth - 1) + adapt(f, m, b, right, depth - 1)
    }
}

/// Adaptive Gauss-Legendre quadrature of a complex integrand on `[a, b]`.
pub fn integrate<F: Fn(f64) -> Complex64>(f: F, a: f64, b: f64) -> Complex64 {
    if b == a {
        return Complex64::new(0.0, 0.0);
    }
    adapt(&f, a, b, panel(&f, a, b), 40)
}

/// Integral of `f(t1, t2)` over `a < t2 < t1 < b`.
pub fn integrate_triangle<F: Fn(f64, f64) -> Complex64>(f: F, a: f64, b: f64) -> Complex64 {
    integrate(|t1| integrate(|t2| f(t1, t2), a, t1), a, b)
}

#[test]
fn quadrature_reference_values() {
    let v = integrate(|t| Complex64::new(t.exp(), 0.0), 0.0, 1.0);
    assert!((v.re - (1f64.exp() - 1.0)).abs() < 1e-15);
    let t = integrate_triangle(|x, y| Complex64::new(x * y, 0.0), 0.0, 1.0);
    assert!((t.re - 0.125).abs() < 1e-15);
}

/// 19-ion quartic chain at 3 MHz with its transverse modes for 355 nm Raman beams.
pub fn paper_chain() -> (crate::crystal::TrapSpec, crate::crystal::Crystal, crate::crystal::ModeData) {
    use crate::constants::TWO_PI;
    use crate::crystal::{solve_equilibrium, transverse_modes, AxialPotential, TrapSpec};
    let trap = TrapSpec::yb171(19, TWO_PI * 3e6, AxialPotential::Quartic { l0: 40e-6, gamma4: 4.3 });
    let crystal = solve_equilibrium(&trap, None).unwrap();
    let modes = transverse_modes(&trap, &crystal, 2.0 * TWO_PI / 355e-9).unwrap();
    (trap, crystal, modes)
}
