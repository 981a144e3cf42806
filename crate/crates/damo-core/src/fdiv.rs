//! f-divergence generators and their Fenchel-conjugate machinery.
//!
//! A generator packages f, f', the convex conjugate f*, and (f*)' as plain
//! function pointers. The default `cubic` generator uses f(x) = (1/3)(x-1)^3
//! on x >= 1, extended by its convex minorant f = 0 on [0,1) so that ratios
//! below 1 are admissible; the conjugate is taken over the x >= 1 branch,
//! giving f*(y) = y + (2/3) max(y,0)^{3/2}. The pair satisfies Fenchel-Young
//! with equality at y = f'(x) exactly, for all x >= 1.
//!
//! `cubic-paper-literal` substitutes the commonly quoted closed form
//! f*(y) = (2/3) max(y-1,0)^{3/2} for the conjugate. That form is not the
//! conjugate of this f (it fails Fenchel-Young already at x=2, y=1); it is
//! kept selectable so the failure can be demonstrated rather than asserted
//! away.

use crate::error::{Error, Result};
use crate::occupancy::OccupancyMeasure;

#[derive(Debug, Clone, Copy)]
pub struct FGenerator {
    pub name: &'static str,
    /// f is +inf below this point; the shipped f functions return the
    /// convex-minorant extension (zero) on [0, domain_lo) instead so finite
    /// ratio tables can be scored.
    pub domain_lo: f64,
    pub f: fn(f64) -> f64,
    pub f_prime: fn(f64) -> f64,
    pub f_star: fn(f64) -> f64,
    pub f_star_prime: fn(f64) -> f64,
}

fn cubic_f(x: f64) -> f64 {
    if x >= 1.0 {
        (x - 1.0).powi(3) / 3.0
    } else {
        0.0
    }
}

fn cubic_f_prime(x: f64) -> f64 {
    if x >= 1.0 {
        (x - 1.0).powi(2)
    } else {
        0.0
    }
}

fn cubic_f_star(y: f64) -> f64 {
    y + 2.0 / 3.0 * y.max(0.0).powf(1.5)
}

fn cubic_f_star_prime(y: f64) -> f64 {
    1.0 + y.max(0.0).sqrt()
}

fn literal_f_star(y: f64) -> f64 {
    2.0 / 3.0 * (y - 1.0).max(0.0).powf(1.5)
}

fn literal_f_star_prime(y: f64) -> f64 {
    (y - 1.0).max(0.0).sqrt()
}

pub fn cubic_generator() -> FGenerator {
    FGenerator {
        name: "cubic",
        domain_lo: 1.0,
        f: cubic_f,
        f_prime: cubic_f_prime,
        f_star: cubic_f_star,
        f_star_prime: cubic_f_star_prime,
    }
}

/// Same f, but with the quoted-form conjugate that fails Fenchel-Young.
pub fn cubic_paper_literal_generator() -> FGenerator {
    FGenerator {
        name: "cubic-paper-literal",
        domain_lo: 1.0,
        f: cubic_f,
        f_prime: cubic_f_prime,
        f_star: literal_f_star,
        f_star_prime: literal_f_star_prime,
    }
}

pub fn generator_by_name(name: &str) -> Result<FGenerator> {
    match name {
        "cubic" => Ok(cubic_generator()),
        "cubic-paper-literal" => Ok(cubic_paper_literal_generator()),
        other => Err(Error::UnknownGenerator(other.to_string())),
    }
}

/// D_f(p || q) = E_q[f(p/q)] over matching supports.
pub fn f_divergence(p: &OccupancyMeasure, q: &OccupancyMeasure, gen: &FGenerator) -> Result<f64> {
    if p.rho.dim() != q.rho.dim() {
        return Err(Error::InvalidInput("f_divergence shapes differ".into()));
    }
    let (n_s, n_a, n_sp) = p.rho.dim();
    let mut acc = 0.0;
    for s in 0..n_s {
        for a in 0..n_a {
            for sp in 0..n_sp {
                let pv = p.rho[[s, a, sp]];
                let qv = q.rho[[s, a, sp]];
                if qv == 0.0 {
                    if pv > 0.0 {
                        return Err(Error::SupportViolation {
                            index: (s, a, sp),
                            p: pv,
                        });
                    }
                    continue;
                }
                acc += qv * (gen.f)(pv / qv);
            }
        }
    }
    Ok(acc)
}

/// Golden-section search for the maximum of a unimodal function on [lo, hi].
/// Returns (argmax, max). `iters` interval reductions, each by factor ~0.618.
pub fn golden_section_max(g: impl Fn(f64) -> f64, lo: f64, hi: f64, iters: usize) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut gc = g(c);
    let mut gd = g(d);
    for _ in 0..iters {
        if gc >= gd {
            b = d;
            d = c;
            gd = gc;
            c = b - INV_PHI * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + INV_PHI * (b - a);
            gd = g(d);
        }
    }
    let y = 0.5 * (a + b);
    (y, g(y))
}

/// MAX-form divergence: max over y(.) of E_p[y] - E_q[f*(y)].
///
/// The maximization decomposes per coordinate. Each cell is solved at the
/// closed-form stationary point y* = f'(p/q) and, independently, by
/// golden-section on [0, y_hi] with `inner_steps` reductions; the better of
/// the two candidates is kept. Restricting the search to y >= 0 is what makes
/// the problem well posed: the default conjugate is linear below zero, so
/// cells with p < q would otherwise be unbounded, while on y >= 0 the cell
/// objective is concave with its maximum at y*.
pub fn variational_f_divergence(
    p: &OccupancyMeasure,
    q: &OccupancyMeasure,
    gen: &FGenerator,
    inner_steps: usize,
) -> Result<f64> {
    if inner_steps == 0 {
        return Err(Error::InvalidInput("inner_steps must be >= 1".into()));
    }
    if p.rho.dim() != q.rho.dim() {
        return Err(Error::InvalidInput(
            "variational_f_divergence shapes differ".into(),
        ));
    }
    let mut max_ratio = 0.0_f64;
    for (pv, qv) in p.rho.iter().zip(q.rho.iter()) {
        if *qv > 0.0 {
            max_ratio = max_ratio.max(pv / qv);
        } else if *pv > 0.0 {
            return Err(Error::SupportViolation {
                index: (0, 0, 0),
                p: *pv,
            });
        }
    }
    // Wide enough to contain the stationary point of either shipped
    // conjugate: (r-1)^2 for the default, 1 + r^2 for the literal form.
    let y_hi = (max_ratio + 1.0).powi(2) + 2.0;

    let (n_s, n_a, n_sp) = p.rho.dim();
    let mut acc = 0.0;
    for s in 0..n_s {
        for a in 0..n_a {
            for sp in 0..n_sp {
                let pv = p.rho[[s, a, sp]];
                let qv = q.rho[[s, a, sp]];
                if qv == 0.0 {
                    if pv > 0.0 {
                        return Err(Error::SupportViolation {
                            index: (s, a, sp),
                            p: pv,
                        });
                    }
                    continue;
                }
                let cell = |y: f64| pv * y - qv * (gen.f_star)(y);
                let y_closed = (gen.f_prime)(pv / qv);
                let (_, v_golden) = golden_section_max(cell, 0.0, y_hi, inner_steps);
                acc += cell(y_closed).max(v_golden);
            }
        }
    }
    Ok(acc)
}

/// Largest Fenchel-Young violation x*y - f(x) - f*(y) over the grid
/// (positive means the inequality fails somewhere).
pub fn fenchel_young_violation(gen: &FGenerator, xs: &[f64], ys: &[f64]) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for &x in xs {
        for &y in ys {
            worst = worst.max(x * y - (gen.f)(x) - (gen.f_star)(y));
        }
    }
    worst
}

/// Largest |f(x) + f*(f'(x)) - x f'(x)| over xs: the Fenchel-Young equality
/// gap at the touching point.
pub fn fenchel_young_equality_gap(gen: &FGenerator, xs: &[f64]) -> f64 {
    xs.iter()
        .map(|&x| {
            let y = (gen.f_prime)(x);
            ((gen.f)(x) + (gen.f_star)(y) - x * y).abs()
        })
        .fold(0.0, f64::max)
}

/// Largest |f*'(f'(x)) - x| over xs (inverse-relation gap).
pub fn conjugate_inverse_gap(gen: &FGenerator, xs: &[f64]) -> f64 {
    xs.iter()
        .map(|&x| ((gen.f_star_prime)((gen.f_prime)(x)) - x).abs())
        .fold(0.0, f64::max)
}

/// Scan [lo, hi] on n points for f(x) < x log x; returns the (first, last)
/// violating grid points, or None when dominance holds everywhere scanned.
pub fn dominance_violation_interval(
    gen: &FGenerator,
    lo: f64,
    hi: f64,
    n: usize,
) -> Option<(f64, f64)> {
    let mut first = None;
    let mut last = None;
    for i in 0..n {
        let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
        if x <= 0.0 {
            continue;
        }
        if (gen.f)(x) < x * x.ln() - 1e-12 {
            if first.is_none() {
                first = Some(x);
            }
            last = Some(x);
        }
    }
    first.zip(last)
}

/// Most negative finite-difference second derivative of f over the grid;
/// values >= -1e-8 certify convexity at grid resolution.
pub fn convexity_margin(gen: &FGenerator, xs: &[f64], h: f64) -> f64 {
    xs.iter()
        .map(|&x| ((gen.f)(x + h) - 2.0 * (gen.f)(x) + (gen.f)(x - h)) / (h * h))
        .fold(f64::INFINITY, f64::min)
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::occupancy::Provenance;
    use ndarray::Array3;

    fn occ(v: &[f64]) -> OccupancyMeasure {
        OccupancyMeasure {
            rho: Array3::from_shape_vec((1, 1, v.len()), v.to_vec()).unwrap(),
            provenance: Provenance::ExactLinearSolve,
        }
    }

    #[test]
    fn cubic_pointwise_values() {
        let g = cubic_generator();
        assert_eq!((g.f)(1.0), 0.0);
        assert!(((g.f)(2.0) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!((g.f)(0.5), 0.0);
        assert_eq!((g.f_prime)(3.0), 4.0);
        assert_eq!((g.f_prime)(0.5), 0.0);
        assert!(((g.f_star)(1.0) - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!((g.f_star)(0.0), 0.0);
        assert_eq!((g.f_star)(-2.0), -2.0);
        assert_eq!((g.f_star_prime)(4.0), 3.0);
    }

    #[test]
    fn conjugate_at_one_matches_brute_force_sup() {
        // f*(1) = sup_{x>=1} x - f(x), scanned densely over [1, 100].
        let g = cubic_generator();
        let mut best = f64::NEG_INFINITY;
        let mut x = 1.0;
        while x <= 100.0 {
            best = best.max(x - (g.f)(x));
            x += 1e-4;
        }
        assert!((best - 5.0 / 3.0).abs() < 1e-6);
        assert!(((g.f_star)(1.0) - 5.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn fenchel_young_holds_for_cubic_and_fails_for_literal() {
        let xs = linspace(1.0, 50.0, 100);
        let ys = linspace(-5.0, 50.0, 100);
        let cubic = cubic_generator();
        assert!(fenchel_young_violation(&cubic, &xs, &ys) <= 1e-10);
        assert!(fenchel_young_equality_gap(&cubic, &xs) < 1e-8);
        let literal = cubic_paper_literal_generator();
        // x=2, y=1: x*y - f(2) - f*(1) = 2 - 1/3 - 0 = 5/3 > 0.
        assert!(fenchel_young_violation(&literal, &xs, &ys) > 1.0);
    }

    #[test]
    fn conjugate_derivative_inverts_f_prime() {
        let g = cubic_generator();
        let xs = linspace(1.0, 50.0, 200);
        assert!(conjugate_inverse_gap(&g, &xs) < 1e-8);
    }

    #[test]
    fn divergence_zero_at_equality_and_hand_example() {
        let g = cubic_generator();
        let p = occ(&[0.5, 0.5]);
        assert_eq!(f_divergence(&p, &p, &g).unwrap(), 0.0);
        // p=(1,0), q=(.5,.5): 0.5*f(2) + 0.5*f(0) = 1/6.
        let q = occ(&[0.5, 0.5]);
        let p2 = occ(&[1.0, 0.0]);
        assert!((f_divergence(&p2, &q, &g).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert!(matches!(
            f_divergence(&q, &p2, &g),
            Err(Error::SupportViolation { .. })
        ));
    }

    #[test]
    fn variational_matches_direct_sum() {
        let g = cubic_generator();
        let q = occ(&[0.5, 0.5]);
        let p = occ(&[1.0, 0.0]);
        let direct = f_divergence(&p, &q, &g).unwrap();
        let varf = variational_f_divergence(&p, &q, &g, 64).unwrap();
        assert!((varf - direct).abs() < 1e-8);
        assert!((varf - 1.0 / 6.0).abs() < 1e-8);

        // 10-atom pair with a spread of ratios on both sides of 1.
        let pv = [0.30, 0.02, 0.01, 0.05, 0.10, 0.12, 0.08, 0.02, 0.25, 0.05];
        let qv = [0.10, 0.10, 0.05, 0.05, 0.10, 0.20, 0.10, 0.10, 0.10, 0.10];
        let p10 = occ(&pv);
        let q10 = occ(&qv);
        let direct = f_divergence(&p10, &q10, &g).unwrap();
        let varf = variational_f_divergence(&p10, &q10, &g, 64).unwrap();
        assert!(direct > 0.0);
        assert!((varf - direct).abs() < 1e-4);
        assert!((varf - direct).abs() < 1e-8);
    }

    #[test]
    fn variational_zero_at_equality_with_stationary_point_zero() {
        let g = cubic_generator();
        let p = occ(&[0.3, 0.7]);
        let v = variational_f_divergence(&p, &p, &g, 32).unwrap();
        assert!(v.abs() < 1e-9);
        assert_eq!((g.f_prime)(1.0), 0.0);
    }

    #[test]
    fn golden_section_recovers_closed_form_stationary_point() {
        // Cell p=0.4, q=0.2 (ratio 2): argmax of p*y - q*f*(y) is f'(2)=1.
        let g = cubic_generator();
        let cell = |y: f64| 0.4 * y - 0.2 * (g.f_star)(y);
        let (y_hat, _) = golden_section_max(cell, 0.0, 11.0, 80);
        assert!((y_hat - 1.0).abs() < 1e-6);
    }

    #[test]
    fn dominance_over_x_log_x_fails_only_on_a_bounded_interval() {
        let g = cubic_generator();
        let interval = dominance_violation_interval(&g, 0.01, 50.0, 20_000).unwrap();
        // Bisection oracle for the upper root of f(x) = x ln x on [3, 3.5].
        let gap = |x: f64| (g.f)(x) - x * x.ln();
        let (mut lo, mut hi) = (3.0, 3.5);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if gap(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let root = 0.5 * (lo + hi);
        assert!(interval.0 > 1.0 && interval.0 < 1.01);
        assert!((interval.1 - root).abs() < 0.01);
        assert!(gap(2.0) < 0.0);
        assert!(gap(0.5) >= 0.0);
        assert!(gap(4.0) > 0.0);
    }

    #[test]
    fn divergence_dominates_kl_when_ratios_avoid_violation_region() {
        use crate::occupancy::kl_divergence;
        let g = cubic_generator();
        // Ratios 3.5 and 1/6: both outside the (1, ~3.26) violation zone.
        let q = occ(&[0.25, 0.25, 0.25, 0.25]);
        let p = occ(&[0.875, 1.0 / 24.0, 1.0 / 24.0, 1.0 / 24.0]);
        let df = f_divergence(&p, &q, &g).unwrap();
        let kl = kl_divergence(&p, &q).unwrap();
        assert!(df >= kl);
    }

    #[test]
    fn convexity_margin_nonnegative_on_grid() {
        let g = cubic_generator();
        let xs = linspace(1.02, 50.0, 500);
        assert!(convexity_margin(&g, &xs, 1e-4) >= -1e-8);
    }

    #[test]
    fn generators_resolve_by_name() {
        assert_eq!(generator_by_name("cubic").unwrap().name, "cubic");
        assert_eq!(
            generator_by_name("cubic-paper-literal").unwrap().name,
            "cubic-paper-literal"
        );
        assert!(matches!(
            generator_by_name("chi2"),
            Err(Error::UnknownGenerator(_))
        ));
    }
}
