//! Golden-section minimisation on an interval.

#[allow(unused_imports)]
use num_traits::Float;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineMin {
    pub x: f64,
    pub fx: f64,
    pub evaluations: usize,
    /// The best point found is an end of the interval.
    pub at_boundary: bool,
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Minimise `f` over `[lo, hi]` until the bracket is shorter than `tol`.
/// NaN values count as `+inf`. The interval ends are evaluated too, so a
/// monotone function reports its boundary minimum.
pub fn golden_section<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> LineMin {
    assert!(lo < hi && tol > 0.0, "golden_section needs lo < hi and tol > 0");
    let mut eval = |x: f64| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (eval(c), eval(d));
    let mut evaluations = 2;
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = eval(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = eval(d);
        }
        evaluations += 1;
    }
    let (mut x, mut fx) = if fc <= fd { (c, fc) } else { (d, fd) };
    let mut at_boundary = false;
    for end in [lo, hi] {
        if (x - end).abs() <= 2.0 * tol {
            let fe = eval(end);
            evaluations += 1;
            if fe <= fx {
                x = end;
                fx = fe;
                at_boundary = true;
            }
        }
    }
    LineMin { x, fx, evaluations, at_boundary }
}
