//! `sin(πt/2)` and `(2/π) asin(r)` evaluated in double-double arithmetic and
//! rounded once, so that e.g. `t = 1/3` maps to exactly `0.5` and back.

use std::f64::consts::{FRAC_2_PI, FRAC_PI_2};

#[derive(Debug, Clone, Copy)]
struct Dd(f64, f64);

const HALF_PI: Dd = Dd(FRAC_PI_2, 6.123233995736766e-17);
const TWO_OVER_PI: Dd = Dd(FRAC_2_PI, -3.935735335036497e-17);

fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bb = s - a;
    Dd(s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd(s, b - (s - a))
}

impl Dd {
    fn from(x: f64) -> Self {
        Dd(x, 0.0)
    }

    fn add(self, o: Dd) -> Dd {
        let s = two_sum(self.0, o.0);
        let t = two_sum(self.1, o.1);
        let u = quick_two_sum(s.0, s.1 + t.0);
        quick_two_sum(u.0, u.1 + t.1)
    }

    fn neg(self) -> Dd {
        Dd(-self.0, -self.1)
    }

    fn mul(self, o: Dd) -> Dd {
        let p = self.0 * o.0;
        let e = self.0.mul_add(o.0, -p);
        quick_two_sum(p, e + self.0 * o.1 + self.1 * o.0)
    }

    fn div_f(self, b: f64) -> Dd {
        let q1 = self.0 / b;
        let p = q1 * b;
        let e = q1.mul_add(b, -p);
        let r = (self.0 - p - e + self.1) / b;
        quick_two_sum(q1, r)
    }

    fn value(self) -> f64 {
        self.0 + self.1
    }
}

/// Taylor sum `Σ (-1)^k x^(2k+start) / (2k+start)!` for `start` 0 (cos) or 1 (sin).
fn series(x: Dd, start: u32) -> Dd {
    let x2 = x.mul(x);
    let mut term = if start == 0 { Dd::from(1.0) } else { x };
    let mut sum = term;
    let mut k = start;
    while k < 40 {
        term = term.mul(x2).div_f(-(((k + 1) * (k + 2)) as f64));
        sum = sum.add(term);
        k += 2;
        if term.0.abs() < 1e-34 {
            break;
        }
    }
    sum
}

/// `sin(πt/2)` for `t ∈ [-1, 1]`.
pub(crate) fn sin_half_pi(t: f64) -> f64 {
    if t.is_nan() {
        return t;
    }
    let a = t.abs();
    let v = if a <= 0.5 {
        series(HALF_PI.mul(Dd::from(a)), 1)
    } else {
        series(HALF_PI.mul(Dd::from(1.0 - a)), 0)
    };
    v.value().copysign(t)
}

/// `(2/π) asin(r)` for `r ∈ [-1, 1]`.
pub(crate) fn asin_over_half_pi(r: f64) -> f64 {
    if r.is_nan() {
        return r;
    }
    let a = r.abs();
    if a >= 1.0 {
        return 1f64.copysign(r);
    }
    let v = if a <= 0.5 {
        let x0 = a.asin();
        let residual = Dd::from(a).add(series(Dd::from(x0), 1).neg());
        let x = Dd::from(x0).add(Dd::from(residual.value() / x0.cos()));
        x.mul(TWO_OVER_PI)
    } else {
        let y0 = a.acos();
        let residual = series(Dd::from(y0), 0).add(Dd::from(-a));
        let y = Dd::from(y0).add(Dd::from(residual.value() / y0.sin()));
        Dd::from(1.0).add(y.mul(TWO_OVER_PI).neg())
    };
    v.value().copysign(r)
}
