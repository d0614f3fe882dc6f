//! Minimal double-double arithmetic, enough for phase reduction of large
//! exponential phases.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub fn new(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    /// Scale by a power of two.
    pub fn ldexp(self, k: i32) -> Dd {
        let f = 2f64.powi(k);
        Dd { hi: self.hi * f, lo: self.lo * f }
    }

    /// Fractional part `x − ⌊x⌋` in `[0, 1)`, as an ordinary float.
    pub fn frac(self) -> f64 {
        let n = self.hi.floor();
        // hi − n is exact for |hi| < 2^52.
        let r = (self.hi - n) + self.lo;
        r - r.floor()
    }

    pub fn exp(self) -> Dd {
        if self.hi == 0.0 {
            return Dd::ONE;
        }
        // Scale the argument below 2^-10, sum the Taylor series, then square back.
        let halvings = (self.hi.abs().log2().ceil() as i32 + 10).max(0);
        let r = self.ldexp(-halvings);
        let mut term = Dd::ONE;
        let mut acc = Dd::ONE;
        for n in 1..=20 {
            term = term * r / Dd::new(n as f64);
            acc = acc + term;
            if term.hi.abs() < 1e-34 * acc.hi.abs() {
                break;
            }
        }
        for _ in 0..halvings {
            acc = acc * acc;
        }
        acc
    }

    /// Natural log by one Newton step on `exp` from the float estimate.
    pub fn ln(self) -> Dd {
        let y0 = Dd::new(self.hi.ln());
        let y1 = y0 + self * (-y0).exp() - Dd::ONE;
        y1 + self * (-y1).exp() - Dd::ONE
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self + (-o)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + (self.hi * o.lo + self.lo * o.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self - o * Dd::new(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Dd::new(q2);
        let q3 = r.hi / o.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::new(q3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_beyond_double() {
        let third = Dd::ONE / Dd::new(3.0);
        let back = third * Dd::new(3.0) - Dd::ONE;
        assert!(back.to_f64().abs() < 1e-31);
        let tenth = Dd::ONE / Dd::new(10.0);
        assert!(((tenth * Dd::new(1e20)).frac()).abs() < 1e-12);
    }

    #[test]
    fn exp_and_ln_roundtrip() {
        for x in [1e-7, 0.015625, 0.5, 1.0, -2.25, 10.0] {
            let e = Dd::new(x).exp();
            assert!((e.to_f64() - x.exp()).abs() < 4e-16 * x.exp());
            let back = e.ln() - Dd::new(x);
            assert!(back.to_f64().abs() < 1e-27 * x.abs().max(1.0), "x={x}");
        }
        // e = 2.718281828459045 + 1.4456468917292502e-16
        let e = Dd::ONE.exp();
        assert_eq!(e.hi, std::f64::consts::E);
        assert!((e.lo - 1.4456468917292502e-16).abs() < 1e-27);
    }
}
