//! Double-double arithmetic: an unevaluated sum `hi + lo` with
//! `|lo| ≤ ulp(hi)/2`, giving roughly 106 bits of significand.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

const LN2: Dd = Dd { hi: std::f64::consts::LN_2, lo: 2.319_046_813_846_299_6e-17 };

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    #[inline]
    pub fn new(x: f64) -> Self {
        Self { hi: x, lo: 0.0 }
    }

    /// Exact difference of two doubles.
    #[inline]
    pub fn diff(a: f64, b: f64) -> Self {
        let (hi, lo) = two_sum(a, -b);
        Self { hi, lo }
    }

    /// Exact product of two doubles.
    #[inline]
    pub fn prod(a: f64, b: f64) -> Self {
        let (hi, lo) = two_prod(a, b);
        Self { hi, lo }
    }

    #[inline]
    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    #[inline]
    pub fn scale(self, s: f64) -> Self {
        let (p, e) = two_prod(self.hi, s);
        let (hi, lo) = quick_two_sum(p, e + self.lo * s);
        Self { hi, lo }
    }

    #[inline]
    pub fn square(self) -> Self {
        self * self
    }

    pub fn sqrt(self) -> Self {
        if self.hi <= 0.0 {
            return Self::ZERO;
        }
        let y = self.hi.sqrt();
        let r = self - Dd::prod(y, y);
        let (hi, lo) = quick_two_sum(y, r.hi / (2.0 * y));
        Self { hi, lo }
    }

    pub fn recip(self) -> Self {
        Dd::ONE / self
    }

    /// `e^x`, accurate to a few units in the last double-double place for
    /// arguments that do not underflow.
    pub fn exp(self) -> Self {
        if self.hi < -745.0 {
            return Self::ZERO;
        }
        if self.hi == 0.0 {
            return Self::ONE;
        }
        let k = (self.hi / LN2.hi).round();
        let r = self - LN2.scale(k);
        // e^r = (e^{r/512})^512, squared as e^{2a} − 1 = 2m + m² with
        // m = e^a − 1 so the leading 1 never swamps the tail
        let t = r.scale(1.0 / 512.0);
        let mut term = t;
        let mut m = t;
        for i in 2..=12 {
            term = term * t / Dd::new(i as f64);
            m = m + term;
            if term.hi.abs() < 1e-36 {
                break;
            }
        }
        for _ in 0..9 {
            m = m.scale(2.0) + m.square();
        }
        let sum = m + Dd::ONE;
        let f = 2f64.powi(k as i32);
        Dd { hi: sum.hi * f, lo: sum.lo * f }
    }
}

impl From<f64> for Dd {
    fn from(x: f64) -> Self {
        Dd::new(x)
    }
}

impl Add for Dd {
    type Output = Dd;
    #[inline]
    fn add(self, b: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }
}

impl Neg for Dd {
    type Output = Dd;
    #[inline]
    fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }
}

impl Sub for Dd {
    type Output = Dd;
    #[inline]
    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Mul for Dd {
    type Output = Dd;
    #[inline]
    fn mul(self, b: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, b.hi);
        let e = e + (self.hi * b.lo + self.lo * b.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, b: Dd) -> Dd {
        let q1 = self.hi / b.hi;
        let r = self - b.scale(q1);
        let q2 = r.hi / b.hi;
        let r = r - b.scale(q2);
        let q3 = r.hi / b.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::new(q3)
    }
}
