//! Scalar float functions usable from `no_std`.
//!
//! The crate is unconditionally `no_std`, so the inherent `f64` math methods
//! (which live in `std`) are not visible here. With the `std` feature on we
//! route to them for speed; without it we call `libm`.

#![allow(dead_code)]

macro_rules! shim {
    ($name:ident, $libm:ident) => {
        #[cfg(feature = "std")]
        #[inline(always)]
        pub fn $name(x: f64) -> f64 {
            f64::$name(x)
        }
        #[cfg(not(feature = "std"))]
        #[inline(always)]
        pub fn $name(x: f64) -> f64 {
            libm::$libm(x)
        }
    };
}

shim!(sqrt, sqrt);
shim!(abs, fabs);
shim!(acos, acos);
shim!(exp, exp);
shim!(ln, log);
shim!(ln_1p, log1p);
shim!(tanh, tanh);
shim!(floor, floor);

/// log(1 + e^x) without overflow for large |x|.
#[inline(always)]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 { x + ln_1p(exp(-x)) } else { ln_1p(exp(x)) }
}
