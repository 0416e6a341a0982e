//! Shared numerical building blocks: Gaussian functions, monotone cubic
//! interpolation, bracketed root finding and adaptive quadrature.

pub mod normal;
pub mod pchip;
pub mod quad;
pub mod roots;

pub use normal::{norm_cdf, norm_inv, norm_pdf};
pub use pchip::Pchip;
