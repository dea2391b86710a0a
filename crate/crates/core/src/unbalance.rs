//! Squared sequence magnitudes written out in rectangular coordinates.
//!
//! Each form is a real linear combination of the six phase-voltage
//! components ordered `[a_re, a_im, b_re, b_im, c_re, c_im]`; its square,
//! summed over the real and imaginary parts, gives `|3 U_2|^2` (negative
//! sequence) or `|3 U_1|^2` (positive sequence). The common factor of 9
//! cancels in the unbalance ratio.

const S: f64 = 0.866_025_403_784_438_6; // sqrt(3) / 2

pub const NEGATIVE_RE: [f64; 6] = [1.0, 0.0, -0.5, S, -0.5, -S];
pub const NEGATIVE_IM: [f64; 6] = [0.0, 1.0, -S, -0.5, S, -0.5];
pub const POSITIVE_RE: [f64; 6] = [1.0, 0.0, -0.5, -S, -0.5, S];
pub const POSITIVE_IM: [f64; 6] = [0.0, 1.0, S, -0.5, -S, -0.5];

fn dot(a: &[f64; 6], u: &[f64; 6]) -> f64 {
    a.iter().zip(u).map(|(x, y)| x * y).sum()
}

pub fn negative_sq(u: &[f64; 6]) -> f64 {
    dot(&NEGATIVE_RE, u).powi(2) + dot(&NEGATIVE_IM, u).powi(2)
}

pub fn positive_sq(u: &[f64; 6]) -> f64 {
    dot(&POSITIVE_RE, u).powi(2) + dot(&POSITIVE_IM, u).powi(2)
}

/// Unbalance factor as a fraction; `None` if the positive sequence vanishes.
pub fn unbalance_factor(u: &[f64; 6]) -> Option<f64> {
    let pos = positive_sq(u);
    if pos == 0.0 {
        None
    } else {
        Some((negative_sq(u) / pos).sqrt())
    }
}
