//! Loss weights and reference implementations used by the tests.

/// Future-point weights `w_i = e^{1/(K-i)} - 1`, i = 0..K-1, K = 5: the
/// farthest point weighs most. Indexing from 0 avoids the `i = K` pole.
pub fn bezier_weights() -> [f64; 5] {
    std::array::from_fn(|i| (1.0 / (5 - i) as f64).exp() - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_match_closed_form() {
        let expect = [0.2214, 0.2840, 0.3956, 0.6487, 1.7183];
        for (w, e) in bezier_weights().iter().zip(expect) {
            assert!((w - e).abs() < 5e-5);
        }
        assert_eq!(bezier_weights()[4], std::f64::consts::E - 1.0);
    }
}
