pub const M_PLUS: f64 = 0.9;
pub const M_MINUS: f64 = 0.1;
pub const LAMBDA: f64 = 0.5;

/// Margin loss over class-capsule lengths.
pub fn margin_loss(scores: &[f64], label: usize) -> f64 {
    scores
        .iter()
        .enumerate()
        .map(|(j, &s)| {
            if j == label {
                (M_PLUS - s).max(0.0).powi(2)
            } else {
                LAMBDA * (s - M_MINUS).max(0.0).powi(2)
            }
        })
        .sum()
}

pub fn margin_loss_grad(scores: &[f64], label: usize) -> Vec<f64> {
    scores
        .iter()
        .enumerate()
        .map(|(j, &s)| {
            if j == label {
                -2.0 * (M_PLUS - s).max(0.0)
            } else {
                2.0 * LAMBDA * (s - M_MINUS).max(0.0)
            }
        })
        .collect()
}
