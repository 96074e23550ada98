use crate::error::{Error, Result};

/// `log(1 + |target − p|)` and its derivative w.r.t. `p`.
///
/// The derivative at `p == target` is taken as 0.
pub fn delta_regularizer(p_neutral: f64, target: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&p_neutral) {
        return Err(Error::Argument(format!(
            "neutral probability {p_neutral} outside [0, 1]"
        )));
    }
    let gap = target - p_neutral;
    let value = gap.abs().ln_1p();
    let slope = if gap > 0.0 {
        -1.0 / (1.0 + gap)
    } else if gap < 0.0 {
        1.0 / (1.0 - gap)
    } else {
        0.0
    };
    Ok((value, slope))
}
