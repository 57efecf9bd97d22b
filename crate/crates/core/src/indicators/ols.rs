use super::IndicatorError;

/// Least-squares fit of `y = alpha + beta·x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OlsFit {
    pub alpha: f64,
    pub beta: f64,
    /// Coefficient of determination; 0 when the response has no variance.
    pub r2: f64,
}

/// Ordinary least squares of `y` on `x`.
///
/// Co-moments are accumulated in a single streaming pass, which stays
/// accurate for price levels far from zero.
pub fn ols_fit(y: &[f64], x: &[f64]) -> Result<OlsFit, IndicatorError> {
    if y.len() != x.len() {
        return Err(IndicatorError::LengthMismatch {
            left: y.len(),
            right: x.len(),
        });
    }
    if y.len() < 2 {
        return Err(IndicatorError::TooShort {
            needed: 2,
            got: y.len(),
        });
    }
    let (mut n, mut mx, mut my) = (0.0f64, 0.0f64, 0.0f64);
    let (mut sxx, mut sxy, mut syy) = (0.0f64, 0.0f64, 0.0f64);
    for (&xi, &yi) in x.iter().zip(y) {
        n += 1.0;
        let dx = xi - mx;
        let dy = yi - my;
        mx += dx / n;
        my += dy / n;
        sxx += dx * (xi - mx);
        sxy += dx * (yi - my);
        syy += dy * (yi - my);
    }
    if sxx <= 1e-14 * n * mx * mx || sxx <= 0.0 {
        return Err(IndicatorError::DegenerateRegressor);
    }
    let beta = sxy / sxx;
    let alpha = my - beta * mx;
    let r2 = if syy > 0.0 {
        ((sxy * sxy) / (sxx * syy)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(OlsFit { alpha, beta, r2 })
}
