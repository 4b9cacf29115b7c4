//! Central finite-difference gradient checking, shared by the loss tests.

/// Compares an analytic gradient against central finite differences of
/// `loss` at `params`. Returns the worst relative deviation encountered.
///
/// The deviation for coordinate i is |fd - g| / max(|fd|, |g|, floor),
/// where the floor guards near-zero gradients.
pub fn check_gradient<F: Fn(&[f64]) -> f64>(
    loss: F,
    params: &[f64],
    analytic: &[f64],
    step: f64,
    floor: f64,
) -> f64 {
    assert_eq!(params.len(), analytic.len());
    let mut worst = 0.0f64;
    let mut buf = params.to_vec();
    for i in 0..params.len() {
        let orig = buf[i];
        buf[i] = orig + step;
        let up = loss(&buf);
        buf[i] = orig - step;
        let down = loss(&buf);
        buf[i] = orig;
        let fd = (up - down) / (2.0 * step);
        let denom = fd.abs().max(analytic[i].abs()).max(floor);
        let rel = (fd - analytic[i]).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    worst
}
