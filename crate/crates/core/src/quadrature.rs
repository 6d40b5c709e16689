//! Small shared quadrature helpers.

/// Trapezoidal rule over a strictly increasing grid.
///
/// `values[i]` is the integrand sampled at `grid[i]`. Returns 0 for fewer
/// than two nodes.
pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    debug_assert_eq!(grid.len(), values.len());
    let mut acc = 0.0;
    for i in 1..grid.len() {
        acc += 0.5 * (values[i] + values[i - 1]) * (grid[i] - grid[i - 1]);
    }
    acc
}
