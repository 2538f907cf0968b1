//! Natural cubic spline through scattered knots, evaluated on an integer grid.

/// Second derivatives at each knot for a natural spline (zero at both ends).
fn second_derivatives(x: &[f64], y: &[f64]) -> Vec<f64> {
    let m = x.len();
    let mut d2 = vec![0.0; m];
    if m < 3 {
        return d2;
    }
    // Thomas algorithm on the interior equations.
    let k = m - 2;
    let mut diag = vec![0.0; k];
    let mut rhs = vec![0.0; k];
    let mut upper = vec![0.0; k];
    for i in 1..m - 1 {
        let h0 = x[i] - x[i - 1];
        let h1 = x[i + 1] - x[i];
        diag[i - 1] = 2.0 * (h0 + h1);
        upper[i - 1] = h1;
        rhs[i - 1] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
    }
    for j in 1..k {
        let lower = x[j + 1] - x[j]; // h_{j} multiplies M_{j} in row j
        let w = lower / diag[j - 1];
        diag[j] -= w * upper[j - 1];
        rhs[j] -= w * rhs[j - 1];
    }
    let mut sol = vec![0.0; k];
    sol[k - 1] = rhs[k - 1] / diag[k - 1];
    for j in (0..k - 1).rev() {
        sol[j] = (rhs[j] - upper[j] * sol[j + 1]) / diag[j];
    }
    d2[1..m - 1].copy_from_slice(&sol);
    d2
}

/// Evaluates the natural cubic spline through `(x, y)` at `0, 1, .., n - 1`.
///
/// `x` must be strictly increasing with at least two knots; points outside
/// the knot span extrapolate from the end segments.
pub fn natural_cubic_on_grid(x: &[f64], y: &[f64], n: usize) -> Vec<f64> {
    debug_assert!(x.len() >= 2 && x.len() == y.len());
    debug_assert!(x.windows(2).all(|w| w[1] > w[0]));
    let d2 = second_derivatives(x, y);
    let mut out = Vec::with_capacity(n);
    let mut seg = 0usize;
    for t in 0..n {
        let t = t as f64;
        while seg + 2 < x.len() && t > x[seg + 1] {
            seg += 1;
        }
        let (x0, x1) = (x[seg], x[seg + 1]);
        let h = x1 - x0;
        let a = (x1 - t) / h;
        let b = (t - x0) / h;
        let v = a * y[seg]
            + b * y[seg + 1]
            + ((a * a * a - a) * d2[seg] + (b * b * b - b) * d2[seg + 1]) * h * h / 6.0;
        out.push(v);
    }
    out
}
