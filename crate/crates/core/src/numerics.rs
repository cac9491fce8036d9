//! Small fixed-size integration and quadrature kernels shared by the flow and
//! cocycle propagators.

/// One classical Runge–Kutta step on a fixed-size state.
///
/// The arithmetic is componentwise, so two callers whose right-hand sides agree
/// on a subset of components produce bitwise-identical values on that subset.
pub(crate) fn rk4_step<const N: usize>(
    y: &[f64; N],
    h: f64,
    f: impl Fn(&[f64; N]) -> [f64; N],
) -> [f64; N] {
    let k1 = f(y);
    let y2 = axpy(y, 0.5 * h, &k1);
    let k2 = f(&y2);
    let y3 = axpy(y, 0.5 * h, &k2);
    let k3 = f(&y3);
    let y4 = axpy(y, h, &k3);
    let k4 = f(&y4);
    let mut out = *y;
    for i in 0..N {
        out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

fn axpy<const N: usize>(y: &[f64; N], a: f64, k: &[f64; N]) -> [f64; N] {
    let mut out = *y;
    for i in 0..N {
        out[i] = y[i] + a * k[i];
    }
    out
}

/// Uniform step schedule covering `duration` with steps no longer than `step`.
///
/// Returns the number of steps and the signed effective step.
pub(crate) fn schedule(duration: f64, step: f64) -> (usize, f64) {
    if duration == 0.0 {
        return (0, 0.0);
    }
    let n = ((duration.abs() / step) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    (n, duration / n as f64)
}

/// Composite Simpson rule on uniformly spaced samples. An odd number of
/// intervals closes with the 3/8 rule on the last three.
pub fn simpson(values: &[f64], h: f64) -> f64 {
    let n = values.len().saturating_sub(1);
    match n {
        0 => 0.0,
        1 => 0.5 * h * (values[0] + values[1]),
        _ => {
            let (even_end, tail) = if n.is_multiple_of(2) { (n, false) } else { (n - 3, true) };
            let mut acc = 0.0;
            let mut i = 0;
            while i + 2 <= even_end {
                acc += values[i] + 4.0 * values[i + 1] + values[i + 2];
                i += 2;
            }
            let mut total = acc * h / 3.0;
            if tail {
                let j = n - 3;
                total += 3.0 * h / 8.0
                    * (values[j] + 3.0 * values[j + 1] + 3.0 * values[j + 2] + values[j + 3]);
            }
            total
        }
    }
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite Gauss–Legendre quadrature of `f` over `[a, b]`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize, order: usize) -> f64 {
    let (x, w) = gauss_legendre(order);
    let width = (b - a) / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let lo = a + k as f64 * width;
        let mid = lo + 0.5 * width;
        for (xi, wi) in x.iter().zip(&w) {
            total += wi * f(mid + 0.5 * width * xi);
        }
    }
    0.5 * width * total
}

/// Shortest signed representative of `x` modulo `period`.
pub fn wrap_centered(x: f64, period: f64) -> f64 {
    x - period * (x / period).round()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_exponential() {
        let mut y = [1.0];
        for _ in 0..100 {
            y = rk4_step(&y, 0.01, |y| [y[0]]);
        }
        assert!((y[0] - 1f64.exp()).abs() < 1e-9);
    }

    #[test]
    fn simpson_odd_and_even_interval_counts() {
        for n in [2usize, 3, 7, 10] {
            let h = 1.0 / n as f64;
            let v: Vec<f64> = (0..=n).map(|i| (i as f64 * h).powi(3)).collect();
            assert!((simpson(&v, h) - 0.25).abs() < 1e-14, "n = {n}");
        }
    }

    #[test]
    fn gauss_legendre_exact_for_polynomials() {
        let (x, w) = gauss_legendre(5);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((s - 2.0 / 9.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn schedule_never_exceeds_step() {
        let (n, h) = schedule(1.0, 0.3);
        assert_eq!(n, 4);
        assert!((h - 0.25).abs() < 1e-15);
        let (n, h) = schedule(-2.0, 1e-3);
        assert_eq!(n, 2000);
        assert!((h + 1e-3).abs() < 1e-15);
    }
}
