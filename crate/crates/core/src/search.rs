//! One-dimensional maximization helpers: grid scans and golden-section search.

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Evaluates `f` on `n` evenly spaced points starting at `lo` with spacing
/// `step` and returns `(best_x, best_value)`. Ties keep the first point.
pub fn grid_scan<F: FnMut(f64) -> f64>(lo: f64, step: f64, n: usize, mut f: F) -> (f64, f64) {
    let mut best = (lo, f64::NEG_INFINITY);
    for i in 0..n {
        let x = lo + i as f64 * step;
        let v = f(x);
        if v > best.1 {
            best = (x, v);
        }
    }
    best
}

/// Golden-section search for a maximum on `[a, b]`, assuming unimodality.
/// Returns the best point evaluated, never worse than the bracket midpoint.
pub fn golden_section_max<F: FnMut(f64) -> f64>(
    mut a: f64,
    mut b: f64,
    iterations: usize,
    mut f: F,
) -> (f64, f64) {
    let mid = 0.5 * (a + b);
    let mut best = (mid, f(mid));
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iterations {
        if fc > best.1 {
            best = (c, fc);
        }
        if fd > best.1 {
            best = (d, fd);
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    for (x, v) in [(c, fc), (d, fd)] {
        if v > best.1 {
            best = (x, v);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_parabola_peak() {
        let (x, v) = golden_section_max(-1.0, 3.0, 60, |x| -(x - 1.234).powi(2));
        assert!((x - 1.234).abs() < 1e-8);
        assert!(v <= 0.0);
    }

    #[test]
    fn golden_thirty_iterations_shrink_bracket() {
        let (x, _) = golden_section_max(0.0, 2.0, 30, |x| -(x - 0.7).abs());
        assert!((x - 0.7).abs() < 2.0 * INV_PHI.powi(30));
    }

    #[test]
    fn scan_keeps_first_of_ties() {
        let (x, v) = grid_scan(0.0, 1.0, 5, |x| if x >= 2.0 { 1.0 } else { 0.0 });
        assert_eq!((x, v), (2.0, 1.0));
    }
}
