//! Smoothed class distributions on a fine grid and their overlapped area.

use super::MetricsError;

/// Grid points per class.
pub const GRID_PER_CLASS: usize = 8;
/// Lower bound on the kernel bandwidth, in classes.
pub const MIN_BANDWIDTH: f64 = 0.5;

/// A density over `[0.5, K + 0.5]` sampled every `1/8` class, with class
/// `i` (0-based) centred at `i + 1`. Integrates to 1 under the trapezoid rule.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPdf {
    classes: usize,
    density: Vec<f64>,
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2))
}

fn trapezoid(v: &[f64]) -> f64 {
    let dx = 1.0 / GRID_PER_CLASS as f64;
    match v {
        [] | [_] => 0.0,
        [first, .., last] => dx * (v.iter().sum::<f64>() - 0.5 * (first + last)),
    }
}

/// Scott's rule with a floor: `max(0.5, n^(-1/5) * sd)`, where `sd` is the
/// sample standard deviation of the class indices.
pub fn bandwidth(counts: &[u32]) -> f64 {
    let n: f64 = counts.iter().map(|&c| f64::from(c)).sum();
    if n < 2.0 {
        return MIN_BANDWIDTH;
    }
    let mean = counts.iter().enumerate().map(|(i, &c)| i as f64 * f64::from(c)).sum::<f64>() / n;
    let var =
        counts.iter().enumerate().map(|(i, &c)| f64::from(c) * (i as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (n.powf(-0.2) * var.sqrt()).max(MIN_BANDWIDTH)
}

impl ClassPdf {
    pub fn grid_len(classes: usize) -> usize {
        GRID_PER_CLASS * classes + 1
    }

    /// Grid coordinate of point `i`.
    pub fn grid_x(i: usize) -> f64 {
        0.5 + i as f64 / GRID_PER_CLASS as f64
    }

    /// Normalizes raw nonnegative grid values into a density.
    pub fn from_values(classes: usize, values: Vec<f64>) -> Result<Self, MetricsError> {
        if values.len() != Self::grid_len(classes) {
            return Err(MetricsError::GridMismatch);
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(MetricsError::NonFinite);
        }
        let mass = trapezoid(&values);
        if mass <= 0.0 {
            return Err(MetricsError::EmptyCell);
        }
        Ok(Self { classes, density: values.into_iter().map(|v| v / mass).collect() })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn integral(&self) -> f64 {
        trapezoid(&self.density)
    }
}

/// Kernel density estimate of a class histogram. Each class contributes a
/// unit-width box at its centre blurred by a Gaussian of width `h`, so the
/// estimate tends to the histogram itself as `h` shrinks.
pub fn kde_pdf(counts: &[u32]) -> Result<ClassPdf, MetricsError> {
    kde_pdf_with_bandwidth(counts, bandwidth(counts))
}

pub fn kde_pdf_with_bandwidth(counts: &[u32], h: f64) -> Result<ClassPdf, MetricsError> {
    let n: f64 = counts.iter().map(|&c| f64::from(c)).sum();
    if n == 0.0 {
        return Err(MetricsError::EmptyCell);
    }
    let k = counts.len();
    let values = (0..ClassPdf::grid_len(k))
        .map(|i| {
            let x = ClassPdf::grid_x(i);
            counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(c, &w)| {
                    let centre = c as f64 + 1.0;
                    f64::from(w) / n * (normal_cdf((x - centre + 0.5) / h) - normal_cdf((x - centre - 0.5) / h))
                })
                .sum()
        })
        .collect();
    ClassPdf::from_values(k, values)
}

/// Integral of `min(p, q)`.
pub fn overlapped_area(p: &ClassPdf, q: &ClassPdf) -> Result<f64, MetricsError> {
    if p.classes != q.classes {
        return Err(MetricsError::GridMismatch);
    }
    let m: Vec<f64> = p.density.iter().zip(&q.density).map(|(a, b)| a.min(*b)).collect();
    Ok(trapezoid(&m).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_class_is_unimodal_and_normalized() {
        let mut counts = vec![0u32; 32];
        counts[9] = 5;
        let p = kde_pdf(&counts).unwrap();
        assert!((p.integral() - 1.0).abs() < 1e-9);
        let peak = p.density().iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(ClassPdf::grid_x(peak), 10.0);
    }

    #[test]
    fn bandwidth_floor_and_scott() {
        assert_eq!(bandwidth(&[3, 0, 0]), 0.5);
        // classes 0 and 10, 16 each: sd = sqrt(16*25*2/31), h = 32^-0.2 * sd
        let mut c = vec![0u32; 11];
        c[0] = 16;
        c[10] = 16;
        let expected = 32f64.powf(-0.2) * (800.0f64 / 31.0).sqrt();
        assert!((bandwidth(&c) - expected).abs() < 1e-12);
    }

    #[test]
    fn empty_histogram_is_an_error() {
        assert!(matches!(kde_pdf(&[0; 12]), Err(MetricsError::EmptyCell)));
    }

    #[test]
    fn grid_mismatch() {
        let p = kde_pdf(&[1; 12]).unwrap();
        let q = kde_pdf(&[1; 32]).unwrap();
        assert!(matches!(overlapped_area(&p, &q), Err(MetricsError::GridMismatch)));
    }
}
