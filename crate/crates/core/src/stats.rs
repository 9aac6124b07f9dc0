//! Order-fixed reductions for Monte Carlo statistics.
//!
//! Every reduction runs serially over pre-indexed per-path slots with a fixed
//! pairwise tree, so the result does not depend on how the paths were
//! scheduled across workers.

/// Pairwise (tree) summation with a fixed split rule.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 16;
    if xs.len() <= LEAF {
        return xs.iter().fold(0.0, |s, x| s + x);
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sample mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

pub fn mean_estimate(xs: &[f64]) -> MeanEstimate {
    let k = xs.len();
    if k == 0 {
        return MeanEstimate {
            mean: f64::NAN,
            std_error: f64::NAN,
            samples: 0,
        };
    }
    let mean = pairwise_sum(xs) / k as f64;
    let var = if k > 1 {
        let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
        pairwise_sum(&dev) / (k - 1) as f64
    } else {
        0.0
    };
    MeanEstimate {
        mean,
        std_error: (var / k as f64).sqrt(),
        samples: k,
    }
}

/// Root-mean-square estimate `sqrt(E[x])` of non-negative samples with a
/// delta-method standard error `SE(mean) / (2 sqrt(mean))`.
pub fn rms_estimate(squares: &[f64]) -> MeanEstimate {
    let m = mean_estimate(squares);
    let root = m.mean.max(0.0).sqrt();
    let se = if root > 0.0 {
        m.std_error / (2.0 * root)
    } else {
        0.0
    };
    MeanEstimate {
        mean: root,
        std_error: se,
        samples: m.samples,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_exact_integers() {
        let xs: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500_500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn mean_and_error() {
        let m = mean_estimate(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        // sample variance 5/3, SE = sqrt(5/12)
        assert!((m.std_error - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
        let r = rms_estimate(&[4.0, 4.0]);
        assert_eq!(r.mean, 2.0);
        assert_eq!(r.std_error, 0.0);
        let z = rms_estimate(&[0.0, 0.0]);
        assert_eq!((z.mean, z.std_error), (0.0, 0.0));
    }
}
