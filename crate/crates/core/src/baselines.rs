//! Full-data reference detectors. Both need every time-stamp of the pixel,
//! which is what the sketch test avoids.

use crate::detection::DetectionResult;
use crate::error::{Error, Result};
use crate::special::chi2_upper_percentile;
use crate::types::PhotonStream;

/// Counts over contiguous bins of width `⌈T/T_r⌉`, the last one truncated.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseHistogram {
    pub counts: Vec<u64>,
    /// Width of each coarse bin in fine bins.
    pub widths: Vec<u32>,
    pub n: u64,
    pub bins: u32,
}

impl CoarseHistogram {
    pub fn new(stream: &PhotonStream, coarse_bins: u32) -> Result<Self> {
        let bins = stream.bins();
        if coarse_bins < 2 || coarse_bins > bins {
            return Err(Error::Parameter(format!(
                "coarse bin count {coarse_bins} must lie in [2, T={bins}]"
            )));
        }
        let width = bins.div_ceil(coarse_bins);
        // With ragged widths fewer than `coarse_bins` bins may be needed to
        // cover the histogram.
        let used = bins.div_ceil(width);
        let widths: Vec<u32> = (0..used).map(|i| width.min(bins - i * width)).collect();
        let mut counts = vec![0u64; used as usize];
        for &t in stream.timestamps() {
            counts[(t / width) as usize] += 1;
        }
        Ok(Self {
            counts,
            widths,
            n: stream.len() as u64,
            bins,
        })
    }

    /// Pearson statistic against the uniform law, expected counts
    /// proportional to bin width.
    pub fn pearson(&self) -> f64 {
        let n = self.n as f64;
        let total = f64::from(self.bins);
        self.counts
            .iter()
            .zip(&self.widths)
            .map(|(&c, &w)| {
                let e = n * f64::from(w) / total;
                let d = c as f64 - e;
                d * d / e
            })
            .sum()
    }
}

/// χ² test of a coarse histogram against the uniform background.
pub fn coarse_hist_test(stream: &PhotonStream, coarse_bins: u32, beta: f64) -> Result<DetectionResult> {
    if stream.is_empty() {
        return Err(Error::EmptyPixel);
    }
    let hist = CoarseHistogram::new(stream, coarse_bins)?;
    let dof = hist.counts.len() as u32 - 1;
    let threshold = chi2_upper_percentile(dof, beta)?;
    let statistic = hist.pearson();
    Ok(DetectionResult {
        statistic,
        threshold,
        reject_h0: statistic > threshold,
    })
}

/// Asymptotic Kolmogorov–Smirnov critical constant `c(β) = √(-ln(β/2)/2)`.
pub fn ks_critical_constant(beta: f64) -> f64 {
    (-(beta / 2.0).ln() / 2.0).sqrt()
}

/// Kolmogorov–Smirnov distance between the empirical law of `samples` and an
/// exponential law with the given rate. The empirical CDF is right
/// continuous, so tied samples are compared at the top and bottom of their
/// jump.
pub fn ks_exponential_statistic(samples: &mut [f64], rate: f64) -> f64 {
    samples.sort_by(|a, b| a.total_cmp(b));
    let total = samples.len() as f64;
    let mut d = 0.0_f64;
    let mut i = 0;
    while i < samples.len() {
        let v = samples[i];
        let mut j = i;
        while j < samples.len() && samples[j] == v {
            j += 1;
        }
        let cdf = 1.0 - (-rate * v).exp();
        let below = i as f64 / total;
        let at = j as f64 / total;
        d = d.max(at - cdf).max(cdf - below);
        i = j;
    }
    d
}

/// K-S test that inter-arrival gaps of the sorted time-stamps are
/// exponential with rate `n/T`.
pub fn ks_interarrival_test(stream: &PhotonStream, beta: f64) -> Result<DetectionResult> {
    let n = stream.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "K-S inter-arrival test needs at least 2 photons, got {n}"
        )));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Parameter(format!("significance level {beta} outside (0, 1)")));
    }
    let mut sorted = stream.timestamps().to_vec();
    sorted.sort_unstable();
    let mut gaps: Vec<f64> = sorted.windows(2).map(|w| f64::from(w[1] - w[0])).collect();
    let rate = n as f64 / f64::from(stream.bins());
    let statistic = ks_exponential_statistic(&mut gaps, rate);
    let threshold = ks_critical_constant(beta) / ((n - 1) as f64).sqrt();
    Ok(DetectionResult {
        statistic,
        threshold,
        reject_h0: statistic > threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::substream;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn stream(xs: Vec<u32>, bins: u32) -> PhotonStream {
        PhotonStream::new(xs, bins, 0.0).unwrap()
    }

    #[test]
    fn flat_counts_do_not_reject() {
        // 10 photons in each of 10 coarse bins.
        let xs: Vec<u32> = (0..100).map(|i| (i % 10) * 10 + i / 10).collect();
        let r = coarse_hist_test(&stream(xs, 100), 10, 0.05).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!(!r.reject_h0);
    }

    #[test]
    fn concentrated_counts() {
        let r = coarse_hist_test(&stream(vec![3; 100], 100), 10, 0.05).unwrap();
        assert!((r.statistic - 900.0).abs() < 1e-9);
        assert!(r.reject_h0);
        assert!(
            coarse_hist_test(&stream(vec![3; 100], 100), 10, 1e-12)
                .unwrap()
                .reject_h0
        );
    }

    #[test]
    fn empty_and_invalid() {
        assert!(matches!(
            coarse_hist_test(&stream(vec![], 100), 10, 0.05),
            Err(Error::EmptyPixel)
        ));
        assert!(coarse_hist_test(&stream(vec![1], 100), 1, 0.05).is_err());
        assert!(coarse_hist_test(&stream(vec![1], 100), 101, 0.05).is_err());
        assert!(matches!(
            ks_interarrival_test(&stream(vec![1], 100), 0.05),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn ragged_rebinning() {
        // T = 10, T_r = 4: widths 3, 3, 3, 1.
        let h = CoarseHistogram::new(&stream(vec![0, 2, 3, 8, 9], 10), 4).unwrap();
        assert_eq!(h.widths, vec![3, 3, 3, 1]);
        assert_eq!(h.counts, vec![2, 1, 1, 1]);
        // Uniform photons, one per fine bin: statistic exactly zero.
        let h = CoarseHistogram::new(&stream((0..10).collect(), 10), 4).unwrap();
        assert!(h.pearson().abs() < 1e-12);
        // T = 10, T_r = 6: width 2 covers the range in 5 bins.
        let h = CoarseHistogram::new(&stream(vec![9], 10), 6).unwrap();
        assert_eq!(h.counts.len(), 5);
    }

    #[test]
    fn full_resolution_equals_per_bin_test() {
        let bins = 40u32;
        let mut rng = substream(8, 0, 0);
        let xs: Vec<u32> = (0..4000).map(|_| rng.random_range(0..bins)).collect();
        // Directly coded per-bin Pearson oracle.
        let mut counts = vec![0f64; bins as usize];
        for &x in &xs {
            counts[x as usize] += 1.0;
        }
        let e = xs.len() as f64 / f64::from(bins);
        let oracle: f64 = counts.iter().map(|c| (c - e) * (c - e) / e).sum();
        let r = coarse_hist_test(&stream(xs, bins), bins, 0.05).unwrap();
        assert!((r.statistic - oracle).abs() < 1e-9);
        assert!((r.threshold - chi2_upper_percentile(bins - 1, 0.05).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn coarse_hist_null_calibration() {
        let (bins, coarse, n, trials) = (5000u32, 50u32, 1000usize, 10_000u64);
        let mut hits = 0;
        for trial in 0..trials {
            let mut rng = substream(21, 0, trial);
            let xs = (0..n).map(|_| rng.random_range(0..bins)).collect();
            hits += coarse_hist_test(&stream(xs, bins), coarse, 0.05).unwrap().reject_h0 as u32;
        }
        let pfa = f64::from(hits) / trials as f64;
        assert!((pfa - 0.05).abs() <= 0.01, "pfa {pfa}");
    }

    #[test]
    fn ks_quantile_construction() {
        let n = 51usize;
        let rate = 0.3;
        let mut gaps: Vec<f64> = (1..n)
            .map(|i| -((1.0 - (i as f64 - 0.5) / (n - 1) as f64).ln()) / rate)
            .collect();
        let d = ks_exponential_statistic(&mut gaps, rate);
        assert!((d - 0.5 / (n - 1) as f64).abs() < 1e-12);
    }

    #[test]
    fn ks_all_photons_in_one_bin() {
        let r = ks_interarrival_test(&stream(vec![7; 30], 100), 0.05).unwrap();
        assert_eq!(r.statistic, 1.0);
        assert!(r.reject_h0);
    }

    #[test]
    fn ks_critical_value() {
        assert!((ks_critical_constant(0.05) - 1.358_1).abs() < 1e-3);
    }

    // At n/T = 0.2 a fifth of the gaps are zero, which the continuous
    // exponential law cannot produce; the test rejects almost always.
    #[test]
    fn ks_discreteness_bias() {
        let run = |n: usize, trials: u64| {
            let bins = 5000u32;
            let mut hits = 0;
            for trial in 0..trials {
                let mut rng = substream(31, n as u64, trial);
                let xs = (0..n).map(|_| rng.random_range(0..bins)).collect();
                hits += ks_interarrival_test(&stream(xs, bins), 0.05).unwrap().reject_h0 as u32;
            }
            f64::from(hits) / trials as f64
        };
        assert!(run(1000, 500) > 0.9);
        // Sparse regime: ties are rare and the test is conservative.
        let sparse = run(100, 4000);
        assert!(sparse <= 0.05, "{sparse}");
    }

    proptest! {
        #[test]
        fn coarse_hist_permutation_invariant(xs in prop::collection::vec(0u32..300, 1..200), seed in any::<u64>()) {
            let a = coarse_hist_test(&stream(xs.clone(), 300), 7, 0.05).unwrap();
            let mut ys = xs;
            ys.shuffle(&mut substream(seed, 0, 0));
            let b = coarse_hist_test(&stream(ys, 300), 7, 0.05).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn ks_statistic_in_unit_interval(xs in prop::collection::vec(0u32..1000, 2..300)) {
            let r = ks_interarrival_test(&stream(xs, 1000), 0.05).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.statistic));
        }
    }
}
