//! Image-similarity metrics and experiment aggregation.
//!
//! Images are clamped to [0, peak] before comparison, because recovered
//! images can leave the valid range mid-optimization. PSNR is capped at
//! 100 dB so aggregates stay finite.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};
use crate::tensor::TensorBase;

/// PSNR ceiling standing in for +inf on exact matches.
pub const PSNR_CAP_DB: f64 = 100.0;

/// Peak signal-to-noise ratio in dB: `10 log10(peak^2 / MSE)`.
pub fn psnr<F: Scalar>(a: &TensorBase<F>, b: &TensorBase<F>, peak: F) -> Result<F> {
    if a.shape() != b.shape() {
        return Err(Error::Contract(format!(
            "psnr on mismatched shapes {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if peak <= F::zero() {
        return Err(Error::Argument("psnr peak must be > 0".into()));
    }
    let ac = a.clamped(F::zero(), peak);
    let bc = b.clamped(F::zero(), peak);
    let n = cast::<F>(a.len() as f64);
    let mse = ac
        .data()
        .iter()
        .zip(bc.data())
        .fold(F::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
        / n;
    let cap = cast::<F>(PSNR_CAP_DB);
    if mse == F::zero() {
        return Ok(cap);
    }
    let ten = cast::<F>(10.0);
    let value = ten * (peak * peak / mse).log10();
    Ok(value.min(cap))
}

/// Gaussian-window structural similarity, window 11, sigma 1.5. Input
/// images are [C,H,W]; channels are averaged. Images smaller than the
/// window are rejected.
pub fn ssim<F: Scalar>(a: &TensorBase<F>, b: &TensorBase<F>, peak: F) -> Result<F> {
    const WINDOW: usize = 11;
    const SIGMA: f64 = 1.5;

    if a.shape() != b.shape() {
        return Err(Error::Contract(format!(
            "ssim on mismatched shapes {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.shape().len() != 3 {
        return Err(Error::Dimension(format!("ssim expects [C,H,W], got {:?}", a.shape())));
    }
    let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    if h < WINDOW || w < WINDOW {
        return Err(Error::Argument(format!(
            "image {h}x{w} smaller than the {WINDOW}x{WINDOW} ssim window"
        )));
    }

    let ac = a.clamped(F::zero(), peak);
    let bc = b.clamped(F::zero(), peak);

    // Normalized gaussian window.
    let mut window = [[F::zero(); WINDOW]; WINDOW];
    let mut total = F::zero();
    for (i, row) in window.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let di = i as f64 - (WINDOW as f64 - 1.0) / 2.0;
            let dj = j as f64 - (WINDOW as f64 - 1.0) / 2.0;
            *cell = cast::<F>((-(di * di + dj * dj) / (2.0 * SIGMA * SIGMA)).exp());
            total += *cell;
        }
    }
    for row in window.iter_mut() {
        for cell in row.iter_mut() {
            *cell = *cell / total;
        }
    }

    let c1 = cast::<F>(0.01) * peak;
    let c1 = c1 * c1;
    let c2 = cast::<F>(0.03) * peak;
    let c2 = c2 * c2;

    let mut acc = F::zero();
    let mut count = 0usize;
    for ch in 0..c {
        let plane = ch * h * w;
        for top in 0..=(h - WINDOW) {
            for left in 0..=(w - WINDOW) {
                let (mut ma, mut mb, mut maa, mut mbb, mut mab) =
                    (F::zero(), F::zero(), F::zero(), F::zero(), F::zero());
                for (i, row) in window.iter().enumerate() {
                    for (j, &wgt) in row.iter().enumerate() {
                        let idx = plane + (top + i) * w + (left + j);
                        let x = ac.data()[idx];
                        let y = bc.data()[idx];
                        ma += wgt * x;
                        mb += wgt * y;
                        maa += wgt * x * x;
                        mbb += wgt * y * y;
                        mab += wgt * x * y;
                    }
                }
                let va = maa - ma * ma;
                let vb = mbb - mb * mb;
                let cov = mab - ma * mb;
                let two = cast::<F>(2.0);
                let num = (two * ma * mb + c1) * (two * cov + c2);
                let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
                acc += num / den;
                count += 1;
            }
        }
    }
    Ok(acc / cast::<F>(count as f64))
}

/// Per-trial evaluation row feeding the aggregate summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialEval {
    pub psnr_db: f64,
    pub ssim: Option<f64>,
}

/// Aggregate over a suite of trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Fraction of trials with PSNR above the threshold.
    pub acc: f64,
    pub mean_psnr: f64,
    /// Mean over the trials where SSIM was computable.
    pub mean_ssim: Option<f64>,
    pub n_trials: usize,
}

/// Success-rate summary: `acc` counts trials with PSNR strictly above
/// `threshold_db`.
pub fn success_rate(evals: &[TrialEval], threshold_db: f64) -> Result<Summary> {
    if evals.is_empty() {
        return Err(Error::Argument("success_rate on an empty result list".into()));
    }
    let n = evals.len() as f64;
    let acc = evals.iter().filter(|e| e.psnr_db > threshold_db).count() as f64 / n;
    let mean_psnr = evals.iter().map(|e| e.psnr_db).sum::<f64>() / n;
    let ssims: Vec<f64> = evals.iter().filter_map(|e| e.ssim).collect();
    let mean_ssim = if ssims.is_empty() {
        None
    } else {
        Some(ssims.iter().sum::<f64>() / ssims.len() as f64)
    };
    Ok(Summary { acc, mean_psnr, mean_ssim, n_trials: evals.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    #[test]
    fn identical_images_hit_the_cap() {
        let t = Tensor::filled(&[1, 4, 4], 0.25);
        assert_eq!(psnr(&t, &t, 1.0).unwrap(), 100.0);
    }

    #[test]
    fn uniform_error_gives_twenty_db() {
        let a = Tensor::filled(&[1, 4, 4], 0.5);
        let b = Tensor::filled(&[1, 4, 4], 0.6);
        let got = psnr(&a, &b, 1.0).unwrap();
        assert!((got - 20.0).abs() < 1e-10, "{got}");
    }

    #[test]
    fn psnr_matches_direct_formula() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let data_a: Vec<f64> = (0..48).map(|_| rng.random_range(0.0..1.0)).collect();
        let data_b: Vec<f64> = (0..48).map(|_| rng.random_range(0.0..1.0)).collect();
        let a = Tensor::new(vec![3, 4, 4], data_a.clone()).unwrap();
        let b = Tensor::new(vec![3, 4, 4], data_b.clone()).unwrap();
        let mse = data_a
            .iter()
            .zip(&data_b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / 48.0;
        let want = 10.0 * (1.0 / mse).log10();
        assert!((psnr(&a, &b, 1.0).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn psnr_is_symmetric() {
        let a = Tensor::filled(&[1, 3, 3], 0.2);
        let b = Tensor::filled(&[1, 3, 3], 0.9);
        assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
    }

    #[test]
    fn psnr_shape_mismatch_is_contract_error() {
        let a = Tensor::filled(&[1, 3, 3], 0.2);
        let b = Tensor::filled(&[1, 4, 4], 0.2);
        assert!(matches!(psnr(&a, &b, 1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn ssim_self_is_one() {
        let ds = crate::dataio::synthetic_dataset(1, [1, 16, 16], 2, 3).unwrap();
        let img = &ds.images[0];
        let got = ssim(img, img, 1.0).unwrap();
        assert!((got - 1.0).abs() < 1e-9, "{got}");
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        let p = 0.3;
        let q = 0.8;
        let a = Tensor::filled(&[1, 12, 12], p);
        let b = Tensor::filled(&[1, 12, 12], q);
        let c1 = 0.01f64.powi(2);
        let want = (2.0 * p * q + c1) / (p * p + q * q + c1);
        let got = ssim(&a, &b, 1.0).unwrap();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Tensor::filled(&[1, 8, 8], 0.5);
        assert!(matches!(ssim(&a, &a, 1.0), Err(Error::Argument(_))));
    }

    #[test]
    fn ssim_is_symmetric_and_bounded() {
        let ds = crate::dataio::synthetic_dataset(2, [1, 16, 16], 2, 5).unwrap();
        let (a, b) = (&ds.images[0], &ds.images[1]);
        let ab = ssim(a, b, 1.0).unwrap();
        let ba = ssim(b, a, 1.0).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!(ab.abs() <= 1.0);
    }

    #[test]
    fn summary_aggregates() {
        let evals = vec![
            TrialEval { psnr_db: 29.0, ssim: Some(0.8) },
            TrialEval { psnr_db: 31.0, ssim: None },
        ];
        let s = success_rate(&evals, 30.0).unwrap();
        assert_eq!(s.acc, 0.5);
        assert_eq!(s.mean_psnr, 30.0);
        assert_eq!(s.mean_ssim, Some(0.8));
        assert_eq!(s.n_trials, 2);

        let all = vec![TrialEval { psnr_db: 100.0, ssim: None }; 3];
        assert_eq!(success_rate(&all, 30.0).unwrap().acc, 1.0);
        assert!(success_rate(&[], 30.0).is_err());
    }

    #[test]
    fn success_rate_monotone_in_threshold() {
        let evals: Vec<TrialEval> = (0..10)
            .map(|i| TrialEval { psnr_db: 20.0 + i as f64 * 2.0, ssim: None })
            .collect();
        let mut prev = 1.0;
        for t in [15.0, 25.0, 30.0, 35.0, 45.0] {
            let acc = success_rate(&evals, t).unwrap().acc;
            assert!(acc <= prev);
            prev = acc;
        }
    }
}
