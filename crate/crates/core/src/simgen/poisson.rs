//! Poisson variates: inversion below `INVERSION_LIMIT`, Hörmann's PTRS
//! transformed rejection above it.

use rand::Rng;
use statrs::function::gamma::ln_gamma;

const INVERSION_LIMIT: f64 = 50.0;

pub fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> u64 {
    if !(lambda > 0.0) {
        return 0;
    }
    if lambda < INVERSION_LIMIT {
        inversion(rng, lambda)
    } else {
        ptrs(rng, lambda)
    }
}

fn inversion<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> u64 {
    let u: f64 = rng.random();
    let mut k = 0u64;
    let mut p = (-lambda).exp();
    let mut cdf = p;
    while u > cdf {
        k += 1;
        p *= lambda / k as f64;
        cdf += p;
        // Floating-point tail: cdf can stall just below 1.
        if p < 1e-300 && k as f64 > lambda {
            break;
        }
    }
    k
}

fn ptrs<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> u64 {
    let slam = lambda.sqrt();
    let loglam = lambda.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        if v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln()
            <= -lambda + k * loglam - ln_gamma(k + 1.0)
        {
            return k as u64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn moments(lambda: f64, n: usize, seed: u64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..n)
            .map(|_| sample_poisson(&mut rng, lambda) as f64)
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (mean, var)
    }

    #[test]
    fn mean_and_variance_match_lambda() {
        for (i, &lambda) in [0.3, 4.0, 49.5, 50.0, 120.0, 5e5].iter().enumerate() {
            let n = 200_000;
            let (mean, var) = moments(lambda, n, i as u64);
            let se_mean = (lambda / n as f64).sqrt();
            // Var of the sample variance ~ (2 lambda^2 + lambda) / n.
            let se_var = ((2.0 * lambda * lambda + lambda) / n as f64).sqrt();
            assert!(
                (mean - lambda).abs() < 5.0 * se_mean,
                "lambda {lambda}: mean {mean}"
            );
            assert!(
                (var - lambda).abs() < 5.0 * se_var,
                "lambda {lambda}: var {var}"
            );
        }
    }

    #[test]
    fn small_lambda_pmf() {
        let lambda = 2.5;
        let n = 400_000;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut counts = [0usize; 8];
        for _ in 0..n {
            let k = sample_poisson(&mut rng, lambda) as usize;
            if k < counts.len() {
                counts[k] += 1;
            }
        }
        let mut p = (-lambda).exp();
        for (k, &c) in counts.iter().enumerate() {
            if k > 0 {
                p *= lambda / k as f64;
            }
            let expected = p * n as f64;
            assert!(
                (c as f64 - expected).abs() < 5.0 * expected.sqrt() + 1.0,
                "k={k}"
            );
        }
    }

    #[test]
    fn zero_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_poisson(&mut rng, 0.0), 0);
    }
}
