//! Simulated regression models with inputs uniform on `[-1, 1]^d` and
//! standard normal noise.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datamodel::Dataset;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimModelSpec {
    pub model_id: u8,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
}

impl SimModelSpec {
    /// Default `(n, d)` of each model.
    pub fn default_for(model_id: u8, seed: u64) -> Result<Self> {
        let (n, d) = match model_id {
            1 => (600, 10),
            2 => (800, 30),
            3 => (800, 50),
            4 => (800, 100),
            5 => (800, 100),
            _ => return Err(Error::invalid(format!("model id must be 1..=5, got {model_id}"))),
        };
        Ok(Self { model_id, n, d, seed })
    }

    pub fn validate(&self) -> Result<()> {
        let need = min_dimension(self.model_id)?;
        if self.n == 0 {
            return Err(Error::invalid("n must be at least 1"));
        }
        if self.d < need {
            return Err(Error::invalid(format!(
                "model {} reads X_{need} but d = {}",
                self.model_id, self.d
            )));
        }
        Ok(())
    }
}

/// Largest coordinate index a model's formula reads.
pub fn min_dimension(model_id: u8) -> Result<usize> {
    match model_id {
        1 => Ok(10),
        2 => Ok(29),
        3 => Ok(50),
        4 | 5 => Ok(100),
        _ => Err(Error::invalid(format!("model id must be 1..=5, got {model_id}"))),
    }
}

/// Noise-free regression function. `x` must have at least
/// `min_dimension(model_id)` entries.
pub fn signal(model_id: u8, x: ArrayView1<'_, f64>) -> Result<f64> {
    let need = min_dimension(model_id)?;
    if x.len() < need {
        return Err(Error::invalid(format!(
            "model {model_id} needs {need} coordinates, got {}",
            x.len()
        )));
    }
    // 1-based coordinate access.
    let c = |k: usize| x[k - 1];
    let v = match model_id {
        1 => {
            c(1).powi(2) - c(3).powi(2) + 3.0 * c(4) * (-c(5)).exp()
                - c(7).powi(3) * (-c(8) * c(9) + c(5) * c(10)).exp()
        }
        2 => (1..=5)
            .map(|j| {
                3.0 * c(2 * j).powi(3) * (c(30 - j) - c(2 * j + 1)).exp()
                    - 2.0 * c(2 * j - 1).powi(3) * (c(2 * j) - c(30 - 3 * j)).exp()
            })
            .sum(),
        3 => {
            let inner: f64 = (1..=5).map(|j| (1.0 + c(5 + j)) / (2.0 - c(45 + j))).sum();
            (1.0 - c(1).powi(2) + 2.0 * c(3) * c(4)) / (1.1 + c(5))
                - 2.0 * (1.0 + inner).sqrt() * (-c(10) + c(20) - c(30)).exp()
        }
        4 => {
            let s: f64 = (1..=10).map(|j| c(10 * j)).sum();
            (c(1).powi(2) - c(2).powi(2)) * (1.0 - (-c(5) * c(7)).exp()) + 3.0 * c(3) * (-s).exp()
        }
        5 => {
            let denom = 1.0 - (c(1) * c(2)).sin();
            let sum: f64 = (1..=10)
                .map(|j| {
                    let p = 2f64.powi(j as i32);
                    (p + 1.0) / (p - 1.0) * c(5 * j) * c(10 * j) * c(j)
                })
                .sum();
            (1.0 + (c(1) + c(2)).sin()) / denom - sum
        }
        _ => unreachable!(),
    };
    Ok(v)
}

pub fn generate(spec: &SimModelSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed);
    let x: Array2<f64> = Array2::from_shape_simple_fn((spec.n, spec.d), || rng.random_range(-1.0..=1.0));
    let mut y = Array1::zeros(spec.n);
    for (i, row) in x.outer_iter().enumerate() {
        if spec.model_id == 5 {
            let denom = 1.0 - (row[0] * row[1]).sin();
            if denom <= 0.15 {
                return Err(Error::Numerical(format!("model 5 denominator {denom} at row {i}")));
            }
        }
        let eps: f64 = StandardNormal.sample(&mut rng);
        y[i] = signal(spec.model_id, row)? + eps;
    }
    Dataset::with_default_names(&format!("model{}", spec.model_id), x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    fn at(d: usize, f: impl Fn(usize) -> f64) -> Array1<f64> {
        Array1::from_shape_fn(d, |i| f(i + 1))
    }

    fn hand(model: u8, x: &Array1<f64>) -> f64 {
        let v = |k: usize| x[k - 1];
        match model {
            1 => {
                v(1) * v(1) - v(3) * v(3) + 3.0 * v(4) * (-v(5)).exp()
                    - v(7) * v(7) * v(7) * (v(5) * v(10) - v(8) * v(9)).exp()
            }
            2 => {
                // (2j, 30-j, 2j+1, 2j-1, 30-3j) for j = 1..5.
                let idx = [
                    (2, 29, 3, 1, 27),
                    (4, 28, 5, 3, 24),
                    (6, 27, 7, 5, 21),
                    (8, 26, 9, 7, 18),
                    (10, 25, 11, 9, 15),
                ];
                let mut s = 0.0;
                for (a, b, c, d, e) in idx {
                    s += 3.0 * v(a) * v(a) * v(a) * (v(b) - v(c)).exp();
                    s -= 2.0 * v(d) * v(d) * v(d) * (v(a) - v(e)).exp();
                }
                s
            }
            3 => {
                let inner = (1.0 + v(6)) / (2.0 - v(46))
                    + (1.0 + v(7)) / (2.0 - v(47))
                    + (1.0 + v(8)) / (2.0 - v(48))
                    + (1.0 + v(9)) / (2.0 - v(49))
                    + (1.0 + v(10)) / (2.0 - v(50));
                (1.0 - v(1) * v(1) + 2.0 * v(3) * v(4)) / (1.1 + v(5))
                    - 2.0 * (1.0 + inner).sqrt() * (v(20) - v(10) - v(30)).exp()
            }
            4 => {
                let s = v(10) + v(20) + v(30) + v(40) + v(50) + v(60) + v(70) + v(80) + v(90) + v(100);
                (v(1) * v(1) - v(2) * v(2)) * (1.0 - (-v(5) * v(7)).exp()) + 3.0 * v(3) * (-s).exp()
            }
            5 => {
                let coef = [3.0, 5.0 / 3.0, 9.0 / 7.0, 17.0 / 15.0, 33.0 / 31.0, 65.0 / 63.0, 129.0 / 127.0,
                    257.0 / 255.0, 513.0 / 511.0, 1025.0 / 1023.0];
                let mut s = 0.0;
                for j in 1..=10 {
                    s += coef[j - 1] * v(5 * j) * v(10 * j) * v(j);
                }
                (1.0 + (v(1) + v(2)).sin()) / (1.0 - (v(1) * v(2)).sin()) - s
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn model1_zero_input() {
        assert_eq!(signal(1, at(10, |_| 0.0).view()).unwrap(), 0.0);
    }

    #[test]
    fn model3_zero_input() {
        let v = signal(3, at(50, |_| 0.0).view()).unwrap();
        let want = 1.0 / 1.1 - 2.0 * 3.5f64.sqrt();
        assert!((v - want).abs() < 1e-15);
        assert!((v - (-2.832566478)).abs() < 1e-9);
    }

    #[test]
    fn three_points_per_model_match_hand_evaluation() {
        for model in 1..=5u8 {
            let d = min_dimension(model).unwrap();
            let points = [
                at(d, |k| ((k * 7) % 11) as f64 / 10.0 - 0.5),
                at(d, |k| if k % 2 == 0 { 0.9 } else { -0.3 }),
                at(d, |k| (k as f64 * 0.37).sin()),
            ];
            for p in &points {
                let got = signal(model, p.view()).unwrap();
                let want = hand(model, p);
                assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "model {model}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn model5_denominator_bounded() {
        let lo = 1.0 - 1f64.sin();
        assert!(lo > 0.15);
    }

    #[test]
    fn dimension_checks() {
        for (m, d) in [(1, 9), (2, 28), (3, 49), (4, 99), (5, 99)] {
            assert!(generate(&SimModelSpec { model_id: m, n: 5, d, seed: 0 }).is_err());
            assert!(generate(&SimModelSpec { model_id: m, n: 5, d: d + 1, seed: 0 }).is_ok());
        }
        assert!(SimModelSpec::default_for(6, 0).is_err());
        assert!(generate(&SimModelSpec { model_id: 1, n: 0, d: 10, seed: 0 }).is_err());
    }

    #[test]
    fn defaults_match_table() {
        let dims: Vec<_> = (1..=5u8)
            .map(|m| {
                let s = SimModelSpec::default_for(m, 0).unwrap();
                (s.n, s.d)
            })
            .collect();
        assert_eq!(dims, vec![(600, 10), (800, 30), (800, 50), (800, 100), (800, 100)]);
    }

    #[test]
    fn seeded_and_shared_features() {
        let a = generate(&SimModelSpec { model_id: 4, n: 30, d: 100, seed: 5 }).unwrap();
        let b = generate(&SimModelSpec { model_id: 4, n: 30, d: 100, seed: 5 }).unwrap();
        let c = generate(&SimModelSpec { model_id: 5, n: 30, d: 100, seed: 5 }).unwrap();
        assert_eq!(a.features(), b.features());
        assert_eq!(a.response(), b.response());
        assert_eq!(a.features(), c.features());
        assert_ne!(a.response(), c.response());
    }

    #[test]
    fn noise_is_standard_normal() {
        let n = 100_000;
        let ds = generate(&SimModelSpec { model_id: 1, n, d: 10, seed: 77 }).unwrap();
        let e: Vec<f64> = (0..n).map(|i| ds.response()[i] - signal(1, ds.row(i)).unwrap()).collect();
        let mean = e.iter().sum::<f64>() / n as f64;
        let var = e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 3.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn features_uniform_on_cube() {
        let ds = generate(&SimModelSpec { model_id: 2, n: 4000, d: 30, seed: 3 }).unwrap();
        assert!(ds.features().iter().all(|v| (-1.0..=1.0).contains(v)));
        for col in ds.features().columns() {
            let m = col.mean().unwrap();
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (col.len() - 1) as f64;
            // Sd of the mean is sqrt(1/3 / 4000) ~ 0.0091; of the variance ~ 0.0047.
            assert!(m.abs() < 0.04, "{m}");
            assert!((var - 1.0 / 3.0).abs() < 0.025, "{var}");
        }
    }

    #[test]
    fn signal_is_pure() {
        let x = at(100, |k| (k as f64).cos());
        for m in 1..=5u8 {
            assert_eq!(signal(m, x.view()).unwrap().to_bits(), signal(m, x.view()).unwrap().to_bits());
        }
    }
}
