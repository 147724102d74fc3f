use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::RawSeries;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `amplitude·cos(2π·frequency·s/T + phase)`; `frequency` counts cycles over the series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Harmonic {
    pub frequency: f64,
    pub amplitude: f64,
    pub phase: f64,
}

/// Generator parameters. Variable `i` is
/// `Σ_r trends[i][r]·(s/T)^r + Σ_j mixing[i][j]·source_j(s) + noise`, where
/// `source_j` is the sum of `harmonics[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub variables: usize,
    pub length: usize,
    /// Polynomial coefficients per variable, lowest order first.
    pub trends: Vec<Vec<f64>>,
    /// One harmonic list per latent source (`variables` sources).
    pub harmonics: Vec<Vec<Harmonic>>,
    /// `[M, M]` row-major; `None` means each variable carries only its own source.
    pub mixing: Option<Vec<f64>>,
    pub noise_std: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// Linear trends, two harmonics per source with periods 50 and 20 steps,
    /// and a mixing matrix that blends every source into every variable.
    pub fn standard(variables: usize, length: usize, noise_std: f64, seed: u64) -> Self {
        let m = variables;
        let t = length as f64;
        let trends = (0..m)
            .map(|i| {
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                vec![0.2 * i as f64, sign * (0.5 + 0.25 * i as f64)]
            })
            .collect();
        let harmonics = (0..m)
            .map(|j| {
                let shift = j as f64 * 0.7;
                vec![
                    Harmonic {
                        frequency: t / 50.0,
                        amplitude: 1.0,
                        phase: shift,
                    },
                    Harmonic {
                        frequency: t / 20.0,
                        amplitude: 0.5,
                        phase: 2.0 * shift + 0.3,
                    },
                ]
            })
            .collect();
        let off = if m > 1 { 0.4 / (m - 1) as f64 } else { 0.0 };
        let mixing = (0..m * m)
            .map(|k| if k / m == k % m { 0.6 } else { off })
            .collect();
        Self {
            variables,
            length,
            trends,
            harmonics,
            mixing: Some(mixing),
            noise_std,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let m = self.variables;
        if m == 0 || self.length == 0 {
            return Err(Error::Config("synthetic series need at least one variable and one step".into()));
        }
        if self.trends.len() != m || self.harmonics.len() != m {
            return Err(Error::Config(format!(
                "expected {m} trend and harmonic lists, got {} and {}",
                self.trends.len(),
                self.harmonics.len()
            )));
        }
        if self.mixing.as_ref().is_some_and(|w| w.len() != m * m) {
            return Err(Error::Config(format!("mixing matrix must have {} entries", m * m)));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise_std must be finite and ≥ 0, got {}", self.noise_std)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    /// Observed series, `clean + noise`.
    pub series: RawSeries,
    pub clean: Tensor,
    pub noise: Tensor,
    pub spec: SynthSpec,
}

pub fn synth_generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let (m, len) = (spec.variables, spec.length);
    let sources: Vec<Vec<f64>> = spec
        .harmonics
        .iter()
        .map(|hs| {
            (0..len)
                .map(|s| {
                    let u = s as f64 / len as f64;
                    hs.iter()
                        .map(|h| h.amplitude * (TAU * h.frequency * u + h.phase).cos())
                        .sum()
                })
                .collect()
        })
        .collect();
    let mut clean = vec![0.0; m * len];
    for i in 0..m {
        for s in 0..len {
            let u = s as f64 / len as f64;
            let trend = spec.trends[i].iter().rev().fold(0.0, |acc, c| acc * u + c);
            let seasonal = match &spec.mixing {
                Some(w) => (0..m).map(|j| w[i * m + j] * sources[j][s]).sum(),
                None => sources[i][s],
            };
            clean[i * len + s] = trend + seasonal;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let noise: Vec<f64> = (0..m * len).map(|_| normal.sample(&mut rng)).collect();
    let observed: Vec<f64> = clean.iter().zip(&noise).map(|(c, e)| c + e).collect();
    let series = RawSeries::from_values(format!("synth{}", spec.seed), Tensor::new([m, len], observed)?)?;
    Ok(SynthOutput {
        series,
        clean: Tensor::from_parts(vec![m, len], clean),
        noise: Tensor::from_parts(vec![m, len], noise),
        spec: spec.clone(),
    })
}
