//! Synthetic multi-domain generators with a known split between
//! class-bearing and domain-bearing input positions.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::DomainDataset;
use crate::error::{Error, Result};
use crate::rng;

fn domain_names(k: usize) -> Vec<String> {
    (0..k).map(|d| format!("d{d}")).collect()
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}

/// Parameters of the spurious-Gaussian benchmark.
///
/// Signal dimensions carry class means shared by every domain. Nuisance
/// dimensions carry a mean vector of `±nuisance_strength` entries whose
/// arrangement is re-drawn for every (domain, class) pair, so it predicts the
/// class inside a source domain but not across domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpuriousGaussianParams {
    pub num_domains: usize,
    pub classes: usize,
    pub signal_dims: usize,
    pub nuisance_dims: usize,
    pub nuisance_strength: f64,
    pub noise_sd: f64,
    /// Distance between neighbouring class means in signal space.
    pub signal_separation: f64,
    pub n_per_domain_class: usize,
    pub seed: u64,
}

impl Default for SpuriousGaussianParams {
    fn default() -> Self {
        SpuriousGaussianParams {
            num_domains: 4,
            classes: 3,
            signal_dims: 2,
            nuisance_dims: 8,
            nuisance_strength: 3.0,
            noise_sd: 0.5,
            signal_separation: 2.0,
            n_per_domain_class: 500,
            seed: 0,
        }
    }
}

impl SpuriousGaussianParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_domains < 1 || self.signal_dims < 1 || self.n_per_domain_class < 1 {
            return Err(Error::Config(
                "num_domains, signal_dims and n_per_domain_class must be ≥ 1".into(),
            ));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        for (name, v) in [
            ("nuisance_strength", self.nuisance_strength),
            ("noise_sd", self.noise_sd),
            ("signal_separation", self.signal_separation),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and ≥ 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Class means in signal space: evenly spaced on a line for one signal
    /// dimension, otherwise on a circle in the first two dimensions.
    pub fn signal_means(&self) -> Vec<Vec<f64>> {
        let c_count = self.classes as f64;
        (0..self.classes)
            .map(|c| {
                let mut mu = vec![0.0; self.signal_dims];
                if self.signal_dims == 1 {
                    mu[0] = self.signal_separation * (c as f64 - (c_count - 1.0) / 2.0);
                } else {
                    let radius = self.signal_separation / (2.0 * (PI / c_count).sin());
                    let angle = 2.0 * PI * c as f64 / c_count;
                    mu[0] = radius * angle.cos();
                    mu[1] = radius * angle.sin();
                }
                mu
            })
            .collect()
    }
}

pub fn generate_spurious_gaussian(p: &SpuriousGaussianParams) -> Result<DomainDataset> {
    p.validate()?;
    let width = p.signal_dims + p.nuisance_dims;
    let means = p.signal_means();
    let template: Vec<f64> = (0..p.nuisance_dims)
        .map(|i| if i % 2 == 0 { p.nuisance_strength } else { -p.nuisance_strength })
        .collect();
    let rows = p.num_domains * p.classes * p.n_per_domain_class;
    let mut x = Vec::with_capacity(rows * width);
    let mut y = Vec::with_capacity(rows);
    let mut domain = Vec::with_capacity(rows);
    let mut rng = rng::seeded(p.seed);
    for d in 0..p.num_domains {
        for (c, mu) in means.iter().enumerate() {
            let mut nuisance = template.clone();
            nuisance.shuffle(&mut rng);
            for _ in 0..p.n_per_domain_class {
                for &m in mu.iter().chain(&nuisance) {
                    let z: f64 = rng.sample(StandardNormal);
                    x.push(m + p.noise_sd * z);
                }
                y.push(c);
                domain.push(d);
            }
        }
    }
    DomainDataset::new(x, vec![width], y, domain, domain_names(p.num_domains), p.classes)
}

/// Parameters of the shifted-waveform benchmark. The class sets the
/// frequency of a burst inside a fixed central window; the domain adds a
/// drift plus periodic interference on every step outside that window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WaveformParams {
    pub num_domains: usize,
    pub classes: usize,
    pub length: usize,
    pub n_per_domain_class: usize,
    pub seed: u64,
    pub background_amplitude: f64,
    pub noise_sd: f64,
    pub motif_width: usize,
}

impl Default for WaveformParams {
    fn default() -> Self {
        WaveformParams {
            num_domains: 4,
            classes: 3,
            length: 64,
            n_per_domain_class: 200,
            seed: 0,
            background_amplitude: 2.0,
            noise_sd: 0.1,
            motif_width: 16,
        }
    }
}

impl WaveformParams {
    pub fn validate(&self) -> Result<()> {
        if self.length < 16 {
            return Err(Error::Config(format!("length must be ≥ 16, got {}", self.length)));
        }
        if self.num_domains < 1 || self.n_per_domain_class < 1 {
            return Err(Error::Config("num_domains and n_per_domain_class must be ≥ 1".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.motif_width < 2 || self.motif_width >= self.length {
            return Err(Error::Config(format!(
                "motif_width must lie in [2, {}), got {}",
                self.length, self.motif_width
            )));
        }
        for (name, v) in [
            ("background_amplitude", self.background_amplitude),
            ("noise_sd", self.noise_sd),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and ≥ 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Half-open range of motif time steps.
    pub fn motif_window(&self) -> std::ops::Range<usize> {
        let start = (self.length - self.motif_width) / 2;
        start..start + self.motif_width
    }
}

struct Background {
    slope: f64,
    offset: f64,
    freq: f64,
    phase: f64,
}

impl Background {
    fn draw(seed: u64, d: usize) -> Self {
        let mut r = rng::seeded(derive_seed(seed, &[0xb9, d as u64]));
        Background {
            slope: r.random_range(-1.0..1.0),
            offset: r.random_range(-1.0..1.0),
            freq: r.random_range(0.02..0.2),
            phase: r.random_range(0.0..2.0 * PI),
        }
    }

    fn at(&self, t: usize, length: usize) -> f64 {
        let u = t as f64 / length as f64;
        self.offset + self.slope * u + (2.0 * PI * self.freq * t as f64 + self.phase).sin()
    }
}

/// One series for (domain, class, sample index). Noise and motif jitter
/// depend only on (seed, class, index), so with zero background amplitude
/// the same index yields the same series in every domain.
fn waveform(p: &WaveformParams, bg: &Background, c: usize, i: usize) -> Vec<f64> {
    let mut r = rng::seeded(derive_seed(p.seed, &[0x5a, c as u64, i as u64]));
    let window = p.motif_window();
    let cycles = (c + 1) as f64;
    let amp = 1.0 + 0.1 * r.random_range(-1.0..1.0);
    let phase = 0.2 * r.random_range(-1.0..1.0);
    (0..p.length)
        .map(|t| {
            let z: f64 = r.sample(StandardNormal);
            let base = if window.contains(&t) {
                let u = (t - window.start) as f64 / p.motif_width as f64;
                let envelope = (PI * u).sin();
                amp * envelope * (2.0 * PI * cycles * u + phase).sin()
            } else {
                p.background_amplitude * bg.at(t, p.length)
            };
            base + p.noise_sd * z
        })
        .collect()
}

pub fn generate_shifted_waveforms(p: &WaveformParams) -> Result<DomainDataset> {
    p.validate()?;
    let rows = p.num_domains * p.classes * p.n_per_domain_class;
    let mut x = Vec::with_capacity(rows * p.length);
    let mut y = Vec::with_capacity(rows);
    let mut domain = Vec::with_capacity(rows);
    for d in 0..p.num_domains {
        let bg = Background::draw(p.seed, d);
        for c in 0..p.classes {
            for i in 0..p.n_per_domain_class {
                x.extend(waveform(p, &bg, c, i));
                y.push(c);
                domain.push(d);
            }
        }
    }
    DomainDataset::new(x, vec![1, p.length], y, domain, domain_names(p.num_domains), p.classes)
}
