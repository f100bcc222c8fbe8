#![allow(dead_code)]

use std::path::PathBuf;

use eaef_core::{AffectVector, DocRecord, Level, Speaker};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn record(i: usize) -> DocRecord {
    DocRecord {
        segment_id: format!("seg{i:05}"),
        level: if i % 7 == 0 { Level::Session } else { Level::Sentence },
        session_id: format!("session{:02}", i % 13),
        speaker: if i % 2 == 0 { Speaker::Client } else { Speaker::Therapist },
        text: format!("text of segment {i}, with \"quotes\" and ünïcode"),
        affect_summary: AffectVector {
            fear: (i % 3) as f64,
            valence: -0.475 + i as f64 * 1e-3,
            ..AffectVector::ZERO
        },
    }
}

pub fn uniform_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Points scattered around `centers` random unit directions.
pub struct Mixture {
    centers: Vec<Vec<f64>>,
    spread: f64,
    rng: ChaCha8Rng,
}

impl Mixture {
    pub fn new(centers: usize, dim: usize, spread: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = (0..centers)
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| gaussian(&mut rng)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / n).collect()
            })
            .collect();
        Mixture { centers, spread, rng }
    }

    pub fn sample(&mut self) -> Vec<f64> {
        let c = self.rng.gen_range(0..self.centers.len());
        let spread = self.spread;
        let center = self.centers[c].clone();
        center
            .into_iter()
            .map(|x| x + spread * gaussian(&mut self.rng))
            .collect()
    }
}

/// Full cosine between two slices, no shortcuts.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / (na * nb)
}
