//! Simulation of Markov-switching Student-t panels, plus brute-force oracles
//! (path enumeration, density-slice quadrature) that share no code with the
//! estimation and risk paths they are used to check.

mod oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::ReturnPanel;
use crate::msmodel::MsTModel;

pub use oracle::{
    brute_force_loglik, brute_force_posteriors, grid_conditional_es, grid_conditional_quantile,
    BruteForcePosteriors, GridComponent,
};

#[derive(Debug, Clone)]
pub struct SimSpec {
    pub model: MsTModel,
    /// Number of observations.
    pub t: usize,
    pub seed: u64,
}

const STREAM_STATE: u64 = 0;
const STREAM_OBS: u64 = 1;

/// SplitMix64 finalizer over `(seed, t, stream)`.
fn counter_seed(seed: u64, t: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(t.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// RNG for draw `t` of `stream`; independent of evaluation order.
fn rng_at(seed: u64, t: usize, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(counter_seed(seed, t as u64, stream))
}

fn draw_index(probs: impl Iterator<Item = f64>, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        if p > 0.0 {
            last = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last
}

/// Simulates a state path and a return panel from `spec.model`.
///
/// States follow the chain from `delta` and `Q`; each observation is drawn
/// as `mu + L z / sqrt(w)` with `z` standard normal and
/// `w ~ Gamma(nu/2, rate nu/2)`. Every time index owns its own RNG stream, so
/// output is identical for identical seeds regardless of thread count.
pub fn sample_path(spec: &SimSpec) -> Result<(Vec<usize>, ReturnPanel)> {
    if spec.t == 0 {
        return Err(Error::invalid("simulation length must be positive"));
    }
    let model = &spec.model;
    let mut states = Vec::with_capacity(spec.t);
    for t in 0..spec.t {
        let u: f64 = rng_at(spec.seed, t, STREAM_STATE).random();
        let s = if t == 0 {
            draw_index(model.initial().iter().copied(), u)
        } else {
            let prev = states[t - 1];
            draw_index(model.transition().row(prev).iter().copied(), u)
        };
        states.push(s);
    }
    let p = model.dim();
    let gammas: Vec<Gamma<f64>> = model
        .regimes()
        .iter()
        .map(|r| Gamma::new(r.nu() / 2.0, 2.0 / r.nu()).map_err(|e| Error::invalid(e.to_string())))
        .collect::<Result<_>>()?;
    let rows: Vec<Vec<f64>> = states
        .par_iter()
        .enumerate()
        .map(|(t, &s)| {
            let mut rng = rng_at(spec.seed, t, STREAM_OBS);
            let reg = model.regime(s);
            let w: f64 = gammas[s].sample(&mut rng);
            let z: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
            let l = reg.cholesky();
            let inv_sqrt_w = 1.0 / w.sqrt();
            (0..p)
                .map(|i| {
                    let lz: f64 = (0..=i).map(|k| l[(i, k)] * z[k]).sum();
                    reg.mu()[i] + lz * inv_sqrt_w
                })
                .collect()
        })
        .collect();
    let panel = ReturnPanel::from_rows(&rows)?;
    Ok((states, panel))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tdist::MvtParams;
    use nalgebra::DMatrix;

    fn two_state(q: DMatrix<f64>, delta: Vec<f64>) -> MsTModel {
        let a = MvtParams::from_slices(&[0.0, 0.0], &[1.0, 0.2, 0.2, 1.0], 5.0).unwrap();
        let b = MvtParams::from_slices(&[1.0, -1.0], &[2.0, -0.5, -0.5, 1.0], 8.0).unwrap();
        MsTModel::new(vec![a, b], q, delta).unwrap()
    }

    #[test]
    fn deterministic_for_seed() {
        let spec = SimSpec {
            model: two_state(DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]), vec![0.5, 0.5]),
            t: 500,
            seed: 42,
        };
        let (s1, p1) = sample_path(&spec).unwrap();
        let (s2, p2) = sample_path(&spec).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(p1, p2);
        let one_thread = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let (s3, p3) = one_thread.install(|| sample_path(&spec).unwrap());
        assert_eq!(s1, s3);
        assert_eq!(p1, p3);
        let (_, p4) = sample_path(&SimSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(p1, p4);
    }

    #[test]
    fn identity_chain_stays_put() {
        let spec = SimSpec {
            model: two_state(DMatrix::identity(2, 2), vec![0.0, 1.0]),
            t: 300,
            seed: 1,
        };
        let (s, _) = sample_path(&spec).unwrap();
        assert!(s.iter().all(|&v| v == 1));
    }

    #[test]
    fn ergodic_frequencies() {
        // stationary distribution of [[0.9, 0.1], [0.3, 0.7]] is (0.75, 0.25)
        let t = 100_000;
        let spec = SimSpec {
            model: two_state(DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.3, 0.7]), vec![1.0, 0.0]),
            t,
            seed: 9,
        };
        let (s, _) = sample_path(&spec).unwrap();
        let freq = s.iter().filter(|&&v| v == 0).count() as f64 / t as f64;
        assert!((freq - 0.75).abs() < 3.0 / (t as f64).sqrt(), "{freq}");
    }

    #[test]
    fn covariance_moment() {
        let nu = 7.0;
        let r = MvtParams::from_slices(&[0.5, -0.2], &[1.0, 0.4, 0.4, 0.5], nu).unwrap();
        let spec = SimSpec {
            model: MsTModel::single(r).unwrap(),
            t: 100_000,
            seed: 3,
        };
        let (_, panel) = sample_path(&spec).unwrap();
        let n = panel.len() as f64;
        let y = panel.returns();
        let m0 = y.column(0).sum() / n;
        let m1 = y.column(1).sum() / n;
        let mut c = [0.0; 3];
        for t in 0..panel.len() {
            let a = y[(t, 0)] - m0;
            let b = y[(t, 1)] - m1;
            c[0] += a * a / n;
            c[1] += a * b / n;
            c[2] += b * b / n;
        }
        let f = nu / (nu - 2.0);
        // sampling error of a heavy-tailed second moment at T = 1e5 is a few percent
        assert!((c[0] - f * 1.0).abs() < 0.05 * f);
        assert!((c[1] - f * 0.4).abs() < 0.05 * f);
        assert!((c[2] - f * 0.5).abs() < 0.05 * f);
        assert!((m0 - 0.5).abs() < 0.02 && (m1 + 0.2).abs() < 0.02);
    }
}
