use nalgebra::DMatrix;

use super::MsTModel;
use crate::error::{Error, Result};
use crate::ingest::ReturnPanel;
use crate::linalg::log_sum_exp;

/// `T x L` matrix of per-regime emission log-densities.
pub fn emission_logliks(model: &MsTModel, panel: &ReturnPanel) -> Result<DMatrix<f64>> {
    model.check_panel(panel)?;
    let t_len = panel.len();
    let l = model.n_states();
    let consts: Vec<f64> = model.regimes().iter().map(|r| r.log_norm_const()).collect();
    let mut out = DMatrix::zeros(t_len, l);
    let mut y = vec![0.0; panel.dim()];
    for t in 0..t_len {
        for (j, v) in y.iter_mut().enumerate() {
            *v = panel.returns()[(t, j)];
        }
        for (s, reg) in model.regimes().iter().enumerate() {
            let m = reg.mahalanobis(&y);
            let k = reg.dim() as f64;
            out[(t, s)] = consts[s] - 0.5 * (reg.nu() + k) * (m / reg.nu()).ln_1p();
        }
    }
    Ok(out)
}

pub(super) fn log_matrix(q: &DMatrix<f64>) -> DMatrix<f64> {
    q.map(|v| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY })
}

/// Log-space forward pass. Returns the log filtered probabilities (`T x L`),
/// the per-step log normalizers and the total log-likelihood.
pub(super) fn forward(
    log_emis: &DMatrix<f64>,
    log_q: &DMatrix<f64>,
    delta: &[f64],
) -> Result<(DMatrix<f64>, Vec<f64>, f64)> {
    let (t_len, l) = log_emis.shape();
    let mut log_filt = DMatrix::zeros(t_len, l);
    let mut log_c = vec![0.0; t_len];
    let mut a = vec![0.0; l];
    let mut terms = vec![0.0; l];
    for t in 0..t_len {
        for s in 0..l {
            let prior = if t == 0 {
                if delta[s] > 0.0 {
                    delta[s].ln()
                } else {
                    f64::NEG_INFINITY
                }
            } else {
                for j in 0..l {
                    terms[j] = log_filt[(t - 1, j)] + log_q[(j, s)];
                }
                log_sum_exp(&terms)
            };
            a[s] = prior + log_emis[(t, s)];
        }
        let c = log_sum_exp(&a);
        if !c.is_finite() {
            return Err(Error::Underflow(t));
        }
        log_c[t] = c;
        for s in 0..l {
            log_filt[(t, s)] = a[s] - c;
        }
    }
    let loglik = log_c.iter().sum();
    Ok((log_filt, log_c, loglik))
}

/// Log-likelihood by the log-sum-exp stabilized forward recursion.
pub fn forward_loglik(model: &MsTModel, panel: &ReturnPanel) -> Result<f64> {
    let log_emis = emission_logliks(model, panel)?;
    let (_, _, ll) = forward(&log_emis, &log_matrix(model.transition()), model.initial())?;
    Ok(ll)
}

/// Filtered, smoothed and pairwise state probabilities.
#[derive(Debug, Clone)]
pub struct Smoothed {
    pub loglik: f64,
    /// `T x L`, `P(S_t = l | I_t)`.
    pub filtered: DMatrix<f64>,
    /// `T x L`, `P(S_t = l | I_T)`.
    pub smoothed: DMatrix<f64>,
    /// `T - 1` matrices, entry `(j, l)` of the `t`-th is
    /// `P(S_t = j, S_{t+1} = l | I_T)`.
    pub pairwise: Vec<DMatrix<f64>>,
}

pub(super) struct Posteriors {
    pub loglik: f64,
    pub filtered: DMatrix<f64>,
    pub smoothed: DMatrix<f64>,
    pub pairwise: Option<Vec<DMatrix<f64>>>,
    /// Sum of pairwise marginals over `t`.
    pub transitions: DMatrix<f64>,
}

pub(super) fn forward_backward(
    log_emis: &DMatrix<f64>,
    q: &DMatrix<f64>,
    delta: &[f64],
    keep_pairwise: bool,
) -> Result<Posteriors> {
    let (t_len, l) = log_emis.shape();
    let log_q = log_matrix(q);
    let (log_filt, log_c, loglik) = forward(log_emis, &log_q, delta)?;

    // log beta_t(j), scaled by the forward normalizers
    let mut log_beta = DMatrix::zeros(t_len, l);
    let mut terms = vec![0.0; l];
    for t in (0..t_len.saturating_sub(1)).rev() {
        for j in 0..l {
            for s in 0..l {
                terms[s] = log_q[(j, s)] + log_emis[(t + 1, s)] + log_beta[(t + 1, s)];
            }
            log_beta[(t, j)] = log_sum_exp(&terms) - log_c[t + 1];
        }
    }

    let mut smoothed = DMatrix::zeros(t_len, l);
    let mut row = vec![0.0; l];
    for t in 0..t_len {
        for s in 0..l {
            row[s] = log_filt[(t, s)] + log_beta[(t, s)];
        }
        let z = log_sum_exp(&row);
        if !z.is_finite() {
            return Err(Error::Underflow(t));
        }
        for s in 0..l {
            smoothed[(t, s)] = (row[s] - z).exp();
        }
    }

    let mut transitions = DMatrix::zeros(l, l);
    let mut pairwise = keep_pairwise.then(|| Vec::with_capacity(t_len.saturating_sub(1)));
    let mut xi = DMatrix::zeros(l, l);
    let mut flat = vec![0.0; l * l];
    for t in 0..t_len.saturating_sub(1) {
        for j in 0..l {
            for s in 0..l {
                flat[j * l + s] = log_filt[(t, j)]
                    + log_q[(j, s)]
                    + log_emis[(t + 1, s)]
                    + log_beta[(t + 1, s)];
            }
        }
        let z = log_sum_exp(&flat);
        for j in 0..l {
            for s in 0..l {
                xi[(j, s)] = (flat[j * l + s] - z).exp();
            }
        }
        transitions += &xi;
        if let Some(p) = pairwise.as_mut() {
            p.push(xi.clone());
        }
    }

    Ok(Posteriors {
        loglik,
        filtered: log_filt.map(f64::exp),
        smoothed,
        pairwise,
        transitions,
    })
}

/// Forward-backward smoothing in log space.
pub fn smooth(model: &MsTModel, panel: &ReturnPanel) -> Result<Smoothed> {
    let log_emis = emission_logliks(model, panel)?;
    let post = forward_backward(&log_emis, model.transition(), model.initial(), true)?;
    Ok(Smoothed {
        loglik: post.loglik,
        filtered: post.filtered,
        smoothed: post.smoothed,
        pairwise: post.pairwise.unwrap_or_default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tdist::{mvt_logpdf, MvtParams};

    fn panel() -> ReturnPanel {
        ReturnPanel::from_rows(&[
            vec![0.1, -0.2],
            vec![1.5, 0.3],
            vec![-0.7, 0.9],
            vec![0.0, 0.0],
            vec![2.2, -1.1],
            vec![0.4, 0.4],
        ])
        .unwrap()
    }

    fn regime(m: f64, s: f64, nu: f64) -> MvtParams {
        MvtParams::from_slices(&[m, -m], &[s, 0.2 * s, 0.2 * s, s], nu).unwrap()
    }

    #[test]
    fn single_state_is_iid_sum() {
        let r = regime(0.1, 1.2, 4.0);
        let m = MsTModel::single(r.clone()).unwrap();
        let p = panel();
        let want: f64 = (0..p.len()).map(|t| mvt_logpdf(&p.row(t), &r).unwrap()).sum();
        assert!((forward_loglik(&m, &p).unwrap() - want).abs() < 1e-12);
        let s = smooth(&m, &p).unwrap();
        assert!(s.smoothed.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn duplicated_regime_matches_single() {
        let r = regime(0.3, 0.8, 6.0);
        let single = MsTModel::single(r.clone()).unwrap();
        let dup = MsTModel::new(
            vec![r.clone(), r],
            DMatrix::from_element(2, 2, 0.5),
            vec![0.5, 0.5],
        )
        .unwrap();
        let p = panel();
        let a = forward_loglik(&single, &p).unwrap();
        let b = forward_loglik(&dup, &p).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn rows_normalize_and_pairwise_consistent() {
        let m = MsTModel::new(
            vec![regime(0.5, 0.5, 5.0), regime(-0.5, 2.0, 3.0), regime(0.0, 1.0, 30.0)],
            DMatrix::from_row_slice(3, 3, &[0.8, 0.15, 0.05, 0.1, 0.7, 0.2, 0.0, 0.3, 0.7]),
            vec![0.2, 0.5, 0.3],
        )
        .unwrap();
        let p = panel();
        let s = smooth(&m, &p).unwrap();
        for t in 0..p.len() {
            assert!((s.smoothed.row(t).sum() - 1.0).abs() < 1e-12);
            assert!((s.filtered.row(t).sum() - 1.0).abs() < 1e-12);
        }
        for (t, xi) in s.pairwise.iter().enumerate() {
            for j in 0..3 {
                assert!((xi.row(j).sum() - s.smoothed[(t, j)]).abs() < 1e-12);
                assert!((xi.column(j).sum() - s.smoothed[(t + 1, j)]).abs() < 1e-12);
            }
        }
        // last smoothed row equals last filtered row
        let last = p.len() - 1;
        assert!((s.smoothed.row(last) - s.filtered.row(last)).abs().max() < 1e-12);
    }

    #[test]
    fn time_reversal_symmetry() {
        // symmetric Q and uniform start: a palindromic sequence gives a
        // palindromic smoothed sequence
        let m = MsTModel::new(
            vec![regime(1.0, 0.5, 5.0), regime(-1.0, 0.5, 5.0)],
            DMatrix::from_row_slice(2, 2, &[0.85, 0.15, 0.15, 0.85]),
            vec![0.5, 0.5],
        )
        .unwrap();
        let rows = vec![
            vec![0.9, -1.0],
            vec![-1.2, 0.8],
            vec![0.3, 0.1],
            vec![-1.2, 0.8],
            vec![0.9, -1.0],
        ];
        let p = ReturnPanel::from_rows(&rows).unwrap();
        let s = smooth(&m, &p).unwrap();
        for t in 0..5 {
            assert!((s.smoothed[(t, 0)] - s.smoothed[(4 - t, 0)]).abs() < 1e-12);
        }
    }

    #[test]
    fn extreme_observation_does_not_underflow() {
        let m = MsTModel::new(
            vec![regime(0.0, 1e-4, 50.0), regime(0.0, 1.0, 3.0)],
            DMatrix::from_row_slice(2, 2, &[0.99, 0.01, 0.01, 0.99]),
            vec![0.5, 0.5],
        )
        .unwrap();
        let p = ReturnPanel::from_rows(&[vec![0.0, 0.0], vec![500.0, -300.0], vec![0.0, 0.0]]).unwrap();
        let s = smooth(&m, &p).unwrap();
        assert!(s.loglik.is_finite());
        assert!(s.smoothed[(1, 1)] > 0.999_999);
    }

    #[test]
    fn dimension_mismatch() {
        let m = MsTModel::single(MvtParams::from_slices(&[0.0], &[1.0], 4.0).unwrap()).unwrap();
        assert!(matches!(
            forward_loglik(&m, &panel()),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
