//! Student-t kernel: univariate CDF, quantile and expected shortfall,
//! multivariate densities with exact marginals and conditionals, and
//! univariate Student-t mixtures.

mod mixture;
mod mvt;
mod univariate;

pub use mixture::{mixture_cdf, mixture_es, mixture_pdf, mixture_quantile, mixture_tail_mean};
pub use mvt::{condition_mvt, marginal_mvt, mvt_logpdf, ConditionalT, MvtParams};
pub use univariate::{t_cdf, t_es, t_logpdf, t_partial_expectation, t_pdf, t_quantile, UniT};
