//! Statistical primitives: agreement, classification metrics, exact binomial
//! intervals with finite population correction, and the percentile bootstrap.

pub mod agreement;
pub mod binomial;
pub mod bootstrap;
pub mod classification;

pub use agreement::{
    aggregate_crowd, agreement_row, fleiss_kappa, percent_agreement, AgreementRow,
    AnnotationMatrix, CrowdRule, Kappa,
};
pub use binomial::{
    clopper_pearson, clopper_pearson_fpc, sign_test_p_value, Interval, IntervalMethod,
};
pub use bootstrap::{bootstrap_distribution, bootstrap_percentile, percentile};
pub use classification::{accuracy, detection_prf, roc_auc, weighted_f1, Detection};

/// Mean and sample standard deviation (`n - 1` denominator; 0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}
