//! The statistics toolbox on small hand-made inputs.
//!
//! ```text
//! cargo run -p labelaudit --example agreement_stats
//! ```

use std::collections::HashSet;

use labelaudit::stats::{
    bootstrap_percentile, clopper_pearson, clopper_pearson_fpc, detection_prf, fleiss_kappa, percent_agreement,
    roc_auc, sign_test_p_value, weighted_f1, AnnotationMatrix,
};
use labelaudit::Label;

fn main() -> labelaudit::Result<()> {
    let l = |b: &[u8]| b.iter().map(|&x| Label::from_bool(x == 1)).collect::<Vec<_>>();

    // Three annotators, six items.
    let ratings = [l(&[1, 1, 1]), l(&[1, 1, 0]), l(&[0, 0, 0]), l(&[0, 1, 0]), l(&[1, 1, 1]), l(&[0, 0, 0])];
    let m = AnnotationMatrix::from_labels(&ratings)?;
    println!("fleiss kappa {}  percent agreement {:.3}", fleiss_kappa(&m), percent_agreement(&m));

    let truth = l(&[1, 1, 0, 0, 1, 0, 1, 0]);
    let scores = [0.9, 0.7, 0.4, 0.2, 0.6, 0.65, 0.8, 0.1];
    let predicted: Vec<Label> = scores.iter().map(|&s| Label::from_bool(s > 0.5)).collect();
    println!("roc auc {:.3}  weighted f1 {:.3}", roc_auc(&scores, &truth)?, weighted_f1(&truth, &predicted)?);

    let universe: HashSet<u32> = (0..20).collect();
    let flagged: HashSet<u32> = [1, 4, 7, 9].into();
    let errors: HashSet<u32> = [1, 4, 8].into();
    let d = detection_prf(&flagged, &errors, &universe)?;
    println!("detection precision {:.2} recall {:.2} f1 {:.2}", d.precision, d.recall, d.f1);

    let cp = clopper_pearson(12, 80, 0.05)?;
    let fpc = clopper_pearson_fpc(12, 80, 400, 0.05)?;
    println!("12/80: exact [{:.4}, {:.4}], with N=400 [{:.4}, {:.4}]", cp.lower, cp.upper, fpc.lower, fpc.upper);

    let sample = [0.61, 0.58, 0.66, 0.70, 0.55, 0.63, 0.59, 0.68];
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let b = bootstrap_percentile(&sample, mean, 1000, 0.05, 42)?;
    println!("bootstrap 95% interval of the mean [{:.3}, {:.3}]", b.lower, b.upper);

    println!("sign test, 9 wins of 10: p = {:.4}", sign_test_p_value(9, 10));
    Ok(())
}
