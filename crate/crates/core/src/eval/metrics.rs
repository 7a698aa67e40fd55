use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::zoo::TrainedModel;

pub fn gap_from_accuracies(train_acc: f64, test_acc: f64) -> f64 {
    train_acc - test_acc
}

/// Training accuracy minus test accuracy.
pub fn overfitting_gap(
    model: &TrainedModel,
    target_train: &LabeledDataset,
    target_test: &LabeledDataset,
) -> Result<f64> {
    Ok(gap_from_accuracies(
        model.accuracy(target_train)?,
        model.accuracy(target_test)?,
    ))
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Length(format!(
            "{} xs against {} ys",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 3 {
        return Err(Error::DegenerateInput(format!(
            "{} points, need at least 3",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    // Relative floor: values that only differ by rounding count as constant.
    let tiny = |s: f64, m: f64| s <= n * (f64::EPSILON * m.abs().max(1.0)).powi(2) * 16.0;
    if tiny(sxx, mx) || tiny(syy, my) {
        return Err(Error::DegenerateInput("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Median of a non-empty sample; mean of the middle pair for even sizes.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    })
}
