use crate::panel::{Panel, OCCUPANCY};
use crate::{Error, Result};

/// Occupancy above which a time step counts as peak.
pub const DEFAULT_PEAK_OCCUPANCY: f64 = 8.0;

fn check_pair(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::Domain("metric over an empty sample".into()));
    }
    if y.len() != yhat.len() {
        return Err(Error::Shape(format!(
            "{} targets vs {} predictions",
            y.len(),
            yhat.len()
        )));
    }
    Ok(())
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    let mse = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64;
    Ok(mse.sqrt())
}

/// MAE after removing the seasonal and trend levels from both sides.
pub fn residual_mae(y: &[f64], yhat: &[f64], seasonal: &[f64], trend: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    if seasonal.len() != y.len() || trend.len() != y.len() {
        return Err(Error::Shape("decomposition slices do not match targets".into()));
    }
    let level = |i: usize| seasonal[i] + trend[i];
    let ry: Vec<f64> = (0..y.len()).map(|i| y[i] - level(i)).collect();
    let ryhat: Vec<f64> = (0..y.len()).map(|i| yhat[i] - level(i)).collect();
    mae(&ry, &ryhat)
}

/// Time steps split into peak and off-peak; each step appears in exactly one list.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Partition {
    pub peak: Vec<usize>,
    pub off_peak: Vec<usize>,
}

impl Partition {
    pub fn is_peak(&self, t: usize) -> bool {
        self.peak.binary_search(&t).is_ok()
    }
}

/// Mean occupancy across sensors at each step, over observed cells only.
/// Steps with no observation yield NaN.
pub fn mean_occupancy(p: &Panel) -> Vec<f64> {
    (0..p.n_steps())
        .map(|t| {
            let (sum, count) = (0..p.n_sensors())
                .filter(|&i| p.is_observed(i, t, OCCUPANCY))
                .fold((0.0, 0usize), |(s, c), i| (s + p.value(i, t, OCCUPANCY), c + 1));
            if count == 0 {
                f64::NAN
            } else {
                sum / count as f64
            }
        })
        .collect()
}

pub fn split_peak_series(mean_occupancy: &[f64], threshold: f64) -> Partition {
    let mut out = Partition::default();
    for (t, &o) in mean_occupancy.iter().enumerate() {
        if o > threshold {
            out.peak.push(t);
        } else {
            out.off_peak.push(t);
        }
    }
    out
}

/// A step is peak when sensor-mean occupancy exceeds `threshold`.
pub fn split_peak(p: &Panel, threshold: f64) -> Result<Partition> {
    if p.n_features() <= OCCUPANCY || p.features()[OCCUPANCY] != "occupancy" {
        return Err(Error::Shape("panel has no occupancy feature".into()));
    }
    Ok(split_peak_series(&mean_occupancy(p), threshold))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 1.0);
        assert_eq!(rmse(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 1.0);
        // |1-2| + 0 + |3-5| = 3 over 3; squares 1 + 0 + 4 = 5 over 3.
        assert!((mae(&[1.0, 2.0, 3.0], &[2.0, 2.0, 5.0]).unwrap() - 1.0).abs() < 1e-15);
        let r = rmse(&[1.0, 2.0, 3.0], &[2.0, 2.0, 5.0]).unwrap();
        assert!((r - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(matches!(mae(&[], &[]), Err(Error::Domain(_))));
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn residual_mae_matches_plain_mae() {
        let y = [3.0, 5.0, 8.0];
        let yhat = [2.5, 6.0, 8.0];
        let s = [0.3, -0.2, 1.0];
        let t = [2.0, 4.0, 6.0];
        assert!((residual_mae(&y, &yhat, &s, &t).unwrap() - mae(&y, &yhat).unwrap()).abs() < 1e-12);
        assert_eq!(residual_mae(&y, &y, &s, &t).unwrap(), 0.0);
    }

    #[test]
    fn peak_split() {
        let p = split_peak_series(&[0.0, 0.0], 8.0);
        assert_eq!(p.peak, Vec::<usize>::new());
        assert_eq!(p.off_peak, vec![0, 1]);
        let p = split_peak_series(&[10.0; 3], 8.0);
        assert_eq!(p.peak, vec![0, 1, 2]);
        // Hand count: values above 8 at steps 2, 3 and 6; 8 itself is off-peak.
        let day = [1.0, 5.0, 9.0, 12.0, 8.0, 7.5, 8.5, 3.0];
        let p = split_peak_series(&day, 8.0);
        assert_eq!(p.peak, vec![2, 3, 6]);
        assert_eq!(p.off_peak, vec![0, 1, 4, 5, 7]);
        assert!(p.is_peak(6) && !p.is_peak(4));
    }
}
