//! Evaluation protocol: four-parameter logistic remapping, Pearson and
//! Spearman correlations, and the binary-consistency score for 2AFC sets.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Fitted parameters of `y' = (b1 - b2) / (1 + exp(-(x - b3)/|b4|)) + b2`.
///
/// Only `|b4|` enters the model, so the fit is invariant to its sign.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LogisticFit {
    pub beta: [f64; 4],
    /// False when the iteration budget ran out; the parameters are then the
    /// best ones seen.
    pub converged: bool,
}

impl LogisticFit {
    pub fn eval(&self, x: f64) -> f64 {
        let [b1, b2, b3, b4] = self.beta;
        let denom = b4.abs().max(1e-12);
        (b1 - b2) / (1.0 + (-(x - b3) / denom).exp()) + b2
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn population_std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Initialization of the logistic fit from the data.
pub fn logistic_init(pred: &[f64], target: &[f64]) -> [f64; 4] {
    let b1 = target.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let b2 = target.iter().copied().fold(f64::INFINITY, f64::min);
    let b3 = mean(pred);
    let b4 = population_std(pred) / 4.0;
    [b1, b2, b3, b4]
}

fn sse(beta: &[f64; 4], pred: &[f64], target: &[f64]) -> f64 {
    let fit = LogisticFit { beta: *beta, converged: true };
    pred.iter()
        .zip(target)
        .map(|(&x, &y)| {
            let r = fit.eval(x) - y;
            r * r
        })
        .sum()
}

/// Solves a 4×4 linear system with partial pivoting. Returns None when the
/// system is numerically singular.
#[allow(clippy::needless_range_loop)]
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let mut pivot = col;
        for row in col + 1..4 {
            if a[row][col].abs() > a[pivot][col].abs() {
                pivot = row;
            }
        }
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for col in (0..4).rev() {
        let mut s = b[col];
        for k in col + 1..4 {
            s -= a[col][k] * x[k];
        }
        x[col] = s / a[col][col];
    }
    Some(x)
}

const MAX_FIT_ITERS: usize = 200;
const FIT_RELATIVE_TOL: f64 = 1e-10;

/// Least-squares fit of the four-parameter logistic by damped
/// Gauss-Newton with the analytic Jacobian. Steps are accepted only when
/// they reduce the squared error, so the fit never regresses below its
/// initialization.
pub fn fit_logistic(pred: &[f64], target: &[f64]) -> Result<LogisticFit> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "prediction length {} vs target length {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.len() < 5 {
        return Err(Error::InvalidArgument(format!(
            "logistic fit needs at least 5 points, got {}",
            pred.len()
        )));
    }
    if population_std(pred) == 0.0 {
        return Err(Error::DegenerateInput(
            "constant predictions cannot be fitted".into(),
        ));
    }

    let mut beta = logistic_init(pred, target);
    if beta[3] == 0.0 {
        beta[3] = 1e-6;
    }
    let mut current_sse = sse(&beta, pred, target);
    let mut lambda = 1e-3;
    let mut converged = false;

    for _ in 0..MAX_FIT_ITERS {
        // assemble J^T J and J^T r at the current point
        let [b1, b2, b3, b4] = beta;
        let denom = b4.abs().max(1e-12);
        let sign = if b4 >= 0.0 { 1.0 } else { -1.0 };
        let mut jtj = [[0.0f64; 4]; 4];
        let mut jtr = [0.0f64; 4];
        for (&x, &y) in pred.iter().zip(target) {
            let u = (x - b3) / denom;
            let l = 1.0 / (1.0 + (-u).exp());
            let f = (b1 - b2) * l + b2;
            let lp = l * (1.0 - l);
            let j = [
                l,
                1.0 - l,
                -(b1 - b2) * lp / denom,
                -(b1 - b2) * lp * u * sign / denom,
            ];
            let r = f - y;
            for a in 0..4 {
                jtr[a] += j[a] * r;
                for b in 0..4 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }

        // damped step with inner retries on rejection
        let mut accepted = false;
        for _ in 0..20 {
            let mut damped = jtj;
            for (d, row) in damped.iter_mut().enumerate() {
                row[d] += lambda * (1.0 + jtj[d][d]);
            }
            let rhs = [-jtr[0], -jtr[1], -jtr[2], -jtr[3]];
            let Some(step) = solve4(damped, rhs) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = [
                beta[0] + step[0],
                beta[1] + step[1],
                beta[2] + step[2],
                beta[3] + step[3],
            ];
            let candidate_sse = sse(&candidate, pred, target);
            if candidate_sse.is_finite() && candidate_sse < current_sse {
                let rel = (current_sse - candidate_sse) / current_sse.max(1e-300);
                beta = candidate;
                current_sse = candidate_sse;
                lambda = (lambda * 0.3).max(1e-12);
                if rel < FIT_RELATIVE_TOL || current_sse <= 1e-300 {
                    converged = true;
                }
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        if converged || !accepted {
            if !accepted {
                // no acceptable step exists; treat the stall as convergence
                converged = true;
            }
            break;
        }
    }

    Ok(LogisticFit { beta, converged })
}

fn pearson_raw(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "lengths {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument(
            "correlation needs at least 2 points".into(),
        ));
    }
    let (ma, mb) = (mean(a), mean(b));
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::DegenerateInput(
            "zero variance in correlation input".into(),
        ));
    }
    Ok(cov / (va * vb).sqrt())
}

/// Pearson linear correlation, optionally after the logistic remapping of
/// the predictions (the standard protocol before reporting).
pub fn plcc(pred: &[f64], target: &[f64], with_fit: bool) -> Result<f64> {
    if with_fit {
        let fit = fit_logistic(pred, target)?;
        let mapped: Vec<f64> = pred.iter().map(|&x| fit.eval(x)).collect();
        pearson_raw(&mapped, target)
    } else {
        pearson_raw(pred, target)
    }
}

/// Fractional (average) ranks, 1-based; ties share the mean of their
/// positions.
pub fn midranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).expect("non-finite rank input"));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share the average 1-based rank
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank-order correlation with midrank tie handling.
pub fn srcc(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "lengths {} vs {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::InvalidArgument(
            "correlation needs at least 2 points".into(),
        ));
    }
    pearson_raw(&midranks(pred), &midranks(target))
}

/// One 2AFC item: model error scores for both candidates and the human
/// judgment weights (lower-is-better orientation, `p_a + p_b = 1`).
#[derive(Debug, Clone, Copy)]
pub struct Judgment {
    pub y_a: f64,
    pub y_b: f64,
    pub p_a: f64,
    pub p_b: f64,
}

fn validate_judgments(items: &[Judgment]) -> Result<()> {
    if items.is_empty() {
        return Err(Error::InvalidArgument("empty judgment list".into()));
    }
    for (i, item) in items.iter().enumerate() {
        if (item.p_a + item.p_b - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "judgment {i}: p_a + p_b = {} != 1",
                item.p_a + item.p_b
            )));
        }
    }
    Ok(())
}

/// Binary preference consistency: 1 when the strict model ordering agrees
/// with the strict human ordering, 0.5 for a model tie, else 0; averaged.
pub fn score_2afc(items: &[Judgment]) -> Result<f64> {
    validate_judgments(items)?;
    let total: f64 = items
        .iter()
        .map(|j| {
            if j.y_a == j.y_b {
                0.5
            } else if (j.y_a < j.y_b && j.p_a < j.p_b) || (j.y_a > j.y_b && j.p_a > j.p_b) {
                1.0
            } else {
                0.0
            }
        })
        .sum();
    Ok(total / items.len() as f64)
}

/// Probability-weighted variant: agreement weighted by the human mass on
/// the model-preferred candidate instead of a binary indicator.
pub fn score_2afc_weighted(items: &[Judgment]) -> Result<f64> {
    validate_judgments(items)?;
    let total: f64 = items
        .iter()
        .map(|j| {
            if j.y_a == j.y_b {
                0.5
            } else if j.y_a < j.y_b {
                j.p_b
            } else {
                j.p_a
            }
        })
        .sum();
    Ok(total / items.len() as f64)
}

/// Expectation of a distribution over bins 1..K.
pub fn bin_expectation(probs: &[f64]) -> f64 {
    probs
        .iter()
        .enumerate()
        .map(|(i, &p)| (i + 1) as f64 * p)
        .sum()
}

/// Evaluation summary for one manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub plcc: f64,
    pub srcc: f64,
    pub fit: LogisticFit,
    pub n_samples: usize,
    /// Present only for 2AFC manifests.
    pub twoafc: Option<f64>,
}

impl EvalReport {
    /// Flat `key=value` text rendering, one entry per line.
    pub fn to_key_value_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("n_samples={}\n", self.n_samples));
        out.push_str(&format!("plcc={}\n", self.plcc));
        out.push_str(&format!("srcc={}\n", self.srcc));
        for (i, b) in self.fit.beta.iter().enumerate() {
            out.push_str(&format!("beta{}={}\n", i + 1, b));
        }
        out.push_str(&format!("fit_converged={}\n", self.fit.converged));
        if let Some(t) = self.twoafc {
            out.push_str(&format!("twoafc={t}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn logistic_init_matches_protocol() {
        let init = logistic_init(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]);
        assert_eq!(init[0], 2.0);
        assert_eq!(init[1], 0.0);
        assert_eq!(init[2], 1.0);
        let expected_b4 = (2.0f64 / 3.0).sqrt() / 4.0;
        assert!((init[3] - expected_b4).abs() < 1e-12);
    }

    #[test]
    fn logistic_refit_recovers_noiseless_curve() {
        let truth = LogisticFit { beta: [1.9, -0.4, 0.3, 0.5], converged: true };
        let pred: Vec<f64> = (0..120).map(|i| -3.0 + i as f64 * 0.05).collect();
        let target: Vec<f64> = pred.iter().map(|&x| truth.eval(x)).collect();
        let fit = fit_logistic(&pred, &target).unwrap();
        let rmse = (pred
            .iter()
            .zip(&target)
            .map(|(&x, &y)| {
                let d = fit.eval(x) - y;
                d * d
            })
            .sum::<f64>()
            / pred.len() as f64)
            .sqrt();
        assert!(rmse <= 1e-6, "rmse {rmse}");
        let p = plcc(&pred, &target, true).unwrap();
        assert!(p >= 1.0 - 1e-6);
    }

    #[test]
    fn logistic_fit_never_worse_than_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = 30;
            let pred: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
            let target: Vec<f64> = pred
                .iter()
                .map(|&x| (2.0 * x).tanh() + rng.gen::<f64>() * 0.2)
                .collect();
            let init = logistic_init(&pred, &target);
            let fit = fit_logistic(&pred, &target).unwrap();
            assert!(sse(&fit.beta, &pred, &target) <= sse(&init, &pred, &target) + 1e-12);
        }
    }

    #[test]
    fn logistic_fit_rejects_degenerate_input() {
        let constant = vec![0.5; 8];
        let target: Vec<f64> = (0..8).map(|i| i as f64).collect();
        assert!(matches!(
            fit_logistic(&constant, &target),
            Err(Error::DegenerateInput(_))
        ));
        assert!(fit_logistic(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn logistic_fit_sign_invariant_in_b4() {
        let a = LogisticFit { beta: [1.0, 0.0, 0.0, 0.5], converged: true };
        let b = LogisticFit { beta: [1.0, 0.0, 0.0, -0.5], converged: true };
        for i in -10..10 {
            let x = i as f64 * 0.3;
            assert_eq!(a.eval(x), b.eval(x));
        }
    }

    #[test]
    fn plcc_trivial_cases() {
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert!((plcc(&y, &y, false).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        assert!((plcc(&neg, &y, false).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn plcc_with_fit_absorbs_saturation() {
        // labels saturate monotonically in the predictions; the logistic
        // remap linearizes the relation
        let pred: Vec<f64> = (0..50).map(|i| -1.0 + i as f64 * 2.0 / 49.0).collect();
        let y: Vec<f64> = pred.iter().map(|&v| (3.0 * v).tanh()).collect();
        let raw = plcc(&pred, &y, false).unwrap();
        let fitted = plcc(&pred, &y, true).unwrap();
        assert!(fitted >= 0.999, "plcc {fitted}");
        assert!(fitted > raw);
    }

    #[test]
    fn plcc_rejects_zero_variance() {
        assert!(matches!(
            plcc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0], false),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn srcc_trivial_and_hand_case() {
        let y = [1.0, 2.0, 3.0, 4.0];
        assert!((srcc(&y, &y).unwrap() - 1.0).abs() < 1e-12);
        let rev = [4.0, 3.0, 2.0, 1.0];
        assert!((srcc(&y, &rev).unwrap() + 1.0).abs() < 1e-12);
        // classic 3-point case: 1 - 6*2/(3*8) = 0.5
        let v = srcc(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        assert_eq!(v, 0.5);
    }

    #[test]
    fn srcc_all_tied_is_degenerate() {
        assert!(matches!(
            srcc(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn srcc_invariant_under_monotone_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = 3 + (rng.gen::<u32>() % 40) as usize;
            let a: Vec<f64> = (0..n).map(|_| (rng.gen::<f64>() * 8.0).round() / 2.0).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let (Ok(base), Ok(mapped)) = (
                srcc(&a, &b),
                srcc(&a.iter().map(|&x| (x * 0.7).exp()).collect::<Vec<_>>(), &b),
            ) else {
                continue; // degenerate draw
            };
            assert!((base - mapped).abs() < 1e-12);
        }
    }

    #[test]
    fn midranks_average_ties() {
        assert_eq!(midranks(&[10.0, 20.0, 20.0, 30.0]), vec![1.0, 2.5, 2.5, 4.0]);
    }

    #[test]
    fn twoafc_score_cases() {
        let agree = Judgment { y_a: 0.1, y_b: 0.9, p_a: 0.2, p_b: 0.8 };
        let disagree = Judgment { y_a: 0.9, y_b: 0.1, p_a: 0.2, p_b: 0.8 };
        let tie = Judgment { y_a: 0.5, y_b: 0.5, p_a: 0.3, p_b: 0.7 };
        assert_eq!(score_2afc(&[agree]).unwrap(), 1.0);
        assert_eq!(score_2afc(&[tie, tie]).unwrap(), 0.5);
        let mixed = score_2afc(&[agree, disagree, tie]).unwrap();
        assert_eq!(mixed, 0.5);
        assert!(score_2afc(&[]).is_err());
        assert!(score_2afc(&[Judgment { y_a: 0.0, y_b: 1.0, p_a: 0.6, p_b: 0.6 }]).is_err());
    }

    #[test]
    fn twoafc_invariant_under_monotone_transform_of_scores() {
        let items = [
            Judgment { y_a: 0.2, y_b: 0.4, p_a: 0.1, p_b: 0.9 },
            Judgment { y_a: 1.5, y_b: 0.1, p_a: 0.8, p_b: 0.2 },
            Judgment { y_a: -0.3, y_b: -0.3, p_a: 0.5, p_b: 0.5 },
        ];
        let mapped: Vec<Judgment> = items
            .iter()
            .map(|j| Judgment { y_a: j.y_a.exp(), y_b: j.y_b.exp(), ..*j })
            .collect();
        assert_eq!(score_2afc(&items).unwrap(), score_2afc(&mapped).unwrap());
    }

    #[test]
    fn weighted_score_tracks_human_mass() {
        let j = Judgment { y_a: 0.1, y_b: 0.9, p_a: 0.25, p_b: 0.75 };
        assert_eq!(score_2afc_weighted(&[j]).unwrap(), 0.75);
    }

    #[test]
    fn bin_expectation_hand_case() {
        assert_eq!(bin_expectation(&[0.0, 0.0, 1.0, 0.0, 0.0]), 3.0);
    }
}
