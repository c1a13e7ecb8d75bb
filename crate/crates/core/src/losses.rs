//! Training objectives: normalized-MOS MSE, the cumulative-distribution
//! (earth mover's) loss for score distributions, and the two-alternative
//! forced-choice objective built on the Bradley-Terry sigmoid model.
//!
//! Every loss exists twice: a plain scalar form for evaluation and tests,
//! and a graph form used by training so gradients flow end to end.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{sigmoid_scalar, Scalar, Tensor};

/// A probability vector over K ordered score bins.
#[derive(Debug, Clone)]
pub struct ScoreDistribution<T>(Vec<T>);

impl<T: Scalar> ScoreDistribution<T> {
    /// Validates non-negativity and unit mass (±1e-6).
    pub fn new(p: Vec<T>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidArgument("empty distribution".into()));
        }
        if p.iter().any(|v| v.as_f64() < 0.0) {
            return Err(Error::InvalidArgument(
                "distribution entries must be non-negative".into(),
            ));
        }
        let sum: f64 = p.iter().map(|v| v.as_f64()).sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "distribution sums to {sum}, expected 1"
            )));
        }
        Ok(Self(p))
    }

    pub fn bins(&self) -> usize {
        self.0.len()
    }

    pub fn probs(&self) -> &[T] {
        &self.0
    }
}

/// Scalar error scores of a 2AFC triplet with the human preference
/// probability for the first candidate.
#[derive(Debug, Clone, Copy)]
pub struct TripletScores<T> {
    pub y_a: T,
    pub y_b: T,
    /// Preference probability for A over B, in [0, 1].
    pub p_ab: T,
}

impl<T: Scalar> TripletScores<T> {
    pub fn new(y_a: T, y_b: T, p_ab: T) -> Result<Self> {
        let p = p_ab.as_f64();
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "preference probability {p} outside [0, 1]"
            )));
        }
        Ok(Self { y_a, y_b, p_ab })
    }
}

/// Mean squared error over a batch of scalar predictions.
pub fn mos_mse<T: Scalar>(pred: &[T], target: &[T]) -> Result<T> {
    if pred.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "prediction batch {} vs target batch {}",
            pred.len(),
            target.len()
        )));
    }
    let n = T::from_f64(pred.len() as f64);
    let sum: T = pred
        .iter()
        .zip(target)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(sum / n)
}

/// Root-mean cumulative-distribution distance between two distributions
/// over the same ordered bins, with exponent `r`.
pub fn emd_loss_with_exponent<T: Scalar>(
    predicted: &ScoreDistribution<T>,
    target: &ScoreDistribution<T>,
    r: f64,
) -> Result<T> {
    if predicted.bins() != target.bins() {
        return Err(Error::ShapeMismatch(format!(
            "bin counts differ: {} vs {}",
            predicted.bins(),
            target.bins()
        )));
    }
    let k = predicted.bins();
    let mut acc = 0.0f64;
    let (mut cp, mut ct) = (0.0f64, 0.0f64);
    for i in 0..k {
        cp += predicted.probs()[i].as_f64();
        ct += target.probs()[i].as_f64();
        acc += (cp - ct).abs().powf(r);
    }
    Ok(T::from_f64((acc / k as f64).powf(1.0 / r)))
}

/// The default r = 2 distribution loss.
pub fn emd_loss<T: Scalar>(
    predicted: &ScoreDistribution<T>,
    target: &ScoreDistribution<T>,
) -> Result<T> {
    emd_loss_with_exponent(predicted, target, 2.0)
}

/// Bradley-Terry preference probability of A over B from two error
/// scores; a lower error score gives the higher preference.
pub fn bt_probability<T: Scalar>(y_a: T, y_b: T) -> T {
    sigmoid_scalar(y_b - y_a)
}

/// Mean squared error between modeled and annotated preference
/// probabilities over a batch of triplets.
pub fn loss_2afc<T: Scalar>(triplets: &[TripletScores<T>]) -> Result<T> {
    if triplets.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let n = T::from_f64(triplets.len() as f64);
    let sum: T = triplets
        .iter()
        .map(|t| {
            let d = bt_probability(t.y_a, t.y_b) - t.p_ab;
            d * d
        })
        .sum();
    Ok(sum / n)
}

// ── graph forms ─────────────────────────────────────────────────────

/// Squared error of one scalar prediction node against a constant target.
pub fn squared_error_graph<T: Scalar>(
    graph: &mut Graph<T>,
    pred: Var,
    target: T,
) -> Result<Var> {
    let t = graph.constant(Tensor::full(graph.value(pred).shape().to_vec(), target));
    let diff = graph.sub(pred, t)?;
    graph.mul(diff, diff)
}

/// Mean squared error over a batch of scalar prediction nodes.
pub fn mos_mse_graph<T: Scalar>(
    graph: &mut Graph<T>,
    preds: &[Var],
    targets: &[T],
) -> Result<Var> {
    if preds.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if preds.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "prediction batch {} vs target batch {}",
            preds.len(),
            targets.len()
        )));
    }
    let mut acc: Option<Var> = None;
    for (&p, &t) in preds.iter().zip(targets) {
        let sq = squared_error_graph(graph, p, t)?;
        acc = Some(match acc {
            None => sq,
            Some(a) => graph.add(a, sq)?,
        });
    }
    let total = acc.unwrap();
    Ok(graph.scale(total, T::from_f64(1.0 / preds.len() as f64)))
}

/// Distribution loss between a predicted `[1, K]` probability node and a
/// constant target distribution.
pub fn emd_loss_graph<T: Scalar>(
    graph: &mut Graph<T>,
    predicted: Var,
    target: &ScoreDistribution<T>,
) -> Result<Var> {
    let shape = graph.value(predicted).shape().to_vec();
    let k = *shape.last().unwrap();
    if k != target.bins() {
        return Err(Error::ShapeMismatch(format!(
            "predicted {k} bins vs target {}",
            target.bins()
        )));
    }
    let t = graph.constant(Tensor::new(shape, target.probs().to_vec())?);
    let cdf_pred = graph.cumsum_last(predicted);
    let cdf_target = graph.cumsum_last(t);
    let diff = graph.sub(cdf_pred, cdf_target)?;
    let sq = graph.mul(diff, diff)?;
    let mean = graph.mean_all(sq);
    Ok(graph.sqrt(mean))
}

/// Bradley-Terry preference node from two scalar score nodes.
pub fn bt_probability_graph<T: Scalar>(
    graph: &mut Graph<T>,
    y_a: Var,
    y_b: Var,
) -> Result<Var> {
    let d = graph.sub(y_b, y_a)?;
    Ok(graph.sigmoid(d))
}

/// Squared preference error of one triplet whose scores are graph nodes.
pub fn loss_2afc_graph<T: Scalar>(
    graph: &mut Graph<T>,
    y_a: Var,
    y_b: Var,
    p_ab: T,
) -> Result<Var> {
    let p = bt_probability_graph(graph, y_a, y_b)?;
    squared_error_graph(graph, p, p_ab)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(p: &[f64]) -> ScoreDistribution<f64> {
        ScoreDistribution::new(p.to_vec()).unwrap()
    }

    #[test]
    fn mse_fixed_points_and_arithmetic() {
        assert_eq!(mos_mse(&[0.3, 0.9], &[0.3, 0.9]).unwrap(), 0.0);
        assert_eq!(mos_mse(&[0.0], &[1.0]).unwrap(), 1.0);
        let v = mos_mse::<f64>(&[0.2, 0.8], &[0.4, 0.4]).unwrap();
        assert!((v - 0.1).abs() < 1e-12);
        assert!(mos_mse::<f64>(&[], &[]).is_err());
    }

    #[test]
    #[allow(clippy::approx_constant)] // frozen expected value
    fn emd_fixed_point_and_hand_value() {
        let p = dist(&[0.1, 0.2, 0.7]);
        assert_eq!(emd_loss(&p, &p).unwrap(), 0.0);

        let a = dist(&[1.0, 0.0]);
        let b = dist(&[0.0, 1.0]);
        let v = emd_loss(&a, &b).unwrap();
        assert!((v - 0.70711).abs() < 1e-5);
        // symmetry
        assert_eq!(v, emd_loss(&b, &a).unwrap());
    }

    #[test]
    fn emd_rejects_mismatched_bins() {
        let a = dist(&[0.5, 0.5]);
        let b = dist(&[0.5, 0.25, 0.25]);
        assert!(emd_loss(&a, &b).is_err());
    }

    #[test]
    fn emd_respects_ordinal_structure() {
        // single-mass placements: moving mass further from the target bin
        // strictly increases the loss
        let k = 5;
        for target_bin in 0..k {
            let mut t = vec![0.0; k];
            t[target_bin] = 1.0;
            let target = dist(&t);
            let mut last: Option<(usize, f64)> = None;
            for d in 0..k {
                // nearest bin at distance d on either side
                let candidates: Vec<usize> = [target_bin.checked_sub(d), Some(target_bin + d)]
                    .into_iter()
                    .flatten()
                    .filter(|&b| b < k)
                    .collect();
                for b in candidates {
                    let mut p = vec![0.0; k];
                    p[b] = 1.0;
                    let loss = emd_loss(&dist(&p), &target).unwrap();
                    if let Some((pd, pl)) = last {
                        if d > pd {
                            assert!(loss > pl, "distance {d} loss {loss} <= distance {pd} loss {pl}");
                        }
                    }
                    last = Some((d, loss));
                }
            }
        }
    }

    #[test]
    fn bt_identities() {
        assert_eq!(bt_probability(0.7_f64, 0.7), 0.5);
        let p = bt_probability(3f64.ln(), 0.0);
        assert!((p - 0.25).abs() < 1e-12);
        // the sigmoid branches are exact complements
        for (a, b) in [(0.31_f64, -1.7_f64), (3.4, 3.9), (-0.2, 12.0), (5.0, 5.0)] {
            assert_eq!(bt_probability(a, b) + bt_probability(b, a), 1.0);
        }
    }

    #[test]
    fn twoafc_fixed_points_and_swap_symmetry() {
        let t = TripletScores::<f64>::new(0.4, 0.4, 1.0).unwrap();
        let v = loss_2afc(&[t]).unwrap();
        assert!((v - 0.25).abs() < 1e-12);

        let perfect = TripletScores::new(0.0, 2.0, bt_probability(0.0, 2.0)).unwrap();
        assert!(loss_2afc(&[perfect]).unwrap() < 1e-15);

        // swapping candidates and flipping the label leaves the loss alone
        let a = TripletScores::<f64>::new(0.3, 0.9, 0.8).unwrap();
        let b = TripletScores::new(0.9, 0.3, 0.2).unwrap();
        let la = loss_2afc(&[a]).unwrap();
        let lb = loss_2afc(&[b]).unwrap();
        assert!((la - lb).abs() < 1e-15);

        assert!(loss_2afc::<f64>(&[]).is_err());
        assert!(TripletScores::new(0.0, 0.0, 1.2).is_err());
    }

    #[test]
    #[allow(clippy::approx_constant)] // frozen expected value
    fn graph_forms_match_plain_forms() {
        let mut g = Graph::<f64>::new();
        let preds_t = [0.2, 0.8];
        let targets = [0.4, 0.4];
        let preds: Vec<Var> = preds_t
            .iter()
            .map(|&v| g.constant(Tensor::new(vec![1, 1], vec![v]).unwrap()))
            .collect();
        let loss = mos_mse_graph(&mut g, &preds, &targets).unwrap();
        assert!((g.value(loss).item() - 0.1).abs() < 1e-12);

        let p = g.constant(Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap());
        let target = dist(&[0.0, 1.0]);
        let e = emd_loss_graph(&mut g, p, &target).unwrap();
        assert!((g.value(e).item() - 0.70711).abs() < 1e-5);

        let ya = g.constant(Tensor::new(vec![1, 1], vec![0.4]).unwrap());
        let yb = g.constant(Tensor::new(vec![1, 1], vec![0.4]).unwrap());
        let l = loss_2afc_graph(&mut g, ya, yb, 1.0).unwrap();
        assert!((g.value(l).item() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn twoafc_gradients_are_antisymmetric() {
        // d loss / d y_a == -(d loss / d y_b) through the score difference
        let mut g = Graph::<f64>::new();
        let ya = g.leaf(Tensor::new(vec![1, 1], vec![0.9]).unwrap(), true);
        let yb = g.leaf(Tensor::new(vec![1, 1], vec![-0.3]).unwrap(), true);
        let loss = loss_2afc_graph(&mut g, ya, yb, 0.7).unwrap();
        g.backward(loss).unwrap();
        let ga = g.grad(ya).unwrap()[0];
        let gb = g.grad(yb).unwrap()[0];
        assert!((ga + gb).abs() < 1e-12);
        assert!(ga != 0.0);
    }

    #[test]
    fn distribution_validation() {
        assert!(ScoreDistribution::new(vec![0.5, 0.5]).is_ok());
        assert!(ScoreDistribution::new(vec![0.5, 0.4]).is_err());
        assert!(ScoreDistribution::new(vec![-0.1, 1.1]).is_err());
        assert!(ScoreDistribution::<f64>::new(vec![]).is_err());
    }
}
