//! Combined binary cross-entropy plus soft Dice loss.
//!
//! Predictions are clamped to [eps, 1-eps] before the logarithms and the
//! Dice ratio; the Dice term uses additive smoothing of 1 in numerator and
//! denominator. The total is `lambda_bce * bce + lambda_dice * dice`. The
//! taped builder composes differentiable primitives, so its gradient flows
//! through the same clamped probabilities as the forward value.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, ValueId};
use crate::tensor::Tensor;

/// Probability clamp epsilon guarding the logarithms.
pub const PROB_EPS: f64 = 1e-7;

/// Additive smoothing in the Dice numerator and denominator.
pub const DICE_SMOOTH: f64 = 1.0;

fn check_pair<T: Scalar>(p: &Tensor<T>, y: &Tensor<T>) -> Result<usize> {
    if p.shape() != y.shape() {
        return Err(Error::shape(
            "bce_dice",
            format!("prediction {:?} vs target {:?}", p.shape(), y.shape()),
        ));
    }
    if p.is_empty() {
        return Err(Error::Contract("bce_dice: empty tensors".into()));
    }
    Ok(p.len())
}

/// Loss value in f64, without building a tape. Accumulation order matches
/// the taped composition.
pub fn bce_dice_value<T: Scalar>(
    p: &Tensor<T>,
    y: &Tensor<T>,
    lambda_bce: f64,
    lambda_dice: f64,
) -> Result<f64> {
    let n = check_pair(p, y)? as f64;
    let lo = PROB_EPS;
    let hi = 1.0 - PROB_EPS;
    let mut log_sum = 0.0f64;
    let mut inter = 0.0f64;
    let mut p_sum = 0.0f64;
    let mut y_sum = 0.0f64;
    for (&pv, &yv) in p.data().iter().zip(y.data()) {
        let pc = pv.to_f64().clamp(lo, hi);
        let yv = yv.to_f64();
        log_sum += yv * pc.ln() + (1.0 - yv) * (1.0 - pc).ln();
        inter += pc * yv;
        p_sum += pc;
        y_sum += yv;
    }
    let bce = -log_sum / n;
    let dice = 1.0 - (2.0 * inter + DICE_SMOOTH) / (p_sum + y_sum + DICE_SMOOTH);
    Ok(lambda_bce * bce + lambda_dice * dice)
}

/// Build the loss on a tape from prediction and target value ids; returns
/// the scalar loss id.
pub fn bce_dice_taped<T: Scalar>(
    tape: &mut Tape<T>,
    p: ValueId,
    y: ValueId,
    lambda_bce: f64,
    lambda_dice: f64,
) -> Result<ValueId> {
    let n = check_pair(tape.value(p), tape.value(y))? as f64;
    let lo = T::from_f64(PROB_EPS);
    let hi = T::from_f64(1.0 - PROB_EPS);
    let one = T::ONE;
    let neg_one = -T::ONE;

    let pc = tape.clamp(p, lo, hi);

    // BCE: -(1/n) sum(y ln pc + (1-y) ln(1-pc))
    let ln_pc = tape.ln(pc);
    let fg = tape.mul(y, ln_pc)?;
    let neg_y = tape.scale(y, neg_one);
    let one_minus_y = tape.add_scalar(neg_y, one);
    let neg_pc = tape.scale(pc, neg_one);
    let one_minus_pc = tape.add_scalar(neg_pc, one);
    let ln_ompc = tape.ln(one_minus_pc);
    let bg = tape.mul(one_minus_y, ln_ompc)?;
    let log_terms = tape.add(fg, bg)?;
    let log_sum = tape.sum(log_terms);
    let bce = tape.scale(log_sum, T::from_f64(-1.0 / n));

    // Dice: 1 - (2 inter + s)/(p_sum + y_sum + s)
    let prod = tape.mul(pc, y)?;
    let inter = tape.sum(prod);
    let two_inter = tape.scale(inter, T::from_f64(2.0));
    let num = tape.add_scalar(two_inter, T::from_f64(DICE_SMOOTH));
    let p_sum = tape.sum(pc);
    let y_sum = tape.sum(y);
    let sums = tape.add(p_sum, y_sum)?;
    let den = tape.add_scalar(sums, T::from_f64(DICE_SMOOTH));
    let ratio = tape.div(num, den)?;
    let neg_ratio = tape.scale(ratio, neg_one);
    let dice = tape.add_scalar(neg_ratio, one);

    let bce_part = tape.scale(bce, T::from_f64(lambda_bce));
    let dice_part = tape.scale(dice, T::from_f64(lambda_dice));
    tape.add(bce_part, dice_part)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, data).unwrap()
    }

    fn half_mask(n: usize) -> Tensor<f64> {
        let data = (0..n).map(|i| if i < n / 2 { 1.0 } else { 0.0 }).collect();
        t(vec![1, 1, n], data)
    }

    #[test]
    fn uniform_half_prediction_gives_ln2_bce() {
        let n = 16;
        let p = t(vec![1, 1, n], vec![0.5; n]);
        let y = half_mask(n);
        let bce = bce_dice_value(&p, &y, 1.0, 0.0).unwrap();
        assert!((bce - std::f64::consts::LN_2).abs() < 1e-12, "{}", bce);
    }

    #[test]
    fn dice_of_half_overlap_matches_closed_form() {
        let n = 16;
        let p = t(vec![1, 1, n], vec![0.5; n]);
        let y = half_mask(n);
        // inter = 4, num = 9, den = 8 + 8 + 1 = 17
        let dice = bce_dice_value(&p, &y, 0.0, 1.0).unwrap();
        assert!((dice - (1.0 - 9.0 / 17.0)).abs() < 1e-12, "{}", dice);
    }

    #[test]
    fn perfect_prediction_has_near_zero_loss() {
        let y = half_mask(16);
        let loss = bce_dice_value(&y.clone(), &y, 1.0, 1.0).unwrap();
        assert!(loss.abs() < 1e-6, "{}", loss);
        let anti = y.map(|v| 1.0 - v);
        let worst = bce_dice_value(&anti, &y, 1.0, 1.0).unwrap();
        assert!(worst > 10.0, "inverted prediction should be heavily penalized: {}", worst);
    }

    #[test]
    fn loss_is_linear_in_the_lambdas() {
        let p = t(vec![1, 2, 3], vec![0.1, 0.6, 0.9, 0.4, 0.5, 0.2]);
        let y = t(vec![1, 2, 3], vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0]);
        let bce = bce_dice_value(&p, &y, 1.0, 0.0).unwrap();
        let dice = bce_dice_value(&p, &y, 0.0, 1.0).unwrap();
        let both = bce_dice_value(&p, &y, 2.0, 3.0).unwrap();
        assert!((both - (2.0 * bce + 3.0 * dice)).abs() < 1e-12);
    }

    #[test]
    fn extreme_probabilities_stay_finite_via_the_clamp() {
        let p = t(vec![1, 1, 4], vec![0.0, 1.0, 0.0, 1.0]);
        let y = t(vec![1, 1, 4], vec![1.0, 0.0, 0.0, 1.0]);
        let loss = bce_dice_value(&p, &y, 1.0, 1.0).unwrap();
        assert!(loss.is_finite());
        assert!(loss > 1.0, "confident wrong pixels should dominate: {}", loss);
    }

    #[test]
    fn taped_loss_matches_the_pure_value() {
        let p = t(vec![1, 2, 4], vec![0.13, 0.57, 0.92, 0.44, 0.05, 0.71, 0.33, 0.68]);
        let y = t(vec![1, 2, 4], vec![0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        let pure = bce_dice_value(&p, &y, 0.7, 0.3).unwrap();
        let mut tape: Tape<f64> = Tape::new();
        let pid = tape.leaf(p);
        let yid = tape.leaf(y);
        let lid = bce_dice_taped(&mut tape, pid, yid, 0.7, 0.3).unwrap();
        let taped = tape.value(lid).item().unwrap();
        assert!((taped - pure).abs() < 1e-12, "{} vs {}", taped, pure);
    }

    #[test]
    fn gradient_pushes_predictions_toward_targets() {
        let p = t(vec![1, 1, 4], vec![0.3, 0.3, 0.8, 0.8]);
        let y = t(vec![1, 1, 4], vec![1.0, 0.0, 1.0, 0.0]);
        let mut tape: Tape<f64> = Tape::new();
        let pid = tape.leaf(p);
        let yid = tape.leaf(y);
        let lid = bce_dice_taped(&mut tape, pid, yid, 1.0, 1.0).unwrap();
        let grads = tape.backward(lid).unwrap();
        let g = grads.get(pid).unwrap();
        assert!(g.data()[0] < 0.0, "foreground pixel should be pushed up");
        assert!(g.data()[1] > 0.0, "background pixel should be pushed down");
        assert!(g.data()[2] < 0.0);
        assert!(g.data()[3] > 0.0);
    }

    #[test]
    fn mismatched_or_empty_inputs_are_rejected() {
        let p = t(vec![1, 1, 4], vec![0.5; 4]);
        let y = t(vec![1, 2, 2], vec![0.0; 4]);
        assert!(bce_dice_value(&p, &y, 1.0, 1.0).is_err());
        let e: Tensor<f64> = Tensor::zeros(vec![1, 0, 4]);
        assert!(bce_dice_value(&e, &e, 1.0, 1.0).is_err());
    }
}
