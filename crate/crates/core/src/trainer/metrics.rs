//! Segmentation metrics from binary masks.
//!
//! Counts are pooled per image and across a dataset (micro averaging);
//! macro averages are unweighted means of per-image scores. Degenerate
//! denominators follow fixed conventions: precision with no positive
//! predictions is 1 when nothing was missed and 0 otherwise (recall
//! symmetrically), and IoU/Dice of an empty union is 1. Any metric that
//! hits a zero denominator sets the `degenerate` flag.

use crate::datapipe::Sample;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::segnet::SegNet;
use crate::tensor::Tensor;

/// Pixel confusion counts for binary segmentation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl ConfusionCounts {
    /// Count agreement between two binary masks of equal shape.
    pub fn from_masks<T: Scalar>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<ConfusionCounts> {
        if pred.shape() != truth.shape() {
            return Err(Error::shape(
                "confusion",
                format!("prediction {:?} vs truth {:?}", pred.shape(), truth.shape()),
            ));
        }
        if pred.is_empty() {
            return Err(Error::Contract("confusion: empty masks".into()));
        }
        let mut c = ConfusionCounts::default();
        for (&p, &t) in pred.data().iter().zip(truth.data()) {
            let p = binary_bit("prediction", p)?;
            let t = binary_bit("truth", t)?;
            match (p, t) {
                (true, true) => c.true_pos += 1,
                (true, false) => c.false_pos += 1,
                (false, true) => c.false_neg += 1,
                (false, false) => c.true_neg += 1,
            }
        }
        Ok(c)
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.true_pos += other.true_pos;
        self.false_pos += other.false_pos;
        self.false_neg += other.false_neg;
        self.true_neg += other.true_neg;
    }

    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }
}

fn binary_bit<T: Scalar>(what: &str, v: T) -> Result<bool> {
    let f = v.to_f64();
    if f == 1.0 {
        Ok(true)
    } else if f == 0.0 {
        Ok(false)
    } else {
        Err(Error::Contract(format!("confusion: non-binary {} value {}", what, f)))
    }
}

/// Scores derived from one set of confusion counts.
#[derive(Debug, Clone, Copy)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub iou: f64,
    pub dice: f64,
    pub accuracy: f64,
    pub degenerate: bool,
}

/// Convert counts to scores under the degenerate-denominator conventions.
pub fn confusion_metrics(c: &ConfusionCounts) -> Metrics {
    let tp = c.true_pos as f64;
    let fp = c.false_pos as f64;
    let fneg = c.false_neg as f64;
    let mut degenerate = false;

    let precision = if c.true_pos + c.false_pos == 0 {
        degenerate = true;
        if c.false_neg == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        tp / (tp + fp)
    };
    let recall = if c.true_pos + c.false_neg == 0 {
        degenerate = true;
        if c.false_pos == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        tp / (tp + fneg)
    };
    let union = c.true_pos + c.false_pos + c.false_neg;
    let (iou, dice) = if union == 0 {
        degenerate = true;
        (1.0, 1.0)
    } else {
        (tp / union as f64, 2.0 * tp / (union as f64 + tp))
    };
    let accuracy = if c.total() == 0 {
        degenerate = true;
        1.0
    } else {
        (tp + c.true_neg as f64) / c.total() as f64
    };
    Metrics { precision, recall, iou, dice, accuracy, degenerate }
}

/// Dataset-level evaluation: pooled micro scores plus macro means.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub counts: ConfusionCounts,
    pub micro: Metrics,
    pub macro_iou: f64,
    pub macro_dice: f64,
    pub per_image: Vec<Metrics>,
}

impl MetricsReport {
    /// Multi-line human-readable summary.
    pub fn render(&self) -> String {
        let m = &self.micro;
        format!(
            "images:        {}\n\
             micro iou:     {:.6}\n\
             micro dice:    {:.6}\n\
             micro prec:    {:.6}\n\
             micro recall:  {:.6}\n\
             micro acc:     {:.6}\n\
             macro iou:     {:.6}\n\
             macro dice:    {:.6}\n\
             counts:        tp={} fp={} fn={} tn={}{}",
            self.per_image.len(),
            m.iou,
            m.dice,
            m.precision,
            m.recall,
            m.accuracy,
            self.macro_iou,
            self.macro_dice,
            self.counts.true_pos,
            self.counts.false_pos,
            self.counts.false_neg,
            self.counts.true_neg,
            if m.degenerate || self.per_image.iter().any(|p| p.degenerate) {
                "\nnote: some scores used degenerate-denominator conventions"
            } else {
                ""
            }
        )
    }
}

/// Score a list of predicted masks against ground truth.
pub fn evaluate_masks<T: Scalar>(
    preds: &[Tensor<T>],
    truths: &[Tensor<T>],
) -> Result<MetricsReport> {
    if preds.len() != truths.len() {
        return Err(Error::Contract(format!(
            "evaluate: {} predictions vs {} truths",
            preds.len(),
            truths.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Contract("evaluate: no images".into()));
    }
    let mut pooled = ConfusionCounts::default();
    let mut per_image = Vec::with_capacity(preds.len());
    for (p, t) in preds.iter().zip(truths) {
        let c = ConfusionCounts::from_masks(p, t)?;
        pooled.merge(&c);
        per_image.push(confusion_metrics(&c));
    }
    let n = per_image.len() as f64;
    let macro_iou = per_image.iter().map(|m| m.iou).sum::<f64>() / n;
    let macro_dice = per_image.iter().map(|m| m.dice).sum::<f64>() / n;
    Ok(MetricsReport { counts: pooled, micro: confusion_metrics(&pooled), macro_iou, macro_dice, per_image })
}

/// Run the network on prepared (normalized) samples and score thresholded
/// predictions against the sample masks.
pub fn evaluate_model<T: Scalar>(
    net: &SegNet<T>,
    samples: &[Sample],
    threshold: f64,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::Contract("evaluate: no samples".into()));
    }
    let mut preds = Vec::with_capacity(samples.len());
    let mut truths = Vec::with_capacity(samples.len());
    for s in samples {
        let x = s.image.cast::<T>();
        preds.push(net.predict_mask(&x, threshold)?);
        truths.push(s.mask.cast::<T>());
    }
    evaluate_masks(&preds, &truths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mask(bits: &[u8]) -> Tensor<f64> {
        Tensor::from_vec(vec![1, 1, bits.len()], bits.iter().map(|&b| b as f64).collect()).unwrap()
    }

    #[test]
    fn frozen_oracle_counts_and_scores() {
        // 16 pixels: tp=2, fp=1, fn=2, tn=11
        let pred = mask(&[1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        let truth = mask(&[1, 1, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        let c = ConfusionCounts::from_masks(&pred, &truth).unwrap();
        assert_eq!(c, ConfusionCounts { true_pos: 2, false_pos: 1, false_neg: 2, true_neg: 11 });
        let m = confusion_metrics(&c);
        assert_eq!(m.precision, 2.0 / 3.0);
        assert_eq!(m.recall, 0.5);
        assert_eq!(m.iou, 0.4);
        assert_eq!(m.dice, 4.0 / 7.0);
        assert_eq!(m.accuracy, 13.0 / 16.0);
        assert!(!m.degenerate);
    }

    #[test]
    fn identical_masks_score_one_everywhere() {
        let t = mask(&[1, 0, 1, 1, 0, 0]);
        let c = ConfusionCounts::from_masks(&t, &t).unwrap();
        let m = confusion_metrics(&c);
        assert_eq!(
            (m.precision, m.recall, m.iou, m.dice, m.accuracy),
            (1.0, 1.0, 1.0, 1.0, 1.0)
        );
        assert!(!m.degenerate);
    }

    #[test]
    fn empty_union_uses_the_degenerate_conventions() {
        let z = mask(&[0, 0, 0, 0]);
        let m = confusion_metrics(&ConfusionCounts::from_masks(&z, &z).unwrap());
        assert_eq!((m.precision, m.recall, m.iou, m.dice, m.accuracy), (1.0, 1.0, 1.0, 1.0, 1.0));
        assert!(m.degenerate);

        let truth = mask(&[1, 1, 0, 0]);
        let m = confusion_metrics(&ConfusionCounts::from_masks(&z, &truth).unwrap());
        assert_eq!(m.precision, 0.0, "missed pixels with no predictions");
        assert_eq!(m.recall, 0.0);
        assert_eq!(m.iou, 0.0);
        assert_eq!(m.dice, 0.0);
        assert!(m.degenerate);

        let m = confusion_metrics(&ConfusionCounts::from_masks(&truth, &z).unwrap());
        assert_eq!(m.precision, 0.0);
        assert_eq!(m.recall, 0.0, "predicted pixels with empty truth");
        assert!(m.degenerate);
    }

    #[test]
    fn non_binary_or_mismatched_masks_are_rejected() {
        let a = mask(&[1, 0]);
        let soft = Tensor::from_vec(vec![1, 1, 2], vec![0.5f64, 1.0]).unwrap();
        assert!(ConfusionCounts::from_masks(&soft, &a).is_err());
        assert!(ConfusionCounts::from_masks(&a, &soft).is_err());
        let b = mask(&[1, 0, 0]);
        assert!(ConfusionCounts::from_masks(&a, &b).is_err());
        let e: Tensor<f64> = Tensor::zeros(vec![1, 0, 2]);
        assert!(ConfusionCounts::from_masks(&e, &e).is_err());
    }

    fn random_mask(n: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let data = (0..n)
            .map(|_| if rand::Rng::random::<f64>(rng) < 0.5 { 1.0 } else { 0.0 })
            .collect();
        Tensor::from_vec(vec![1, 1, n], data).unwrap()
    }

    #[test]
    fn scores_match_a_naive_recount_on_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let p = random_mask(64, &mut rng);
            let t = random_mask(64, &mut rng);
            let c = ConfusionCounts::from_masks(&p, &t).unwrap();
            let mut naive = [0u64; 4];
            for (&pv, &tv) in p.data().iter().zip(t.data()) {
                let idx = (pv as usize) * 2 + tv as usize;
                naive[idx] += 1;
            }
            assert_eq!(c.true_neg, naive[0]);
            assert_eq!(c.false_neg, naive[1]);
            assert_eq!(c.false_pos, naive[2]);
            assert_eq!(c.true_pos, naive[3]);
        }
    }

    #[test]
    fn pooled_counts_are_the_sum_and_macro_is_the_mean() {
        let p1 = mask(&[1, 1, 0, 0]);
        let t1 = mask(&[1, 0, 0, 0]);
        let p2 = mask(&[1, 0, 0, 0]);
        let t2 = mask(&[1, 1, 1, 0]);
        let r = evaluate_masks(&[p1.clone(), p2.clone()], &[t1.clone(), t2.clone()]).unwrap();
        let c1 = ConfusionCounts::from_masks(&p1, &t1).unwrap();
        let c2 = ConfusionCounts::from_masks(&p2, &t2).unwrap();
        let mut pooled = c1;
        pooled.merge(&c2);
        assert_eq!(r.counts, pooled);
        let m1 = confusion_metrics(&c1);
        let m2 = confusion_metrics(&c2);
        assert!((r.macro_iou - (m1.iou + m2.iou) / 2.0).abs() < 1e-15);
        assert!((r.macro_dice - (m1.dice + m2.dice) / 2.0).abs() < 1e-15);
        assert_eq!(r.per_image.len(), 2);
        assert!(!r.render().is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn dice_is_two_iou_over_one_plus_iou(tp in 0u64..500, fp in 0u64..500, f_n in 0u64..500, tn in 0u64..500) {
            let m = confusion_metrics(&ConfusionCounts {
                true_pos: tp, false_pos: fp, false_neg: f_n, true_neg: tn,
            });
            prop_assert!((m.dice - 2.0 * m.iou / (1.0 + m.iou)).abs() < 1e-12);
        }

        #[test]
        fn precision_and_recall_swap_with_the_arguments(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_mask(32, &mut rng);
            let b = random_mask(32, &mut rng);
            let ab = confusion_metrics(&ConfusionCounts::from_masks(&a, &b).unwrap());
            let ba = confusion_metrics(&ConfusionCounts::from_masks(&b, &a).unwrap());
            prop_assert_eq!(ab.precision, ba.recall);
            prop_assert_eq!(ab.recall, ba.precision);
            prop_assert_eq!(ab.iou, ba.iou);
        }
    }

    #[test]
    fn model_evaluation_scores_thresholded_forward_passes() {
        use crate::segnet::{NetConfig, SegNet, Variant};
        let cfg = NetConfig {
            variant: Variant::Baseline,
            depth: 1,
            base_channels: 4,
            init_seed: 3,
            ..NetConfig::default()
        };
        let net: SegNet<f32> = SegNet::build(&cfg).unwrap();
        let samples: Vec<_> = crate::datapipe::synth::synth_samples(3, 8, 8, 5)
            .iter()
            .map(|s| crate::datapipe::prepare_sample(s, &crate::datapipe::augment::AugmentConfig::off(), 0, 0).unwrap())
            .collect();
        let r = evaluate_model(&net, &samples, 0.5).unwrap();
        assert_eq!(r.per_image.len(), 3);
        assert!(r.micro.iou >= 0.0 && r.micro.iou <= 1.0);
        assert!(r.counts.total() == 3 * 64);
    }
}
