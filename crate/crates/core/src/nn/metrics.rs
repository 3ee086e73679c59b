use serde::{Deserialize, Serialize};

use super::network::{check_label, loss_value, Scratch};
use super::{argmax, DenseNetwork, Label, LossKind, NnError, Sample};

/// Classification quality of a network on a labelled set.
///
/// Precision, recall and F1 are macro averages over the classes that occur
/// as true labels in the evaluated data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub mean_loss: f64,
}

fn true_class(label: &Label) -> usize {
    match label {
        Label::Class(c) => *c,
        Label::Target(t) => argmax(t),
    }
}

pub fn evaluate(net: &DenseNetwork, data: &[Sample], loss: LossKind) -> Result<EvalMetrics, NnError> {
    if data.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let classes = net.output_dim();
    let final_act = net.layers().last().map(|l| l.activation);
    // confusion[truth][predicted]
    let mut confusion = vec![0usize; classes * classes];
    let mut scratch = Scratch::new(net);
    let mut total_loss = 0.0;
    for sample in data {
        net.check_input(&sample.features)?;
        check_label(&sample.label, classes, loss, final_act)?;
        let out = net.forward_with(&sample.features, &mut scratch);
        total_loss += loss_value(out, &sample.label, loss);
        confusion[true_class(&sample.label) * classes + argmax(out)] += 1;
    }
    if !total_loss.is_finite() {
        return Err(NnError::NonFinite("evaluation loss"));
    }

    let n = data.len() as f64;
    let correct: usize = (0..classes).map(|c| confusion[c * classes + c]).sum();
    let (mut p_sum, mut r_sum, mut f_sum, mut present) = (0.0, 0.0, 0.0, 0usize);
    for c in 0..classes {
        let support: usize = confusion[c * classes..(c + 1) * classes].iter().sum();
        if support == 0 {
            continue;
        }
        present += 1;
        let tp = confusion[c * classes + c] as f64;
        let predicted: usize = (0..classes).map(|t| confusion[t * classes + c]).sum();
        let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
        let recall = tp / support as f64;
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        p_sum += precision;
        r_sum += recall;
        f_sum += f1;
    }
    let k = present as f64;
    Ok(EvalMetrics {
        accuracy: correct as f64 / n,
        macro_f1: f_sum / k,
        macro_precision: p_sum / k,
        macro_recall: r_sum / k,
        mean_loss: total_loss / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_network, Activation, LayerSpec};

    #[test]
    fn uniform_predictor_on_balanced_data() {
        let net = DenseNetwork::zeros(vec![LayerSpec::new(2, 4, Activation::Softmax)]).unwrap();
        let data: Vec<Sample> = (0..8).map(|i| Sample::class(vec![i as f64, 1.0], i % 4)).collect();
        let m = evaluate(&net, &data, LossKind::CrossEntropy).unwrap();
        // every prediction ties and resolves to class 0
        assert_eq!(m.accuracy, 0.25);
        assert!((m.mean_loss - 4f64.ln()).abs() < 1e-12);
        assert_eq!(m.macro_recall, 0.25);
    }

    #[test]
    fn perfect_predictor_scores_one() {
        // identity weights: class = argmax of the one-hot input
        let mut params = vec![0.0; 3 * 3 + 3];
        for i in 0..3 {
            params[i * 3 + i] = 10.0;
        }
        let net = DenseNetwork::from_params(vec![LayerSpec::new(3, 3, Activation::Softmax)], params).unwrap();
        let data: Vec<Sample> = (0..9)
            .map(|i| {
                let mut x = vec![0.0; 3];
                x[i % 3] = 1.0;
                Sample::class(x, i % 3)
            })
            .collect();
        let m = evaluate(&net, &data, LossKind::CrossEntropy).unwrap();
        assert_eq!((m.accuracy, m.macro_f1, m.macro_precision, m.macro_recall), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn single_class_data_gives_zero_recall_elsewhere() {
        let net = init_network(&[LayerSpec::new(2, 3, Activation::Softmax)], 4).unwrap();
        let data = vec![Sample::class(vec![0.5, 0.5], 2)];
        assert!(evaluate(&net, &[], LossKind::CrossEntropy).is_err());
        let m = evaluate(&net, &data, LossKind::CrossEntropy).unwrap();
        assert!(m.macro_recall == 0.0 || m.macro_recall == 1.0);
    }
}
