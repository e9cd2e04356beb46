//! Class prediction for single-modal queries and the classification-rate
//! metric. Pure functions over an immutable model.

use std::fmt;
use std::str::FromStr;

use crate::cfa::{project, ModelParams};
use crate::error::{Error, Result};

/// Which feature view a query vector comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Image,
    Text,
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "image" => Ok(Modality::Image),
            "text" => Ok(Modality::Text),
            other => Err(format!(
                "unknown modality {other:?} (expected image or text)"
            )),
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Image => "image",
            Modality::Text => "text",
        })
    }
}

/// Per-class scores and the decoded class: the argmax, first index on
/// exact ties.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub scores: Vec<f64>,
    pub predicted_class: usize,
}

/// Scores a single-modal query: project into the shared space, multiply by
/// the predictor, take the argmax.
pub fn predict(features: &[f64], modality: Modality, model: &ModelParams) -> Result<Prediction> {
    let omega = match modality {
        Modality::Image => model.omega_image(),
        Modality::Text => model.omega_text(),
    };
    let shared = project(features, omega)?;
    let w = model.w();
    let mut scores = vec![0.0; model.num_classes()];
    for (k, &x) in shared.iter().enumerate() {
        for (s, &wv) in scores.iter_mut().zip(w.row(k)) {
            *s += x * wv;
        }
    }
    let mut predicted_class = 0;
    for (j, &s) in scores.iter().enumerate() {
        if s > scores[predicted_class] {
            predicted_class = j;
        }
    }
    Ok(Prediction {
        scores,
        predicted_class,
    })
}

/// Fraction of predictions whose class matches the truth. Callers decide
/// what an event is; the cross-validation harness passes one image event
/// and one text event per test document.
pub fn classification_rate(predictions: &[Prediction], truths: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::InvalidArgument(
            "classification rate needs at least one event".into(),
        ));
    }
    if predictions.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            context: "classification truths".into(),
            expected: predictions.len(),
            got: truths.len(),
        });
    }
    let correct = predictions
        .iter()
        .zip(truths)
        .filter(|(p, &t)| p.predicted_class == t)
        .count();
    Ok(correct as f64 / predictions.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;

    fn toy_model(w: Matrix) -> ModelParams {
        let d = w.rows();
        ModelParams::new(Matrix::identity(d), Matrix::identity(d), w).unwrap()
    }

    fn prediction(class: usize) -> Prediction {
        Prediction {
            scores: vec![0.0; 4],
            predicted_class: class,
        }
    }

    #[test]
    fn zero_predictor_ties_break_to_the_first_class() {
        let model = toy_model(Matrix::zeros(2, 3));
        let p = predict(&[1.0, -2.0], Modality::Image, &model).unwrap();
        assert_eq!(p.scores, vec![0.0, 0.0, 0.0]);
        assert_eq!(p.predicted_class, 0);
    }

    #[test]
    fn rank_one_predictor_hand_case() {
        // w = e_1·[1, −1]: the first shared coordinate votes class 0.
        let model = toy_model(Matrix::from_vec(2, 2, vec![1.0, -1.0, 0.0, 0.0]).unwrap());
        let p = predict(&[1.0, 0.0], Modality::Image, &model).unwrap();
        assert_eq!(p.scores, vec![1.0, -1.0]);
        assert_eq!(p.predicted_class, 0);
        // The text modality runs through its own projection.
        let p = predict(&[-1.0, 0.0], Modality::Text, &model).unwrap();
        assert_eq!(p.predicted_class, 1);
    }

    #[test]
    fn predict_checks_the_feature_length() {
        let model = toy_model(Matrix::zeros(2, 2));
        let err = predict(&[1.0], Modality::Image, &model).unwrap_err();
        assert!(err.to_string().contains("expected length 2"), "{err}");
    }

    #[test]
    fn decision_is_invariant_to_positive_predictor_scaling() {
        let w = Matrix::from_vec(2, 3, vec![0.3, -1.0, 0.9, 2.0, 0.1, -0.4]).unwrap();
        let base = toy_model(w.clone());
        let scaled = toy_model(w.scaled(7.5));
        for features in [[1.0, 0.5], [-0.3, 2.0], [0.0, -1.0]] {
            let a = predict(&features, Modality::Image, &base).unwrap();
            let b = predict(&features, Modality::Image, &scaled).unwrap();
            assert_eq!(a.predicted_class, b.predicted_class);
        }
    }

    #[test]
    fn rate_arithmetic_is_exact() {
        let preds = vec![prediction(0), prediction(1), prediction(2), prediction(0)];
        assert_eq!(classification_rate(&preds, &[0, 1, 2, 0]).unwrap(), 1.0);
        assert_eq!(classification_rate(&preds, &[0, 1, 3, 3]).unwrap(), 0.5);
        assert_eq!(classification_rate(&preds, &[0, 1, 2, 3]).unwrap(), 0.75);
    }

    #[test]
    fn rate_validates_inputs() {
        assert!(classification_rate(&[], &[]).is_err());
        assert!(classification_rate(&[prediction(0)], &[0, 1]).is_err());
    }

    #[test]
    fn modality_parsing() {
        assert_eq!("image".parse::<Modality>().unwrap(), Modality::Image);
        assert_eq!("text".parse::<Modality>().unwrap(), Modality::Text);
        assert!("audio".parse::<Modality>().is_err());
        assert_eq!(Modality::Text.to_string(), "text");
    }
}
