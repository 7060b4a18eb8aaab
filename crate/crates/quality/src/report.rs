use vimagine::data::VideoClip;
use vimagine::tensor::Real;

use crate::error::{QualityError, Result};
use crate::gray::GrayImage;
use crate::model::RegressionModel;
use crate::nss::brisque_features;

/// Relative change of the quality score from input to output. Scores are
/// lower-is-better, so a positive value means the output lost quality.
pub fn riqa(input_score: f64, output_score: f64) -> Result<f64> {
    if input_score == 0.0 || !input_score.is_finite() || !output_score.is_finite() {
        return Err(QualityError::Undefined(format!(
            "relative quality needs a finite non-zero input score (input {input_score}, output {output_score})"
        )));
    }
    Ok((output_score - input_score) / input_score)
}

#[derive(Clone, Debug, PartialEq)]
pub struct QualityReport {
    pub input_score: f64,
    /// Clip-major, generated frames only.
    pub frame_scores: Vec<f64>,
    /// Mean of `frame_scores`.
    pub output_score: f64,
    pub riqa: f64,
}

impl QualityReport {
    pub fn from_scores(input_score: f64, frame_scores: Vec<f64>) -> Result<Self> {
        if frame_scores.is_empty() {
            return Err(QualityError::config("no generated frames to score"));
        }
        let output_score = frame_scores.iter().sum::<f64>() / frame_scores.len() as f64;
        Ok(QualityReport {
            input_score,
            riqa: riqa(input_score, output_score)?,
            frame_scores,
            output_score,
        })
    }

    pub fn summary(&self) -> String {
        format!(
            "input score   {:.4}\noutput score  {:.4} (mean of {} frames)\nriqa          {:+.2}%",
            self.input_score,
            self.output_score,
            self.frame_scores.len(),
            100.0 * self.riqa
        )
    }
}

pub fn score_image(img: &GrayImage, model: &RegressionModel) -> Result<f64> {
    Ok(model.score(&brisque_features(img)?))
}

/// Scores every frame after the first (which is the input itself) of each clip.
pub fn evaluate<T: Real>(
    input: &GrayImage,
    clips: &[VideoClip<T>],
    model: Option<&RegressionModel>,
) -> Result<QualityReport> {
    let model = model.ok_or(QualityError::NoScorer)?;
    if clips.is_empty() {
        return Err(QualityError::config("evaluation needs at least one clip"));
    }
    let input_score = score_image(input, model)?;
    let mut frame_scores = Vec::new();
    for clip in clips {
        for f in 1..clip.len() {
            frame_scores.push(score_image(&GrayImage::from_chw(&clip.frame(f))?, model)?);
        }
    }
    QualityReport::from_scores(input_score, frame_scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelKind, SupportVector};
    use crate::nss::FEATURES;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use vimagine::tensor::Tensor;

    #[test]
    fn riqa_of_published_score_pairs() {
        for (input, output, expected) in [
            (45.2164, 47.0168, 0.0398),
            (35.9809, 36.7120, 0.0203),
            (45.2164, 50.7681, 0.1228),
            (45.2164, 89.2315, 0.9734),
        ] {
            let r = riqa(input, output).unwrap();
            assert!((r - expected).abs() <= 1e-4, "{input} -> {output}: {r}");
        }
        assert_eq!(riqa(7.5, 7.5).unwrap(), 0.0);
        assert!(matches!(riqa(0.0, 1.0), Err(QualityError::Undefined(_))));
    }

    fn textured(seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn([1, 32, 32], |_| rng.gen_range(0.0..1.0))
    }

    fn rbf_model() -> RegressionModel {
        RegressionModel {
            kind: ModelKind::Rbf,
            gamma: 0.1,
            bias: 40.0,
            ranges: vec![(0.0, 10.0); FEATURES],
            support: vec![SupportVector {
                coef: 5.0,
                x: vec![0.0; FEATURES],
            }],
        }
    }

    #[test]
    fn copies_of_the_input_give_zero_riqa() {
        let x = textured(1);
        let clip = VideoClip::from_frames(&vec![x.clone(); 5]).unwrap();
        let model = rbf_model();
        let report = evaluate(&GrayImage::from_chw(&x).unwrap(), &[clip.clone(), clip], Some(&model)).unwrap();
        assert_eq!(report.frame_scores.len(), 8);
        assert!(report.riqa.abs() < 1e-6);
    }

    #[test]
    fn aggregate_is_the_mean_of_frame_scores() {
        let clips: Vec<_> = (0..3)
            .map(|c| VideoClip::from_frames(&(0..5).map(|f| textured(10 * c + f)).collect::<Vec<_>>()).unwrap())
            .collect();
        let input = GrayImage::from_chw(&textured(99)).unwrap();
        let report = evaluate(&input, &clips, Some(&rbf_model())).unwrap();
        assert_eq!(report.frame_scores.len(), 12);
        let mean = report.frame_scores.iter().sum::<f64>() / 12.0;
        assert!((report.output_score - mean).abs() < 1e-12);
        assert!(report.summary().contains("riqa"));
    }

    #[test]
    fn missing_model_is_an_error() {
        let clip = VideoClip::from_frames(&vec![textured(2); 5]).unwrap();
        let input = GrayImage::from_chw(&textured(2)).unwrap();
        assert!(matches!(evaluate(&input, &[clip], None), Err(QualityError::NoScorer)));
        assert!(evaluate::<f32>(&input, &[], Some(&rbf_model())).is_err());
    }

    proptest! {
        #[test]
        fn riqa_is_scale_invariant(a in 0.1f64..100.0, b in 0.1f64..100.0, k in 0.01f64..100.0) {
            let r = riqa(a, b).unwrap();
            prop_assert!((riqa(k * a, k * b).unwrap() - r).abs() <= 1e-12 * (1.0 + r.abs()));
        }
    }
}
