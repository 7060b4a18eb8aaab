//! Scoring pipeline through the public API with model files on disk.

use vimagine::data::VideoClip;
use vimagine::tensor::Tensor;
use vimagine_quality::{brisque_features, evaluate, GrayImage, QualityError, RegressionModel, FEATURES};

fn textured(seed: u64, noise: f64) -> Tensor<f32> {
    let mut s = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    Tensor::from_fn([1, 40, 40], |i| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        let (y, x) = ((i / 40) as f64, (i % 40) as f64);
        let v = 0.5 + 0.25 * (x / 4.0).sin() * (y / 6.0).cos() + noise * ((s % 1000) as f64 / 1000.0 - 0.5);
        v.clamp(0.0, 1.0) as f32
    })
}

fn clip(frames: &[Tensor<f32>]) -> VideoClip<f32> {
    VideoClip::from_frames(frames).unwrap()
}

#[test]
fn constant_scorer_gives_zero_change() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("const.txt");
    std::fs::write(&path, RegressionModel::constant(42.0).to_text()).unwrap();
    let model = RegressionModel::load(&path).unwrap();
    let x = textured(1, 0.1);
    let input = GrayImage::from_chw(&x).unwrap();
    let c = clip(&[x.clone(), textured(2, 0.3), textured(3, 0.3)]);
    let r = evaluate(&input, &[c.clone(), c], Some(&model)).unwrap();
    assert_eq!(r.frame_scores.len(), 4);
    assert_eq!((r.input_score, r.output_score, r.riqa), (42.0, 42.0, 0.0));
}

#[test]
fn linear_scorer_on_features_drives_riqa() {
    // Score = first feature (GGD shape at full scale) times 10.
    let mut w = vec![0.0; FEATURES];
    w[0] = 10.0;
    let ranges = vec!["-1,1"; FEATURES].join(" ");
    let sv: Vec<String> = w.iter().map(|v| v.to_string()).collect();
    let text = format!("kind linear\nbias 0\nranges {ranges}\nsv 1 {}\n", sv.join(" "));
    let model = RegressionModel::parse(&text).unwrap();

    let (a, b) = (textured(4, 0.05), textured(5, 0.6));
    let ga = GrayImage::from_chw(&a).unwrap();
    let gb = GrayImage::from_chw(&b).unwrap();
    let (sa, sb) = (10.0 * brisque_features(&ga).unwrap().values[0], 10.0 * brisque_features(&gb).unwrap().values[0]);
    let r = evaluate(&ga, &[clip(&[a, b.clone(), b])], Some(&model)).unwrap();
    assert!((r.input_score - sa).abs() < 1e-9);
    assert!((r.output_score - sb).abs() < 1e-9);
    assert!((r.riqa - (sb - sa) / sa).abs() < 1e-12);
}

#[test]
fn missing_scorer_and_bad_files_are_errors() {
    let x = textured(6, 0.1);
    let input = GrayImage::from_chw(&x).unwrap();
    let c = clip(&[x.clone(), x]);
    assert!(matches!(evaluate(&input, &[c], None), Err(QualityError::NoScorer)));
    let dir = tempfile::tempdir().unwrap();
    assert!(RegressionModel::load(&dir.path().join("absent.txt")).is_err());
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "kind cubic\n").unwrap();
    assert!(matches!(RegressionModel::load(&bad), Err(QualityError::Parse { line: 1, .. })));
}
