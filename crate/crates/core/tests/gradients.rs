mod common;

use candle_core::{DType, Tensor};
use common::{gradient_check, randn64, small_extractor};
use lenswipe::losses::*;
use lenswipe::model::{FeatureMap, PatchScores};

const TOL: f64 = 1e-4;

fn scores(t: &Tensor) -> PatchScores {
    PatchScores::new(t.clone(), 14)
}

fn fmaps(ts: &[Tensor]) -> Vec<FeatureMap> {
    ts.iter().map(|t| FeatureMap::new(t.clone()).unwrap()).collect()
}

fn assert_close((rel, norm): (f64, f64), what: &str) {
    assert!(norm > 0.0, "{what}: zero gradient");
    assert!(rel < TOL, "{what}: relative error {rel:e}");
}

#[test]
fn adversarial_gradient() {
    let x = randn64(&[2, 1, 8, 8], 1);
    assert_close(gradient_check(&x, |t| adversarial_g_loss(&scores(t))), "adversarial");
}

#[test]
fn discriminator_gradient_both_sides() {
    let real = randn64(&[2, 1, 8, 8], 2);
    let fake = randn64(&[2, 1, 8, 8], 3);
    assert_close(
        gradient_check(&fake, |t| discriminator_loss(&scores(&real), &scores(t))),
        "discriminator/fake",
    );
    assert_close(
        gradient_check(&real, |t| discriminator_loss(&scores(t), &scores(&fake))),
        "discriminator/real",
    );
}

#[test]
fn feature_matching_gradient() {
    let cfg = LossConfig::default();
    let real: Vec<Tensor> = (0..3).map(|i| randn64(&[1, 2, 8, 8], 10 + i)).collect();
    let x = randn64(&[1, 2, 8, 8], 20);
    // three fake layers derived from one input so every layer contributes
    let f = |t: &Tensor| {
        let fake = vec![t.clone(), (t * 0.5)?.tanh()?, t.sqr()?];
        feature_matching_loss(&fmaps(&real), &fmaps(&fake), &cfg)
    };
    assert_close(gradient_check(&x, f), "feature matching");
}

#[test]
fn perceptual_gradient() {
    let cfg = LossConfig::default();
    let ext = small_extractor().to_dtype(DType::F64).unwrap();
    let clean = (randn64(&[1, 3, 8, 8], 30) * 0.5).unwrap();
    let x = (randn64(&[1, 3, 8, 8], 31) * 0.5).unwrap();
    assert_close(gradient_check(&x, |t| perceptual_loss(&clean, t, &ext, &cfg)), "perceptual");
}

#[test]
fn fidelity_gradient() {
    let clean = randn64(&[1, 1, 8, 8], 40);
    let x = randn64(&[1, 1, 8, 8], 41);
    assert_close(gradient_check(&x, |t| fidelity_loss(&clean, t)), "fidelity");
}

#[test]
fn total_objective_gradient() {
    let cfg = LossConfig {
        term_weights: [1.0, 0.5, 2.0, 3.0],
        ..LossConfig::default()
    };
    let ext = small_extractor().to_dtype(DType::F64).unwrap();
    let clean = (randn64(&[1, 3, 8, 8], 50) * 0.5).unwrap();
    let real: Vec<Tensor> = (0..3).map(|i| randn64(&[1, 3, 8, 8], 60 + i)).collect();
    let x = (randn64(&[1, 3, 8, 8], 51) * 0.5).unwrap();
    let f = |t: &Tensor| {
        let gan = adversarial_g_loss(&scores(t))?;
        let fake = vec![t.clone(), t.tanh()?, (t * 2.0)?];
        let fm = feature_matching_loss(&fmaps(&real), &fmaps(&fake), &cfg)?;
        let vgg = perceptual_loss(&clean, t, &ext, &cfg)?;
        let fid = fidelity_loss(&clean, t)?;
        total_generator_loss_tensor([&gan, &fm, &vgg, &fid], &cfg)
    };
    assert_close(gradient_check(&x, f), "total");
}
