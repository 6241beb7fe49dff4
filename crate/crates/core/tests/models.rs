use cxr_core::gain::{gain_loss, soft_mask, Classifier, ClassifierConfig, GainExample, GainHyper};
use cxr_core::image::Plane;
use cxr_core::nn::ConvStackConfig;
use cxr_core::text2box::{Text2BoxConfig, Text2BoxModel, TokenSequence};
use cxr_core::atlas::LocationLabel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_classifier(seed: u64) -> Classifier {
    let config = ClassifierConfig {
        encoder: ConvStackConfig {
            image_size: 16,
            channels: vec![3, 4],
        },
    };
    Classifier::new(config, seed).unwrap()
}

fn plane(rng: &mut ChaCha8Rng, size: usize) -> Plane {
    Plane::new(size, size, (0..size * size).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

#[test]
fn unguided_objective_is_cross_entropy() {
    let model = small_classifier(1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let hyper = GainHyper {
        lambda: 1.0,
        alpha: 0.0,
        omega: 0.0,
        ..GainHyper::default()
    };
    for labels in [[true, false], [false, true], [true, true], [false, false]] {
        let ex = GainExample {
            id: "x".into(),
            image: plane(&mut rng, 16),
            labels,
            masks: [None, None],
        };
        let s = model.scores(&ex.image).unwrap();
        let bce: f64 = s
            .iter()
            .zip(labels)
            .map(|(&p, y)| if y { -p.ln() } else { -(1.0 - p).ln() })
            .sum::<f64>()
            / 2.0;
        let t = gain_loss(&model, &ex, &hyper).unwrap();
        assert!((t.total - bce).abs() <= 1e-12);
    }
}

#[test]
fn gradcam_target_zeroes_pixel_term() {
    let model = small_classifier(2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let image = plane(&mut rng, 16);
    let masks = [0, 1].map(|c| Some(model.gradcam(&image, c).unwrap().map));
    let ex = GainExample {
        id: "x".into(),
        image,
        labels: [true, true],
        masks,
    };
    let t = gain_loss(&model, &ex, &GainHyper::default()).unwrap();
    assert_eq!(t.pixel, 0.0);
    assert_eq!(t.n_pixel, 2);
}

#[test]
fn attention_maps_are_normalized() {
    let model = small_classifier(3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let image = plane(&mut rng, 16);
    for c in 0..2 {
        let a = model.gradcam(&image, c).unwrap();
        assert_eq!((a.map.height, a.map.width), (model.grid_size(), model.grid_size()));
        assert!(a.map.data.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a.upsample(16).height, 16);
    }
}

#[test]
fn soft_mask_suppresses_attended_pixels() {
    let image = Plane::filled(2, 2, 1.0);
    let attention = Plane::new(2, 2, vec![1.0, 0.0, 0.5, 0.0]).unwrap();
    let m = soft_mask(&image, &attention, 100.0, 0.5).unwrap();
    assert!(m.get(0, 0) < 1e-20);
    assert!(m.get(0, 1) > 1.0 - 1e-15);
    assert_eq!(m.get(1, 0), 0.5);
    assert!(soft_mask(&image, &Plane::zeros(3, 3), 1.0, 0.5).is_err());
}

#[test]
fn text2box_checkpoint_round_trip() {
    let config = Text2BoxConfig {
        encoder: ConvStackConfig {
            image_size: 16,
            channels: vec![3, 4],
        },
        image_dim: 6,
        embed_dim: 4,
        hidden_size: 5,
        fusion_dim: 8,
        ..Text2BoxConfig::default()
    };
    let model = Text2BoxModel::new(config.clone(), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let image = plane(&mut rng, 16);
    let tokens = TokenSequence::from_labels(&[LocationLabel::ALL[0]], &config).unwrap();
    let restored = Text2BoxModel::from_checkpoint(&model.checkpoint(None)).unwrap();
    let a = model.predict_box(&image, &tokens).unwrap();
    let b = restored.predict_box(&image, &tokens).unwrap();
    assert_eq!(a, b);
    assert!(a.right() <= 1.0 + 1e-9 && a.bottom() <= 1.0 + 1e-9);
}
