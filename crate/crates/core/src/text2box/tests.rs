use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::atlas::rasterize_mask;
use crate::nn::gradcheck::{Coordinates, FUSED_FD_STEP};

fn small_config(image_size: usize, channels: Vec<usize>) -> Text2BoxConfig {
    Text2BoxConfig {
        encoder: ConvStackConfig {
            image_size,
            channels,
        },
        image_dim: 6,
        embed_dim: 4,
        hidden_size: 5,
        fusion_dim: 8,
        ..Text2BoxConfig::default()
    }
}

fn random_image(rng: &mut ChaCha8Rng, size: usize) -> Plane {
    let data = (0..size * size).map(|_| rng.gen_range(0.0..1.0)).collect();
    Plane::new(size, size, data).unwrap()
}

fn random_labels(rng: &mut ChaCha8Rng) -> Vec<LocationLabel> {
    let n = rng.gen_range(1..=3);
    (0..n)
        .map(|_| LocationLabel::ALL[rng.gen_range(0..LocationLabel::ALL.len())])
        .collect()
}

fn random_box(rng: &mut ChaCha8Rng) -> NormalizedBox {
    let w = rng.gen_range(0.05..0.5);
    let h = rng.gen_range(0.05..0.5);
    NormalizedBox::new(rng.gen_range(0.0..1.0 - w), rng.gen_range(0.0..1.0 - h), w, h).unwrap()
}

fn examples(config: &Text2BoxConfig, n: usize, seed: u64) -> Vec<T2bExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| T2bExample {
            id: format!("e{i}"),
            image: random_image(&mut rng, config.encoder.image_size),
            tokens: TokenSequence::from_labels(&random_labels(&mut rng), config).unwrap(),
            truth: random_box(&mut rng),
        })
        .collect()
}

fn zero_head(model: &mut Text2BoxModel, bias: [f64; 4]) {
    let head = model.head();
    model.store.get_mut(head.weight).data_mut().iter_mut().for_each(|v| *v = 0.0);
    model.store.get_mut(head.bias).data_mut().copy_from_slice(&bias);
}

fn logit(p: f64) -> f64 {
    libm::log(p / (1.0 - p))
}

#[test]
fn vocab_is_label_words() {
    let v = location_vocab();
    assert_eq!(v[0], "<pad>");
    assert!(v.contains(&"costophrenic".to_string()));
    assert_eq!(v.len(), 17);
    let mut sorted = v[1..].to_vec();
    sorted.sort();
    assert_eq!(sorted, v[1..]);
}

#[test]
fn token_sequences_pad_and_truncate() {
    let config = Text2BoxConfig::default();
    let t = TokenSequence::from_labels(&[LocationLabel::RightLowerLungZone], &config).unwrap();
    assert_eq!(t.tokens().len(), 4);
    assert_eq!(t.padded().len(), 16);
    assert!(t.padded()[4..].iter().all(|&i| i == PAD));
    let words: Vec<&str> = t.tokens().iter().map(|&i| config.vocab[i].as_str()).collect();
    assert_eq!(words, ["right", "lower", "lung", "zone"]);

    let long = TokenSequence::from_ids(vec![1; 40], &config).unwrap();
    assert_eq!(long.tokens().len(), 16);
    assert!(TokenSequence::from_ids(vec![], &config).is_err());
    assert!(TokenSequence::from_ids(vec![1, PAD], &config).is_err());
    assert!(TokenSequence::from_ids(vec![17], &config).is_err());
}

#[test]
fn zeroed_head_predicts_centre_half_box() {
    let mut model = Text2BoxModel::new(Text2BoxConfig::default(), 3).unwrap();
    zero_head(&mut model, [0.0; 4]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..3 {
        let image = random_image(&mut rng, 64);
        let tokens = TokenSequence::from_labels(&random_labels(&mut rng), &model.config).unwrap();
        assert_eq!(model.raw_outputs(&image, &tokens).unwrap(), [0.5; 4]);
    }
}

#[test]
fn box_from_outputs_examples() {
    let b = box_from_outputs([0.9, 0.8, 0.5, 0.5]);
    assert_eq!(b.to_array(), [0.5, 0.5, 0.5, 0.5]);
    let b = box_from_outputs([0.2, 0.3, 0.0, 1.0]);
    assert_eq!(b.to_array(), [0.2, 0.0, MIN_EXTENT, 1.0]);
}

proptest! {
    #[test]
    fn box_from_outputs_always_valid(o in prop::array::uniform4(0.0f64..=1.0)) {
        let b = box_from_outputs(o);
        prop_assert!(b.w() >= MIN_EXTENT && b.h() >= MIN_EXTENT);
        prop_assert!(b.x() >= 0.0 && b.y() >= 0.0);
        prop_assert!(b.right() <= 1.0 + 1e-15 && b.bottom() <= 1.0 + 1e-15);
        // already-valid outputs pass through unchanged
        if o[2] >= MIN_EXTENT && o[3] >= MIN_EXTENT && o[0] + o[2] <= 1.0 && o[1] + o[3] <= 1.0 {
            prop_assert_eq!(b.to_array(), o);
        }
    }

    #[test]
    fn t2b_loss_matches_componentwise_oracle(
        a in prop::array::uniform4(0.0f64..0.5),
        b in prop::array::uniform4(0.0f64..0.5),
    ) {
        let p = NormalizedBox::new(a[0], a[1], a[2] + 1e-3, a[3] + 1e-3).unwrap();
        let t = NormalizedBox::new(b[0], b[1], b[2] + 1e-3, b[3] + 1e-3).unwrap();
        let dx = p.x() - t.x();
        let dy = p.y() - t.y();
        let dw = p.w() - t.w();
        let dh = p.h() - t.h();
        let oracle = (dx * dx + dy * dy + dw * dw + dh * dh) * 0.25;
        prop_assert!((t2b_loss(&p, &t) - oracle).abs() < 1e-15);
        prop_assert!((t2b_loss(&p, &t) - t2b_loss(&t, &p)).abs() < 1e-15);
    }
}

#[test]
fn t2b_loss_examples() {
    let t = NormalizedBox::new(0.1, 0.2, 0.3, 0.4).unwrap();
    assert_eq!(t2b_loss(&t, &t), 0.0);
    let shifted = NormalizedBox::new(0.2, 0.3, 0.4, 0.5).unwrap();
    assert!((t2b_loss(&shifted, &t) - 0.01).abs() < 1e-15);
}

#[test]
fn predictions_are_valid_boxes() {
    let config = small_config(8, vec![2, 2]);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for i in 0..10_000u64 {
        if i % 500 == 0 {
            // fresh weights every few hundred queries, some with a saturated head
            let mut model = Text2BoxModel::new(config.clone(), i).unwrap();
            let head = model.head();
            let scale = if i % 1000 == 0 { 50.0 } else { 1.0 };
            model.store.get_mut(head.weight).data_mut().iter_mut().for_each(|v| *v *= scale);
            for _ in 0..500 {
                let image = random_image(&mut rng, 8);
                let tokens = TokenSequence::from_labels(&random_labels(&mut rng), &config).unwrap();
                let b = model.predict_box(&image, &tokens).unwrap();
                assert!(b.w() >= MIN_EXTENT && b.h() >= MIN_EXTENT);
                assert!(b.right() <= 1.0 + 1e-12 && b.bottom() <= 1.0 + 1e-12);
                assert!(b.x() >= 0.0 && b.y() >= 0.0);
            }
        }
    }
}

#[test]
fn word_order_changes_the_prediction() {
    let model = Text2BoxModel::new(Text2BoxConfig::default(), 9).unwrap();
    let image = Plane::filled(64, 64, 0.3);
    let v = &model.config.vocab;
    let id = |w: &str| v.iter().position(|x| x == w).unwrap();
    let a = TokenSequence::from_ids(vec![id("right"), id("lower")], &model.config).unwrap();
    let b = TokenSequence::from_ids(vec![id("lower"), id("right")], &model.config).unwrap();
    let pa = model.raw_outputs(&image, &a).unwrap();
    let pb = model.raw_outputs(&image, &b).unwrap();
    assert!(pa.iter().zip(&pb).any(|(x, y)| (x - y).abs() > 1e-9));
}

#[test]
fn image_size_is_checked() {
    let model = Text2BoxModel::new(Text2BoxConfig::default(), 1).unwrap();
    let t = TokenSequence::from_labels(&[LocationLabel::LeftHilarStructures], &model.config).unwrap();
    assert!(matches!(
        model.raw_outputs(&Plane::filled(32, 32, 0.0), &t),
        Err(Error::Shape(_))
    ));
}

#[test]
fn fused_gradient_matches_finite_differences() {
    let model = Text2BoxModel::new(Text2BoxConfig::default(), 21).unwrap();
    let ex = &examples(&model.config, 1, 4)[0];
    let dropout = DropoutSpec::new(0.25, 0.1, true, 8).unwrap();
    let err = model
        .gradient_error(ex, &dropout, 3, FUSED_FD_STEP, &Coordinates::Sample { per_tensor: 6, seed: 1 })
        .unwrap();
    assert!(err < 1e-3, "relative error {err}");
}

#[test]
fn overfits_a_handful_of_examples() {
    let config = small_config(16, vec![4, 6]);
    let mut model = Text2BoxModel::new(config.clone(), 2).unwrap();
    let train = examples(&config, 8, 12);
    let hyper = T2bHyper {
        epochs: 600,
        lr: 0.01,
        batch_size: 8,
        seed: 3,
        dropout: 0.0,
        recurrent_dropout: 0.0,
    };
    let out = train_text2box(&mut model, &train, &train, &hyper, |_| {}).unwrap();
    let final_loss = out.history.last().unwrap().train_loss;
    assert!(final_loss < 1e-3, "loss {final_loss}");
    assert!(out.history[0].train_loss > 10.0 * final_loss);
}

#[test]
fn training_is_deterministic() {
    let config = small_config(8, vec![2, 3]);
    let train = examples(&config, 10, 1);
    let val = examples(&config, 4, 2);
    let hyper = T2bHyper {
        epochs: 3,
        batch_size: 4,
        ..T2bHyper::default()
    };
    let run = || {
        let mut m = Text2BoxModel::new(config.clone(), 5).unwrap();
        let out = train_text2box(&mut m, &train, &val, &hyper, |_| {}).unwrap();
        (m, out)
    };
    let (m1, o1) = run();
    let (m2, o2) = run();
    assert_eq!(m1, m2);
    assert_eq!(o1.history, o2.history);
    assert_eq!(o1.optimizer, o2.optimizer);
}

#[test]
fn training_keeps_best_epoch() {
    let config = small_config(8, vec![2, 2]);
    let train = examples(&config, 6, 3);
    let val = examples(&config, 3, 4);
    let hyper = T2bHyper {
        epochs: 4,
        batch_size: 3,
        ..T2bHyper::default()
    };
    let mut m = Text2BoxModel::new(config, 5).unwrap();
    let mut seen = Vec::new();
    let out = train_text2box(&mut m, &train, &val, &hyper, |e| seen.push(e.clone())).unwrap();
    assert_eq!(seen, out.history);
    let best = out.history.iter().map(|e| e.val_miou).fold(f64::MIN, f64::max);
    assert_eq!(out.best_val_miou, best);
    assert_eq!(out.history[out.best_epoch].val_miou, best);
    let (now, _) = eval_text2box(&m, &val).unwrap();
    assert_eq!(now, best);
}

/// IOU by counting cells of a fine grid; boxes here lie on multiples of 1/200.
fn grid_iou(a: &NormalizedBox, b: &NormalizedBox) -> f64 {
    let ma = rasterize_mask(a, 200, 200);
    let mb = rasterize_mask(b, 200, 200);
    let inter = ma.data.iter().zip(&mb.data).filter(|(x, y)| **x > 0.5 && **y > 0.5).count();
    let union = ma.data.iter().zip(&mb.data).filter(|(x, y)| **x > 0.5 || **y > 0.5).count();
    inter as f64 / union as f64
}

#[test]
fn constant_predictor_miou_matches_grid_oracle() {
    let config = small_config(8, vec![2, 2]);
    let mut model = Text2BoxModel::new(config.clone(), 4).unwrap();
    zero_head(&mut model, [logit(0.25), logit(0.3), logit(0.5), logit(0.4)]);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut exs = examples(&config, 12, 6);
    for e in &mut exs {
        let (x, y) = (rng.gen_range(0..100), rng.gen_range(0..100));
        let (w, h) = (rng.gen_range(10..=200 - x), rng.gen_range(10..=200 - y));
        e.truth = NormalizedBox::new(
            x as f64 / 200.0,
            y as f64 / 200.0,
            w as f64 / 200.0,
            h as f64 / 200.0,
        )
        .unwrap();
    }
    let (miou, ious) = eval_text2box(&model, &exs).unwrap();
    let constant = NormalizedBox::new(0.25, 0.3, 0.5, 0.4).unwrap();
    let oracle: Vec<f64> = exs.iter().map(|e| grid_iou(&constant, &e.truth)).collect();
    for (a, b) in ious.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
    assert!((miou - oracle.iter().sum::<f64>() / 12.0).abs() < 1e-9);
}

#[test]
fn checkpoint_round_trip() {
    let config = small_config(8, vec![2, 2]);
    let train = examples(&config, 4, 1);
    let mut model = Text2BoxModel::new(config, 7).unwrap();
    let hyper = T2bHyper {
        epochs: 1,
        batch_size: 2,
        ..T2bHyper::default()
    };
    let out = train_text2box(&mut model, &train, &train, &hyper, |_| {}).unwrap();
    let ckpt = model.checkpoint(Some(out.optimizer.clone()));
    let back = Text2BoxModel::from_checkpoint(&ckpt).unwrap();
    assert_eq!(back, model);
    let mut wrong = ckpt.clone();
    wrong.kind = "gain".into();
    assert!(Text2BoxModel::from_checkpoint(&wrong).is_err());
}

#[test]
fn hyper_validation() {
    assert!(T2bHyper::default().validate().is_ok());
    let bad = T2bHyper {
        lr: 0.0,
        ..T2bHyper::default()
    };
    assert!(bad.validate().is_err());
    let bad = T2bHyper {
        dropout: 1.0,
        ..T2bHyper::default()
    };
    assert!(bad.validate().is_err());
}

