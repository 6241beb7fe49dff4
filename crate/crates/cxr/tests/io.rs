use cxr::dataset::{load_dataset, read_manifest, write_dataset, MANIFEST_FILE};
use cxr::files::{load_checkpoint, save_checkpoint};
use cxr::imageio::{load_gray, save_gray};
use cxr::shipped;
use cxr_core::gain::{Classifier, ClassifierConfig, CHECKPOINT_KIND};
use cxr_core::image::Plane;
use cxr_core::synth::{DatasetConfig, SplitTag};
use proptest::prelude::*;

fn small_dataset(dir: &std::path::Path, n: usize) -> DatasetConfig {
    let config = DatasetConfig {
        n,
        seed: 5,
        ..DatasetConfig::default()
    };
    write_dataset(
        dir,
        &config,
        &shipped::atlas().unwrap(),
        &shipped::templates().unwrap(),
        &shipped::lexicon().unwrap(),
    )
    .unwrap();
    config
}

#[test]
fn dataset_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_dataset(dir.path(), 30);
    let samples = load_dataset(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(samples.len(), 30);
    let counts = config.split_counts();
    let train = samples.iter().filter(|s| s.record.split == SplitTag::Train).count();
    assert_eq!(train, counts.train);
    for s in &samples {
        assert_eq!(s.image.height, config.image_size);
        for (side, positive) in [
            (cxr_core::atlas::Side::Right, s.record.right_opacity),
            (cxr_core::atlas::Side::Left, s.record.left_opacity),
        ] {
            assert_eq!(s.record.truth_box(side).is_some(), positive);
        }
    }
}

#[test]
fn same_seed_writes_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    small_dataset(a.path(), 12);
    small_dataset(b.path(), 12);
    let manifest = |d: &std::path::Path| std::fs::read(d.join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest(a.path()), manifest(b.path()));
    for r in read_manifest(&a.path().join(MANIFEST_FILE)).unwrap() {
        assert_eq!(
            std::fs::read(a.path().join(&r.image)).unwrap(),
            std::fs::read(b.path().join(&r.image)).unwrap()
        );
    }
}

#[test]
fn manifest_rejects_unknown_fields() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path(), 10);
    let path = dir.path().join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).unwrap();
    let first = text.lines().next().unwrap();
    let tampered = first.replacen('{', "{\"extra\":1,", 1);
    std::fs::write(&path, tampered).unwrap();
    assert!(read_manifest(&path).is_err());
}

#[test]
fn classifier_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/ckpt.json");
    let model = Classifier::new(ClassifierConfig::default(), 9).unwrap();
    save_checkpoint(&path, &model.checkpoint(None)).unwrap();
    let ckpt = load_checkpoint::<ClassifierConfig>(&path, CHECKPOINT_KIND).unwrap();
    let restored = Classifier::from_checkpoint(&ckpt).unwrap();
    let image = Plane::filled(64, 64, 0.3);
    assert_eq!(model.scores(&image).unwrap(), restored.scores(&image).unwrap());
    assert!(load_checkpoint::<ClassifierConfig>(&path, "text2box").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn png_round_trip_is_exact_on_byte_levels(pixels in prop::collection::vec(any::<u8>(), 64)) {
        let dir = tempfile::tempdir().unwrap();
        let plane = Plane::from_u8(8, 8, &pixels).unwrap();
        let path = dir.path().join("x.png");
        save_gray(&path, &plane).unwrap();
        let back = load_gray(&path).unwrap();
        prop_assert_eq!(back.to_u8(), pixels);
        prop_assert_eq!(back, plane);
    }
}
