use cxr::config::{derive_seed, RunConfig, Seeds};
use cxr::shipped;
use cxr_core::atlas::{iou, LocationLabel};
use cxr_core::report::parse_report;
use cxr_core::synth::{generate_report, parse_matches_spec, OpacitySides, PhantomSpec, ReportTemplates, LUNG_ZONES};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

fn spec(sides: OpacitySides, zone: Option<LocationLabel>) -> PhantomSpec {
    PhantomSpec {
        image_size: 64,
        sides,
        zone,
        intensity: 0.5,
        sigma_range: (0.05, 0.065),
        noise: 0.0,
        seed: 1,
    }
}

/// Every shipped template, alone in its pool, must produce a report that
/// parses back to its spec for every zone it can describe.
#[test]
fn every_template_round_trips_for_every_zone() {
    let lexicon = shipped::lexicon().unwrap();
    let all = shipped::templates().unwrap();
    let only = |pick: &dyn Fn(&mut ReportTemplates)| {
        let mut t = all.clone();
        t.single.clear();
        t.bilateral.clear();
        t.normal.clear();
        pick(&mut t);
        t.single.extend(t.single.is_empty().then(|| all.single[0].clone()));
        t.bilateral.extend(t.bilateral.is_empty().then(|| all.bilateral[0].clone()));
        t.normal.extend(t.normal.is_empty().then(|| all.normal[0].clone()));
        t
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut checked = 0;
    for s in &all.single {
        let t = only(&|t| t.single.push(s.clone()));
        for z in LUNG_ZONES {
            let sides = if z.side() == Some(cxr_core::atlas::Side::Left) {
                OpacitySides::Left
            } else {
                OpacitySides::Right
            };
            generate_report(&spec(sides, Some(z)), &t, &lexicon, &mut rng)
                .unwrap_or_else(|e| panic!("{s:?} in {z}: {e}"));
            checked += 1;
        }
    }
    for b in &all.bilateral {
        let t = only(&|t| t.bilateral.push(b.clone()));
        for z in &LUNG_ZONES[..3] {
            generate_report(&spec(OpacitySides::Both, Some(*z)), &t, &lexicon, &mut rng)
                .unwrap_or_else(|e| panic!("{b:?} in {z}: {e}"));
            checked += 1;
        }
    }
    for n in &all.normal {
        let t = only(&|t| t.normal.push(n.clone()));
        let text = generate_report(&spec(OpacitySides::None, None), &t, &lexicon, &mut rng).unwrap();
        let parse = parse_report("n", &text, &lexicon).unwrap();
        assert!(parse_matches_spec(&parse, &all.finding, &spec(OpacitySides::None, None)));
        checked += 1;
    }
    assert_eq!(checked, all.single.len() * 6 + all.bilateral.len() * 3 + all.normal.len());
}

#[test]
fn distractors_are_not_opacities() {
    let lexicon = shipped::lexicon().unwrap();
    let t = shipped::templates().unwrap();
    for d in &t.distractors {
        let p = parse_report("d", d, &lexicon).unwrap();
        assert!(p.positive_parents().next().is_none(), "{d:?}");
    }
}

#[test]
fn atlas_zones_are_distinct_and_mirrored() {
    let atlas = shipped::atlas().unwrap();
    assert_eq!(atlas.len(), 17);
    for a in LocationLabel::ALL {
        let ba = atlas.zone_box(a).unwrap();
        if a.side().is_some() {
            let mirrored = atlas.zone_box(a.mirror()).unwrap();
            assert!(iou(&ba.mirror_x(), &mirrored) > 0.99, "{a}");
        }
    }
    for z in LUNG_ZONES {
        for w in LUNG_ZONES {
            if z != w {
                assert!(iou(&atlas.zone_box(z).unwrap(), &atlas.zone_box(w).unwrap()) < 0.2);
            }
        }
    }
}

#[test]
fn shipped_configs_parse_and_validate() {
    let full = RunConfig::parse(shipped::FULL_CONFIG_TOML, Path::new("full")).unwrap();
    assert_eq!(full.text2box.max_train_queries, Some(2000));
    assert_eq!(full.text2box.max_val_queries, Some(643));
    RunConfig::parse(shipped::SMOKE_CONFIG_TOML, Path::new("smoke")).unwrap();
    let bad = "name = \"x\"\nseed = 1\n[gain]\nunknown = 3\n";
    assert!(RunConfig::parse(bad, Path::new("bad")).is_err());
    let zero = "name = \"x\"\nseed = 1\n[output]\nscale = 0\n";
    assert!(RunConfig::parse(zero, Path::new("zero")).is_err());
}

#[test]
fn seed_streams_are_distinct() {
    let s = Seeds::from_master(7);
    let all = [s.data, s.text2box_init, s.text2box_train, s.classifier_init, s.baseline_train, s.gain_train];
    for (i, a) in all.iter().enumerate() {
        for b in &all[i + 1..] {
            assert_ne!(a, b);
        }
    }
    assert_eq!(derive_seed(7, "data"), s.data);
    assert_ne!(derive_seed(8, "data"), s.data);
}
