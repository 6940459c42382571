use std::sync::Arc;

use proptest::prelude::*;
use usersod_core::{Attribute, AttributeMap, BinaryMask, ImageTensor, ObjectRecord, SceneRecord};
use usersod_synth::{
    conventional_gt, generate_scene, make_commands, parse_command, resolve_need, GeneratorConfig,
};

const N: usize = 32;

fn rect(x0: usize, y0: usize, w: usize, h: usize) -> BinaryMask {
    let mut m = BinaryMask::zeros(N, N);
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            m.set(y, x, true);
        }
    }
    m
}

fn attrs(pairs: &[(Attribute, &str)]) -> AttributeMap {
    pairs.iter().map(|&(k, v)| (k, v.to_string())).collect()
}

/// A hand-built scene: gray background with solid-coloured rectangles.
fn manual_scene(objects: &[(BinaryMask, [u8; 3], AttributeMap)]) -> SceneRecord {
    let mut rgb = vec![128u8; 3 * N * N];
    for (mask, color, _) in objects {
        for y in 0..N {
            for x in 0..N {
                if mask.get(y, x) {
                    rgb[3 * (y * N + x)..3 * (y * N + x) + 3].copy_from_slice(color);
                }
            }
        }
    }
    let objects: Vec<ObjectRecord> = objects
        .iter()
        .enumerate()
        .map(|(i, (mask, _, a))| ObjectRecord {
            object_id: i as u32,
            bbox: mask.bbox().unwrap(),
            mask: mask.clone(),
            semantic_label: a.get(&Attribute::Shape).cloned().unwrap_or_else(|| "thing".into()),
            attributes: a.clone(),
        })
        .collect();
    SceneRecord {
        scene_id: 0,
        image: Arc::new(ImageTensor::from_rgb8(N, N, &rgb).unwrap()),
        gt_b: objects[0].mask.clone(),
        objects,
        commands: vec![],
        rng_seed: 1,
    }
}

fn config(seed: u64, num_scenes: u32) -> GeneratorConfig {
    GeneratorConfig {
        seed,
        num_scenes,
        ..GeneratorConfig::default()
    }
}

#[test]
fn same_seed_and_index_give_identical_scenes() {
    let cfg = config(11, 5);
    for i in 0..5 {
        assert_eq!(generate_scene(&cfg, i).unwrap(), generate_scene(&cfg, i).unwrap());
    }
    assert_ne!(generate_scene(&cfg, 0).unwrap().image, generate_scene(&cfg, 1).unwrap().image);
    assert_ne!(
        generate_scene(&cfg, 0).unwrap().image,
        generate_scene(&config(12, 5), 0).unwrap().image
    );
}

#[test]
fn fixed_object_count_range_is_respected() {
    let cfg = GeneratorConfig {
        objects_per_scene: [2, 2],
        ..config(3, 30)
    };
    for i in 0..30 {
        assert_eq!(generate_scene(&cfg, i).unwrap().objects.len(), 2);
    }
}

#[test]
fn hundred_default_scenes_keep_pairwise_iou_low() {
    let cfg = config(0, 100);
    let mut counts = [0usize; 7];
    for i in 0..100 {
        let scene = generate_scene(&cfg, i).unwrap();
        scene.validate().unwrap();
        counts[scene.objects.len()] += 1;
        for (a, oa) in scene.objects.iter().enumerate() {
            for ob in &scene.objects[a + 1..] {
                // Independent IoU count straight from the pixels.
                let (mut inter, mut union) = (0usize, 0usize);
                for y in 0..96 {
                    for x in 0..96 {
                        let (p, q) = (oa.mask.get(y, x), ob.mask.get(y, x));
                        inter += (p && q) as usize;
                        union += (p || q) as usize;
                    }
                }
                assert!(inter as f64 <= 0.3 * union as f64, "scene {i}");
            }
        }
    }
    assert_eq!(counts[0] + counts[1], 0);
    assert!(counts[2..].iter().all(|&c| c > 0), "{counts:?}");
}

#[test]
fn background_is_low_amplitude_gray_noise() {
    let scene = generate_scene(&config(5, 1), 0).unwrap();
    let covered = |y, x| scene.objects.iter().any(|o| o.mask.get(y, x));
    for y in 0..96 {
        for x in 0..96 {
            if !covered(y, x) {
                for c in scene.image.pixel(y, x) {
                    assert!((c - 0.5).abs() <= 0.05 + 1.0 / 255.0, "{c}");
                }
            }
        }
    }
    assert!(scene.image.is_quantized());
}

#[test]
fn object_records_are_exact() {
    let scene = generate_scene(&config(8, 1), 0).unwrap();
    for o in &scene.objects {
        assert_eq!(o.bbox, o.mask.bbox().unwrap());
        assert_eq!(o.attributes.len(), 4);
        assert_eq!(o.semantic_label, o.attributes[&Attribute::Shape]);
    }
    let triples: std::collections::BTreeSet<_> = scene
        .objects
        .iter()
        .map(|o| {
            (
                o.attributes[&Attribute::Color].clone(),
                o.attributes[&Attribute::Shape].clone(),
                o.attributes[&Attribute::Size].clone(),
            )
        })
        .collect();
    assert_eq!(triples.len(), scene.objects.len());
}

#[test]
fn twin_pair_differs_only_in_colour() {
    let cfg = GeneratorConfig {
        twin_pair: true,
        ..config(2, 20)
    };
    for i in 0..20 {
        let s = generate_scene(&cfg, i).unwrap();
        let (a, b) = (&s.objects[0].attributes, &s.objects[1].attributes);
        assert_ne!(a[&Attribute::Color], b[&Attribute::Color]);
        for k in [Attribute::Shape, Attribute::Size, Attribute::Texture] {
            assert_eq!(a[&k], b[&k]);
        }
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let cfg = config(0, 3);
    assert!(generate_scene(&cfg, 3).is_err());
    for bad in [
        GeneratorConfig { objects_per_scene: [3, 2], ..cfg.clone() },
        GeneratorConfig { near_miss_fraction: 1.5, ..cfg.clone() },
        GeneratorConfig { palette: vec![], ..cfg.clone() },
    ] {
        assert!(generate_scene(&bad, 0).is_err());
    }
}

#[test]
fn single_object_is_its_own_conventional_gt() {
    let m = rect(4, 4, 6, 6);
    let s = manual_scene(&[(m.clone(), [220, 30, 30], attrs(&[]))]);
    assert_eq!(conventional_gt(&s), m);
}

#[test]
fn high_contrast_object_wins_conventional_gt() {
    let red = rect(2, 2, 8, 8);
    let grayish = rect(16, 16, 12, 12);
    let s = manual_scene(&[
        (grayish.clone(), [140, 130, 120], attrs(&[])),
        (red.clone(), [220, 30, 30], attrs(&[])),
    ]);
    // Oracle: per-pixel distance to the neutral gray, averaged over each mask.
    let dist = |rgb: [u8; 3]| {
        rgb.iter()
            .map(|&c| (c as f64 / 255.0 - 0.5).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    assert!(dist([220, 30, 30]) > dist([140, 130, 120]));
    assert_eq!(conventional_gt(&s), red);
}

#[test]
fn contrast_ties_go_to_larger_then_lower_id() {
    let small = rect(0, 0, 10, 10);
    let large = rect(12, 12, 10, 20);
    let s = manual_scene(&[
        (small.clone(), [30, 60, 220], attrs(&[])),
        (large.clone(), [30, 60, 220], attrs(&[])),
    ]);
    assert_eq!(small.area(), 100);
    assert_eq!(large.area(), 200);
    assert_eq!(conventional_gt(&s), large);

    let twin = rect(20, 0, 10, 10);
    let s = manual_scene(&[
        (small.clone(), [30, 60, 220], attrs(&[])),
        (twin, [30, 60, 220], attrs(&[])),
    ]);
    assert_eq!(conventional_gt(&s), small);
}

fn blue_circle_red_square() -> SceneRecord {
    manual_scene(&[
        (
            rect(0, 0, 8, 8),
            [30, 60, 220],
            attrs(&[(Attribute::Color, "blue"), (Attribute::Shape, "circle"), (Attribute::Size, "small")]),
        ),
        (
            rect(10, 10, 12, 12),
            [220, 30, 30],
            attrs(&[(Attribute::Color, "red"), (Attribute::Shape, "square"), (Attribute::Size, "large")]),
        ),
    ])
}

#[test]
fn exact_match_resolves_directly() {
    let mut s = blue_circle_red_square();
    s.objects[0].attributes.insert(Attribute::Color, "red".into());
    let req = attrs(&[(Attribute::Color, "red"), (Attribute::Shape, "circle")]);
    assert_eq!(resolve_need(&s, &req), 0);
}

#[test]
fn hamming_ties_go_to_larger_object() {
    let s = blue_circle_red_square();
    let req = attrs(&[(Attribute::Color, "red"), (Attribute::Shape, "circle")]);
    // Hand enumeration: blue circle misses colour (1), red square misses shape (1).
    assert_eq!(resolve_need(&s, &req), 1);
    assert_eq!(resolve_need(&s, &AttributeMap::new()), 1);
}

#[test]
fn near_miss_command_targets_the_resolved_winner() {
    let s = blue_circle_red_square();
    let req = parse_command("I want to find the red circle.").unwrap();
    assert_eq!(resolve_need(&s, &req), 1);
    let req = parse_command("I want to find a circle.").unwrap();
    assert_eq!(resolve_need(&s, &req), 0);
}

#[test]
fn two_objects_without_near_miss_give_four_commands() {
    let cfg = GeneratorConfig {
        near_miss_fraction: 0.0,
        ..config(0, 1)
    };
    let s = blue_circle_red_square();
    let cmds = make_commands(&s, &cfg);
    let texts: Vec<&str> = cmds.iter().map(|c| c.text.as_str()).collect();
    assert_eq!(
        texts,
        [
            "I want to find a circle.",
            "I want to find the blue small circle.",
            "I want to find a square.",
            "I want to find the red large square.",
        ]
    );
    assert_eq!(cmds.iter().map(|c| c.target_object_id).collect::<Vec<_>>(), [0, 0, 1, 1]);

    let always = GeneratorConfig { near_miss_fraction: 1.0, ..cfg };
    let cmds = make_commands(&s, &always);
    assert_eq!(cmds.len(), 5);
    let req = parse_command(&cmds[4].text).unwrap();
    assert_eq!(req.len(), 2);
    assert!(!s.objects.iter().any(|o| req.iter().all(|(k, v)| o.attributes.get(k) == Some(v))));
}

#[test]
fn near_miss_rate_tracks_the_configured_fraction() {
    let cfg = config(4, 200);
    let hits = (0..200)
        .filter(|&i| {
            let s = generate_scene(&cfg, i).unwrap();
            s.commands.len() == 2 * s.objects.len() + 1
        })
        .count();
    assert!((25..=75).contains(&hits), "{hits}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_command_targets_match_their_parse(seed in 0u64..1000, index in 0u32..4) {
        let s = generate_scene(&config(seed, 4), index).unwrap();
        prop_assert!(!s.commands.is_empty());
        for c in &s.commands {
            let req = parse_command(&c.text).expect("template grammar");
            prop_assert_eq!(resolve_need(&s, &req), c.target_object_id);
        }
    }

    #[test]
    fn conventional_gt_survives_uniform_contrast_scaling(seed in 0u64..1000, k in 0.2f32..1.0) {
        let s = generate_scene(&config(seed, 1), 0).unwrap();
        let scaled: Vec<f32> = s.image.data().iter().map(|&v| 0.5 + k * (v - 0.5)).collect();
        let mut t = s.clone();
        t.image = Arc::new(ImageTensor::new(96, 96, scaled).unwrap());
        prop_assert_eq!(conventional_gt(&t), conventional_gt(&s));
    }
}
