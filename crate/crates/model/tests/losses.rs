mod common;

use common::*;
use proptest::prelude::*;
use usersod_core::{BinaryMask, Need, SaliencyMap};
use usersod_model::{appearance_loss_level, appearance_loss_level_dir, mse_loss, KlDirection, total_loss, Mode, TsnVariant, UserSal, SME_PREFIX};
use usersod_tensor::{Graph, Tensor};

#[test]
fn mse_examples() {
    let gt = BinaryMask::new(2, 2, vec![1, 1, 0, 0]).unwrap();
    let pred = SaliencyMap::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    assert_eq!(mse_loss(&pred, &gt).unwrap(), 0.5);
    assert_eq!(mse_loss(&SaliencyMap::from_mask(&gt), &gt).unwrap(), 0.0);
    let ones = SaliencyMap::new(2, 2, vec![1.0; 4]).unwrap();
    assert_eq!(mse_loss(&ones, &BinaryMask::zeros(2, 2)).unwrap(), 1.0);
    assert!(mse_loss(&ones, &BinaryMask::zeros(1, 4)).is_err());
}

#[test]
fn appearance_loss_matches_hand_computed_kl() {
    let target = Tensor::<f64>::zeros(&[1, 2, 2]);
    let pred = Tensor::from_vec(&[1, 2, 2], vec![1.0, 0.0, 0.0, 0.0]);
    // Uniform target against softmax([1,0,0,0]) = [e, 1, 1, 1] / (e + 3).
    let e = std::f64::consts::E;
    let q = [e / (e + 3.0), 1.0 / (e + 3.0), 1.0 / (e + 3.0), 1.0 / (e + 3.0)];
    let expected: f64 = q.iter().map(|&qi| 0.25 * (0.25f64 / qi).ln()).sum();
    let got = appearance_loss_level(&target, &pred).unwrap();
    assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    assert!(appearance_loss_level(&target, &Tensor::zeros(&[1, 4, 1])).is_err());
    let reverse: f64 = q.iter().map(|&qi| qi * (qi / 0.25f64).ln()).sum();
    let got = appearance_loss_level_dir(&target, &pred, KlDirection::FeaturesToTarget).unwrap();
    assert!((got - reverse).abs() < 1e-9, "{got} vs {reverse}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn appearance_loss_is_nonnegative_and_zero_on_identical_inputs(
        c in 1usize..4, h in 1usize..5, w in 1usize..5, seed in any::<u64>(), scale in 0.01f64..20.0
    ) {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = c * h * w;
        let a = Tensor::from_vec(&[c, h, w], (0..n).map(|_| r.gen_range(-scale..scale)).collect());
        let b = Tensor::from_vec(&[c, h, w], (0..n).map(|_| r.gen_range(-scale..scale)).collect());
        prop_assert!(appearance_loss_level(&a, &b).unwrap() >= 0.0);
        prop_assert_eq!(appearance_loss_level(&a, &a).unwrap(), 0.0);
        prop_assert!(appearance_loss_level_dir(&a, &b, KlDirection::FeaturesToTarget).unwrap() >= 0.0);
    }
}

#[test]
fn total_is_sum_of_parts_and_al_only_in_similarity_mode() {
    let img = random_image(16, 1);
    let gt = random_mask(16, 1);
    for mode in [Mode::Base, Mode::Usersal, Mode::UsersalPlus] {
        let mut m: UserSal<f64> = model(tiny(mode, TsnVariant::Linear), 2);
        m.perturb(5, 0.2, |n| !n.starts_with("esm.") && !n.starts_with(SME_PREFIX));
        let mut g = Graph::new();
        let (terms, _) = total_loss(&mut g, &m, &img, &need(TEXTS[0]), &gt).unwrap();
        let r = terms.report(&g, 3);
        assert_eq!(r.al_per_level.len(), 3);
        let sum: f64 = r.al_per_level.iter().sum::<f64>() + r.mse;
        assert!((r.total - sum).abs() <= 1e-6 * r.total.abs().max(1e-12));
        assert!(r.mse >= 0.0 && r.al_per_level.iter().all(|&v| v >= 0.0));
        if mode == Mode::UsersalPlus {
            assert!(r.al_per_level.iter().all(|&v| v > 0.0));
        } else {
            assert_eq!(r.total, r.mse);
        }
    }
}

#[test]
fn single_scale_has_one_appearance_term() {
    let mut cfg = tiny(Mode::UsersalPlus, TsnVariant::Conv);
    cfg.multi_scale = false;
    let m: UserSal<f64> = model(cfg, 3);
    let mut g = Graph::new();
    let (terms, _) = total_loss(&mut g, &m, &random_image(16, 2), &need(TEXTS[2]), &random_mask(16, 2)).unwrap();
    assert_eq!(terms.al.len(), 1);
}

#[test]
fn perfect_prediction_with_matching_features_has_zero_loss() {
    let m: UserSal<f64> = model(tiny(Mode::UsersalPlus, TsnVariant::Linear), 4);
    let img = random_image(16, 3);
    let gt = random_mask(16, 3);
    let targets = m.appearance_target(&img, &gt).unwrap();
    let mut g = Graph::new();
    let total: f64 = targets
        .iter()
        .map(|t| {
            let v = g.constant(t.clone());
            let kl = g.spatial_kl(t, v);
            g.value(kl).item()
        })
        .sum::<f64>()
        + mse_loss(&SaliencyMap::from_mask(&gt), &gt).unwrap();
    assert_eq!(total, 0.0);
}

#[test]
fn zero_need_loss_is_defined() {
    let m: UserSal<f64> = model(tiny(Mode::UsersalPlus, TsnVariant::VitAttention), 5);
    let mut g = Graph::new();
    let (terms, _) = total_loss(&mut g, &m, &random_image(16, 4), &Need::Zero, &random_mask(16, 4)).unwrap();
    assert!(g.value(terms.total).item().is_finite());
}
