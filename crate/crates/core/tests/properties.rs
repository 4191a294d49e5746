use proptest::prelude::*;

use uqbench::anchor::fit_blr;
use uqbench::basis::BasisFunction;
use uqbench::datagen::{experiment_preset, sample_observations, Dataset, ExperimentId, GenerativeModel};
use uqbench::eval::{covered, run_repetitions, summarize, EvalOptions, MethodSpec};
use uqbench::nn::{bernoulli_mask, forward, init_xavier, Architecture};
use uqbench::seed::{self, tag};
use uqbench::stats;
use uqbench::uqmethods::{DropoutModel, Ensemble, LearnedNoise, UqPrediction};

fn poly_data(xs: &[(f64, f64)], gamma: &[f64]) -> Dataset {
    let basis = BasisFunction::polynomial_2d();
    let inputs: Vec<Vec<f64>> = xs.iter().map(|&(a, b)| vec![a, b]).collect();
    let targets = inputs.iter().map(|x| basis.ground_truth(gamma, x).unwrap()).collect();
    Dataset::new(inputs, targets, 0).unwrap()
}

fn grid_inputs() -> Vec<(f64, f64)> {
    (0..5).flat_map(|i| (0..5).map(move |j| (i as f64 - 2.0, j as f64 * 0.7 - 1.3))).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn noise_free_targets_recover_gamma(gamma in prop::collection::vec(-3.0f64..3.0, 6)) {
        let post = fit_blr(&BasisFunction::polynomial_2d(), &poly_data(&grid_inputs(), &gamma), 0.5).unwrap();
        for (g, h) in gamma.iter().zip(&post.gamma_hat) {
            prop_assert!((g - h).abs() < 1e-9);
        }
    }

    #[test]
    fn anchor_std_ignores_targets_and_scales_with_sigma(
        a in prop::collection::vec(-3.0f64..3.0, 6),
        b in prop::collection::vec(-3.0f64..3.0, 6),
        sigma in 0.05f64..4.0,
        x in (-5.0f64..5.0, -5.0f64..5.0),
    ) {
        let basis = BasisFunction::polynomial_2d();
        let xs = grid_inputs();
        let pa = fit_blr(&basis, &poly_data(&xs, &a), sigma).unwrap().predict(&basis, &[x.0, x.1]).unwrap();
        let pb = fit_blr(&basis, &poly_data(&xs, &b), sigma).unwrap().predict(&basis, &[x.0, x.1]).unwrap();
        let p1 = fit_blr(&basis, &poly_data(&xs, &a), 1.0).unwrap().predict(&basis, &[x.0, x.1]).unwrap();
        prop_assert!((pa.std - pb.std).abs() <= 1e-9 * pa.std.max(1.0));
        prop_assert!((pa.std - sigma * p1.std).abs() <= 1e-9 * pa.std.max(1.0));
    }

    #[test]
    fn derived_seeds_separate_purposes_and_indices(parent: u64, i in 0u64..1000, j in 0u64..1000) {
        prop_assert_ne!(seed::derive(parent, tag::NOISE, i), seed::derive(parent, tag::TRAINING, i));
        if i != j {
            prop_assert_ne!(seed::derive(parent, tag::REPETITION, i), seed::derive(parent, tag::REPETITION, j));
        }
        prop_assert_eq!(seed::derive(parent, tag::MEMBER, i), seed::derive(parent, tag::MEMBER, i));
    }

    #[test]
    fn unit_mask_is_a_plain_forward_pass(s in 0u64..1000, x in -3.0f64..3.0) {
        let arch = Architecture::new(vec![1, 7, 5, 1], 0.2, 1).unwrap();
        let p = init_xavier(&arch, s);
        let plain = forward(&p, &arch, &[x], None).unwrap();
        prop_assert_eq!(plain, forward(&p, &arch, &[x], Some(&[1.0; 5])).unwrap());
        let m = DropoutModel::new(arch, p, LearnedNoise::Bernoulli { rate: 0.0 }, 4).unwrap();
        let pred = m.predict(&[x], 4, s).unwrap();
        prop_assert_eq!(pred.std, 0.0);
        prop_assert_eq!(pred.mean, plain);
    }

    #[test]
    fn ensemble_shift_moves_mean_not_spread(shift in -10.0f64..10.0, s in 0u64..1000) {
        let arch = Architecture::new(vec![1, 6, 1], 0.2, 0).unwrap();
        let members: Vec<_> = (0..4).map(|m| init_xavier(&arch, s * 10 + m)).collect();
        let shifted: Vec<_> = members.iter().cloned().map(|mut p| { p.bias_mut(1)[0] += shift; p }).collect();
        let a = Ensemble::new(arch.clone(), members).unwrap().predict(&[0.4]).unwrap();
        let b = Ensemble::new(arch, shifted).unwrap().predict(&[0.4]).unwrap();
        prop_assert!((b.mean - a.mean - shift).abs() < 1e-9);
        prop_assert!((b.std - a.std).abs() < 1e-9);
    }

    #[test]
    fn wider_intervals_never_lose_coverage(mean in -5.0f64..5.0, std in 0.0f64..3.0, truth in -8.0f64..8.0, inflate in 1.0f64..4.0) {
        let p = UqPrediction::new(mean, std).unwrap();
        let q = UqPrediction::new(mean, std * inflate).unwrap();
        prop_assert!(!covered(&p, truth) || covered(&q, truth));
    }
}

#[test]
fn bernoulli_mask_has_unit_expectation() {
    for rate in [0.05, 0.3, 0.7] {
        let mut rng = seed::rng(42);
        let mut mask = vec![0.0; 200_000];
        bernoulli_mask(rate, &mut rng, &mut mask);
        let mean = stats::mean(&mask);
        let se = (rate / (1.0 - rate) / mask.len() as f64).sqrt();
        assert!((mean - 1.0).abs() < 4.0 * se, "rate {rate}: mean {mean}");
        let dropped = mask.iter().filter(|m| **m == 0.0).count() as f64 / mask.len() as f64;
        assert!((dropped - rate).abs() < 0.005);
    }
}

#[test]
fn dropout_mc_error_shrinks_with_samples() {
    let arch = Architecture::new(vec![1, 16, 8, 1], 0.2, 1).unwrap();
    let m = DropoutModel::new(arch.clone(), init_xavier(&arch, 5), LearnedNoise::Bernoulli { rate: 0.25 }, 10).unwrap();
    let spread = |mc: usize| {
        let means: Vec<f64> = (0..40).map(|s| m.predict(&[0.8], mc, s).unwrap().mean).collect();
        stats::sample_std(&means)
    };
    let (small, large) = (spread(25), spread(1600));
    assert!(large < small / 4.0, "MC error {small} at 25 samples, {large} at 1600");
}

#[test]
fn anchor_mean_is_unbiased_over_redraws() {
    let preset = experiment_preset(ExperimentId::E3, 2.0, 9).unwrap();
    let truth = preset.ground_truth().unwrap();
    let run = run_repetitions(&preset, &MethodSpec::Anchor, &EvalOptions::default(), 300).unwrap();
    for r in run.records.iter().step_by(37) {
        let means: Vec<f64> = r.predictions.iter().map(|p| p.mean).collect();
        let se = stats::std_error(&means);
        assert!((stats::mean(&means) - truth[r.input_id]).abs() < 4.5 * se, "input {}", r.input_id);
    }
}

#[test]
fn anchor_is_calibrated_across_the_e2_diagonal() {
    let preset = experiment_preset(ExperimentId::E2, 2.0, 4).unwrap();
    let run = run_repetitions(&preset, &MethodSpec::Anchor, &EvalOptions::default(), 150).unwrap();
    let report = summarize(&run.records, preset.train_bounds()).unwrap();
    let all: Vec<f64> = report.rows.iter().map(|r| r.coverage).collect();
    let mean = stats::mean(&all);
    assert!((mean - 0.95).abs() < 0.03, "mean coverage {mean}");
}

#[test]
fn observations_change_only_with_the_noise_seed() {
    let model = GenerativeModel::new(BasisFunction::sinusoidal(2.0).unwrap(), vec![1.0, -0.5, 0.2, 0.3], 0.75).unwrap();
    let inputs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 * 0.3 - 3.0]).collect();
    let a = sample_observations(&model, &inputs, 1).unwrap();
    let b = sample_observations(&model, &inputs, 1).unwrap();
    let c = sample_observations(&model, &inputs, 2).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.inputs, c.inputs);
    assert_ne!(a.targets, c.targets);
}
