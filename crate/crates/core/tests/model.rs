use cellcount::dataio::{synth_generate, SynthConfig};
use cellcount::gradcheck::{finite_diff_check_groups, seeded_instance, Objective};
use cellcount::model::{build_model, forward, ModelVariant};
use cellcount::params::ParamGroup;
use cellcount::tensor::Tensor;
use cellcount::training::{evaluate, init_rng, shuffle_rng, train, TrainConfig};

#[test]
fn gradients_check_for_every_variant() {
    for v in ModelVariant::ALL {
        let (params, objective) = seeded_instance(v, 1).unwrap();
        let grad = objective.gradient(&params).unwrap();
        let checks = finite_diff_check_groups(&objective, &params, &grad, 1e-2, 15, &mut shuffle_rng(1)).unwrap();
        let expected = if v.has_aux() { 7 } else { 4 };
        assert_eq!(checks.len(), expected, "{v}");
        for c in checks {
            assert!(c.max_rel_error <= 1e-2, "{v} {:?}: {}", c.group, c.max_rel_error);
        }
    }
}

#[test]
fn output_matches_input_size() {
    for v in ModelVariant::ALL {
        let params = build_model(v, &mut init_rng(2)).unwrap();
        for (h, w) in [(8, 8), (16, 40), (96, 96)] {
            let x = Tensor::filled([1, 1, h, w], 0.5);
            let out = forward(&params, &x, v).unwrap();
            assert_eq!(out.y_hat.dims(), [1, 1, h, w], "{v}");
            assert!(out.y_hat.data().iter().all(|&y| y >= 0.0));
            match (&out.aux, v.has_aux()) {
                (Some([a, b, c]), true) => {
                    assert_eq!(a.dims(), [1, 1, h / 8, w / 8]);
                    assert_eq!(b.dims(), [1, 1, h / 4, w / 4]);
                    assert_eq!(c.dims(), [1, 1, h / 2, w / 2]);
                }
                (None, false) => {}
                _ => panic!("{v}: unexpected auxiliary outputs"),
            }
        }
        assert!(forward(&params, &Tensor::zeros([1, 1, 12, 16]), v).is_err());
    }
}

#[test]
fn aux_heads_are_separate_groups() {
    let params = build_model(ModelVariant::PricnnAux, &mut init_rng(0)).unwrap();
    assert_eq!(params.groups(), ParamGroup::ALL.to_vec());
    let fcrn = build_model(ModelVariant::Fcrn, &mut init_rng(0)).unwrap();
    assert!(fcrn.groups().iter().all(|g| g.is_primary()));
    assert!(fcrn.param_count() < params.param_count());
}

#[test]
fn short_training_lowers_loss_and_counts_are_finite() {
    let data =
        synth_generate(&SynthConfig { num_images: 2, rows: 32, cols: 32, seed: 3, ..Default::default() }).unwrap();
    let config =
        TrainConfig { batch_size: 1, epochs: 20, learning_rate: 1e-3, density_scale: 2.0, ..Default::default() };
    let out = train(&data, &config, &mut |_| {}).unwrap();
    assert_eq!(out.history.len(), 40);
    assert!(out.loss_ratio().unwrap() < 1.0, "{:?}", out.loss_ratio());
    let report = evaluate(&out.params, config.variant, &data, config.density_scale).unwrap();
    assert_eq!(report.per_image.len(), 2);
    assert!(report.per_image.iter().all(|e| e.estimated_count.is_finite() && e.estimated_count >= 0.0));
}
