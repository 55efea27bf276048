mod common;

use std::io::Cursor;

use common::{bump_dataset, counted_dataset};
use fgnet::baselines::{svm_train, SvmConfig};
use fgnet::digitizer::{extract_trace, render_trace, AxisCalibration, PlotImage};
use fgnet::evaluation::{cross_validate, evaluate_holdout, undersample, CvConfig, Scorer, SvmLearner};
use fgnet::modelio::Model;
use fgnet::neuralnet::{parse_architecture, Network};
use fgnet::synthgen::{generate, OverlapMode, SynthConfig, TemplateSet};
use fgnet::{CsvMeta, Dataset, FunctionalGroup, RngSeed, Spectrum, INPUT_LENGTH};
use proptest::prelude::*;

fn small_synth(mode: OverlapMode) -> Dataset {
    let cfg = SynthConfig { per_class: 6, overlap_mode: mode, seed: RngSeed(11), ..Default::default() };
    generate(&cfg, &TemplateSet::default()).unwrap()
}

#[test]
fn synthetic_samples_are_model_ready() {
    for mode in [OverlapMode::Separable, OverlapMode::Overlapping] {
        let d = small_synth(mode);
        assert_eq!(d.len(), 14 * 6);
        assert!(d.samples().iter().all(|s| s.spectrum.is_model_ready()));
        assert_eq!(d.spectrum_len(), Some(INPUT_LENGTH));
    }
}

#[test]
fn csv_round_trip_is_exact() {
    let d = small_synth(OverlapMode::Overlapping);
    let text = d.to_csv_string();
    let back = Dataset::read_csv(Cursor::new(text), &CsvMeta::normalized("synthetic")).unwrap();
    assert_eq!(back, d);
}

#[test]
fn saved_models_predict_identically() {
    let d = small_synth(OverlapMode::Separable);
    let spectra: Vec<&Spectrum> = d.samples().iter().map(|s| &s.spectrum).collect();
    let svm = Model::Svm(svm_train(&d, &SvmConfig { epochs: 5, ..Default::default() }).unwrap());
    let arch = parse_architecture("conv1d:2:9,batchnorm,relu,maxpool:4:4,flatten,dense:14").unwrap();
    let cnn = Model::Cnn(Network::new(INPUT_LENGTH, 14, &arch, RngSeed(1)).unwrap());
    for m in [svm, cnn] {
        let back = Model::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back.score_batch(&spectra).unwrap(), m.score_batch(&spectra).unwrap());
    }
}

#[test]
fn holdout_report_matches_cross_validation_shape() {
    let d = small_synth(OverlapMode::Separable);
    let model = svm_train(&d, &SvmConfig { epochs: 5, ..Default::default() }).unwrap();
    let r = evaluate_holdout(&model, "svm", &d, Default::default()).unwrap();
    assert_eq!(r.per_repeat_accuracies.len(), 1);
    let total: u64 = r.confusion_matrix.iter().flatten().sum();
    assert_eq!(total as usize, d.len());
    let cv = CvConfig { n_folds: 3, seeds: vec![RngSeed(1), RngSeed(2)], ..Default::default() };
    let learner = SvmLearner { config: SvmConfig { epochs: 5, ..Default::default() } };
    let r = cross_validate(&d, &learner, &cv).unwrap();
    assert_eq!(r.per_repeat_accuracies.len(), 2);
    let total: u64 = r.confusion_matrix.iter().flatten().sum();
    assert_eq!(total as usize, 2 * d.len());
    let trace: u64 = (0..14).map(|c| r.confusion_matrix[c][c]).sum();
    assert!((100.0 * trace as f64 / total as f64 - r.top_k_accuracies[&1]).abs() < 1e-9);
}

#[test]
fn parallel_folds_match_sequential() {
    let d = bump_dataset(8, 40, 3, 1, "toy");
    let learner = SvmLearner { config: SvmConfig { epochs: 5, ..Default::default() } };
    let seq = CvConfig { n_folds: 4, seeds: vec![RngSeed(3)], jobs: 1, ..Default::default() };
    let par = CvConfig { jobs: 3, ..seq.clone() };
    assert_eq!(
        cross_validate(&d, &learner, &seq).unwrap().to_json(),
        cross_validate(&d, &learner, &par).unwrap().to_json()
    );
}

#[test]
fn rendered_plot_survives_pgm_text() {
    let cal = AxisCalibration::default();
    let img = render_trace(|w| 60.0 + 30.0 * (w / 300.0).sin(), 393, 320, &cal).unwrap();
    let back = PlotImage::parse_pgm(&img.to_pgm()).unwrap();
    assert_eq!(back, img);
    assert_eq!(extract_trace(&back, &cal).unwrap(), extract_trace(&img, &cal).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn undersample_keeps_min_of_cap_and_count(
        counts in proptest::collection::vec(0usize..30, 14),
        cap in 1usize..25,
        seed in any::<u64>(),
    ) {
        let d = counted_dataset(&counts, "p");
        let u = undersample(&d, cap, RngSeed(seed)).unwrap();
        for g in FunctionalGroup::ALL {
            prop_assert_eq!(u.class_counts()[&g], counts[g.index()].min(cap));
        }
        let ids: std::collections::HashSet<_> = d.samples().iter().map(|s| &s.source_id).collect();
        prop_assert!(u.samples().iter().all(|s| ids.contains(&s.source_id)));
    }
}
