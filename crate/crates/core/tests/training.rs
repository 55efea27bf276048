mod common;

use common::bump_dataset;
use fgnet::neuralnet::{parse_architecture, train, Network, Optimizer, TrainConfig};
use fgnet::{Error, RngSeed, Spectrum};

const TOY_ARCH: &str = "conv1d:4:5,relu,maxpool:2:2,flatten,dense:3";

fn toy_net(seed: u64) -> Network {
    Network::new(40, 3, &parse_architecture(TOY_ARCH).unwrap(), RngSeed(seed)).unwrap()
}

#[test]
fn separable_toy_loss_drops_below_threshold() {
    let d = bump_dataset(10, 40, 3, 1, "toy");
    let mut net = toy_net(1);
    let cfg = TrainConfig { epochs: 50, batch_size: 8, learning_rate: 1e-2, ..Default::default() };
    let h = train(&mut net, &d, &cfg).unwrap();
    assert_eq!(h.epoch_losses.len(), 50);
    assert!(*h.epoch_losses.last().unwrap() < 0.05, "{:?}", h.epoch_losses);
    assert!(h.epoch_losses[0] > h.epoch_losses[49]);
}

#[test]
fn sgd_with_momentum_also_learns() {
    let d = bump_dataset(10, 40, 3, 2, "toy");
    let mut net = toy_net(2);
    let cfg = TrainConfig {
        epochs: 50,
        batch_size: 8,
        learning_rate: 1e-3,
        optimizer: Optimizer::Sgd { momentum: 0.9 },
        ..Default::default()
    };
    let h = train(&mut net, &d, &cfg).unwrap();
    assert!(h.epoch_losses[49] < 0.5 * h.epoch_losses[0], "{:?}", h.epoch_losses);
}

#[test]
fn same_seed_gives_identical_parameters() {
    let d = bump_dataset(6, 40, 3, 3, "toy");
    let arch = parse_architecture("conv1d:4:5,batchnorm,relu,maxpool:2:2,dropout:0.3,flatten,dense:3").unwrap();
    let cfg = TrainConfig { epochs: 5, batch_size: 4, seed: RngSeed(9), ..Default::default() };
    let run = || {
        let mut net = Network::new(40, 3, &arch, RngSeed(4)).unwrap();
        let h = train(&mut net, &d, &cfg).unwrap();
        (net, h)
    };
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(a, b);
    assert_eq!(ha, hb);
    let mut c = Network::new(40, 3, &arch, RngSeed(4)).unwrap();
    train(&mut c, &d, &TrainConfig { seed: RngSeed(10), ..cfg.clone() }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn zero_learning_rate_freezes_parameters() {
    let d = bump_dataset(5, 40, 3, 4, "toy");
    let mut net = toy_net(5);
    let state = |n: &Network| -> Vec<Vec<f64>> {
        n.layers().iter().flat_map(|l| l.state()).map(<[f64]>::to_vec).collect()
    };
    let before = state(&net);
    train(&mut net, &d, &TrainConfig { epochs: 3, learning_rate: 0.0, ..Default::default() }).unwrap();
    assert_eq!(state(&net), before);
}

#[test]
fn training_rejects_bad_input() {
    let d = bump_dataset(5, 40, 3, 4, "toy");
    let mut net = toy_net(5);
    let bad = TrainConfig { epochs: 0, ..Default::default() };
    assert!(matches!(train(&mut net, &d, &bad), Err(Error::InvalidConfig(_))));
    let wrong_len = bump_dataset(5, 30, 3, 4, "toy");
    assert!(train(&mut net, &wrong_len, &TrainConfig::default()).is_err());
}

#[test]
fn probabilities_are_distributions() {
    let net = toy_net(6);
    let d = bump_dataset(3, 40, 3, 6, "toy");
    let spectra: Vec<&Spectrum> = d.samples().iter().map(|s| &s.spectrum).collect();
    for row in net.predict_proba_batch(&spectra).unwrap() {
        assert_eq!(row.len(), 3);
        assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
