mod common;

use common::{GradProblem, Net};
use petgan::model::ModelConfig;

// At the default 0.02 init, deep pre-activations are ~1e-3, close enough
// to the LeakyReLU kink that a 1e-5 bias nudge crosses it. Wider weights
// keep central differences on one linear piece.
fn check(cfg: &ModelConfig, seed: u64) {
    let cfg = ModelConfig {
        init_std: 0.3,
        ..cfg.clone()
    };
    let mut p = GradProblem::new(&cfg, seed);
    for net in [Net::Discriminator, Net::Generator] {
        let (err, n) = p.check(net, 1e-5, 1e-6);
        println!("{net:?}: {n} parameters, max relative error {err:.3e}");
        assert!(err < 1e-4, "{net:?} relative error {err}");
    }
}

#[test]
fn micro_config_gradients() {
    check(&ModelConfig::micro(), 11);
}

#[test]
fn gradients_through_discriminator_batch_norm() {
    let cfg = ModelConfig {
        disc_layers: 4,
        disc_channels: vec![3, 4, 4, 4],
        ..ModelConfig::micro()
    };
    assert!(cfg.disc_has_bn(2));
    check(&cfg, 12);
}
