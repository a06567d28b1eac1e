// Scratch probe for desk-scale scenario tuning. Not part of the build.
use ggm_core::encoder::{build_test_grid, empirical_max_error, encoder_lipschitz_bound, train_encoder, TrainConfig};
use ggm_core::presets::desk_certify;
use std::time::Instant;

fn main() {
    let sc = desk_certify();
    let ds = build_test_grid(&sc.target, &sc.bounds, sc.eta, &sc.intrinsics).unwrap();
    for (lr, lambda, epochs, samples) in [
        (3e-3, 1e-3, 40, 2048),
        (1e-2, 1e-3, 40, 2048),
        (3e-3, 0.0, 40, 2048),
        (1e-2, 1e-2, 60, 2048),
        (1e-2, 1e-3, 60, 4096),
    ] {
        let cfg = TrainConfig { lr, lambda, epochs, samples, ..sc.train.clone() };
        let t0 = Instant::now();
        let (enc, report) = train_encoder(&sc.target, &sc.bounds, &sc.intrinsics, &cfg).unwrap();
        let eps = empirical_max_error(&enc, &ds, &sc.weights).unwrap();
        let le = encoder_lipschitz_bound(&enc, &sc.weights);
        println!(
            "lr={lr:.0e} lambda={lambda:.0e} ep={epochs} n={samples}: loss {:.5}->{:.5} eps={:.4} L_E={:.3e} maxw={:.3} ({:?})",
            report.epoch_losses[0],
            report.epoch_losses.last().unwrap(),
            eps,
            le,
            enc.max_abs_weight(),
            t0.elapsed()
        );
    }
}
