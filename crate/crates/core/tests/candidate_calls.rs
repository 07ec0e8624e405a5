//! Kept in its own binary: the evaluation counter is process-global.

use dbd_core::candidates::{candidate_evaluations, default_frequencies, lotka_volterra_motifs};
use dbd_core::linalg::Mat;
use dbd_core::pca::StandardParams;
use dbd_core::rollout::euler_rollout;
use dbd_core::subnet::{train, Example, InputMode, SubnetModel, SubnetSpec, TrainConfig};

fn examples() -> Vec<Example> {
    (0..40)
        .map(|k| {
            let x = 0.05 * k as f64;
            Example {
                theta: StandardParams {
                    b: vec![x, -x],
                    w: Mat::from_vec(2, 1, vec![0.5 + x, 0.2]).unwrap(),
                    sigma2: 0.3,
                },
                t: 10.0 + 0.1 * k as f64,
                target: vec![x.sin(), x.cos(), 0.1, -0.2, 0.0],
            }
        })
        .collect()
}

#[test]
fn parameters_only_never_evaluates_candidates() {
    let motifs = lotka_volterra_motifs(&[0, 1, 2]);
    let spec = SubnetSpec::shallow(5, InputMode::ParametersOnly);
    let mut model = SubnetModel::new(spec, 2, 1, motifs.clone(), default_frequencies(6, 40.0), 1).unwrap();
    let ex = examples();
    let before = candidate_evaluations();
    let cfg = TrainConfig {
        rounds: 3,
        ..TrainConfig::default()
    };
    train(&mut model, &ex, &cfg).unwrap();
    model.loss(&ex).unwrap();
    euler_rollout(&model, &ex[0].theta, 10.0, 5.0, 0.1).unwrap();
    assert_eq!(candidate_evaluations(), before);

    let spec = SubnetSpec::shallow(5, InputMode::ReactionCandidates);
    let with = SubnetModel::new(spec, 2, 1, motifs, default_frequencies(6, 40.0), 1).unwrap();
    with.predict(&ex[0].theta, 10.0).unwrap();
    assert!(candidate_evaluations() > before);
}
