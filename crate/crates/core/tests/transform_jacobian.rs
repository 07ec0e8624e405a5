use dbd_core::candidates::{candidate_blocks, lotka_volterra_motifs, FOURIER_EPSILON};
use dbd_core::dataset::{apply_transform, fit_transform};
use dbd_core::pca::{ml_estimate, StandardParams};
use dbd_core::reaction::DykParams;
use dbd_core::ssa::simulate_ensemble;

fn max_abs_jacobian(theta: &StandardParams) -> f64 {
    let motifs = lotka_volterra_motifs(&[0, 1, 2]);
    let eval = |p: &StandardParams| {
        candidate_blocks(p, &[0.0], &[1.0 + FOURIER_EPSILON], &motifs)
            .unwrap()
            .concat()
    };
    let x = theta.flatten();
    let mut worst: f64 = 0.0;
    for j in 0..x.len() {
        let h = 1e-6 * x[j].abs().max(1.0);
        let mut xp = x.clone();
        xp[j] += h;
        let mut xm = x.clone();
        xm[j] -= h;
        let fp = eval(&StandardParams::from_flat(2, 1, &xp).unwrap());
        let fm = eval(&StandardParams::from_flat(2, 1, &xm).unwrap());
        for (a, b) in fp.iter().zip(&fm) {
            worst = worst.max(((a - b) / (2.0 * h)).abs());
        }
    }
    worst
}

#[test]
fn standardizing_shrinks_candidate_jacobian() {
    let p = DykParams {
        t_max: 20.0,
        ..DykParams::default()
    };
    let ds = simulate_ensemble(&p, 0.7, 20, 100).unwrap();
    let names = vec!["Ca_Cyt".to_string(), "IP3".to_string()];
    let ds = ds.select(&names).unwrap();
    let tr = fit_transform(&[&ds]).unwrap();
    let std_ds = apply_transform(&ds, &tr).unwrap();
    let visible = [0, 1];
    let raw = ml_estimate(&ds.data_matrix_at(15.0, &visible).unwrap(), 1, &[]).unwrap();
    let scaled = ml_estimate(&std_ds.data_matrix_at(15.0, &visible).unwrap(), 1, &[]).unwrap();
    let (jr, js) = (max_abs_jacobian(&raw), max_abs_jacobian(&scaled));
    assert!(js < jr, "transformed {js} vs raw {jr}");
}
