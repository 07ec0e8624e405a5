use dbd_core::reaction::{DykParams, CA_CYT};
use dbd_core::ssa::simulate_trajectory;

#[test]
fn repeated_spikes_at_low_ip3() {
    let p = DykParams::default();
    let tr = simulate_trajectory(&p, 0.5, 3).unwrap();
    let start = tr.times.iter().position(|&t| t >= p.t_max - 40.0 - 1e-9).unwrap();
    let ca: Vec<f64> = tr.series(CA_CYT)[start..].iter().map(|&c| c as f64).collect();
    let mut sorted = ca.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    // Trough level: mean of the lowest quarter of the window.
    let low = &sorted[..sorted.len() / 4];
    let trough = low.iter().sum::<f64>() / low.len() as f64;
    let peak = *sorted.last().unwrap();
    assert!(peak > 2.0 * trough, "peak {peak}, trough mean {trough}");
    let level = 2.0 * trough;
    let spikes = ca.windows(2).filter(|w| w[0] < level && w[1] >= level).count();
    assert!(spikes >= 2, "{spikes} upward crossings of {level}");
}
