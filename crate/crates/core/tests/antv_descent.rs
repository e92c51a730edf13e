use stockdiff::regularizers::{antv_loss, antv_step, AntvConfig, AntvGradient};
use stockdiff::rng::{normal_vec, seeded};

fn descent_rate(gradient: AntvGradient) -> f64 {
    let cfg = AntvConfig { rate: 1e-3, gradient, ..AntvConfig::default() };
    let mut rng = seeded(77);
    let trials = 1000;
    let hits = (0..trials)
        .filter(|_| {
            let x = normal_vec(&mut rng, 20);
            antv_loss(&antv_step(&x, &cfg), &cfg) <= antv_loss(&x, &cfg)
        })
        .count();
    hits as f64 / trials as f64
}

#[test]
fn small_steps_descend() {
    let seq = descent_rate(AntvGradient::Sequential);
    let exact = descent_rate(AntvGradient::Exact);
    assert!(seq >= 0.95, "sequential pass descended in {seq}");
    assert_eq!(exact, 1.0);
}
