use stockdiff::oracles::{perturbed_gaussian_score, GaussianSpec};
use stockdiff::rng::{normal_vec, seeded};
use stockdiff::scorenet::{implied_score, train, Condition, NetConfig, ScoreNetworkParams, TrainConfig, TrainingItem};
use stockdiff::NoiseSchedule;

fn toy_config() -> NetConfig {
    NetConfig { window: 1, width: 32, blocks: 2, time_dim: 16, industries: 1, embed_dim: 2, cond_hidden: 8 }
}

fn score_mae(params: &ScoreNetworkParams, schedule: &NoiseSchedule, t: usize) -> f64 {
    let spec = GaussianSpec::standard();
    let cond = params.encode_condition(&Condition::Null).unwrap();
    let grid: Vec<f64> = (0..=40).map(|i| -2.0 + 0.1 * i as f64).collect();
    grid.iter()
        .map(|&x| {
            let eps = params.predict_eps(&[x], t, &cond).unwrap();
            let s = implied_score(&eps, t, schedule)[0];
            (s - perturbed_gaussian_score(x, &spec, schedule.alpha_bar(t))).abs()
        })
        .sum::<f64>()
        / grid.len() as f64
}

#[test]
fn learned_score_matches_gaussian_marginal() {
    let schedule = NoiseSchedule::default();
    let mut rng = seeded(11);
    let data: Vec<TrainingItem> =
        normal_vec(&mut rng, 8192).into_iter().map(|v| TrainingItem::new(vec![v], Condition::Null)).collect();
    let init = ScoreNetworkParams::init(toy_config(), 5).unwrap();
    let cfg = TrainConfig { epochs: 40, batch_size: 256, p_uncond: 0.0, seed: 3, ..TrainConfig::default() };
    let out = train(init, &data, &schedule, &cfg).unwrap();
    let mae = score_mae(&out.params, &schedule, schedule.steps() / 2);
    assert!(mae <= 0.1, "mae {mae}");
}
