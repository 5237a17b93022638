//! Randomized property measurements over many instances. Each returns the
//! worst observed deviation so callers can compare against a tolerance.

use hypermix::envs::EnvSpec;
use hypermix::hypergraph;
use hypermix::mixers::{igm_check, Mixer, MixerConfig, MixerKind};
use hypermix::nn::ParameterStore;
use hypermix::numcore::{Matrix, Rng};

use super::{dense_hgcn_layer, rand_away_from_zero, rand_matrix, to_rows};

/// `H = [0 | μ·Iₙ]` (or `c·Iₙ` padded with zero columns) must leave `Q` unchanged.
pub fn identity_property(instances: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    for k in 0..instances {
        let n = 1 + rng.below(8);
        let m = rng.below(9);
        let mu = rng.uniform_range(0.05, 3.0);
        let mut h = Matrix::zeros(n, m + n);
        // alternate the one-hot block between the end and a padded front position
        let offset = if k % 2 == 0 { m } else { 0 };
        for i in 0..n {
            h.set(i, offset + i, mu);
        }
        let w1 = rand_away_from_zero(&mut rng, 1, m + n, 3.0, 0.05);
        let w2 = rand_away_from_zero(&mut rng, 1, m + n, 3.0, 0.05);
        let q = rand_matrix(&mut rng, n, 1, -20.0, 20.0);
        let out = hypergraph::hgcn_transform(&q, &h, w1.data(), w2.data()).unwrap();
        worst = worst.max(out.max_abs_diff(&q).unwrap());
    }
    worst
}

/// A single all-ones hyperedge averages its members.
pub fn mean_pooling(instances: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = 2 + rng.below(7);
        let h = Matrix::ones(n, 1);
        let w = [rng.uniform_range(0.1, 5.0)];
        let x = rand_matrix(&mut rng, n, 1, -10.0, 10.0);
        let mean = x.sum() / n as f64;
        let out = hypergraph::hgcn_layer(&x, &h, &w).unwrap();
        worst = worst.max(out.data().iter().fold(0.0, |a, v| a.max((v - mean).abs())));
    }
    worst
}

/// Library layer against the explicit dense product, with some hyperedge
/// columns zeroed so the safe inverses are exercised.
pub fn oracle_equivalence(instances: usize, seed: u64) -> (f64, usize) {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    let mut with_zero_cols = 0;
    for k in 0..instances {
        let n = 1 + rng.below(8);
        let m = 1 + rng.below(8);
        let e = m + n;
        let mut h = rand_matrix(&mut rng, n, e, 0.0, 2.0);
        if k % 3 != 0 {
            let zeroed = 1 + rng.below(e);
            for _ in 0..zeroed {
                let col = rng.below(e);
                for i in 0..n {
                    h.set(i, col, 0.0);
                }
            }
            with_zero_cols += 1;
        }
        let w = rand_matrix(&mut rng, 1, e, -2.0, 2.0);
        let x = rand_matrix(&mut rng, n, 1, -5.0, 5.0);
        let lib = hypergraph::hgcn_layer(&x, &h, w.data()).unwrap();
        let dense = dense_hgcn_layer(x.data(), &to_rows(&h), w.data());
        for (a, b) in lib.data().iter().zip(&dense) {
            worst = worst.max((a - b).abs());
        }
    }
    (worst, with_zero_cols)
}

pub fn mixer_spec(n: usize, n_actions: usize) -> EnvSpec {
    EnvSpec {
        n_agents: n,
        n_actions,
        obs_dim: 5,
        state_dim: 6,
        episode_limit: 1,
        gamma: 0.99,
    }
}

pub fn small_mixer_config() -> MixerConfig {
    MixerConfig {
        embed: 8,
        hypernet_hidden: 16,
        hyperedges: 4,
    }
}

/// Freshly initialized mixer with every parameter jittered, so biases and
/// edge weights are not at their structured starting values.
pub fn random_mixer(kind: MixerKind, spec: &EnvSpec, rng: &mut Rng) -> (Mixer, ParameterStore) {
    let mixer = Mixer::new(kind, spec, small_mixer_config());
    let mut store = ParameterStore::new();
    mixer.init(&mut store, rng).unwrap();
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let v = store.value(&name).unwrap().clone();
        let jitter = rand_matrix(rng, v.rows(), v.cols(), -0.3, 0.3);
        store.set_value(&name, v.zip_map(&jitter, |a, b| a + b).unwrap()).unwrap();
    }
    (mixer, store)
}

/// Smallest finite-difference slope `∂Q_tot/∂Q_a` seen over all instances.
pub fn min_monotone_slope(kind: MixerKind, instances: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut worst = f64::INFINITY;
    let h = 1e-6;
    for _ in 0..instances {
        let n = 2 + rng.below(4);
        let spec = mixer_spec(n, 3);
        let (mixer, store) = random_mixer(kind, &spec, &mut rng);
        let q = rand_matrix(&mut rng, n, 1, -5.0, 5.0);
        let obs = rand_matrix(&mut rng, n, spec.obs_dim, -1.0, 1.0);
        let state = rand_matrix(&mut rng, 1, spec.state_dim, -1.0, 1.0);
        for a in 0..n {
            let mut up = q.clone();
            up.set(a, 0, q.get(a, 0) + h);
            let mut down = q.clone();
            down.set(a, 0, q.get(a, 0) - h);
            let fu = mixer.joint_values(&store, &up, &obs, &state).unwrap().item();
            let fd = mixer.joint_values(&store, &down, &obs, &state).unwrap().item();
            worst = worst.min((fu - fd) / (2.0 * h));
        }
    }
    worst
}

/// Number of random `n = 3`, 3-action instances where the per-agent greedy
/// tuple fails to maximize `Q_tot` over all 27 joint actions.
pub fn igm_failures(kind: MixerKind, instances: usize, seed: u64) -> usize {
    let mut rng = Rng::new(seed);
    let spec = mixer_spec(3, 3);
    let mut failures = 0;
    for _ in 0..instances {
        let (mixer, store) = random_mixer(kind, &spec, &mut rng);
        let tables: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..3).map(|_| rng.uniform_range(-5.0, 5.0)).collect())
            .collect();
        let obs = rand_matrix(&mut rng, 3, spec.obs_dim, -1.0, 1.0);
        let state: Vec<f64> = (0..spec.state_dim).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        if !igm_check(&mixer, &store, &tables, &state, &obs).unwrap() {
            failures += 1;
        }
    }
    failures
}

/// `|Q_tot(hgcn-mix-oh) − Q_tot(qmix)|` when both share state-module parameters.
pub fn ablation_gap(instances: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = 1 + rng.below(8);
        let spec = mixer_spec(n, 3);
        let (qmix, qstore) = random_mixer(MixerKind::Qmix, &spec, &mut rng);
        let (oh, mut ostore) = random_mixer(MixerKind::HgcnMixOh, &spec, &mut rng);
        for (name, p) in qstore.iter() {
            ostore.set_value(name, p.value.clone()).unwrap();
        }
        let groups = 1 + rng.below(4);
        let q = rand_matrix(&mut rng, groups * n, 1, -10.0, 10.0);
        let obs = rand_matrix(&mut rng, groups * n, spec.obs_dim, -1.0, 1.0);
        let state = rand_matrix(&mut rng, groups, spec.state_dim, -1.0, 1.0);
        let a = qmix.joint_values(&qstore, &q, &obs, &state).unwrap();
        let b = oh.joint_values(&ostore, &q, &obs, &state).unwrap();
        worst = worst.max(a.max_abs_diff(&b).unwrap());
    }
    worst
}
