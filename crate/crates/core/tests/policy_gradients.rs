use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgpo_core::env::NUM_ACTIONS;
use sgpo_core::policy::{ActionDistribution, CriticParameters, Layout, PolicyParameters};
use sgpo_core::StateKey;

const EPS: f64 = 1e-5;
const REL_TOL: f64 = 1e-6;

// Relative error with a floor so that coordinates whose true derivative is
// zero are judged on the finite-difference noise scale.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

fn random_state(rng: &mut ChaCha8Rng, g: u32) -> StateKey {
    StateKey::new(rng.gen_range(0..g), rng.gen_range(0..g))
}

#[test]
fn policy_score_matches_central_differences() {
    let layouts = [
        Layout::Tabular { grid_size: 4 },
        Layout::Mlp {
            grid_size: 5,
            hidden: 8,
        },
    ];
    for layout in layouts {
        let mut worst = 0.0f64;
        for trial in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(trial);
            let mut p = PolicyParameters::init(layout, &mut rng).unwrap();
            for t in p.theta_mut() {
                *t += rng.gen_range(-0.5..0.5);
            }
            let s = random_state(&mut rng, layout.grid_size());
            let a = rng.gen_range(0..NUM_ACTIONS);
            let g = p.grad_log_prob(s, a).unwrap();
            for (k, &gk) in g.iter().enumerate() {
                let mut plus = p.clone();
                plus.theta_mut()[k] += EPS;
                let mut minus = p.clone();
                minus.theta_mut()[k] -= EPS;
                let fd =
                    (plus.log_prob(s, a).unwrap() - minus.log_prob(s, a).unwrap()) / (2.0 * EPS);
                worst = worst.max(rel_err(gk, fd));
            }
        }
        assert!(
            worst <= REL_TOL,
            "{layout:?}: worst relative error {worst:e}"
        );
    }
}

#[test]
fn critic_gradient_matches_central_differences() {
    let layout = Layout::Mlp {
        grid_size: 5,
        hidden: 8,
    };
    let mut worst = 0.0f64;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let c = CriticParameters::init(layout, &mut rng).unwrap();
        let s = random_state(&mut rng, 5);
        let g = c.grad(s).unwrap();
        for (k, &gk) in g.iter().enumerate() {
            let mut plus = c.clone();
            plus.phi_mut()[k] += EPS;
            let mut minus = c.clone();
            minus.phi_mut()[k] -= EPS;
            let fd = (plus.value(s).unwrap() - minus.value(s).unwrap()) / (2.0 * EPS);
            worst = worst.max(rel_err(gk, fd));
        }
    }
    assert!(worst <= REL_TOL, "worst relative error {worst:e}");

    let tab = CriticParameters::zeros(Layout::Tabular { grid_size: 3 }).unwrap();
    let g = tab.grad(StateKey::new(1, 2)).unwrap();
    assert_eq!(g.iter().sum::<f64>(), 1.0);
    assert_eq!(g[5], 1.0);
}

#[test]
fn mlp_score_has_zero_mean() {
    let layout = Layout::Mlp {
        grid_size: 6,
        hidden: 16,
    };
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = PolicyParameters::init(layout, &mut rng).unwrap();
        let s = random_state(&mut rng, 6);
        let d = p.action_distribution(s).unwrap();
        let mut mean = vec![0.0; p.len()];
        for a in 0..NUM_ACTIONS {
            p.accumulate_grad_log_prob(s, a, d.probs[a], &mut mean)
                .unwrap();
        }
        assert!(mean.iter().all(|m| m.abs() <= 1e-9));
    }
}

#[test]
fn softmax_stays_normalized_for_bounded_logits() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..1000 {
        let logits: Vec<f64> = (0..NUM_ACTIONS)
            .map(|_| rng.gen_range(-50.0..=50.0))
            .collect();
        let d = ActionDistribution::from_logits(&logits).unwrap();
        assert!(d.probs.iter().all(|p| p.is_finite() && *p >= 0.0));
        assert!((d.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn sampling_frequencies_follow_probabilities() {
    let d = ActionDistribution::from_logits(&[1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 100_000;
    let hits = (0..n).filter(|_| d.sample(&mut rng) == 0).count() as f64;
    let p = d.probs[0];
    let sd = (p * (1.0 - p) / n as f64).sqrt();
    assert!((hits / n as f64 - p).abs() < 4.0 * sd);
}
