use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::arch::parse_tokens;

const TIGHT: Real = if cfg!(feature = "f32") { 1e-5 } else { 1e-12 };

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn controller(seed: u64) -> Controller {
    Controller::new(PolicyConfig::default(), &mut rng(seed)).unwrap()
}

fn tiny() -> PolicyConfig {
    PolicyConfig {
        embed_dim: 2,
        hidden: 1,
        head_hidden: 1,
        ..PolicyConfig::default()
    }
}

fn layers(s: &str) -> Vec<LayerSpec> {
    parse_tokens(s).unwrap()
}

fn logit(p: Real) -> Real {
    (p / (1.0 - p)).ln()
}

#[test]
fn embedding_shapes() {
    let c = controller(1);
    let e = embed_layers(&layers("rnn-4,conv-3,fc-16,rnn-4"), &c.params).unwrap();
    assert_eq!(e.shape(), &[4, 16]);
    assert_eq!(e.slice_outer(0, 1), e.slice_outer(3, 1));
    assert_ne!(e.slice_outer(0, 1), e.slice_outer(1, 1));
    assert_eq!(embed_layers(&[], &c.params).unwrap().shape(), &[1, 16]);

    let zero = PolicyParams::zeros(&c.config);
    let e = embed_layers(&layers("fc-4,conv-4"), &zero).unwrap();
    assert!(e.data().iter().all(|&v| v == 0.0));
}

#[test]
fn encoder_properties() {
    let c = controller(2);
    let e = embed_layers(&layers("conv-8"), &c.params).unwrap();
    let (h, s) = encode(&e, &c.params).unwrap();
    assert_eq!(h.shape(), &[1, 32]);
    assert_eq!(h.data(), s.data());

    let zero = PolicyParams::zeros(&c.config);
    let (h, s) = encode(&e, &zero).unwrap();
    assert!(h.data().iter().chain(s.data()).all(|&v| v == 0.0));

    let fwd = embed_layers(&layers("fc-4,conv-8,rnn-16"), &c.params).unwrap();
    let rev = embed_layers(&layers("rnn-16,conv-8,fc-4"), &c.params).unwrap();
    let (_, s1) = encode(&fwd, &c.params).unwrap();
    let (_, s2) = encode(&rev, &c.params).unwrap();
    assert!(s1.max_abs_diff(&s2).unwrap() > 1e-6);
}

#[test]
fn selector_distribution() {
    let mut c = controller(3);
    c.params.sel_w2.fill(0.0);
    c.params.sel_b2 = Array::vector(vec![logit(0.2), logit(0.2), logit(0.6)]);
    let d = c.selector_decide(&layers("fc-4"), &mut rng(0)).unwrap();
    for (p, want) in d.probs[0].iter().zip([0.2, 0.2, 0.6]) {
        assert!((p - want).abs() < TIGHT);
    }
    c.params.sel_b2 = Array::vector(vec![0.7; 3]);
    let d = c.selector_decide(&layers("fc-4"), &mut rng(0)).unwrap();
    assert!(d.probs[0].iter().all(|p| (p - 1.0 / 3.0).abs() < TIGHT));

    let c = controller(3);
    let a = c.decide(&layers("fc-4,rnn-4"), None, &mut rng(9)).unwrap();
    let b = c.decide(&layers("fc-4,rnn-4"), None, &mut rng(9)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn wider_masking() {
    let c = controller(4);
    let state = layers("rnn-4,conv-3,fc-16");
    for seed in 0..20 {
        let d = c.wider_decide(&state, &mut rng(seed)).unwrap();
        // conv before fc is masked as well
        assert_eq!(d.probs[0], vec![0.0, 0.0, 1.0]);
        assert_eq!(d.action, MorphAction::wider(2));
    }
    let d = c.wider_decide(&layers("rnn-4,rnn-4"), &mut rng(0)).unwrap();
    assert!(d.probs[0].iter().all(|&p| p > 0.0));

    let mut c = controller(4);
    c.params.wid_w2.fill(0.0);
    let d = c.wider_decide(&layers("rnn-4,rnn-4"), &mut rng(0)).unwrap();
    assert_eq!(d.probs[0], vec![0.5, 0.5]);
}

#[test]
fn wider_with_nothing_to_widen_is_unchanged() {
    let c = controller(5);
    let d = c.decide(&[], Some(Choice::Wider), &mut rng(0)).unwrap();
    assert_eq!(d.action, MorphAction::Unchanged);
    assert!(d.steps.is_empty());
    assert_eq!(d.log_prob, 0.0);
    assert_eq!(d.anomalies.len(), 1);
}

#[test]
fn degenerate_selector_falls_back_to_uniform() {
    let mut c = controller(5);
    c.params.sel_w2.fill(0.0);
    c.params.sel_b2 = Array::vector(vec![-1e4; 3]);
    let d = c.selector_decide(&layers("fc-4"), &mut rng(0)).unwrap();
    assert_eq!(d.probs[0], vec![1.0 / 3.0; 3]);
    assert!((d.log_prob - (1.0 / 3.0 as Real).ln()).abs() < TIGHT);
    assert_eq!(d.anomalies.len(), 1);
}

#[test]
fn deeper_actor() {
    let mut c = controller(6);
    c.params.deep_type_w.fill(0.0);
    let state = layers("fc-4,conv-3,rnn-4");
    let d = c.deeper_decide(&state, &mut rng(1)).unwrap();
    assert!(d.probs[0].iter().all(|p| (p - 1.0 / 3.0).abs() < TIGHT));
    assert_eq!(d.probs[1].len(), 4);
    assert_eq!(d.steps.len(), 2);

    c.params.deep_type_b = Array::vector(vec![-50.0, 50.0, -50.0]);
    let d = c.deeper_decide(&state, &mut rng(1)).unwrap();
    let MorphAction::Deeper { kind, position } = d.action else { panic!() };
    assert_eq!(kind, LayerKind::Conv);
    assert!(position <= 3);
    assert_eq!(d.action.conv_geometry(), Some((3, 1)));
}

#[test]
fn distributions_are_valid_and_log_probs_audit() {
    let c = controller(7);
    let mut r = rng(70);
    for (i, s) in ["fc-4", "rnn-4,conv-3,fc-16", "conv-4,conv-8,rnn-4,rnn-4", "rnn-3,fc-2"].iter().enumerate() {
        for forced in [None, Some(Choice::Wider), Some(Choice::Deeper)] {
            let d = c.decide(&layers(s), forced, &mut r).unwrap();
            let mut expect = 0.0;
            for (probs, step) in d.probs.iter().zip(&d.steps) {
                let total: Real = probs.iter().sum();
                assert!((total - 1.0).abs() <= TIGHT, "case {i}: {total}");
                assert!(probs.iter().all(|&p| p >= 0.0));
                let idx = match *step {
                    Step::Select(ch) => Choice::ALL.iter().position(|&x| x == ch).unwrap(),
                    Step::Wider(l) => l,
                    Step::DeeperKind(k) => k.index(),
                    Step::DeeperPosition(p) => p,
                };
                expect += probs[idx].ln();
            }
            assert!((d.log_prob - expect).abs() < 100.0 * TIGHT);
            assert!((c.log_prob(&d).unwrap() - d.log_prob).abs() < TIGHT);
        }
    }
}

#[test]
fn reward_values() {
    assert_eq!(reward(10.0, 1e6).unwrap(), 0.1);
    assert_eq!(reward(1.0, 1e6).unwrap(), 1.0);
    assert_eq!(reward(0.0, 1e6).unwrap(), 1e6);
    assert_eq!(reward(1e-9, 1e6).unwrap(), 1e6);
    assert!(reward(Real::NAN, 1e6).is_err());
    assert!(reward(Real::INFINITY, 1e6).is_err());
    let mut last = Real::INFINITY;
    for i in 1..100 {
        let r = reward(i as Real * 0.37, 1e6).unwrap();
        assert!(r < last);
        last = r;
    }
}

#[test]
fn baseline_moving_average() {
    let mut b = Baseline::new(0.9);
    assert_eq!(b.advantage(2.0), 0.0);
    b.update(2.0);
    assert_eq!(b.value, Some(2.0));
    b.update(3.0);
    assert!((b.value.unwrap() - 2.1).abs() < TIGHT);
    assert!((b.advantage(3.1) - 1.0).abs() < TIGHT);
}

#[test]
fn zero_advantage_leaves_params() {
    let mut c = controller(8);
    let d = c.decide(&layers("fc-4,fc-4"), None, &mut rng(0)).unwrap();
    c.baseline.value = Some(0.5);
    let before = c.params.clone();
    let out = c.reinforce_update(&[d], 0.5).unwrap();
    assert!(!out.applied);
    assert_eq!(c.params, before);
    assert_eq!(c.baseline.value, Some(0.5));
}

#[test]
#[cfg_attr(feature = "f32", ignore = "needs double precision")]
fn positive_advantage_raises_probability() {
    let mut c = controller(9);
    let state = layers("conv-4,conv-4,rnn-4");
    for seed in 0..5 {
        let d = c.decide(&state, None, &mut rng(seed)).unwrap();
        let before = c.log_prob(&d).unwrap();
        c.baseline.value = Some(0.0);
        let out = c.reinforce_update(std::slice::from_ref(&d), 1.0).unwrap();
        assert!(out.applied);
        assert!(c.log_prob(&d).unwrap() > before);
    }
}

#[test]
fn negative_advantage_lowers_probability() {
    let mut c = controller(10);
    let state = layers("fc-8,rnn-4");
    let d = c.decide(&state, None, &mut rng(3)).unwrap();
    let before = c.log_prob(&d).unwrap();
    c.baseline.value = Some(2.0);
    c.reinforce_update(std::slice::from_ref(&d), 1.0).unwrap();
    assert!(c.log_prob(&d).unwrap() < before);
}

fn finite_difference(c: &Controller, f: impl Fn(&Controller) -> Real) -> Vec<Real> {
    let h = 1e-6;
    let mut out = vec![];
    let n = PolicyParams::NAMES.len();
    for a in 0..n {
        for j in 0..c.params.refs()[a].len() {
            let mut plus = c.clone();
            plus.params.refs_mut()[a].data_mut()[j] += h;
            let mut minus = c.clone();
            minus.params.refs_mut()[a].data_mut()[j] -= h;
            out.push((f(&plus) - f(&minus)) / (2.0 * h));
        }
    }
    out
}

#[test]
#[cfg_attr(feature = "f32", ignore = "needs double precision")]
fn gradient_matches_finite_differences() {
    let c = Controller::new(tiny(), &mut rng(11)).unwrap();
    assert!(c.param_count() <= 100, "{}", c.param_count());
    let mut r = rng(12);
    let decisions = vec![
        c.decide(&layers("fc-4,conv-3,rnn-8"), None, &mut r).unwrap(),
        c.decide(&layers("rnn-4,rnn-4"), Some(Choice::Wider), &mut r).unwrap(),
        c.decide(&layers("conv-4"), Some(Choice::Deeper), &mut r).unwrap(),
    ];
    let adv = 0.7;
    let (_, grads) = c.loss_and_gradients(&decisions, adv).unwrap();
    let analytic: Vec<Real> = grads.iter().flat_map(|g| g.data().to_vec()).collect();
    let numeric = finite_difference(&c, |p| {
        -adv * decisions.iter().map(|d| p.log_prob(d).unwrap()).sum::<Real>()
    });
    assert_eq!(analytic.len(), numeric.len());
    let scale = numeric.iter().fold(0.0 as Real, |m, v| m.max(v.abs()));
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let err = (a - n).abs() / a.abs().max(n.abs()).max(1e-3 * scale);
        assert!(err <= 1e-4, "param {i}: analytic {a} numeric {n}");
    }
}

#[test]
#[cfg_attr(feature = "f32", ignore = "needs double precision")]
fn score_function_matches_expected_reward_gradient() {
    // two eligible layers, wider actor only: an enumerable two-action policy
    let c = Controller::new(tiny(), &mut rng(13)).unwrap();
    let state = layers("rnn-4,rnn-4");
    let rewards = [0.3, 1.7];
    let decisions: Vec<Decision> = (0..2)
        .map(|i| {
            let mut ep = Episode::new(&c.params, &state).unwrap();
            ep.replay(&[Step::Wider(i)]).unwrap();
            ep.finish(MorphAction::wider(i)).unwrap()
        })
        .collect();

    // E[grad] = sum_a p(a) r(a) grad log p(a); loss_and_gradients gives -r grad log p
    let mut expected: Vec<Real> = vec![];
    for (d, r) in decisions.iter().zip(rewards) {
        let p = d.log_prob.exp();
        let (_, g) = c.loss_and_gradients(std::slice::from_ref(d), r).unwrap();
        let flat: Vec<Real> = g.iter().flat_map(|a| a.data().iter().map(|v| -v * p).collect::<Vec<_>>()).collect();
        if expected.is_empty() {
            expected = flat;
        } else {
            expected.iter_mut().zip(flat).for_each(|(e, v)| *e += v);
        }
    }
    let numeric = finite_difference(&c, |p| {
        decisions
            .iter()
            .zip(rewards)
            .map(|(d, r)| p.log_prob(d).unwrap().exp() * r)
            .sum()
    });
    let scale = numeric.iter().fold(0.0 as Real, |m, v| m.max(v.abs()));
    assert!(scale > 0.0);
    for (e, n) in expected.iter().zip(&numeric) {
        assert!((e - n).abs() <= 1e-4 * scale.max(e.abs()), "{e} vs {n}");
    }
}

#[test]
fn replay_rejects_illegal_steps() {
    let c = controller(14);
    let mut d = c.decide(&layers("rnn-4,conv-3"), Some(Choice::Wider), &mut rng(0)).unwrap();
    d.steps = vec![Step::Wider(0)];
    assert!(c.log_prob(&d).is_err());
    d.steps = vec![Step::DeeperPosition(0)];
    assert!(c.log_prob(&d).is_err());
}

#[test]
fn policy_json_round_trip() {
    let mut c = controller(15);
    let d = c.decide(&layers("fc-4"), None, &mut rng(0)).unwrap();
    c.baseline.value = Some(0.1);
    c.reinforce_update(&[d], 0.9).unwrap();
    let back = Controller::from_json(&c.to_json().unwrap()).unwrap();
    assert_eq!(back, c);
    assert!(Controller::from_json("{}").is_err());
}

#[test]
fn decision_serialises() {
    let c = controller(16);
    let d = c.decide(&layers("fc-4,conv-4"), Some(Choice::Deeper), &mut rng(0)).unwrap();
    let s = serde_json::to_string(&d).unwrap();
    assert_eq!(serde_json::from_str::<Decision>(&s).unwrap(), d);
}
