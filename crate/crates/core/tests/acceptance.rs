//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use morphnas_core::arch::{ArchitectureDescriptor, LayerKind, LayerSpec, Network, Shape};
use morphnas_core::controller::{reward, Choice, Controller, PolicyConfig};
use morphnas_core::data::{build_load_features, mae, prepare, rmse, synth_generate, DataKind, PreparedData, WindowSpec};
use morphnas_core::morph::{apply, verify_preservation, widen_mask, InputRange, MorphAction};
use morphnas_core::pool::{performance, NetPool};
use morphnas_core::search::{batch_gradients, episodes_jsonl, run_search, run_search_with, train_epochs, Search, SearchConfig, SearchOutcome, Variant};
use morphnas_core::Error;
use morphnas_core::tensor::{AdamConfig, AdamState, Array, Real, PRESERVATION_TOL};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_teacher(r: &mut ChaCha8Rng) -> Network {
    let input = Shape::new(r.random_range(3..=12), r.random_range(1..=4));
    let layers = (0..r.random_range(1..=4))
        .map(|_| LayerSpec::new(LayerKind::ALL[r.random_range(0..3)], r.random_range(1..=16)).unwrap())
        .collect();
    Network::random(ArchitectureDescriptor::new(input, layers).unwrap(), r).unwrap()
}

fn preservation() -> Outcome {
    let mut r = rng(1);
    let mut worst: Real = 0.0;
    let mut checked = 0;
    for t in 0..100 {
        let teacher = random_teacher(&mut r);
        let n = teacher.descriptor.len();
        let mut actions: Vec<MorphAction> = widen_mask(&teacher.descriptor.layers)
            .iter()
            .enumerate()
            .filter(|(_, ok)| **ok)
            .map(|(i, _)| MorphAction::wider(i))
            .collect();
        for kind in LayerKind::ALL {
            actions.extend((0..=n).map(|position| MorphAction::Deeper { kind, position }));
        }
        for a in actions {
            let student = apply(&teacher, a, &mut r).unwrap().network;
            let range = InputRange { lo: -1.0, hi: 1.0 };
            let dev = verify_preservation(&teacher, &student, 10, range, &mut rng(t)).unwrap();
            worst = worst.max(dev);
            checked += 1;
        }
    }
    outcome(worst <= PRESERVATION_TOL, format!("{checked} morphisms on 100 teachers, max deviation {worst:.3e} (tol {PRESERVATION_TOL:.0e})"))
}

/// Relative error with the denominator floored at 1e-4 so entries that are
/// zero through dead ReLUs compare absolutely.
fn rel_err(a: Real, n: Real) -> Real {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

fn network_fd(tokens: &str, input: Shape, seed: u64) -> (usize, Real) {
    let mut r = rng(seed);
    let net = Network::random(ArchitectureDescriptor::from_tokens(input, tokens).unwrap(), &mut r).unwrap();
    let b = 4;
    let x = Array::from_vec(&[b, input.time, input.channels], (0..b * input.size()).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
    let y = Array::vector((0..b).map(|_| r.random_range(-1.0..1.0)).collect());
    let (_, grads) = batch_gradients(&net, &x, &y).unwrap();
    let loss = |n: &Network| {
        let p = n.predict(&x).unwrap();
        p.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum::<Real>() / b as Real
    };
    let h = 1e-5;
    let mut worst: Real = 0.0;
    let mut arrays_seen = 0;
    for (li, layer) in net.layers.iter().enumerate() {
        for ai in 0..layer.arrays().len() {
            for j in 0..layer.arrays()[ai].len() {
                let bump = |delta: Real| {
                    let mut n = net.clone();
                    n.layers[li].arrays_mut()[ai].data_mut()[j] += delta;
                    loss(&n)
                };
                let num = (bump(h) - bump(-h)) / (2.0 * h);
                worst = worst.max(rel_err(grads[arrays_seen].data()[j], num));
            }
            arrays_seen += 1;
        }
    }
    for j in 0..net.readout.len() {
        let bump = |delta: Real| {
            let mut n = net.clone();
            n.readout.data_mut()[j] += delta;
            loss(&n)
        };
        let num = (bump(h) - bump(-h)) / (2.0 * h);
        worst = worst.max(rel_err(grads[arrays_seen].data()[j], num));
    }
    (net.param_count(), worst)
}

fn controller_fd() -> (usize, Real) {
    let cfg = PolicyConfig {
        embed_dim: 2,
        hidden: 1,
        head_hidden: 1,
        ..PolicyConfig::default()
    };
    let c = Controller::new(cfg, &mut rng(5)).unwrap();
    let mut r = rng(6);
    let states = ["fc-4,conv-3,rnn-8", "rnn-4,rnn-4", "conv-4"];
    let decisions: Vec<_> = states
        .iter()
        .zip([None, Some(Choice::Wider), Some(Choice::Deeper)])
        .map(|(s, f)| c.decide(&morphnas_core::arch::parse_tokens(s).unwrap(), f, &mut r).unwrap())
        .collect();
    let adv = 0.8;
    let (_, grads) = c.loss_and_gradients(&decisions, adv).unwrap();
    let loss = |c: &Controller| -adv * decisions.iter().map(|d| c.log_prob(d).unwrap()).sum::<Real>();
    let h = 1e-5;
    let mut worst: Real = 0.0;
    for (a, g) in grads.iter().enumerate() {
        for j in 0..g.len() {
            let bump = |delta: Real| {
                let mut p = c.clone();
                p.params.refs_mut()[a].data_mut()[j] += delta;
                loss(&p)
            };
            let num = (bump(h) - bump(-h)) / (2.0 * h);
            worst = worst.max(rel_err(g.data()[j], num));
        }
    }
    (c.param_count(), worst)
}

fn gradients() -> Outcome {
    let nets = [
        ("fc-6", Shape::new(8, 2), 1),
        ("conv-5", Shape::new(8, 2), 2),
        ("rnn-6", Shape::new(8, 2), 3),
        ("conv-3,rnn-4,fc-5", Shape::new(6, 2), 4),
    ];
    let mut worst: Real = 0.0;
    let mut sizes = vec![];
    for (tokens, input, seed) in nets {
        let (n, e) = network_fd(tokens, input, seed);
        assert!(n <= 200, "{tokens} has {n} parameters");
        sizes.push(format!("{tokens}:{n}"));
        worst = worst.max(e);
    }
    let (pn, pe) = controller_fd();
    let pass = worst <= 1e-4 && pe <= 1e-4 && pn <= 100;
    outcome(
        pass,
        format!("networks [{}] max rel err {worst:.2e}; policy ({pn} params) max rel err {pe:.2e}", sizes.join(" ")),
    )
}

fn adam() -> Outcome {
    let cfg = AdamConfig::default();
    let mut r = rng(3);
    let mut worst: Real = 0.0;
    for _ in 0..200 {
        let n = 16;
        let g: Vec<Real> = (0..n).map(|_| r.random_range(-5.0..5.0) * 10f64.powi(r.random_range(-3..3)) as Real).collect();
        let mut p: Vec<Real> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let before = p.clone();
        let mut st = AdamState::new(n, cfg);
        st.step(&mut p, &g).unwrap();
        for i in 0..n {
            let want = -cfg.lr * g[i] / (g[i].abs() + cfg.eps);
            let got = p[i] - before[i];
            // the parameter subtraction itself rounds at the scale of p
            let ulp = Real::EPSILON * before[i].abs().max(want.abs());
            worst = worst.max((got - want).abs() / ulp);
        }
    }
    outcome(worst <= 4.0, format!("3200 first steps, max deviation {worst:.2} ulp from -lr*g/(|g|+eps)"))
}

fn pool_oracle() -> Outcome {
    let mut r = rng(4);
    let net = Network::random(ArchitectureDescriptor::from_tokens(Shape::new(4, 1), "fc-2").unwrap(), &mut r).unwrap();
    let cap = 5;
    let mut pool = NetPool::new(cap).unwrap();
    let mut history: Vec<(Real, u64)> = vec![];
    let mut mismatches = 0;
    let mut max_len = 0;
    for op in 0..1000 {
        match r.random_range(0..3) {
            0 | 1 => {
                let s = r.random_range(0..30) as Real * 0.5;
                pool.insert(net.clone(), s, Some(op)).unwrap();
                history.push((s, history.len() as u64));
            }
            _ => {
                if !pool.is_empty() {
                    let before = pool.clone();
                    pool.sample(&mut r).unwrap();
                    if pool != before {
                        mismatches += 1;
                    }
                }
            }
        }
        let mut oracle = history.clone();
        oracle.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        oracle.truncate(cap);
        let got: Vec<u64> = pool.entries().iter().map(|e| e.seq).collect();
        if got != oracle.iter().map(|o| o.1).collect::<Vec<_>>() {
            mismatches += 1;
        }
        max_len = max_len.max(pool.len());
    }
    outcome(mismatches == 0 && max_len <= cap, format!("1000 operations, {mismatches} mismatches, max size {max_len}/{cap}"))
}

fn selector_learnability() -> Outcome {
    let state = morphnas_core::arch::parse_tokens("fc-4,conv-4").unwrap();
    let mut finals = vec![];
    let mut passes = 0;
    for seed in 0..5 {
        let mut c = Controller::new(PolicyConfig::default(), &mut rng(100 + seed)).unwrap();
        let mut r = rng(200 + seed);
        let mut reached = None;
        for update in 1..=500 {
            let d = c.decide(&state, None, &mut r).unwrap();
            let picked_wider = matches!(d.steps.first(), Some(morphnas_core::controller::Step::Select(Choice::Wider)));
            let rew = if picked_wider { 1.0 } else { 0.1 };
            c.reinforce_update(&[d], rew).unwrap();
            let p = c.selector_decide(&state, &mut r).unwrap().probs[0][0];
            if p > 0.9 && reached.is_none() {
                reached = Some(update);
            }
        }
        let p = c.selector_decide(&state, &mut r).unwrap().probs[0][0];
        if reached.is_some() {
            passes += 1;
        }
        finals.push(format!("{}:{p:.3}", reached.map_or("never".into(), |u| u.to_string())));
    }
    outcome(passes == 5, format!("{passes}/5 seeds exceed P(wider) 0.9 (first update:final P) [{}]", finals.join(" ")))
}

/// Maps `f` over `0..n` on up to one thread per available core, keeping order.
fn par_map<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let workers = std::thread::available_parallelism().map_or(1, |c| c.get()).min(n).max(1);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<(usize, T)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                s.spawn(|| {
                    let mut done = vec![];
                    loop {
                        let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                        if i >= n {
                            break done;
                        }
                        done.push((i, f(i)));
                    }
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    slots.sort_by_key(|(i, _)| *i);
    slots.into_iter().map(|(_, v)| v).collect()
}

fn desk_data() -> PreparedData {
    let table = build_load_features(&synth_generate(DataKind::Load, 2160, 2024).unwrap()).unwrap();
    prepare(&table, &WindowSpec::for_kind(DataKind::Load), DataKind::Load).unwrap()
}

fn desk_config(seed: u64, variant: Variant) -> SearchConfig {
    SearchConfig {
        episodes: 30,
        epochs: 10,
        pool_capacity: 3,
        variant,
        seed,
        ..SearchConfig::default()
    }
}

/// Best seed of the search's own initial pool, trained alone for the epochs
/// the whole search spends after pool initialisation plus the other seeds'
/// initial epochs.
fn seed_baseline(cfg: &SearchConfig, data: &PreparedData) -> Real {
    let search = Search::new(cfg.clone(), data).unwrap();
    let mut net = search.pool().best().unwrap().network.clone();
    let seeds = cfg.seed_specs().unwrap().len();
    let extra = cfg.episodes * cfg.epochs + (seeds - 1) * cfg.epochs;
    let adam = AdamConfig::with_lr(cfg.learning_rate);
    train_epochs(&mut net, &data.train, extra, cfg.batch_size, adam, &mut rng(cfg.seed)).unwrap();
    performance(&net, &data.validation, &data.stats).unwrap().rmse
}

fn end_to_end(full: &[SearchOutcome], baselines: &[Real]) -> Outcome {
    let mut wins = 0;
    let mut rows = vec![];
    for (out, &base) in full.iter().zip(baselines) {
        let ours = out.best_validation.rmse;
        if ours <= base {
            wins += 1;
        }
        rows.push(format!("{ours:.2}/{base:.2}"));
    }
    outcome(wins >= 4, format!("{wins}/5 seeds search <= seed baseline (val rmse search/baseline: {})", rows.join(" ")))
}

fn median(mut v: Vec<usize>) -> Real {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as Real
    } else {
        (v[n / 2 - 1] + v[n / 2]) as Real / 2.0
    }
}

fn ablation(full: &[SearchOutcome], no_selector: &[SearchOutcome]) -> Outcome {
    let f: Vec<usize> = full.iter().map(|o| o.best.param_count()).collect();
    let s: Vec<usize> = no_selector.iter().map(|o| o.best.param_count()).collect();
    let (mf, ms) = (median(f.clone()), median(s.clone()));
    outcome(mf <= ms, format!("median params full {mf} (of {f:?}) vs no-selector {ms} (of {s:?})"))
}

fn metrics_and_reward() -> Outcome {
    let ok = rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() == (12.5 as Real).sqrt()
        && mae(&[0.0, 0.0], &[3.0, 4.0]).unwrap() == 3.5
        && rmse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() == 0.0
        && rmse(&[1.0, -1.0, 2.0, 0.0], &[2.0, 1.0, 2.0, -3.0]).unwrap() == (14.0 as Real / 4.0).sqrt()
        && mae(&[1.0, -1.0, 2.0, 0.0], &[2.0, 1.0, 2.0, -3.0]).unwrap() == 1.5
        && reward(10.0, 1e6).unwrap() == 0.1;
    let mut decreasing = true;
    let mut prev = Real::INFINITY;
    for i in 1..=10_000 {
        let r = reward(i as Real * 1e-3, 1e6).unwrap();
        decreasing &= r < prev;
        prev = r;
    }
    outcome(ok && decreasing, format!("hand values exact: {ok}; reward strictly decreasing on 10000 points: {decreasing}"))
}

fn trace_replay() -> Outcome {
    let input = Shape::new(168, 3);
    let start = Network::random(ArchitectureDescriptor::from_tokens(input, "fc-4,fc-4").unwrap(), &mut rng(9)).unwrap();
    let steps = [
        MorphAction::wider(0),
        MorphAction::Deeper { kind: LayerKind::Rnn, position: 2 },
        MorphAction::Wider { layer: 0, width: Some(12) },
        MorphAction::Deeper { kind: LayerKind::Rnn, position: 3 },
    ];
    let expected = ["fc-4,fc-4", "fc-8,fc-4", "fc-8,fc-4,rnn-3", "fc-12,fc-4,rnn-3", "fc-12,fc-4,rnn-3,rnn-3"];
    let mut got = vec![start.tokens()];
    let mut net = start.clone();
    let mut r = rng(10);
    for s in steps {
        net = apply(&net, s, &mut r).unwrap().network;
        got.push(net.tokens());
    }
    let dev = verify_preservation(&start, &net, 10, InputRange::default(), &mut r).unwrap();
    let pass = got == expected && dev <= 10.0 * PRESERVATION_TOL;
    outcome(pass, format!("{} (deviation {dev:.1e})", got.join(" -> ")))
}

fn determinism() -> Outcome {
    let table = build_load_features(&synth_generate(DataKind::Load, 800, 7).unwrap()).unwrap();
    let spec = WindowSpec {
        window: 48,
        horizon: 24,
        known_ahead: vec![],
    };
    let data = prepare(&table, &spec, DataKind::Load).unwrap();
    let cfg = SearchConfig {
        episodes: 8,
        epochs: 3,
        pool_capacity: 3,
        seed: 77,
        ..SearchConfig::default()
    };
    let a = episodes_jsonl(&run_search(cfg.clone(), &data).unwrap().history).unwrap();
    let b = episodes_jsonl(&run_search(cfg, &data).unwrap().history).unwrap();
    outcome(a == b && !a.is_empty(), format!("two runs of 8 episodes, {} bytes each, identical: {}", a.len(), a == b))
}

fn timed(id: usize, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let o = f();
    let elapsed = t.elapsed();
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let pass = o.pass && in_time;
    let limit_note = limit.map_or(String::new(), |l| format!(" / limit {}s", l.as_secs()));
    println!(
        "{} [{id:>2}] {name}: {} ({:.1}s{limit_note})",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        elapsed.as_secs_f64()
    );
    pass
}

#[cfg(all(target_os = "linux", target_env = "gnu"))]
fn keep_heap() {
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
    }
}

#[cfg(not(all(target_os = "linux", target_env = "gnu")))]
fn keep_heap() {}

fn main() {
    keep_heap();
    let mut results = vec![];
    results.push(timed(1, "function preservation", Some(Duration::from_secs(60)), preservation));
    results.push(timed(2, "gradient correctness", Some(Duration::from_secs(60)), gradients));
    results.push(timed(3, "adam first step", None, adam));
    results.push(timed(4, "net pool oracle", None, pool_oracle));
    results.push(timed(5, "selector learnability", Some(Duration::from_secs(30)), selector_learnability));

    let data = desk_data();
    let mut full = vec![];
    let t6 = Instant::now();
    results.push(timed(6, "desk-scale end-to-end", Some(Duration::from_secs(600)), || {
        let runs = par_map(5, |s| {
            let cfg = desk_config(s as u64, Variant::Full);
            (run_search(cfg.clone(), &data).unwrap(), seed_baseline(&cfg, &data))
        });
        let baselines: Vec<Real> = runs.iter().map(|r| r.1).collect();
        full = runs.into_iter().map(|r| r.0).collect();
        end_to_end(&full, &baselines)
    }));
    let full_time = t6.elapsed();
    let limit7 = Duration::from_secs(1800).saturating_sub(full_time);
    results.push(timed(7, "ablation structure", Some(limit7), || {
        // Searches still running at the limit are stopped.
        let deadline = Instant::now() + limit7;
        let ns = par_map(5, |s| {
            let out = run_search_with(desk_config(s as u64, Variant::NoSelector), &data, |_, _| {
                if Instant::now() > deadline {
                    return Err(Error::InvalidArgument("time limit reached".into()));
                }
                Ok(())
            });
            match out {
                Err(_) if Instant::now() > deadline => None,
                out => Some(out.unwrap()),
            }
        });
        if ns.iter().any(Option::is_none) {
            let done: Vec<usize> = ns.iter().flatten().map(|o| o.best.param_count()).collect();
            let cores = std::thread::available_parallelism().map_or(1, |c| c.get());
            return outcome(false, format!("stopped at the time limit with {}/5 no-selector searches finished on {cores} core(s); finished best params {done:?}", done.len()));
        }
        let ns: Vec<SearchOutcome> = ns.into_iter().flatten().collect();
        ablation(&full, &ns)
    }));
    results.push(timed(8, "metrics and reward", None, metrics_and_reward));
    results.push(timed(9, "trace replay", None, trace_replay));
    results.push(timed(10, "determinism", None, determinism));

    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
