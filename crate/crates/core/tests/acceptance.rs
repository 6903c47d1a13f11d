//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if
//! any criterion fails or overruns its time budget.
//!
//! Run with `cargo test -p symop --test acceptance -- --nocapture`.

mod common;

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::{
    fd_gradient, grad_points, gradient_error, kink_margin, normal_vec, pure_model, random_edges, replay,
    shortest_path_len, transition_oracle, with_params,
};
use ndarray::{array, Array1, Array2};
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symop::bundle::{load_bundle, save_bundle, ModelBundle};
use symop::corpus::{generate_demos, table1_corpus, CorpusGenConfig, Observation, Prototypes, Situation, Symbol};
use symop::experiment::{run_experiment, ExperimentConfig, MetricsReport, Regime};
use symop::gmm::GroundingError;
use symop::latent::{
    pair_loss_grad, pair_loss_with_noise, relation_loss, relation_loss_grad, vae_loss_grad, vae_loss_with_noise,
    LossConfig,
};
use symop::pipeline::{learn_operators, LearnConfig, LearnReport, Operators};
use symop::planner::{plan, PlanError, PlannerConfig};
use symop::relation::{classify_relation, RelationIndex, RelationLabel};
use symop::transition::{action_matrix, propagate, purity_matrices, TransitionError};
use symop::{kl_div, ActionPrimitive, StateDistribution};

type Verdict = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Verdict);

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

const CORPUS_SEED: u64 = 1;
const LEARN_SEED: u64 = 1;

struct Trained {
    gen: CorpusGenConfig,
    ops: Operators,
    report: LearnReport,
}

fn learn(forced_k: Option<usize>) -> Trained {
    let gen = CorpusGenConfig::default();
    let corpus = generate_demos(&gen, CORPUS_SEED).unwrap();
    let cfg = LearnConfig { forced_k, ..LearnConfig::default() }.with_seed(LEARN_SEED);
    let (ops, report) = learn_operators(&corpus, &cfg).unwrap();
    Trained { gen, ops, report }
}

fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| learn(None))
}

fn experiment(t: &Trained, regime: Regime, sigma: f64, replan: bool) -> MetricsReport {
    let mut cfg = ExperimentConfig::new(regime, t.gen.prototypes.clone());
    cfg.sigma = sigma;
    cfg.sigma_obs = t.gen.sigma_obs;
    cfg.seed = 2024;
    cfg.exec.replan = replan;
    run_experiment(&t.ops, &cfg).unwrap().0
}

fn c1_transition_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (m, n) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let counts: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| rng.random_range(0..8) as f64).collect()).collect();
        let t: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| f64::from(rng.random_range(0..=1u8))).collect()).collect();
        let oracle = transition_oracle(&counts, &t);
        let to = |rows: &[Vec<f64>]| Array2::from_shape_fn((rows.len(), rows[0].len()), |(i, j)| rows[i][j]);
        let pur = purity_matrices(&to(&counts));
        let p = action_matrix(&pur.q, &to(&t), &pur.k).unwrap();
        for i in 0..m {
            for j in 0..m {
                worst = worst.max((p[[i, j]] - oracle[i][j]).abs());
            }
        }
    }
    check(worst < 1e-12, format!("max |P - oracle| = {worst:.1e} over 100 random instances (M, N <= 5)"))
}

fn c2_hand_example() -> Verdict {
    let r = |n: i64, d: i64| Ratio::new(n, d);
    let counts = array![[r(3, 1), r(1, 1)], [r(0, 1), r(4, 1)]];
    let t = array![[r(0, 1), r(1, 1)], [r(0, 1), r(0, 1)]];
    let pur = purity_matrices(&counts);
    let p = action_matrix(&pur.q, &t, &pur.k).map_err(|e| e.to_string())?;
    let s: Array1<Ratio<i64>> = array![r(1, 1), r(0, 1)];
    let next = propagate(s.view(), &p).map_err(|e| e.to_string())?;
    let ok = pur.q == array![[r(3, 4), r(1, 4)], [r(0, 1), r(1, 1)]]
        && pur.k == array![[r(1, 1), r(1, 5)], [r(0, 1), r(4, 5)]]
        && p == array![[r(3, 20), r(3, 5)], [r(0, 1), r(0, 1)]]
        && next == Some(array![r(1, 5), r(4, 5)]);
    let show = |v: &mut dyn Iterator<Item = &Ratio<i64>>| v.map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
    let predicted = next.as_ref().map_or("none".to_string(), |n| show(&mut n.iter()));
    check(ok, format!("P = [{}], predict([1, 0]) = [{predicted}] in exact rationals", show(&mut p.iter())))
}

fn c3_gradients() -> Verdict {
    const H: f64 = 1e-5;
    let cfg = LossConfig { beta: 0.5, alpha: 2.0, d_m: 1.5 };
    let points = grad_points(20, 11, &cfg);
    let (mut pair, mut vae, mut rel) = (0.0f64, 0.0f64, 0.0f64);
    for p in &points {
        let eps = (p.e1.as_slice(), p.e2.as_slice());
        let (_, g) = pair_loss_grad(&p.model, &p.x1, &p.x2, p.label, eps, &cfg).unwrap();
        let fd = fd_gradient(p.model.params(), H, |w| {
            pair_loss_with_noise(&with_params(&p.model, w), &p.x1, &p.x2, p.label, eps, &cfg).unwrap()
        });
        pair = pair.max(gradient_error(&g, &fd));
        let (_, g) = vae_loss_grad(&p.model, &p.x1, &p.e1, &cfg).unwrap();
        let fd = fd_gradient(p.model.params(), H, |w| {
            vae_loss_with_noise(&with_params(&p.model, w), &p.x1, &p.e1, &cfg).unwrap()
        });
        vae = vae.max(gradient_error(&g, &fd));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut done = 0;
    while done < 20 {
        let label = RelationLabel::ALL[done % 3];
        let (z1, z2) = (normal_vec(&mut rng, 4, 1.0), normal_vec(&mut rng, 4, 1.0));
        if kink_margin(&z1, &z2, label, cfg.d_m) < 1e-2 {
            continue;
        }
        let (_, g) = relation_loss_grad(&z1, &z2, label, cfg.d_m);
        let fd = fd_gradient(&z1, H, |z| relation_loss(z, &z2, label, cfg.d_m));
        rel = rel.max(gradient_error(&g, &fd));
        done += 1;
    }
    let worst = pair.max(vae).max(rel);
    check(
        worst < 1e-4,
        format!("max relative error: pair {pair:.1e}, vae {vae:.1e}, relation {rel:.1e} (20 points each)"),
    )
}

fn c4_table1_relations() -> Verdict {
    let corpus = table1_corpus(&Prototypes::default_for_dim(16));
    let idx = RelationIndex::build(&corpus);
    let cases = [
        ("img_1", "img_4", RelationLabel::Inclusive),
        ("img_2", "img_3", RelationLabel::Exclusive),
        ("img_1", "img_2", RelationLabel::Exclusive),
        ("img_5", "img_9", RelationLabel::Independent),
    ];
    let mut lines = Vec::new();
    let mut ok = true;
    for (a, b, want) in cases {
        let got = classify_relation(&idx, a, b).map_err(|e| e.to_string())?;
        ok &= got == want;
        lines.push(format!("({a},{b}) {got}"));
    }
    check(ok, lines.join(", "))
}

fn c5_k_selection() -> Verdict {
    let sigma = Prototypes::DEFAULT_SPACING / 6.0;
    let mut hist: BTreeMap<String, usize> = BTreeMap::new();
    for seed in 0..50u64 {
        let gen = CorpusGenConfig::table1_mix(600, 16, sigma);
        let corpus = generate_demos(&gen, 100 + seed).unwrap();
        let k = match learn_operators(&corpus, &LearnConfig::default().with_seed(seed)) {
            Ok((_, report)) => report.k.to_string(),
            Err(e) => format!("error: {e}"),
        };
        *hist.entry(k).or_default() += 1;
    }
    let fours = hist.get("4").copied().unwrap_or(0);
    check(fours >= 48, format!("k = 4 in {fours}/50 corpora at separation 6 sigma; outcomes {hist:?}"))
}

fn c6_planner_optimality() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut solvable, mut unsolvable, mut wrong) = (0, 0, Vec::new());
    for i in 0..100 {
        let m = rng.random_range(2..=6);
        let density = rng.random_range(0.15..0.8);
        let edges = random_edges(&mut rng, m, density);
        let (start, goal) = (rng.random_range(0..m), rng.random_range(0..m));
        let stp = pure_model(m, &edges);
        let cfg = PlannerConfig::default();
        let hot = |s| StateDistribution::one_hot(m, s).unwrap();
        let result = plan(&stp, &hot(start), &hot(goal), &cfg);
        match (shortest_path_len(m, &edges, start, goal, cfg.max_depth), result) {
            (Some(len), Ok(t)) if t.actions.len() == len && replay(&edges, start, &t.actions) == Some(goal) => {
                solvable += 1
            }
            (None, Err(PlanError::NoPlan { .. })) => unsolvable += 1,
            (want, got) => wrong.push(format!("instance {i}: oracle {want:?}, planner {:?}", got.map(|t| t.actions))),
        }
    }
    check(
        wrong.is_empty(),
        format!(
            "{solvable} solvable instances optimal, {unsolvable} unreachable reported as no-plan; mismatches {wrong:?}"
        ),
    )
}

fn c7_static() -> Verdict {
    let t = trained();
    // Run from a saved and reloaded bundle.
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.json");
    save_bundle(&ModelBundle::from_operators(&t.ops, Some(t.gen.clone()), LossConfig::default()), &path)
        .map_err(|e| e.to_string())?;
    let ops = load_bundle(&path).and_then(|b| b.to_operators()).map_err(|e| e.to_string())?;
    let loaded = Trained { gen: t.gen.clone(), ops, report: t.report.clone() };
    let base = experiment(&loaded, Regime::Static, 0.0, true).overall;
    let forced = learn(Some(10));
    let k10 = experiment(&forced, Regime::Static, 0.0, true).overall;
    let identity = |m: &symop::experiment::ClassMetrics| {
        (m.first_sr() + m.rectified_sr() - m.overall_sr()).abs() < 1e-12 && m.first + m.rectified <= m.num
    };
    let drop = base.first_sr() - k10.first_sr();
    let overall_gap = (base.overall_sr() - k10.overall_sr()).abs();
    let ok = base.num == 1000
        && base.overall_sr() >= 0.95
        && identity(&base)
        && identity(&k10)
        && drop >= 0.10
        && overall_gap <= 0.05;
    check(
        ok,
        format!(
            "k={}: first {:.3} + rectified {:.3} = overall {:.3} (n={}); k=10: first {:.3}, overall {:.3}; first-SR drop {:.1} pts, overall gap {:.1} pts",
            t.report.k,
            base.first_sr(),
            base.rectified_sr(),
            base.overall_sr(),
            base.num,
            k10.first_sr(),
            k10.overall_sr(),
            100.0 * drop,
            100.0 * overall_gap
        ),
    )
}

fn c8_dynamic() -> Verdict {
    let t = trained();
    let moderate = 1.0;
    let sweeps = [(Regime::PosNoise, vec![0.25, 0.5, 1.0, 1.5, 2.0]), (Regime::Obstacle, vec![0.5, 1.0, 2.0])];
    let mut ok = true;
    let mut parts = Vec::new();
    for (regime, sigmas) in sweeps {
        let mut curve = Vec::new();
        for &sigma in &sigmas {
            let with = experiment(t, regime, sigma, true).overall;
            let without = experiment(t, regime, sigma, false).overall;
            ok &= with.rsr() <= with.ssr() && without.rsr() <= without.ssr();
            if sigma == moderate {
                ok &= with.ssr() >= 0.90 && with.ssr() > without.ssr();
            }
            curve.push(format!(
                "s={sigma}: ssr {:.3}/rsr {:.3} vs no-replan {:.3}",
                with.ssr(),
                with.rsr(),
                without.ssr()
            ));
        }
        parts.push(format!("{regime} [{}]", curve.join("; ")));
    }
    check(ok, parts.join(" | "))
}

fn c9_invariants() -> Verdict {
    let t = trained();
    let protos = &t.gen.prototypes;
    let m = t.ops.states.m();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let valid = |s: &StateDistribution| {
        s.len() == m
            && s.probs().iter().all(|p| (0.0..=1.0).contains(p))
            && (s.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9
    };
    let (mut grounded, mut underflow, mut predicted, mut infeasible) = (0, 0, 0, 0);
    let mut bad = Vec::new();
    for i in 0..1000 {
        let obs = match i % 10 {
            0 => Observation::symbolic("o", Symbol::ALL[rng.random_range(0..3)]),
            1 => Observation::raw("o", normal_vec(&mut rng, 16, 20.0)),
            _ => {
                let s = Situation::ALL[rng.random_range(0..4)];
                let scale = rng.random_range(0.0..2.0);
                Observation::raw("o", protos.sample(s, scale, &mut rng))
            }
        };
        match t.ops.ground(&obs) {
            Ok(s) if valid(&s) => grounded += 1,
            Ok(s) => bad.push(format!("ground -> {s}")),
            Err(GroundingError::Underflow(_)) => underflow += 1,
            Err(e) => bad.push(e.to_string()),
        }
        let weights: Vec<f64> = (0..m).map(|_| if rng.random_bool(0.5) { rng.random() } else { 0.0 }).collect();
        let Ok(belief) = StateDistribution::normalized(weights) else { continue };
        for a in ActionPrimitive::ALL {
            match t.ops.transitions.predict(&belief, Some(a)) {
                Ok(s) if valid(&s) => predicted += 1,
                Ok(s) => bad.push(format!("predict -> {s}")),
                Err(TransitionError::Infeasible { .. }) => infeasible += 1,
                Err(e) => bad.push(e.to_string()),
            }
        }
    }
    let mut kl_bad = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..8);
        let draw = |rng: &mut ChaCha8Rng| {
            StateDistribution::normalized((0..n).map(|_| rng.random::<f64>() + 1e-9).collect()).unwrap()
        };
        let (p, q) = (draw(&mut rng), draw(&mut rng));
        let kl = kl_div(&p, &q);
        if kl.is_nan() || kl < 0.0 || kl_div(&p, &p) != 0.0 || (p != q && kl == 0.0) {
            kl_bad += 1;
        }
    }
    check(
        bad.is_empty() && kl_bad == 0,
        format!(
            "ground: {grounded} valid, {underflow} far-out inputs reported as underflow; predict: {predicted} valid, {infeasible} infeasible; kl violations {kl_bad}/1000; invalid outputs {bad:?}"
        ),
    )
}

fn c10_determinism() -> Verdict {
    let gen = CorpusGenConfig::table1_mix(300, 16, 0.25);
    let a = generate_demos(&gen, 5).unwrap();
    let b = generate_demos(&gen, 5).unwrap();
    let cfg = LearnConfig::default().with_seed(5);
    let (ops_a, rep_a) = learn_operators(&a, &cfg).map_err(|e| e.to_string())?;
    let (ops_b, rep_b) = learn_operators(&b, &cfg).map_err(|e| e.to_string())?;
    let bits = |o: &Operators| o.encoder.params().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let models = ops_a == ops_b && rep_a == rep_b && bits(&ops_a) == bits(&ops_b);
    let s0 = ops_a.ground(&Observation::symbolic("o", Symbol::S0)).unwrap();
    let goal = ops_a.goal("s2").unwrap();
    let plans = plan(&ops_a.transitions, &s0, &goal, &PlannerConfig::default())
        == plan(&ops_b.transitions, &s0, &goal, &PlannerConfig::default());
    let mut exp = ExperimentConfig::new(Regime::Obstacle, gen.prototypes.clone());
    exp.episodes = 200;
    exp.seed = 77;
    let runs = run_experiment(&ops_a, &exp).map_err(|e| e.to_string())?
        == run_experiment(&ops_b, &exp).map_err(|e| e.to_string())?;
    let mut csv_a = Vec::new();
    let mut csv_b = Vec::new();
    MetricsReport::write_csv(&[run_experiment(&ops_a, &exp).unwrap().0], &mut csv_a).unwrap();
    MetricsReport::write_csv(&[run_experiment(&ops_b, &exp).unwrap().0], &mut csv_b).unwrap();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("b.json");
    let bundle = ModelBundle::from_operators(&ops_a, Some(gen), LossConfig::default());
    save_bundle(&bundle, &path).map_err(|e| e.to_string())?;
    let loaded = load_bundle(&path).map_err(|e| e.to_string())?;
    let round_trip = loaded == bundle && loaded.to_operators().map_err(|e| e.to_string())? == ops_a;
    let ok = a == b && models && plans && runs && csv_a == csv_b && round_trip;
    check(
        ok,
        format!(
            "corpora {}, models {}, plans {plans}, episodes {runs}, reports {}, bundle round-trip {round_trip}",
            a == b,
            models,
            csv_a == csv_b
        ),
    )
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 10] = [
        ("transition composition vs triple-loop oracle", Duration::from_secs(1), c1_transition_oracle),
        ("hand example in exact arithmetic", Duration::from_secs(1), c2_hand_example),
        ("analytic gradients vs central differences", Duration::from_secs(10), c3_gradients),
        ("relationship rules on the six-demonstration corpus", Duration::from_secs(1), c4_table1_relations),
        ("k-selection on planted corpora", Duration::from_secs(60), c5_k_selection),
        ("planner optimality vs exhaustive BFS", Duration::from_secs(10), c6_planner_optimality),
        ("static end-to-end", Duration::from_secs(300), c7_static),
        ("dynamic end-to-end with replanning ablation", Duration::from_secs(300), c8_dynamic),
        ("distribution and KL invariants", Duration::from_secs(10), c9_invariants),
        ("determinism and persistence", Duration::from_secs(60), c10_determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, budget, run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let verdict = run();
        let elapsed = start.elapsed();
        let (pass, detail) = match verdict {
            Ok(d) if elapsed <= budget => (true, d),
            Ok(d) => (false, format!("{d}; over time budget {budget:?}")),
            Err(d) => (false, d),
        };
        println!("criterion {:>2} {} {name}: {detail} ({elapsed:.2?})", i + 1, if pass { "PASS" } else { "FAIL" });
        if !pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
