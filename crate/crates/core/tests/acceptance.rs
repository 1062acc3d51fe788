//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if a gating criterion fails. Criterion 10 runs only when
//! `MCCL_OFFICE_DATA` names a five-core Amazon office ratings file.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use mccl::dataset::{dataset_stats, five_core_filter, load_ratings, split, RatingDataset, RatingScale, SplitDataset};
use mccl::denoise;
use mccl::fusion::{self, ContrastiveDenominator, LossWeights, DENOMINATOR_EPS};
use mccl::graph::{batch, build_graph, extract_subgraph, NodeLabel, SubgraphBatch};
use mccl::layers::{label_features, rgcn_layer, MessageIndex, RgcnWeights};
use mccl::metrics::{self, EvalOptions, ScoredItem};
use mccl::model::{AblationMode, Mccl, ModelShape};
use mccl::numeric::{Tape, Tensor};
use mccl::synthetic::{planted, PlantedConfig};
use mccl::training::*;
use mccl::vgae::{self, Noise};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const OFFICE_ENV: &str = "MCCL_OFFICE_DATA";

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    }};
}

fn tensor(m: &Mat) -> Tensor {
    Tensor::from_rows(m).unwrap()
}

fn rows(t: &Tensor) -> Mat {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn synthetic_split(seed: u64) -> SplitDataset {
    let cfg = PlantedConfig { seed, ..Default::default() };
    let (data, _) = planted(&cfg, RatingScale::default()).unwrap();
    split(&five_core_filter(&data).unwrap(), seed).unwrap()
}

fn random_batch(rng: &mut ChaCha8Rng, users: usize, items: usize, k: usize) -> SubgraphBatch {
    let data = random_dataset(rng, users, items, 0.5);
    let g = build_graph(&data);
    let subgraphs: Vec<_> = (0..k)
        .map(|_| {
            let x = data.interactions()[rng.random_range(0..data.len())];
            extract_subgraph(&g, x.user, x.item).unwrap()
        })
        .collect();
    batch(&subgraphs).unwrap()
}

fn small_model(rng: &mut ChaCha8Rng, d: usize) -> Mccl {
    let shape = ModelShape {
        embedding_dim: d,
        denoise_layers: 4,
        vgae_layers: 3,
        scale: RatingScale::default(),
        contrastive_denominator: ContrastiveDenominator::All,
    };
    let mut model = Mccl::init(shape, rng.random());
    perturb(&mut model.params, rng, 0.3);
    model
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let b = random_batch(&mut rng, 4, 4, 2);
    check!(b.unbatch(0).n_nodes() <= 8 && b.unbatch(1).n_nodes() <= 8, "subgraphs exceed 8 nodes");
    let model = small_model(&mut rng, 8);
    let d = model.shape.embedding_dim;
    let noise = Tensor::new(vec![b.n_nodes(), d], (0..b.n_nodes() * d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .unwrap();
    let weights = LossWeights { alpha: 0.5, beta: 0.5, lambda: 0.5, tau: 0.5 };
    let report = model_grad_check(&model, &b, AblationMode::Full, &weights, &noise, 1e-4);
    let elapsed = start.elapsed();
    check!(report.passed, "max relative error {:.3e} at {:?}", report.max_relative_error, report.worst);
    check!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    check!(report.checked == model.params.num_elements(), "only {} coordinates checked", report.checked);
    Ok(format!(
        "{} coordinates ({} at kinks skipped), max rel err {:.2e}, {:.1}s",
        report.checked,
        report.excluded.len(),
        report.max_relative_error,
        elapsed.as_secs_f64()
    ))
}

fn closed_form_oracles() -> Outcome {
    const TOL: f64 = 1e-10;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut note = |name: &str, got: f64, want: f64| -> Result<(), String> {
        let err = (got - want).abs();
        worst = worst.max(err);
        check!(err < TOL, "{name}: {got} vs {want}");
        Ok(())
    };
    for _ in 0..100 {
        let (v, d) = (rng.random_range(1..8), rng.random_range(1..5));
        let (mu, ls) = (random_mat(&mut rng, v, d, 2.0), random_mat(&mut rng, v, d, 1.5));
        let mut tape = Tape::new();
        let (m, l) = (tape.constant(tensor(&mu)), tape.constant(tensor(&ls)));
        let k = vgae::kl_divergence(&mut tape, m, l).unwrap();
        note("kl", tape.value(k).item(), kl(&mu, &ls))?;
    }
    for _ in 0..100 {
        let (b, d, tau) = (rng.random_range(2..8), rng.random_range(1..5), rng.random_range(0.1..2.0));
        let (z1, z2) = (random_mat(&mut rng, b, d, 1.0), random_mat(&mut rng, b, d, 1.0));
        for (den, neg) in [(ContrastiveDenominator::All, false), (ContrastiveDenominator::NegativesOnly, true)] {
            let mut tape = Tape::new();
            let (a, c) = (tape.constant(tensor(&z1)), tape.constant(tensor(&z2)));
            let loss = fusion::contrastive_loss(&mut tape, a, c, tau, den).unwrap();
            note("contrastive", tape.value(loss).item(), contrastive(&z1, &z2, tau, neg, DENOMINATOR_EPS))?;
        }
    }
    for trial in 0..100 {
        let n = rng.random_range(1..12);
        let s: Vec<f64> = (0..n).map(|_| if trial % 10 == 0 { 1.5 } else { rng.random_range(-3.0..3.0) }).collect();
        let mut tape = Tape::new();
        let sv = tape.constant(Tensor::vector(s.clone()));
        let a = denoise::normalize_attention(&mut tape, sv).unwrap();
        for (got, want) in tape.value(a).data().iter().zip(normalize(&s)) {
            note("normalize_attention", *got, want)?;
        }
    }
    for _ in 0..100 {
        let b = random_batch(&mut rng, 5, 5, 2);
        let (d_in, d_out) = (rng.random_range(1..5), rng.random_range(1..5));
        let h = random_mat(&mut rng, b.n_nodes(), d_in, 1.0);
        let w_rel: Vec<Mat> = (0..5).map(|_| random_mat(&mut rng, d_in, d_out, 1.0)).collect();
        let w_self = random_mat(&mut rng, d_in, d_out, 1.0);
        let alpha: Vec<f64> = (0..b.n_edges()).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut tape = Tape::new();
        let index = MessageIndex::new(&b, 5);
        let hv = tape.constant(tensor(&h));
        let weights = RgcnWeights {
            relations: w_rel.iter().map(|w| tape.constant(tensor(w))).collect(),
            self_loop: tape.constant(tensor(&w_self)),
        };
        let att = (b.n_edges() > 0).then(|| tape.constant(Tensor::vector(alpha.clone())));
        let out = rgcn_layer(&mut tape, &index, hv, &weights, att).unwrap();
        let edges: Vec<ToyEdge> = b
            .edges
            .iter()
            .zip(&alpha)
            .map(|(e, &a)| ToyEdge { user: e.user, item: e.item, relation: e.relation, alpha: a })
            .collect();
        for (got, want) in tape.value(out).data().iter().zip(flat(&rgcn(&h, &edges, &w_rel, &w_self))) {
            note("rgcn_layer", *got, want)?;
        }
    }
    for _ in 0..100 {
        let model = small_model(&mut rng, 3);
        let k = rng.random_range(2..4);
        let b = random_batch(&mut rng, 4, 4, k);
        let w = LossWeights {
            alpha: rng.random_range(0.0..1.0),
            beta: rng.random_range(0.0..1.0),
            lambda: rng.random_range(0.0..1.0),
            tau: rng.random_range(0.1..1.0),
        };
        let mut tape = Tape::new();
        let bound = model.params.bind_frozen(&mut tape);
        let index = MessageIndex::new(&b, 5);
        let out = model.step(&mut tape, &bound, &b, &index, AblationMode::Full, &w, Noise::Zero).unwrap();
        let (v1, v2, f) = (out.forward.view1.as_ref().unwrap(), out.forward.view2.as_ref().unwrap(), &out.forward.fused);
        let val = |v| tape.value(v).data().to_vec();
        let mat = |v| rows(tape.value(v));
        let x = LossInputs {
            targets: b.targets.iter().map(|t| t.rating.unwrap()).collect(),
            view1_preds: val(v1.predictions),
            view2_preds: val(v2.target_predictions),
            edge_ratings: b.edges.iter().map(|e| e.rating).collect(),
            recon_preds: val(v2.reconstruction_predictions),
            mean: mat(v2.mean),
            log_std: mat(v2.log_std),
            final_preds: val(f.predictions),
            z1_users: mat(f.view1_users),
            z2_users: mat(f.view2_users),
            z1_items: mat(f.view1_items),
            z2_items: mat(f.view2_items),
        };
        note("total_loss", tape.value(out.loss).item(), total_loss(&x, w.alpha, w.beta, w.lambda, w.tau))?;
    }
    Ok(format!("5 formulas x 100 trials, max abs err {worst:.1e}"))
}

fn subgraph_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let one_hot = |l: NodeLabel| match l {
        NodeLabel::TargetUser => [1.0, 0.0, 0.0, 0.0],
        NodeLabel::TargetItem => [0.0, 1.0, 0.0, 0.0],
        NodeLabel::User => [0.0, 0.0, 1.0, 0.0],
        NodeLabel::Item => [0.0, 0.0, 0.0, 1.0],
    };
    for graph in 0..50 {
        let (users, items, density) = (rng.random_range(1..=10), rng.random_range(1..=10), rng.random_range(0.1..0.7));
        let data = random_dataset(&mut rng, users, items, density);
        let g = build_graph(&data);
        check!(g.n_users() + g.n_items() <= 20, "graph {graph} has too many nodes");
        let all = graph_edges(&g);
        for &(u, i, _) in &all {
            let sg = extract_subgraph(&g, u, i).unwrap();
            let facts = facts_of(&sg);
            check!(facts == brute_force_subgraph(&all, u, i), "graph {graph}: subgraph of ({u},{i}) differs");
            check!(!facts.edges.iter().any(|&(v, j, _)| (v, j) == (u, i)), "graph {graph}: target edge present");
            let feats = label_features(&batch(std::slice::from_ref(&sg)).unwrap());
            for (k, &label) in sg.labels.iter().enumerate() {
                check!(feats.row(k) == one_hot(label), "graph {graph}: label row {k} is {:?}", feats.row(k));
            }
        }
    }
    Ok("50 graphs, every edge as target".into())
}

fn rating_fixture(rng: &mut ChaCha8Rng) -> Vec<Vec<ScoredItem>> {
    (0..5)
        .map(|_| {
            let n = rng.random_range(1..=6);
            (0..n)
                .map(|k| ScoredItem {
                    item: k * 3 + rng.random_range(0..3),
                    score: rng.random_range(0..4) as f64 * 0.5,
                    rating: rng.random_range(1..=5) as f64,
                })
                .collect()
        })
        .collect()
}

fn metric_oracles() -> Outcome {
    const TOL: f64 = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for fixture in 0..20 {
        let users = rating_fixture(&mut rng);
        let preds: Vec<f64> = users.iter().flatten().map(|x| x.score * 2.0 + 1.0).collect();
        let targets: Vec<f64> = users.iter().flatten().map(|x| x.rating).collect();
        let mut sq = 0.0;
        for (p, t) in preds.iter().zip(&targets) {
            sq += (p - t) * (p - t);
        }
        let want = (sq / preds.len() as f64).sqrt();
        check!((metrics::rmse(&preds, &targets).unwrap() - want).abs() < TOL, "fixture {fixture}: rmse");

        let want = mean_of(users.iter().map(|u| ndcg_user(u, 10)));
        match metrics::ndcg_rating(&users, 10) {
            Ok(m) => check!((m.value - want).abs() < TOL, "fixture {fixture}: ndcg_rating {} vs {want}", m.value),
            Err(_) => check!(want.is_nan(), "fixture {fixture}: ndcg_rating failed"),
        }
        let want = mean_of(users.iter().map(|u| mrr_user(u, 10, 4.0)));
        match metrics::mrr_rating(&users, 10, 4.0) {
            Ok(m) => check!((m.value - want).abs() < TOL, "fixture {fixture}: mrr_rating {} vs {want}", m.value),
            Err(_) => check!(want.is_nan(), "fixture {fixture}: mrr_rating failed"),
        }

        // Ranking protocol: five users over 120 items, plus a filler user
        // who makes every item part of the catalog.
        let mut triples: Vec<mccl::dataset::RatingTriple> = (0..120)
            .map(|i| mccl::dataset::RatingTriple {
                user_id: "filler".into(),
                item_id: format!("i{i}"),
                rating: 3.0,
                timestamp: 0,
            })
            .collect();
        for u in 0..5 {
            for i in 0..120 {
                if i == u || rng.random_bool(0.05) {
                    triples.push(mccl::dataset::RatingTriple {
                        user_id: format!("u{u}"),
                        item_id: format!("i{i}"),
                        rating: rng.random_range(1..=5) as f64,
                        timestamp: rng.random_range(0..4),
                    });
                }
            }
        }
        let everything = RatingDataset::from_triples(triples, RatingScale::default()).unwrap();
        let filler = everything.ids().user_index("filler").unwrap();
        let test = RatingDataset::with_ids(
            everything.interactions().iter().copied().filter(|x| x.user != filler).collect(),
            everything.ids().clone(),
            everything.scale(),
        );
        let g = build_graph(&everything);
        let table: Vec<f64> = (0..g.n_users() * g.n_items()).map(|_| rng.random_range(0..40) as f64).collect();
        let score = |u: usize, i: usize| table[u * g.n_items() + i];
        let got = metrics::ranking_protocol::<metrics::MetricsError>(&g, &test, 10, 99, fixture, |pairs| {
            Ok(pairs.iter().map(|&(u, i)| score(u, i)).collect())
        })
        .map_err(|e| e.to_string())?;
        let (mut mrr, mut ndcg, mut n) = (0.0, 0.0, 0.0);
        for u in 0..test.n_users() {
            let Some(pos) = test.interactions().iter().filter(|x| x.user == u).max_by_key(|x| (x.timestamp, x.item))
            else {
                continue;
            };
            let negs = metrics::sample_negatives(&g, u, 99, fixture).map_err(|e| e.to_string())?;
            let mut cands = vec![(pos.item, score(u, pos.item))];
            cands.extend(negs.iter().map(|&j| (j, score(u, j))));
            let rank = sorted_rank(&cands, pos.item);
            if rank < 10 {
                mrr += 1.0 / (rank as f64 + 1.0);
                ndcg += 1.0 / (rank as f64 + 2.0).log2();
            }
            n += 1.0;
        }
        check!((got.mrr - mrr / n).abs() < TOL, "fixture {fixture}: mrr_ranking {} vs {}", got.mrr, mrr / n);
        check!((got.ndcg - ndcg / n).abs() < TOL, "fixture {fixture}: ndcg_ranking {} vs {}", got.ndcg, ndcg / n);
    }

    let worst_first = vec![
        ScoredItem { item: 0, score: 0.9, rating: 0.0 },
        ScoredItem { item: 1, score: 0.1, rating: 3.0 },
    ];
    let ndcg = metrics::ndcg_rating(&[worst_first], 2).unwrap().value;
    check!((ndcg - 0.63093).abs() < 5e-6, "NDCG example gave {ndcg}");
    let fourth: Vec<ScoredItem> = [1.0, 2.0, 3.0, 5.0]
        .iter()
        .enumerate()
        .map(|(k, &rating)| ScoredItem { item: k, score: 1.0 - k as f64 * 0.1, rating })
        .collect();
    let mrr = metrics::mrr_rating(&[fourth], 10, 4.0).unwrap().value;
    check!(mrr == 0.25, "MRR example gave {mrr}");
    Ok(format!("20 fixtures x 5 metrics; examples {ndcg:.5} and {mrr}"))
}

/// Per-step attention summaries gathered while checking trainability.
#[derive(Default)]
struct Trace {
    attention: Vec<AttentionSummary>,
}

fn trainability(trace: &mut Trace) -> Outcome {
    let sp = synthetic_split(0);
    let cfg = TrainConfig::default();

    let start = Instant::now();
    let g = build_graph(&sp.train);
    let pairs: Vec<_> = sp.train.interactions()[..8].iter().map(|x| (x.user, x.item)).collect();
    let prepared = PreparedBatch::extract(&g, &pairs, &cfg.extract_options(), cfg.scale.levels()).unwrap();
    let mut trainer = Trainer::new(&cfg).unwrap();
    let mut reached = None;
    for _ in 0..500 {
        let r = trainer.step(&prepared, 1).unwrap();
        trace.attention.extend(r.attention);
        if r.losses.final_pred < 0.05 {
            reached = Some(r.step);
            break;
        }
    }
    let overfit_time = start.elapsed();
    let Some(steps) = reached else {
        return Err("L_final stayed above 0.05 for 500 steps".into());
    };
    check!(overfit_time < Duration::from_secs(120), "overfitting took {overfit_time:?}");

    let mut obs = RecordingObserver::default();
    let out = train(&sp, &TrainConfig { epochs: 5, ..cfg }, &mut obs).unwrap();
    trace.attention.extend(obs.steps.into_iter().flat_map(|s| s.attention));
    let losses: Vec<f64> = out.epochs.iter().map(|e| e.train_loss).collect();
    check!(losses.windows(2).all(|w| w[1] < w[0]), "epoch losses not decreasing: {losses:?}");
    Ok(format!(
        "overfit in {steps} steps ({:.1}s); {} users x {} items, epoch losses {}",
        overfit_time.as_secs_f64(),
        sp.train.n_users(),
        sp.train.n_items(),
        losses.iter().map(|l| format!("{l:.3}")).collect::<Vec<_>>().join(" > ")
    ))
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

fn beats_baselines() -> Outcome {
    let start = Instant::now();
    let (mut full, mut vgae_only, mut baseline) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..3 {
        let sp = synthetic_split(seed);
        let mean = sp.train.mean_rating().unwrap();
        let targets: Vec<f64> = sp.test.interactions().iter().map(|x| x.rating).collect();
        baseline.push(metrics::rmse(&vec![mean; targets.len()], &targets).unwrap());
        for (mode, sink) in [(AblationMode::Full, &mut full), (AblationMode::VgaeOnly, &mut vgae_only)] {
            let cfg = TrainConfig { epochs: 15, seed, ablation_mode: mode, ..Default::default() };
            let out = train(&sp, &cfg, &mut ()).unwrap();
            sink.push(test_rmse(&out.checkpoint, &sp).unwrap());
        }
    }
    let (f, v, b) = (median(full.clone()), median(vgae_only.clone()), median(baseline.clone()));
    let elapsed = start.elapsed();
    let detail = format!(
        "median test RMSE full {f:.4}, vgae_only {v:.4}, global mean {b:.4} (ratio {:.3}); per seed full {full:.4?} vgae {vgae_only:.4?}; {:.0}s",
        f / b,
        elapsed.as_secs_f64()
    );
    check!(f <= 0.95 * b, "{detail}");
    check!(f <= v, "{detail}");
    check!(elapsed < Duration::from_secs(15 * 60), "{detail}");
    Ok(detail)
}

fn attention_bounds(trace: &Trace) -> Outcome {
    check!(!trace.attention.is_empty(), "no attention layers were recorded");
    let mut spread = 0;
    for (k, a) in trace.attention.iter().enumerate() {
        check!(a.alpha_min >= 0.0 && a.alpha_max <= 1.0, "layer record {k}: alpha in [{}, {}]", a.alpha_min, a.alpha_max);
        if a.raw_min != a.raw_max {
            spread += 1;
            check!(a.alpha_min == 0.0 && a.alpha_max == 1.0, "layer record {k}: extremes {} and {}", a.alpha_min, a.alpha_max);
        }
    }
    Ok(format!("{} layer calls, {spread} with distinct raw scores", trace.attention.len()))
}

fn determinism() -> Outcome {
    let sp = synthetic_split(0);
    let cfg = TrainConfig { epochs: 1, ..Default::default() };
    let eval = EvalOptions { negatives: 50, ..Default::default() };
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let out = train(&sp, &cfg, &mut ()).unwrap();
        out.checkpoint.save(&dir.path().join(run)).unwrap();
        let report = evaluate(&out.checkpoint, &sp, &eval).unwrap();
        reports.push(serde_json::to_string(&report).unwrap());
    }
    for f in ["manifest.json", "params.bin"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        check!(a == b, "{f} differs between runs");
    }
    check!(reports[0] == reports[1], "reports differ: {} vs {}", reports[0], reports[1]);
    Ok("checkpoints and MetricReports byte-identical".into())
}

fn ablation_plumbing() -> Outcome {
    let sp = synthetic_split(1);
    let mut counts = Vec::new();
    for mode in [AblationMode::DenoiseOnly, AblationMode::VgaeOnly] {
        let mut obs = RecordingObserver::default();
        train(&sp, &TrainConfig { epochs: 1, ablation_mode: mode, ..Default::default() }, &mut obs).unwrap();
        check!(!obs.steps.is_empty(), "{} logged no steps", mode.name());
        for s in &obs.steps {
            match mode {
                AblationMode::DenoiseOnly => check!(
                    s.losses.view2 == 0.0 && s.losses.contrastive == 0.0,
                    "denoise_only step {}: L_view2 {} L_cl {}",
                    s.step,
                    s.losses.view2,
                    s.losses.contrastive
                ),
                _ => check!(s.attention_calls == 0, "vgae_only step {}: {} attention calls", s.step, s.attention_calls),
            }
        }
        for e in &obs.epochs {
            if mode == AblationMode::DenoiseOnly {
                check!(e.losses.view2 == 0.0 && e.losses.contrastive == 0.0, "denoise_only epoch log has view-2 terms");
            }
        }
        counts.push(obs.steps.len());
    }
    Ok(format!("{} denoise_only and {} vgae_only steps checked", counts[0], counts[1]))
}

fn full_scale() -> Option<Outcome> {
    let path = std::env::var_os(OFFICE_ENV)?;
    Some((|| {
        let data = load_ratings(path.as_ref(), RatingScale::default()).map_err(|e| e.to_string())?;
        let data = five_core_filter(&data).map_err(|e| e.to_string())?;
        let s = dataset_stats(&data);
        check!(
            (s.users, s.items, s.interactions) == (4905, 2420, 53258),
            "stats {} / {} / {}",
            s.users,
            s.items,
            s.interactions
        );
        let sp = split(&data, 0).map_err(|e| e.to_string())?;
        let out = train(&sp, &TrainConfig::default(), &mut ()).map_err(|e| e.to_string())?;
        let rmse = test_rmse(&out.checkpoint, &sp).map_err(|e| e.to_string())?;
        check!((0.82..=0.88).contains(&rmse), "test RMSE {rmse:.4}");
        Ok(format!("stats match, test RMSE {rmse:.4}"))
    })())
}

fn run(f: impl FnOnce() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

fn main() {
    let mut trace = Trace::default();
    let results: Vec<(u32, &str, Outcome)> = vec![
        (1, "gradient correctness", run(gradients)),
        (2, "closed-form oracles", run(closed_form_oracles)),
        (3, "subgraph oracle", run(subgraph_oracle)),
        (4, "metric oracles", run(metric_oracles)),
        (5, "trainability", run(|| trainability(&mut trace))),
        (6, "beats baselines", run(beats_baselines)),
        (7, "attention bounds", run(|| attention_bounds(&trace))),
        (8, "determinism", run(determinism)),
        (9, "ablation plumbing", run(ablation_plumbing)),
    ];
    let mut failed = 0;
    for (n, name, r) in &results {
        match r {
            Ok(detail) => println!("criterion {n} ({name}): PASS: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL: {detail}");
            }
        }
    }
    match full_scale() {
        None => println!("criterion 10 (full-scale hook): SKIP: set {OFFICE_ENV} to a ratings file (non-gating)"),
        Some(Ok(d)) => println!("criterion 10 (full-scale hook): PASS: {d}"),
        Some(Err(d)) => println!("criterion 10 (full-scale hook): FAIL (non-gating): {d}"),
    }
    if failed > 0 {
        println!("{failed} gating criteria failed");
        std::process::exit(1);
    }
}
