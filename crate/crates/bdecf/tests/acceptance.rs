//! The shipping gates, one test per requirement. Each prints a single
//! `[PASS]` / `[FAIL]` / `[SKIP]` line (run with `-- --nocapture` to see
//! them on success). The fast gates always run; the MovieLens reproduction
//! gates are `#[ignore]`d because they retrain full ensembles for hours,
//! and they need the real dataset: point `BDECF_ML100K` at `u.data` or put
//! it at `data/ml-100k/u.data` in the workspace root.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;

use bdecf::bayes::{GaussianVariationalLayer, PriorSpec};
use bdecf::data::{self, load_ratings, synthetic, Format, LoadOptions, RatingDataset};
use bdecf::ensemble::{train_supermodel, EnsembleConfig};
use bdecf::error::Result;
use bdecf::eval::{
    ablation_table, evaluate, evaluate_supermodel, metric_at_k, rank_candidates, sparsity_sweep,
    AblationVariant, EvalOptions, TieBreak,
};
use bdecf::model::trainer::{batch_elbo_backward, batch_elbo_loss};
use bdecf::model::{
    train_weak_learner, LearnerConfig, LearnerGrad, MatchingKind, WeakLearner,
};
use bdecf::nn::gradcheck::finite_difference_gradients;
use bdecf::nn::Parameterized;
use bdecf::seeds;
use bdecf::uncertainty::{
    snr_prune_impact, user_uncertainty_profile, CohortThresholds, UncertaintyMethod,
    UncertaintyScoreParams,
};

fn verdict(ok: bool, name: &str, detail: &str) {
    println!("[{}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{name}: {detail}");
}

fn budget(name: &str, elapsed: Duration, limit: Duration) {
    assert!(
        elapsed <= limit,
        "{name}: took {elapsed:.2?}, budget {limit:.2?}"
    );
}

/// The real MovieLens 100k interaction file, if present.
fn ml100k_path() -> Option<PathBuf> {
    if let Ok(p) = std::env::var("BDECF_ML100K") {
        let p = PathBuf::from(p);
        if p.is_file() {
            return Some(p);
        }
    }
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/ml-100k/u.data");
    p.is_file().then_some(p)
}

fn ml100k_preprocessed() -> Option<RatingDataset> {
    let path = ml100k_path()?;
    let raw = load_ratings(&path, Format::MovieLens100k, &LoadOptions::default())
        .expect("u.data exists but failed to parse");
    Some(data::preprocess(&raw, 5, 20).expect("preprocessing the real dataset failed"))
}

const ML100K_HINT: &str = "real dataset not present (set BDECF_ML100K or add data/ml-100k/u.data)";

// ---------------------------------------------------------------------------
// Fast gates.
// ---------------------------------------------------------------------------

#[test]
fn gradients_match_finite_differences_across_random_instances() {
    let name = "gradient oracle";
    let t = Instant::now();
    let shapes = [(8usize, 2usize, 2usize), (8, 4, 2), (6, 3, 1)];
    let stacks: [&[usize]; 3] = [&[], &[10], &[12, 6]];
    let matchings = [
        MatchingKind::AttentionMlp,
        MatchingKind::Cosine,
        MatchingKind::MlpOnly,
    ];
    let priors = [
        PriorSpec::gsm_default(),
        PriorSpec::laplace_default(),
        PriorSpec::isotropic_default(),
    ];

    let instances: u64 = 100;
    let mut worst = 0.0f64;
    for i in 0..instances {
        let mut r = seeds::rng_from(seeds::mix(0xFD0, i));
        let users = r.gen_range(8..12usize);
        let items = r.gen_range(6..10usize);
        let ratings = users * 4 + items * 2 + r.gen_range(0..5);
        let ds = synthetic::toy(users, items, ratings, seeds::mix(0xFD1, i));

        let (embedding_dim, num_tokens, num_heads) = shapes[r.gen_range(0..shapes.len())];
        let config = LearnerConfig {
            hidden_dims: stacks[r.gen_range(0..stacks.len())].to_vec(),
            embedding_dim,
            num_tokens,
            num_heads,
            dropout: 0.0,
            matching: matchings[(i % 3) as usize],
            mlp_hidden: vec![6],
            prior: priors[r.gen_range(0..priors.len())],
            seed: seeds::mix(0xFD2, i),
            ..LearnerConfig::default()
        };
        let mut learner = WeakLearner::init(&ds, config).unwrap();

        let mut rng = seeds::rng_from(seeds::mix(0xFD3, i));
        let eps = learner.draw_eps(&mut rng);
        let start = r.gen_range(0..ds.len() - 3);
        let batch = ds.interactions[start..start + 3].to_vec();
        let kl_w = r.gen_range(0.05..1.0);

        let mut grad = LearnerGrad::zeros_like(&learner);
        batch_elbo_backward(&learner, &batch, &eps, kl_w, &mut grad).unwrap();
        let loss = |m: &WeakLearner| batch_elbo_loss(m, &batch, &eps, kl_w).unwrap();
        // Central differences have a per-coordinate sweet spot in h:
        // truncation error shrinks with h while roundoff grows, and the
        // narrow prior component pushes some coordinates' sweet spot two
        // decades below others'. A coordinate passes if either step size
        // agrees with the analytic gradient.
        let coarse = finite_difference_gradients(&mut learner, loss, 1e-5);
        let fine = finite_difference_gradients(&mut learner, loss, 1e-6);
        let mut err = 0.0f64;
        for ((a, c), f) in grad.tensors().iter().zip(&coarse).zip(&fine) {
            for ((&av, &cv), &fv) in a.data.iter().zip(c).zip(f) {
                let rel = |n: f64| (av - n).abs() / av.abs().max(n.abs()).max(1e-3);
                err = err.max(rel(cv).min(rel(fv)));
            }
        }
        assert!(err < 1e-4, "instance {i}: rel err {err:.3e} >= 1e-4");
        worst = worst.max(err);
    }
    let elapsed = t.elapsed();
    budget(name, elapsed, Duration::from_secs(120));
    verdict(
        worst < 1e-4,
        name,
        &format!("{instances} instances, every parameter, max rel err {worst:.2e} (tol 1e-4) in {elapsed:.2?}"),
    );
}

#[test]
fn sampled_kl_matches_analytic_gaussian_kl() {
    let name = "sampled KL estimator";
    let t = Instant::now();

    // KL(N(mu, s^2) || N(m, p^2)) per coordinate, summed over the layer.
    fn analytic_kl(layer: &GaussianVariationalLayer, prior_mu: f64, prior_sigma: f64) -> f64 {
        let coord = |mu: f64, sigma: f64| {
            (prior_sigma / sigma).ln()
                + (sigma * sigma + (mu - prior_mu) * (mu - prior_mu))
                    / (2.0 * prior_sigma * prior_sigma)
                - 0.5
        };
        let mut kl = 0.0;
        for i in 0..layer.mu_w.len() {
            kl += coord(layer.mu_w[i], layer.sigma_w(i));
        }
        for i in 0..layer.mu_b.len() {
            kl += coord(layer.mu_b[i], layer.sigma_b(i));
        }
        kl
    }

    // sigma = softplus(rho), so rho = ln(e^sigma - 1).
    fn rho_for(sigma: f64) -> f64 {
        (sigma.exp() - 1.0).ln()
    }

    let samples = 100_000;
    let mut worst = 0.0f64;
    for setting in 0..10u64 {
        let mut r = seeds::rng_from(seeds::mix(0xE1B0, setting));
        let prior_sigma = r.gen_range(0.8..1.2);
        let prior = PriorSpec::Isotropic { mu: 0.0, sigma: prior_sigma };
        let mut layer = GaussianVariationalLayer::init(1, 1, prior, &mut r);
        layer.mu_w[0] = r.gen_range(-0.4..0.4);
        layer.rho_w[0] = rho_for(r.gen_range(0.8..1.25));
        layer.mu_b[0] = r.gen_range(-0.4..0.4);
        layer.rho_b[0] = rho_for(r.gen_range(0.8..1.25));

        let mut mc = 0.0;
        for _ in 0..samples {
            let s = layer.sample(&mut r);
            mc += layer.log_posterior(&s) - layer.log_prior(&s);
        }
        mc /= samples as f64;

        let exact = analytic_kl(&layer, 0.0, prior_sigma);
        let dev = (mc - exact).abs();
        assert!(
            dev <= 0.01,
            "setting {setting}: |mc - analytic| = {dev:.4} > 0.01 (mc {mc:.4}, analytic {exact:.4})"
        );
        worst = worst.max(dev);
    }
    let elapsed = t.elapsed();
    budget(name, elapsed, Duration::from_secs(60));
    verdict(
        worst <= 0.01,
        name,
        &format!("10 settings x {samples} samples, max |mc - analytic| {worst:.4} (tol 0.01) in {elapsed:.2?}"),
    );
}

#[test]
fn propagated_variance_matches_monte_carlo() {
    let name = "variance propagation oracle";
    let t = Instant::now();
    let samples = 100_000;
    let mut worst = 0.0f64;
    for setting in 0..20u64 {
        let mut r = seeds::rng_from(seeds::mix(0x5167, setting));
        let in_dim = r.gen_range(3..8usize);
        let out_dim = r.gen_range(1..4usize);
        let mut layer =
            GaussianVariationalLayer::init(in_dim, out_dim, PriorSpec::gsm_default(), &mut r);
        for v in layer.mu_w.iter_mut().chain(layer.mu_b.iter_mut()) {
            *v = r.gen_range(-1.0..1.0);
        }
        for v in layer.rho_w.iter_mut().chain(layer.rho_b.iter_mut()) {
            *v = r.gen_range(-2.0..0.5);
        }
        let h: Vec<f64> = (0..in_dim)
            .map(|i| if i % 4 == 3 { 0.0 } else { r.gen_range(-1.5..1.5) })
            .collect();

        let stats = bdecf::uncertainty::activation_stats(&layer, &h).unwrap();
        let mut sum = vec![0.0; out_dim];
        let mut sumsq = vec![0.0; out_dim];
        for _ in 0..samples {
            let z = layer.forward(&h, &layer.sample(&mut r));
            for j in 0..out_dim {
                sum[j] += z[j];
                sumsq[j] += z[j] * z[j];
            }
        }
        for j in 0..out_dim {
            let mean = sum[j] / samples as f64;
            let var = sumsq[j] / samples as f64 - mean * mean;
            let rel = (stats.var_z[j] - var).abs() / stats.var_z[j];
            assert!(
                rel <= 0.02,
                "setting {setting} unit {j}: rel dev {rel:.4} > 2% (closed {}, mc {var})",
                stats.var_z[j]
            );
            worst = worst.max(rel);
        }
    }
    let elapsed = t.elapsed();
    budget(name, elapsed, Duration::from_secs(60));
    verdict(
        worst <= 0.02,
        name,
        &format!("20 layers x {samples} samples, max rel dev {:.2}% (tol 2%) in {elapsed:.2?}", worst * 100.0),
    );
}

#[test]
fn ranking_metrics_match_a_brute_force_reference() {
    let name = "metric oracle";
    let t = Instant::now();
    let vectors = 1000u64;
    for v in 0..vectors {
        let mut r = seeds::rng_from(seeds::mix(0x3E7, v));
        let n = r.gen_range(1..150usize);
        // Item ids drawn sparse so identity and position disagree; scores
        // quantized so ties actually occur.
        let mut ids: Vec<u32> = (0..n as u32 * 3).collect();
        for k in 0..n {
            let j = r.gen_range(k..ids.len());
            ids.swap(k, j);
        }
        let scored: Vec<(u32, f64)> = ids[..n]
            .iter()
            .map(|&i| (i, f64::from(r.gen_range(0..40u32)) / 7.0))
            .collect();
        let truth = scored[r.gen_range(0..n)].0;

        let ranked = rank_candidates(7, &scored, truth, TieBreak::ItemId, 0);
        let truth_score = scored.iter().find(|&&(i, _)| i == truth).unwrap().1;
        let brute = 1 + scored
            .iter()
            .filter(|&&(i, s)| s > truth_score || (s == truth_score && i < truth))
            .count();
        assert_eq!(ranked.ground_truth_rank, brute, "vector {v}: rank mismatch");

        for k in [1usize, 5, 10] {
            let (hr, ndcg, mrr) = metric_at_k(Some(brute), k);
            let (bhr, bndcg, bmrr) = if brute <= k {
                let rf = brute as f64;
                (1.0, 1.0 / (rf + 1.0).log2(), 1.0 / rf)
            } else {
                (0.0, 0.0, 0.0)
            };
            assert_eq!((hr, ndcg, mrr), (bhr, bndcg, bmrr), "vector {v} cutoff {k}");
        }
    }
    verdict(
        true,
        name,
        &format!("{vectors} rank vectors, all HR/NDCG/MRR bit-exact vs brute force in {:.2?}", t.elapsed()),
    );
}

#[test]
fn uniform_scorer_hits_the_analytic_rate() {
    let name = "evaluation sanity";
    let t = Instant::now();
    let (dataset, source) = match ml100k_preprocessed() {
        Some(ds) => (ds, "real MovieLens 100k"),
        None => (
            data::preprocess(&synthetic::ml100k_shaped(1), 5, 20).unwrap(),
            "synthetic stand-in with the MovieLens 100k shape (real dataset absent)",
        ),
    };
    let split = data::leave_one_out_split(&dataset);
    let uniform = |user: u32, item: u32| -> Result<f64> {
        Ok(seeds::mix(0x0117, (u64::from(user) << 32) | u64::from(item)) as f64)
    };
    let report = evaluate(&uniform, &split, &EvalOptions::default()).unwrap();
    let hr10 = report.hr_at(10).unwrap();
    let dev = (hr10 - 10.0 / 101.0).abs();
    let elapsed = t.elapsed();
    budget(name, elapsed, Duration::from_secs(60));
    verdict(
        dev <= 0.02,
        name,
        &format!("uniform scorer on {source}: HR@10 {hr10:.4} vs analytic 0.0990 (tol 0.02) in {elapsed:.2?}"),
    );
}

#[test]
fn movielens_preprocessing_keeps_the_documented_shape() {
    let name = "preprocessing reproduction";
    let t = Instant::now();
    let Some(ds) = ml100k_preprocessed() else {
        println!("[SKIP] {name}: {ML100K_HINT}");
        return;
    };
    let density_pct = ds.density() * 100.0;
    let ok = ds.num_users == 943
        && ds.num_items == 1664
        && ds.len() == 100_000
        && (density_pct - 6.37).abs() <= 0.01;
    verdict(
        ok,
        name,
        &format!(
            "users {} (want 943), items {} (want 1664), ratings {} (want 100000), density {density_pct:.2}% (want 6.37 +- 0.01pp) in {:.2?}",
            ds.num_users,
            ds.num_items,
            ds.len(),
            t.elapsed()
        ),
    );
}

fn small_ensemble(seed: u64) -> EnsembleConfig {
    EnsembleConfig {
        num_learners: 2,
        depth_cycle: vec![vec![12], vec![8]],
        learner: LearnerConfig {
            embedding_dim: 8,
            num_tokens: 2,
            num_heads: 2,
            mlp_hidden: vec![6],
            epochs: 3,
            batch_size: 64,
            ..LearnerConfig::default()
        },
        meta_epochs: 10,
        seed,
        ..EnsembleConfig::default()
    }
}

#[test]
fn identical_runs_are_byte_identical() {
    let name = "determinism";
    let t = Instant::now();
    let dataset = synthetic::toy(30, 20, 400, 77);
    let split = data::leave_one_out_split(&dataset);
    let config = small_ensemble(77);

    let tmp = tempfile::tempdir().unwrap();
    let mut payload_bytes = 0usize;
    let mut reports = Vec::new();
    for run in 0..2 {
        let (model, _) = train_supermodel(&split.train, &config).unwrap();
        let dir = tmp.path().join(format!("run{run}"));
        model.save(&dir).unwrap();
        let report = evaluate_supermodel(&model, &split, &EvalOptions::default()).unwrap();
        reports.push(serde_json::to_string(&report).unwrap());
    }
    let mut files: Vec<String> = std::fs::read_dir(tmp.path().join("run0"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    files.sort();
    for f in &files {
        let a = std::fs::read(tmp.path().join("run0").join(f)).unwrap();
        let b = std::fs::read(tmp.path().join("run1").join(f)).unwrap();
        assert!(a == b, "{f} differs between identical runs");
        payload_bytes += a.len();
    }
    assert_eq!(reports[0], reports[1], "metrics reports differ between identical runs");
    verdict(
        true,
        name,
        &format!(
            "two identical runs: {} checkpoint files ({payload_bytes} bytes) byte-identical, reports identical, in {:.2?}",
            files.len(),
            t.elapsed()
        ),
    );
}

#[test]
fn weak_learner_overfits_a_tiny_corpus() {
    let name = "overfit sanity";
    let t = Instant::now();
    let ds = synthetic::toy(10, 10, 50, 17);
    // The KL term exists precisely to resist memorization, so this check
    // turns it nearly off and asks the likelihood path to nail 50 points.
    let config = LearnerConfig {
        hidden_dims: vec![16],
        embedding_dim: 8,
        num_tokens: 2,
        num_heads: 2,
        dropout: 0.0,
        matching: MatchingKind::MlpOnly,
        mlp_hidden: vec![8],
        learning_rate: 5e-3,
        batch_size: 10,
        epochs: 500,
        kl_weight: Some(1e-3),
        seed: 17,
        ..LearnerConfig::default()
    };
    let (_, stats) = train_weak_learner(&ds, &config).unwrap();
    let best = stats.epoch_mse.iter().cloned().fold(f64::INFINITY, f64::min);
    let first = stats.epoch_mse.iter().position(|&m| m < 0.01);
    let elapsed = t.elapsed();
    budget(name, elapsed, Duration::from_secs(60));
    verdict(
        first.is_some(),
        name,
        &format!(
            "50 interactions: train MSE < 0.01 first reached at epoch {} (best {best:.5}) in {elapsed:.2?}",
            first.map_or_else(|| "never".into(), |e| (e + 1).to_string())
        ),
    );
}

// ---------------------------------------------------------------------------
// MovieLens reproduction gates (slow; `cargo test --test acceptance --
// --ignored --nocapture`).
// ---------------------------------------------------------------------------

#[test]
#[ignore = "retrains full ensembles on the real MovieLens 100k for hours"]
fn full_ensemble_reaches_the_reported_ranking_band() {
    let name = "MovieLens ranking reproduction";
    let Some(dataset) = ml100k_preprocessed() else {
        println!("[SKIP] {name}: {ML100K_HINT}");
        return;
    };
    let split = data::leave_one_out_split(&dataset);
    let (model, _) = train_supermodel(&split.train, &EnsembleConfig::default()).unwrap();
    let report = evaluate_supermodel(&model, &split, &EvalOptions::default()).unwrap();
    let hr = report.hr_at(10).unwrap();
    let ndcg = report.ndcg_at(10).unwrap();
    let mrr = report.mrr_at(10).unwrap();
    let ok = (0.64..=0.70).contains(&hr)
        && (0.37..=0.43).contains(&ndcg)
        && (0.29..=0.35).contains(&mrr);
    verdict(
        ok,
        name,
        &format!(
            "K=10: HR@10 {hr:.4} (want 0.64..0.70), NDCG@10 {ndcg:.4} (want 0.37..0.43), MRR@10 {mrr:.4} (want 0.29..0.35)"
        ),
    );
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

#[test]
#[ignore = "retrains six ensembles on the real MovieLens 100k"]
fn attention_matching_beats_cosine_on_movielens() {
    let name = "ablation ordering";
    let Some(dataset) = ml100k_preprocessed() else {
        println!("[SKIP] {name}: {ML100K_HINT}");
        return;
    };
    let mut full = Vec::new();
    let mut cosine = Vec::new();
    for seed in [42u64, 43, 44] {
        let base = EnsembleConfig { seed, ..EnsembleConfig::default() };
        let rows = ablation_table(
            &dataset,
            &base,
            &[AblationVariant::Full, AblationVariant::CosineScore],
            &EvalOptions::default(),
        )
        .unwrap();
        full.push(rows[0].report.hr_at(10).unwrap());
        cosine.push(rows[1].report.hr_at(10).unwrap());
    }
    let (mf, mc) = (median(full), median(cosine));
    verdict(
        mf > mc,
        name,
        &format!("3-seed median HR@10: full {mf:.4} > cosine {mc:.4}"),
    );
}

#[test]
#[ignore = "retrains a full ensemble on the real MovieLens 100k"]
fn pruning_a_fifth_of_the_weights_barely_moves_the_hit_rate() {
    let name = "SNR pruning impact";
    let Some(dataset) = ml100k_preprocessed() else {
        println!("[SKIP] {name}: {ML100K_HINT}");
        return;
    };
    let split = data::leave_one_out_split(&dataset);
    let (mut model, _) = train_supermodel(&split.train, &EnsembleConfig::default()).unwrap();
    let impact = snr_prune_impact(&mut model, &split, 0.2, &EvalOptions::default()).unwrap();
    verdict(
        impact.hr10_after >= impact.hr10_before - 0.02,
        name,
        &format!(
            "prune 20%: HR@10 {:.4} -> {:.4} (delta {:+.4}, allowed >= -0.02)",
            impact.hr10_before, impact.hr10_after, impact.hr10_delta
        ),
    );
}

#[test]
#[ignore = "retrains a full ensemble on the real MovieLens 100k"]
fn sparse_users_score_more_uncertain_than_dense_users() {
    let name = "uncertainty direction";
    let Some(dataset) = ml100k_preprocessed() else {
        println!("[SKIP] {name}: {ML100K_HINT}");
        return;
    };
    let split = data::leave_one_out_split(&dataset);
    let (model, _) = train_supermodel(&split.train, &EnsembleConfig::default()).unwrap();
    let params = UncertaintyScoreParams::default();
    let thresholds = CohortThresholds::default();
    let mut ratios = Vec::new();
    for method in [UncertaintyMethod::Reparam, UncertaintyMethod::Ensemble] {
        let report =
            user_uncertainty_profile(&model, &split.train, method, &params, thresholds).unwrap();
        let ratio = report
            .sparse_dense_ratio
            .expect("both cohorts should be populated on the real dataset");
        ratios.push((method.name(), ratio));
    }
    let ok = ratios.iter().all(|&(_, r)| r > 1.15);
    let detail = ratios
        .iter()
        .map(|(m, r)| format!("{m} {r:.3}"))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(ok, name, &format!("sparse/dense ratio (want > 1.15 for both): {detail}"));
}

#[test]
#[ignore = "retrains ensembles at two train fractions, three seeds each"]
fn a_fifth_of_the_data_ranks_worse_than_all_of_it() {
    let name = "sparsity direction";
    let Some(dataset) = ml100k_preprocessed() else {
        println!("[SKIP] {name}: {ML100K_HINT}");
        return;
    };
    let mut low = Vec::new();
    let mut high = Vec::new();
    for seed in [42u64, 43, 44] {
        let config = EnsembleConfig { seed, ..EnsembleConfig::default() };
        let rows =
            sparsity_sweep(&dataset, &[0.2, 1.0], &config, &EvalOptions::default()).unwrap();
        low.push(rows[0].report.hr_at(10).unwrap());
        high.push(rows[1].report.hr_at(10).unwrap());
    }
    let (ml, mh) = (median(low), median(high));
    verdict(
        ml < mh,
        name,
        &format!("3-seed median HR@10: 20% of train {ml:.4} < 100% {mh:.4}"),
    );
}
