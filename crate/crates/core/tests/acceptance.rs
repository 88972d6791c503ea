//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Oracles here are independent of the library code they check.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use langtail::bank::{align_gram, entity_contrastive_loss, gram_loss};
use langtail::cluster::{cut_tree, ward_tree, GranularitySet};
use langtail::eval::{hungarian, match_and_score, score_mapping, tail_report, ConfusionMatrix, UnmatchedMode};
use langtail::spectral::{build_affinity, eigendecompose, graph_fourier, normalized_laplacian, AffinityGraph};
use langtail::synth::{generate_corpus, write_corpus, SynthConfig};
use langtail::train::{
    backbone_backward, backbone_forward, concat_prototypes, distill_warmup_loss, head_ce_loss, run_baseline,
    run_pipeline, train_corpus, Backbone, Branch, ClusterModel, TrainConfig,
};
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-6;
const FD_REL: f64 = 1e-4;
const FD_ABS: f64 = 1e-6;

struct Outcome {
    pass: bool,
    detail: String,
}

fn run(id: u32, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let out = f();
    let elapsed = t.elapsed();
    let in_time = elapsed <= limit;
    let pass = out.pass && in_time;
    println!(
        "{} [{id}] {name}: {}; {:.2}s (limit {}s){}",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64(),
        limit.as_secs(),
        if in_time { "" } else { " OVER TIME" }
    );
    pass
}

fn uniform(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| rng.random::<f64>() * 2.0 - 1.0)
}

/// Largest violation of `|a - n| <= max(abs, rel * max(|a|, |n|))` as a
/// fraction of the allowance; <= 1 passes.
fn fd_check(analytic: &Array2<f64>, x: &Array2<f64>, f: &dyn Fn(&Array2<f64>) -> f64) -> f64 {
    let mut worst = 0.0f64;
    for idx in ndarray::indices(x.dim()) {
        let mut p = x.clone();
        p[idx] += FD_STEP;
        let mut m = x.clone();
        m[idx] -= FD_STEP;
        let num = (f(&p) - f(&m)) / (2.0 * FD_STEP);
        let a = analytic[idx];
        let allow = FD_ABS.max(FD_REL * a.abs().max(num.abs()));
        worst = worst.max((a - num).abs() / allow);
    }
    worst
}

fn gradient_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut record = |k: &'static str, v: f64| {
        let e = worst.entry(k).or_insert(0.0);
        *e = e.max(v);
    };
    for _ in 0..20 {
        // backbone: parameters and inputs against sum(probe * output)
        let (d_in, hid, d_out, n) =
            (rng.random_range(2..5), rng.random_range(3..7), rng.random_range(2..5), rng.random_range(2..6));
        let mut b = Backbone::new(d_in, &[hid], d_out, rng.random()).unwrap();
        for l in b.layers_mut() {
            l.bias.mapv_inplace(|_| rng.random::<f64>() * 0.4 - 0.2);
        }
        let x = uniform(&mut rng, (n, d_in));
        let probe = uniform(&mut rng, (n, d_out));
        let cache = b.forward(x.view()).unwrap();
        let g = backbone_backward(&b, &cache, probe.view()).unwrap();
        let value = |b: &Backbone, x: &Array2<f64>| (backbone_forward(b, x.view()).unwrap() * &probe).sum();
        record("backbone", fd_check(&g.input, &x, &|x| value(&b, x)));
        for li in 0..2 {
            let w = b.layers()[li].weight.clone();
            record(
                "backbone",
                fd_check(&g.weights[li], &w, &|w| {
                    let mut c = b.clone();
                    c.layers_mut()[li].weight = w.clone();
                    value(&c, &x)
                }),
            );
            let bias = b.layers()[li].bias.clone().insert_axis(ndarray::Axis(0));
            let gb = g.biases[li].clone().insert_axis(ndarray::Axis(0));
            record(
                "backbone",
                fd_check(&gb, &bias, &|v| {
                    let mut c = b.clone();
                    c.layers_mut()[li].bias = v.row(0).to_owned();
                    value(&c, &x)
                }),
            );
        }

        // head cross-entropy
        let (n, k, c) = (rng.random_range(3..7), rng.random_range(2..5), rng.random_range(2..6));
        let f = uniform(&mut rng, (n, c));
        let mu = uniform(&mut rng, (k, c));
        let mut labels: Vec<i32> = (0..n).map(|_| rng.random_range(-1..k as i32)).collect();
        labels[0] = 0;
        let (_, gf, gm) = head_ce_loss(f.view(), mu.view(), &labels).unwrap();
        record("head_ce", fd_check(&gf, &f, &|f| head_ce_loss(f.view(), mu.view(), &labels).unwrap().0));
        record("head_ce", fd_check(&gm, &mu, &|m| head_ce_loss(f.view(), m.view(), &labels).unwrap().0));

        // entity InfoNCE
        let a_n = rng.random_range(1..4);
        let p_n = a_n + rng.random_range(1..5);
        let c = rng.random_range(2..6);
        let anchors = uniform(&mut rng, (a_n, c));
        let protos = uniform(&mut rng, (p_n, c));
        let slots: Vec<usize> = (0..a_n).collect();
        let weights: Vec<f64> = (0..p_n).map(|_| 0.5 + rng.random::<f64>()).collect();
        let tau = 0.07 + rng.random::<f64>() * 0.5;
        let loss = |a: &Array2<f64>| entity_contrastive_loss(a.view(), &slots, protos.view(), &weights, tau).unwrap();
        record("entity", fd_check(&loss(&anchors).1, &anchors, &|a| loss(a).0));

        // Gram alignment
        let (t, c, d) = (rng.random_range(2..7), rng.random_range(2..6), rng.random_range(2..8));
        let fm = uniform(&mut rng, (t, c));
        let mut e = uniform(&mut rng, (t, d));
        for mut r in e.outer_iter_mut() {
            let n = r.dot(&r).sqrt();
            r /= n;
        }
        let target = e.dot(&e.t());
        let (_, g) = gram_loss(fm.view(), target.view());
        record("gram", fd_check(&g, &fm, &|f| gram_loss(f.view(), target.view()).0));

        // distillation cosine
        let (n, c) = (rng.random_range(2..6), rng.random_range(2..7));
        let f = uniform(&mut rng, (n, c));
        let tg = uniform(&mut rng, (n, c));
        let (_, g) = distill_warmup_loss(f.view(), tg.view()).unwrap();
        record("distill", fd_check(&g, &f, &|f| distill_warmup_loss(f.view(), tg.view()).unwrap().0));
    }
    let pass = worst.values().all(|&v| v <= 1.0);
    let detail = worst.iter().map(|(k, v)| format!("{k} {v:.3}")).collect::<Vec<_>>().join(", ");
    Outcome { pass, detail: format!("20 instances each, worst error/allowance: {detail}") }
}

/// Greedy agglomeration by minimum ESS increase computed from scratch;
/// ties go to the smallest (lower id, higher id) node pair. Returns the
/// partition after each merge count, as member lists.
fn greedy_ward(x: &Array2<f64>) -> Vec<Vec<Vec<usize>>> {
    let n = x.nrows();
    let ess = |members: &[usize]| {
        let c =
            members.iter().fold(ndarray::Array1::<f64>::zeros(x.ncols()), |a, &i| a + x.row(i)) / members.len() as f64;
        members.iter().map(|&i| (&x.row(i) - &c).mapv(|v| v * v).sum()).sum::<f64>()
    };
    let mut nodes: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let mut next = n;
    let mut out = vec![nodes.iter().map(|(_, m)| m.clone()).collect()];
    while nodes.len() > 1 {
        let mut best: Option<(f64, (usize, usize), usize, usize)> = None;
        for a in 0..nodes.len() {
            for b in a + 1..nodes.len() {
                let mut joined = nodes[a].1.clone();
                joined.extend(&nodes[b].1);
                let cost = ess(&joined) - ess(&nodes[a].1) - ess(&nodes[b].1);
                let ids = (nodes[a].0.min(nodes[b].0), nodes[a].0.max(nodes[b].0));
                let better = match &best {
                    None => true,
                    Some((bc, bids, _, _)) => cost < *bc || (cost == *bc && ids < *bids),
                };
                if better {
                    best = Some((cost, ids, a, b));
                }
            }
        }
        let (_, _, a, b) = best.unwrap();
        let mut joined = nodes[a].1.clone();
        joined.extend(&nodes[b].1);
        nodes.remove(b);
        nodes.remove(a);
        nodes.push((next, joined));
        next += 1;
        out.push(nodes.iter().map(|(_, m)| m.clone()).collect());
    }
    out
}

fn canonical(labels: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

fn ward_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    let mut checked = 0;
    for _ in 0..200 {
        let n = rng.random_range(2..=8);
        let d = rng.random_range(1..=4);
        let x = uniform(&mut rng, (n, d));
        let tree = ward_tree(x.view()).unwrap();
        let oracle = greedy_ward(&x);
        for k in 1..=n {
            let got = canonical(&cut_tree(&tree, k).unwrap());
            let mut want = vec![0usize; n];
            for (c, members) in oracle[n - k].iter().enumerate() {
                for &i in members {
                    want[i] = c;
                }
            }
            checked += 1;
            if got != canonical(&want) {
                mismatches += 1;
            }
        }
    }
    Outcome { pass: mismatches == 0, detail: format!("{checked} cuts over 200 instances, {mismatches} mismatches") }
}

fn brute_force_cost(c: &Array2<f64>) -> f64 {
    let (r, k) = c.dim();
    let a = if r > k { c.t().to_owned() } else { c.clone() };
    let (n, m) = a.dim();
    fn rec(a: &Array2<f64>, i: usize, used: &mut Vec<bool>, cols: &mut Vec<usize>, best: &mut f64) {
        if i == a.nrows() {
            let s: f64 = cols.iter().enumerate().map(|(r, &c)| a[[r, c]]).sum();
            *best = best.min(s);
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                cols.push(j);
                rec(a, i + 1, used, cols, best);
                cols.pop();
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(&a, 0, &mut vec![false; m], &mut Vec::with_capacity(n), &mut best);
    best
}

fn hungarian_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bad = 0;
    for _ in 0..200 {
        let (r, c) = (rng.random_range(1..=7), rng.random_range(1..=7));
        let m = Array2::from_shape_fn((r, c), |_| rng.random::<f64>() * 10.0);
        let a = hungarian(m.view()).unwrap();
        // the library sums in row order; so does this recomputation
        let recomputed: f64 = a.row_to_col.iter().enumerate().filter_map(|(i, j)| j.map(|j| m[[i, j]])).sum();
        let want = brute_force_cost(&m);
        let ok_min = (a.cost - want).abs() <= 1e-12 * want.abs().max(1.0);
        if a.cost != recomputed || !ok_min {
            bad += 1;
        }
    }
    Outcome { pass: bad == 0, detail: format!("200 matrices up to 7x7, {bad} differ from exhaustive minimum") }
}

fn spectral_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut recon = 0.0f64;
    let mut parseval = 0.0f64;
    for _ in 0..20 {
        let n = rng.random_range(10..40);
        let f = uniform(&mut rng, (n, 5));
        let g = build_affinity(f.view()).unwrap();
        let l = normalized_laplacian(&g).unwrap();
        let b = eigendecompose(l.view()).unwrap();
        let u = &b.vectors;
        let back = u.dot(&Array2::from_diag(&b.values)).dot(&u.t());
        let fro = |m: &Array2<f64>| m.mapv(|v| v * v).sum().sqrt();
        recon = recon.max(fro(&(&back - &l)) / fro(&l));
        let signal = uniform(&mut rng, (n, 3));
        let coeffs = graph_fourier(&b, signal.view()).unwrap();
        parseval = parseval.max((fro(&coeffs) - fro(&signal)).abs() / fro(&signal));
    }
    let two = AffinityGraph::new(array![[0.0, 0.7], [0.7, 0.0]]).unwrap();
    let vals = eigendecompose(normalized_laplacian(&two).unwrap().view()).unwrap().values;
    let two_err = (vals[0] - 0.0).abs().max((vals[1] - 2.0).abs());

    let mut fiedler_ok = 0;
    for _ in 0..50 {
        let (na, nb) = (rng.random_range(5..20), rng.random_range(5..20));
        let mut x = Array2::zeros((na + nb, 3));
        let mut truth = Vec::new();
        for i in 0..na + nb {
            let centre = if i < na { -1.0 } else { 1.0 };
            truth.push(i < na);
            for j in 0..3 {
                x[[i, j]] = if j == 0 { centre } else { 0.0 } + 0.25 * (rng.random::<f64>() - 0.5);
            }
        }
        let b = eigendecompose(normalized_laplacian(&build_affinity(x.view()).unwrap()).unwrap().view()).unwrap();
        let sign: Vec<bool> = b.vectors.column(1).iter().map(|&v| v > 0.0).collect();
        let same = sign.iter().zip(&truth).all(|(s, t)| s == t);
        let flipped = sign.iter().zip(&truth).all(|(s, t)| s != t);
        if same || flipped {
            fiedler_ok += 1;
        }
    }
    let pass = recon <= 1e-8 && parseval <= 1e-8 && two_err <= 1e-10 && fiedler_ok == 50;
    Outcome {
        pass,
        detail: format!(
            "reconstruction {recon:.2e}, Parseval {parseval:.2e}, 2-node error {two_err:.1e}, Fiedler {fiedler_ok}/50"
        ),
    }
}

fn gram_alignment() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_ratio = 0.0f64;
    let mut worst_rot = 0.0f64;
    for trial in 0..10 {
        let c = if trial % 2 == 0 { 384 } else { 32 };
        let init = uniform(&mut rng, (20, c)) * 0.3;
        let text = uniform(&mut rng, (20, 512));
        let bank = align_gram(init.view(), text.view(), (0..20).collect(), 500, 1e-2).unwrap();
        let tr = &bank.alignment_loss_trace;
        worst_ratio = worst_ratio.max(tr[tr.len() - 1] / tr[0]);

        // orthogonal Q from Gram-Schmidt on a random square matrix
        let k = 8;
        let f = uniform(&mut rng, (20, k));
        let mut q = uniform(&mut rng, (k, k));
        for i in 0..k {
            for j in 0..i {
                let proj = q.column(i).dot(&q.column(j));
                let cj = q.column(j).to_owned();
                q.column_mut(i).scaled_add(-proj, &cj);
            }
            let n = q.column(i).dot(&q.column(i)).sqrt();
            q.column_mut(i).mapv_inplace(|v| v / n);
        }
        let mut e = uniform(&mut rng, (20, 6));
        for mut r in e.outer_iter_mut() {
            let n = r.dot(&r).sqrt();
            r /= n;
        }
        let target = e.dot(&e.t());
        let a = gram_loss(f.view(), target.view()).0;
        let b = gram_loss(f.dot(&q).view(), target.view()).0;
        worst_rot = worst_rot.max((a - b).abs() / a.max(1.0));
    }
    Outcome {
        pass: worst_ratio <= 1e-3 && worst_rot <= 1e-10,
        detail: format!("worst final/initial {worst_ratio:.2e} (<= 1e-3), rotation change {worst_rot:.1e}"),
    }
}

fn evaluation_protocol() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    let cm = ConfusionMatrix::from_counts(2, 2, vec![5, 0, 2, 3]).unwrap();
    let r = score_mapping(&cm, vec![Some(0), Some(1)]);
    let hand = (r.oa - 0.8).abs() < 1e-12
        && (r.per_class_iou[0] - 5.0 / 7.0).abs() < 1e-12
        && (r.per_class_iou[1] - 3.0 / 5.0).abs() < 1e-12
        && (r.miou - 0.657).abs() < 5e-4;
    pass &= hand;
    notes.push(format!("hand fixture OA {:.3} mIoU {:.3}", r.oa, r.miou));
    for counts in [vec![7, 0, 0, 3], vec![0, 3, 7, 0]] {
        let r = match_and_score(&ConfusionMatrix::from_counts(2, 2, counts).unwrap(), UnmatchedMode::Merge).unwrap();
        pass &= r.oa == 1.0 && r.macc == 1.0 && r.miou == 1.0;
    }
    let mut totals = Vec::new();
    for (levels, want) in [("120,80,20", 440), ("120,80,12", 424), ("120,40,12", 344), ("120,40,16", 352)] {
        let g: GranularitySet = levels.parse().unwrap();
        let heads: Vec<Array2<f64>> = g.levels().iter().map(|&k| Array2::zeros((k, 4))).collect();
        let l = ClusterModel::new(Branch::Local, g.clone(), heads.clone()).unwrap();
        let gl = ClusterModel::new(Branch::Global, g, heads).unwrap();
        let got = concat_prototypes(&[&l, &gl]).unwrap().nrows();
        pass &= got == want;
        totals.push(format!("[{levels}] {got}"));
    }
    notes.push(format!("prototypes {}", totals.join(", ")));
    Outcome { pass, detail: notes.join("; ") }
}

fn manifest() -> BTreeMap<String, String> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/longtail.manifest");
    std::fs::read_to_string(&path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

fn longtail_rescue() -> Outcome {
    let m = manifest();
    let get = |k: &str| m.get(k).unwrap_or_else(|| panic!("manifest lacks {k}")).clone();
    let synth = SynthConfig {
        n_classes: get("corpus.n_classes").parse().unwrap(),
        points_per_scene: get("corpus.points_per_scene").parse().unwrap(),
        n_scenes: get("corpus.n_scenes").parse().unwrap(),
        zipf_exponent: get("corpus.zipf_exponent").parse().unwrap(),
        input_dim: get("corpus.input_dim").parse().unwrap(),
        class_separation: get("corpus.class_separation").parse().unwrap(),
        noise_sigma: get("corpus.noise_sigma").parse().unwrap(),
        entity_alias_rate: get("corpus.entity_alias_rate").parse().unwrap(),
        seed: get("corpus.seed").parse().unwrap(),
        spatial_extent: get("corpus.spatial_extent").parse().unwrap(),
        distill_dim: 0,
    };
    let corpus = generate_corpus(&synth).unwrap();
    let n_classes = synth.n_classes;
    let full = TrainConfig {
        granularities: get("train.granularities").parse().unwrap(),
        epochs: get("train.epochs").parse().unwrap(),
        recluster_every: get("train.recluster_every").parse().unwrap(),
        batch_scenes: get("train.batch_scenes").parse().unwrap(),
        lr0: get("train.lr0").parse().unwrap(),
        hidden: vec![get("train.hidden").parse().unwrap()],
        feature_dim: get("train.feature_dim").parse().unwrap(),
        s_prime: get("train.s_prime").parse().unwrap(),
        warmup_epochs: get("train.warmup_epochs").parse().unwrap(),
        lambda: get("train.lambda").parse().unwrap(),
        ..TrainConfig::default()
    };
    let seeds: u64 = get("train.seeds").parse().unwrap();
    let tail = |r: &langtail::eval::EvalReport| (r.per_class_iou[n_classes - 2] + r.per_class_iou[n_classes - 1]) / 2.0;
    let (mut min_miou, mut wins, mut gain_sum, mut absorbed) = (f64::INFINITY, 0, 0.0, 0);
    for seed in 0..seeds {
        let cfg = TrainConfig { seed, ..full.clone() };
        let base_cfg = TrainConfig { lambda: 0.0, global_branch: false, ..cfg.clone() };
        let rf = train_corpus(&cfg, &corpus.scenes, &corpus.entities, None).unwrap().report.unwrap();
        let rb = train_corpus(&base_cfg, &corpus.scenes, &[], None).unwrap().report.unwrap();
        let (tf, tb) = (tail(&rf), tail(&rb));
        println!("    seed {seed}: full mIoU {:.3} tail {tf:.3} | baseline mIoU {:.3} tail {tb:.3}", rf.miou, rb.miou);
        min_miou = min_miou.min(rf.miou);
        if tf > tb {
            wins += 1;
        }
        gain_sum += tf - tb;
        let rarest = tail_report(&rb).last().map(|r| r.absorbed).unwrap_or(false);
        absorbed += usize::from(rarest);
    }
    let gain = gain_sum / seeds as f64;
    println!("    baseline rarest class flagged absorbed in {absorbed}/{seeds} seeds");
    Outcome {
        pass: min_miou >= 0.85 && wins >= 8 && gain >= 0.15,
        detail: format!(
            "min full mIoU {min_miou:.3} (>= 0.85), tail wins {wins}/{seeds} (>= 8), mean tail gain {gain:.3} (>= 0.15)"
        ),
    }
}

fn small_corpus(distill_dim: usize) -> SynthConfig {
    SynthConfig {
        n_classes: 4,
        points_per_scene: 400,
        n_scenes: 4,
        input_dim: 8,
        distill_dim,
        ..SynthConfig::default()
    }
}

fn baseline_degeneracy() -> Outcome {
    let corpus = generate_corpus(&small_corpus(0)).unwrap();
    let cfg = TrainConfig {
        lambda: 0.0,
        global_branch: false,
        granularities: "6".parse().unwrap(),
        epochs: 12,
        recluster_every: 4,
        batch_scenes: 2,
        hidden: vec![32],
        feature_dim: 16,
        lr0: 1e-3,
        seed: 9,
        ..TrainConfig::default()
    };
    let pipeline = train_corpus(&cfg, &corpus.scenes, &[], None).unwrap().losses;
    let direct = run_baseline(&cfg, &corpus.scenes).unwrap();
    let same = pipeline.len() == direct.len()
        && pipeline
            .iter()
            .zip(&direct)
            .all(|(p, d)| p.local.to_bits() == d.to_bits() && p.total.to_bits() == d.to_bits());
    Outcome {
        pass: same,
        detail: format!(
            "{} epochs compared bitwise, first {:.6} last {:.6}",
            direct.len(),
            direct.first().copied().unwrap_or(f64::NAN),
            direct.last().copied().unwrap_or(f64::NAN)
        ),
    }
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let corpus_dir = tmp.path().join("corpus");
    write_corpus(&small_corpus(16), &corpus_dir).unwrap();
    let cfg = TrainConfig {
        granularities: "12,8,4".parse().unwrap(),
        epochs: 4,
        recluster_every: 2,
        batch_scenes: 2,
        warmup_epochs: 2,
        hidden: vec![32],
        feature_dim: 16,
        s_prime: 8,
        lr0: 1e-3,
        seed: 3,
        ..TrainConfig::default()
    };
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        run_pipeline(&cfg, &corpus_dir, None, &out).unwrap();
        outputs.push(out);
    }
    let files = ["checkpoint.ltck", "report.tsv", "losses.tsv", "pred.ltlb", "bank_aligned.ltfm"];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(outputs[0].join(f)).unwrap() != std::fs::read(outputs[1].join(f)).unwrap())
        .collect();
    Outcome {
        pass: differing.is_empty(),
        detail: if differing.is_empty() {
            format!("{} output files byte-identical", files.len())
        } else {
            format!("differing: {}", differing.join(", "))
        },
    }
}

fn main() {
    let results = [
        run(1, "gradient suite", Duration::from_secs(10), gradient_suite),
        run(2, "Ward oracle", Duration::from_secs(30), ward_oracle),
        run(3, "Hungarian oracle", Duration::from_secs(10), hungarian_oracle),
        run(4, "spectral suite", Duration::from_secs(20), spectral_suite),
        run(5, "Gram alignment", Duration::from_secs(10), gram_alignment),
        run(6, "evaluation protocol", Duration::from_secs(5), evaluation_protocol),
        run(7, "long-tail rescue", Duration::from_secs(600), longtail_rescue),
        run(8, "baseline degeneracy", Duration::from_secs(120), baseline_degeneracy),
        run(9, "determinism", Duration::from_secs(300), determinism),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
