//! Hungarian-matched scoring of pseudo-class predictions, prototype transfer
//! and the per-class long-tail view.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::data::{write_file, FeatureMatrix, LabelVector};
use crate::error::{Error, Result};
use crate::spectral::l2_normalize_rows;
use crate::train::{concat_prototypes, ClusterModel};

/// Classes below this IoU count as absorbed by other classes.
pub const ABSORBED_IOU: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub n_pred: usize,
    pub n_gt: usize,
    /// Row-major `n_pred x n_gt`.
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_counts(n_pred: usize, n_gt: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != n_pred * n_gt {
            return Err(Error::Shape(format!("{} counts for {n_pred}x{n_gt}", counts.len())));
        }
        Ok(Self { n_pred, n_gt, counts })
    }

    pub fn get(&self, p: usize, g: usize) -> u64 {
        self.counts[p * self.n_gt + g]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn to_feature_matrix(&self) -> Result<FeatureMatrix> {
        FeatureMatrix::new(self.n_pred, self.n_gt, self.counts.iter().map(|&c| c as f32).collect())
    }
}

/// Tallies `(pred, gt)` pairs, skipping points whose ground truth is -1.
pub fn confusion(pred: &LabelVector, gt: &LabelVector) -> Result<ConfusionMatrix> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", pred.len(), gt.len())));
    }
    if let Some(i) = pred.as_slice().iter().position(|&p| p < 0) {
        return Err(Error::Data(format!("prediction {i} is unlabeled")));
    }
    let n_pred = pred.as_slice().iter().map(|&p| p as usize + 1).max().unwrap_or(0);
    let n_gt = gt.as_slice().iter().map(|&g| (g + 1).max(0) as usize).max().unwrap_or(0);
    let mut counts = vec![0u64; n_pred * n_gt];
    for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        if g >= 0 {
            counts[p as usize * n_gt + g as usize] += 1;
        }
    }
    Ok(ConfusionMatrix { n_pred, n_gt, counts })
}

/// A minimum-cost assignment; every row is matched when rows <= cols,
/// otherwise every column is.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub row_to_col: Vec<Option<usize>>,
    /// Sum of matched costs, accumulated in row order.
    pub cost: f64,
}

/// Minimum-cost assignment on a rectangular matrix. Among optimal
/// assignments, the one whose per-item choices on the smaller side (rows
/// when square) are lexicographically smallest is returned.
pub fn hungarian(cost: ArrayView2<'_, f64>) -> Result<Assignment> {
    if let Some(v) = cost.iter().find(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite cost {v}")));
    }
    let (r, c) = cost.dim();
    let transposed = r > c;
    let a = if transposed { cost.t().to_owned() } else { cost.to_owned() };
    let small_to_large = lexicographic_assignment(a.view());
    let mut row_to_col = vec![None; r];
    for (s, &l) in small_to_large.iter().enumerate() {
        if transposed {
            row_to_col[l] = Some(s);
        } else {
            row_to_col[s] = Some(l);
        }
    }
    let cost_sum = row_to_col.iter().enumerate().filter_map(|(i, j)| j.map(|j| cost[[i, j]])).sum();
    Ok(Assignment { row_to_col, cost: cost_sum })
}

/// Shortest-augmenting-path solver with potentials for `n <= m`. Returns the
/// column of each row together with the dual potentials.
fn solve_rect(a: ArrayView2<'_, f64>) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let (n, m) = a.dim();
    // 1-based with a virtual column 0, as in the classic formulation
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = a[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            row[p[j] - 1] = j - 1;
        }
    }
    (row, u[1..].to_vec(), v[1..].to_vec())
}

/// Optimal assignment for `n <= m`, lexicographically smallest among optima.
///
/// The matrix is padded with zero-cost rows to a square. With optimal duals,
/// the optimal assignments are exactly the perfect matchings on tight edges,
/// so real rows are fixed greedily to their smallest column that still
/// admits a perfect tight matching.
fn lexicographic_assignment(a: ArrayView2<'_, f64>) -> Vec<usize> {
    let (n, m) = a.dim();
    if n == 0 {
        return Vec::new();
    }
    let mut sq = Array2::zeros((m, m));
    sq.slice_mut(ndarray::s![..n, ..]).assign(&a);
    let (mut row_col, u, v) = solve_rect(sq.view());
    let scale = a.iter().fold(1.0f64, |s, x| s.max(x.abs()));
    let tol = 1e-12 * scale * (m as f64);
    let tight = |i: usize, j: usize| sq[[i, j]] - u[i] - v[j] <= tol;

    let mut col_row = vec![0usize; m];
    for (i, &j) in row_col.iter().enumerate() {
        col_row[j] = i;
    }
    let mut fixed = vec![false; m];
    for i in 0..n {
        for j in 0..m {
            if !tight(i, j) {
                continue;
            }
            if row_col[i] == j {
                break;
            }
            if let Some(moves) = reroute(i, j, &row_col, &col_row, &fixed, &tight) {
                for &(r, c) in &moves {
                    row_col[r] = c;
                    col_row[c] = r;
                }
                row_col[i] = j;
                col_row[j] = i;
                break;
            }
        }
        fixed[i] = true;
    }
    row_col.truncate(n);
    row_col
}

/// Moves letting row `i` take column `j` in a perfect matching: the owner of
/// `j` follows an alternating path of tight edges, avoiding fixed rows, that
/// ends in the column `i` gives up. Returns `(row, new column)` moves.
fn reroute(
    i: usize,
    j: usize,
    row_col: &[usize],
    col_row: &[usize],
    fixed: &[bool],
    tight: &dyn Fn(usize, usize) -> bool,
) -> Option<Vec<(usize, usize)>> {
    let released = row_col[i];
    let start = col_row[j];
    if fixed[start] {
        return None;
    }
    let m = col_row.len();
    // breadth-first over rows; parent[c] = row that would move into c
    let mut parent: Vec<Option<usize>> = vec![None; m];
    let mut seen_row = vec![false; m];
    seen_row[i] = true;
    seen_row[start] = true;
    let mut queue = std::collections::VecDeque::from([start]);
    while let Some(r) = queue.pop_front() {
        for c in 0..m {
            if c == j || c == row_col[r] || parent[c].is_some() || !tight(r, c) {
                continue;
            }
            parent[c] = Some(r);
            if c == released {
                let mut moves = Vec::new();
                let mut col = c;
                loop {
                    let row = parent[col].expect("on path");
                    moves.push((row, col));
                    if row == start {
                        return Some(moves);
                    }
                    col = row_col[row];
                }
            }
            let next = col_row[c];
            if !seen_row[next] && !fixed[next] {
                seen_row[next] = true;
                queue.push_back(next);
            }
        }
    }
    None
}

/// What happens to pseudo classes left over after one-to-one matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnmatchedMode {
    /// Map each to the ground-truth class it overlaps most.
    #[default]
    Merge,
    /// Leave them unmapped; their points count as misses.
    Drop,
}

impl std::str::FromStr for UnmatchedMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "merge" => Ok(Self::Merge),
            "drop" => Ok(Self::Drop),
            _ => Err(Error::Config(format!("unmatched mode must be merge or drop, got {s:?}"))),
        }
    }
}

impl std::fmt::Display for UnmatchedMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Merge => "merge",
            Self::Drop => "drop",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Ground-truth class of each pseudo class, if mapped.
    pub mapping: Vec<Option<usize>>,
    pub oa: f64,
    pub macc: f64,
    pub miou: f64,
    /// NaN for classes without ground-truth points.
    pub per_class_iou: Vec<f64>,
    pub per_class_recall: Vec<f64>,
    pub per_class_count: Vec<u64>,
}

pub fn match_and_score(cm: &ConfusionMatrix, mode: UnmatchedMode) -> Result<EvalReport> {
    let total = cm.total();
    if cm.n_pred == 0 || cm.n_gt == 0 || total == 0 {
        return Err(Error::EmptyBatch("nothing to score".into()));
    }
    let cost = Array2::from_shape_fn((cm.n_pred, cm.n_gt), |(p, g)| -(cm.get(p, g) as f64));
    let mut mapping = hungarian(cost.view())?.row_to_col;
    if mode == UnmatchedMode::Merge {
        for (p, m) in mapping.iter_mut().enumerate() {
            if m.is_none() {
                let best = (0..cm.n_gt).max_by(|&a, &b| cm.get(p, a).cmp(&cm.get(p, b)).then(b.cmp(&a)));
                *m = best.filter(|&g| cm.get(p, g) > 0);
            }
        }
    }
    Ok(score_mapping(cm, mapping))
}

/// Metrics for a fixed pseudo-to-ground-truth mapping.
pub fn score_mapping(cm: &ConfusionMatrix, mapping: Vec<Option<usize>>) -> EvalReport {
    assert_eq!(mapping.len(), cm.n_pred, "one mapping entry per pseudo class");
    let n_gt = cm.n_gt;
    let mut tp = vec![0u64; n_gt];
    let mut assigned = vec![0u64; n_gt];
    let mut count = vec![0u64; n_gt];
    for (p, m) in mapping.iter().enumerate() {
        for (g, c) in count.iter_mut().enumerate() {
            *c += cm.get(p, g);
        }
        if let Some(g) = *m {
            tp[g] += cm.get(p, g);
            assigned[g] += (0..n_gt).map(|h| cm.get(p, h)).sum::<u64>();
        }
    }
    let mut iou = vec![f64::NAN; n_gt];
    let mut recall = vec![f64::NAN; n_gt];
    for g in 0..n_gt {
        if count[g] > 0 {
            let fp = assigned[g] - tp[g];
            let fn_ = count[g] - tp[g];
            iou[g] = tp[g] as f64 / (tp[g] + fp + fn_) as f64;
            recall[g] = tp[g] as f64 / count[g] as f64;
        }
    }
    let mean = |v: &[f64]| {
        let present: Vec<f64> = v.iter().copied().filter(|x| !x.is_nan()).collect();
        present.iter().sum::<f64>() / present.len() as f64
    };
    EvalReport {
        oa: tp.iter().sum::<u64>() as f64 / cm.total() as f64,
        macc: mean(&recall),
        miou: mean(&iou),
        per_class_iou: iou,
        per_class_recall: recall,
        per_class_count: count,
        mapping,
    }
}

/// Labels each target row with the index of its most cosine-similar
/// prototype among all heads of `models`, concatenated in order.
pub fn prototype_transfer(models: &[&ClusterModel], target: ArrayView2<'_, f64>) -> Result<LabelVector> {
    let protos = concat_prototypes(models)?;
    if protos.ncols() != target.ncols() {
        return Err(Error::Shape(format!("prototypes have {} columns, targets {}", protos.ncols(), target.ncols())));
    }
    assign_to_prototypes(protos.view(), target)
}

/// Argmax cosine assignment; ties go to the lowest prototype index.
pub fn assign_to_prototypes(protos: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<LabelVector> {
    let p = l2_normalize_rows(protos);
    let t = l2_normalize_rows(target);
    let sims = t.dot(&p.t());
    let labels = sims
        .outer_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &s) in row.iter().enumerate() {
                if s > row[best] {
                    best = j;
                }
            }
            best as i32
        })
        .collect();
    LabelVector::new(labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailRow {
    pub class: usize,
    pub count: u64,
    pub iou: f64,
    pub recall: f64,
    pub absorbed: bool,
}

/// Classes with ground-truth points, most frequent first (ties by class id).
pub fn tail_report(report: &EvalReport) -> Vec<TailRow> {
    let mut rows: Vec<TailRow> = (0..report.per_class_count.len())
        .filter(|&c| report.per_class_count[c] > 0)
        .map(|c| TailRow {
            class: c,
            count: report.per_class_count[c],
            iou: report.per_class_iou[c],
            recall: report.per_class_recall[c],
            absorbed: report.per_class_iou[c] < ABSORBED_IOU,
        })
        .collect();
    rows.sort_by(|a, b| b.count.cmp(&a.count).then(a.class.cmp(&b.class)));
    rows
}

pub fn summary_line(report: &EvalReport) -> String {
    format!("OA={:.6} mAcc={:.6} mIoU={:.6}", report.oa, report.macc, report.miou)
}

/// `class \t count \t iou \t recall` in tail order, then `# ` and the summary.
pub fn render_report_tsv(report: &EvalReport) -> String {
    let mut out = Vec::new();
    writeln!(out, "class\tcount\tiou\trecall").unwrap();
    for r in tail_report(report) {
        writeln!(out, "{}\t{}\t{:.6}\t{:.6}", r.class, r.count, r.iou, r.recall).unwrap();
    }
    writeln!(out, "# {}", summary_line(report)).unwrap();
    String::from_utf8(out).unwrap()
}

pub fn write_report_tsv(path: impl AsRef<Path>, report: &EvalReport) -> Result<()> {
    write_file(path.as_ref(), render_report_tsv(report).as_bytes())
}

/// Tail view as `class \t count \t iou \t recall \t absorbed`, for plotting.
pub fn render_tail_tsv(report: &EvalReport) -> String {
    let mut out = String::from("class\tcount\tiou\trecall\tabsorbed\n");
    for r in tail_report(report) {
        out.push_str(&format!("{}\t{}\t{:.6}\t{:.6}\t{}\n", r.class, r.count, r.iou, r.recall, r.absorbed));
    }
    out
}
