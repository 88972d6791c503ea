//! K-means and Ward agglomerative clustering with multi-level cuts.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Row means per cluster. Clusters without members get a zero row.
pub fn cluster_means(x: ArrayView2<'_, f64>, labels: &[usize], k: usize) -> Array2<f64> {
    let mut sums = Array2::<f64>::zeros((k, x.ncols()));
    let mut counts = vec![0usize; k];
    for (row, &l) in x.outer_iter().zip(labels) {
        let mut acc = sums.row_mut(l);
        acc += &row;
        counts[l] += 1;
    }
    for (mut s, &c) in sums.outer_iter_mut().zip(&counts) {
        if c > 0 {
            s /= c as f64;
        }
    }
    sums
}

/// Index of the nearest row of `centroids`; ties go to the lowest index.
pub fn nearest_centroid(row: ArrayView1<'_, f64>, centroids: ArrayView2<'_, f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.outer_iter().enumerate() {
        let d = sq_dist(row, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct KMeans {
    pub centroids: Array2<f64>,
    pub assignments: Vec<usize>,
    /// Inertia after each assignment step.
    pub inertia_trace: Vec<f64>,
}

impl KMeans {
    pub fn inertia(&self) -> f64 {
        *self.inertia_trace.last().unwrap_or(&0.0)
    }
}

/// Lloyd's k-means with seeded farthest-point initialization.
pub fn kmeans(x: ArrayView2<'_, f64>, k: usize, seed: u64, max_iters: usize) -> Result<KMeans> {
    let n = x.nrows();
    if k == 0 || k > n {
        return Err(Error::Config(format!("k-means needs 1 <= k <= rows, got k={k}, rows={n}")));
    }
    if max_iters == 0 {
        return Err(Error::Config("k-means needs max_iters >= 1".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..n);
    let mut centroids = Array2::<f64>::zeros((k, x.ncols()));
    centroids.row_mut(0).assign(&x.row(first));
    let mut min_d: Vec<f64> = x.outer_iter().map(|r| sq_dist(r, x.row(first))).collect();
    for c in 1..k {
        let mut pick = 0;
        for i in 1..n {
            if min_d[i] > min_d[pick] {
                pick = i;
            }
        }
        centroids.row_mut(c).assign(&x.row(pick));
        for (i, r) in x.outer_iter().enumerate() {
            min_d[i] = min_d[i].min(sq_dist(r, x.row(pick)));
        }
    }

    let mut assignments = vec![usize::MAX; n];
    let mut inertia_trace = Vec::new();
    for _ in 0..max_iters {
        let mut inertia = 0.0;
        let mut changed = false;
        for (i, r) in x.outer_iter().enumerate() {
            let (j, d) = nearest_centroid(r, centroids.view());
            inertia += d;
            if assignments[i] != j {
                assignments[i] = j;
                changed = true;
            }
        }
        inertia_trace.push(inertia);
        if !changed {
            break;
        }
        centroids = cluster_means(x, &assignments, k);
        reseed_empty(x, &mut centroids, &mut assignments);
    }
    Ok(KMeans { centroids, assignments, inertia_trace })
}

/// Moves the point farthest from its centroid into each empty cluster.
fn reseed_empty(x: ArrayView2<'_, f64>, centroids: &mut Array2<f64>, assignments: &mut [usize]) {
    let k = centroids.nrows();
    let mut counts = vec![0usize; k];
    for &a in assignments.iter() {
        counts[a] += 1;
    }
    for e in 0..k {
        if counts[e] > 0 {
            continue;
        }
        let mut pick: Option<(usize, f64)> = None;
        for (i, r) in x.outer_iter().enumerate() {
            let a = assignments[i];
            if counts[a] < 2 {
                continue;
            }
            let d = sq_dist(r, centroids.row(a));
            if pick.is_none_or(|(_, best)| d > best) {
                pick = Some((i, d));
            }
        }
        let Some((i, _)) = pick else { return };
        let old = assignments[i];
        assignments[i] = e;
        counts[old] -= 1;
        counts[e] = 1;
        centroids.row_mut(e).assign(&x.row(i));
        let members: Vec<usize> = (0..assignments.len()).filter(|&p| assignments[p] == old).collect();
        let mut mean = centroids.row_mut(old);
        mean.fill(0.0);
        for &p in &members {
            mean += &x.row(p);
        }
        mean /= members.len() as f64;
    }
}

/// One agglomeration step. Leaves are nodes `0..n`; the merge at position
/// `s` creates node `n + s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    /// Increase in within-cluster sum of squares caused by this merge.
    pub cost: f64,
    pub new_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    n_leaves: usize,
    merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }
}

fn condensed_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i < j { (i, j) } else { (j, i) };
    n * i - i * (i + 1) / 2 + (j - i - 1)
}

/// Ward agglomeration via a nearest-neighbor chain with Lance–Williams updates.
///
/// Merge costs are the raw ESS increase `n_a n_b / (n_a + n_b) * |mu_a - mu_b|^2`.
/// Nearest-neighbor ties go to the lowest cluster id.
pub fn ward_tree(x: ArrayView2<'_, f64>) -> Result<Dendrogram> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::Config(format!("Ward clustering needs at least 2 rows, got {n}")));
    }
    let mut dist = vec![0.0f64; n * (n - 1) / 2];
    for i in 0..n {
        for j in i + 1..n {
            dist[condensed_index(n, i, j)] = 0.5 * sq_dist(x.row(i), x.row(j));
        }
    }

    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    // (representative slot a, slot b, cost); the merged cluster lives in slot a.
    let mut raw: Vec<(usize, usize, f64)> = Vec::with_capacity(n - 1);
    let mut chain: Vec<usize> = Vec::with_capacity(n);

    while raw.len() < n - 1 {
        if chain.is_empty() {
            chain.push(active.iter().position(|&a| a).unwrap());
        }
        let (a, b) = loop {
            let a = *chain.last().unwrap();
            let prev = if chain.len() >= 2 { Some(chain[chain.len() - 2]) } else { None };
            let mut best: Option<(usize, f64)> = prev.map(|p| (p, dist[condensed_index(n, a, p)]));
            for c in 0..n {
                if c == a || !active[c] {
                    continue;
                }
                let d = dist[condensed_index(n, a, c)];
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((c, d));
                }
            }
            let (b, _) = best.unwrap();
            if Some(b) == prev {
                chain.pop();
                chain.pop();
                break (a, b);
            }
            chain.push(b);
        };

        let (keep, drop) = if a < b { (a, b) } else { (b, a) };
        let cost = dist[condensed_index(n, a, b)];
        let (na, nb) = (size[keep] as f64, size[drop] as f64);
        for c in 0..n {
            if !active[c] || c == keep || c == drop {
                continue;
            }
            let nc = size[c] as f64;
            let dac = dist[condensed_index(n, keep, c)];
            let dbc = dist[condensed_index(n, drop, c)];
            dist[condensed_index(n, keep, c)] = ((na + nc) * dac + (nb + nc) * dbc - nc * cost) / (na + nb + nc);
        }
        size[keep] += size[drop];
        active[drop] = false;
        raw.push((keep, drop, cost));
    }

    // Stable sort keeps dependent merges after the ones they build on.
    raw.sort_by(|p, q| p.2.total_cmp(&q.2));

    let mut parent: Vec<usize> = (0..n).collect();
    let mut node_of_root: Vec<usize> = (0..n).collect();
    let mut node_size = vec![1usize; n];
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut merges = Vec::with_capacity(n - 1);
    for (step, &(a, b, cost)) in raw.iter().enumerate() {
        let ra = find(&mut parent, a);
        let rb = find(&mut parent, b);
        let (na, nb) = (node_of_root[ra], node_of_root[rb]);
        let new_size = node_size[ra] + node_size[rb];
        parent[rb] = ra;
        node_of_root[ra] = n + step;
        node_size[ra] = new_size;
        merges.push(Merge { left: na.min(nb), right: na.max(nb), cost: cost.max(0.0), new_size });
    }
    Ok(Dendrogram { n_leaves: n, merges })
}

/// Labels after applying the first `n_leaves - k` merges. Labels are dense
/// and numbered by the lowest leaf index in each cluster.
pub fn cut_tree(d: &Dendrogram, k: usize) -> Result<Vec<usize>> {
    let n = d.n_leaves;
    if k == 0 || k > n {
        return Err(Error::Config(format!("cut level k={k} outside 1..={n}")));
    }
    let mut parent: Vec<usize> = (0..2 * n - 1).collect();
    for (step, m) in d.merges.iter().take(n - k).enumerate() {
        parent[m.left] = n + step;
        parent[m.right] = n + step;
    }
    let mut label_of_root = vec![usize::MAX; 2 * n - 1];
    let mut next = 0;
    let mut labels = Vec::with_capacity(n);
    for leaf in 0..n {
        let mut r = leaf;
        while parent[r] != r {
            r = parent[r];
        }
        if label_of_root[r] == usize::MAX {
            label_of_root[r] = next;
            next += 1;
        }
        labels.push(label_of_root[r]);
    }
    Ok(labels)
}

/// Strictly descending list of cluster counts; the last entry is the
/// primitive-level count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GranularitySet(Vec<usize>);

impl GranularitySet {
    pub fn new(levels: Vec<usize>) -> Result<Self> {
        if levels.is_empty() || levels.contains(&0) {
            return Err(Error::Config(format!("invalid granularity set {levels:?}")));
        }
        if levels.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::Config(format!("granularities must be strictly descending: {levels:?}")));
        }
        Ok(Self(levels))
    }

    pub fn levels(&self) -> &[usize] {
        &self.0
    }

    pub fn finest(&self) -> usize {
        self.0[0]
    }

    pub fn k_prim(&self) -> usize {
        *self.0.last().unwrap()
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }
}

impl std::fmt::Display for GranularitySet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|k| k.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

impl std::str::FromStr for GranularitySet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let levels = s
            .split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad granularity entry {p:?}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(levels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GranularityLevel {
    pub k: usize,
    pub centroids: Array2<f64>,
    pub labels: Vec<usize>,
}

/// One Ward tree, one cut per level; centroids are cluster means.
pub fn multi_granularity_labels(x: ArrayView2<'_, f64>, g: &GranularitySet) -> Result<Vec<GranularityLevel>> {
    if g.finest() > x.nrows() {
        return Err(Error::Config(format!("finest granularity {} exceeds {} rows", g.finest(), x.nrows())));
    }
    if x.nrows() == 1 {
        return Ok(vec![GranularityLevel { k: 1, centroids: x.to_owned(), labels: vec![0] }]);
    }
    let tree = ward_tree(x)?;
    g.levels()
        .iter()
        .map(|&k| {
            let labels = cut_tree(&tree, k)?;
            Ok(GranularityLevel { k, centroids: cluster_means(x, &labels, k), labels })
        })
        .collect()
}

/// Like [`multi_granularity_labels`], but builds the tree on at most `cap`
/// uniformly sampled rows. Held-out rows join the nearest finest-level
/// centroid and inherit the coarser labels of that cluster, so nesting holds.
pub fn multi_granularity_labels_capped(
    x: ArrayView2<'_, f64>,
    g: &GranularitySet,
    cap: usize,
    seed: u64,
) -> Result<Vec<GranularityLevel>> {
    let n = x.nrows();
    if n <= cap {
        return multi_granularity_labels(x, g);
    }
    if g.finest() > cap {
        return Err(Error::Config(format!("finest granularity {} exceeds sampling cap {cap}", g.finest())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = index::sample(&mut rng, n, cap).into_vec();
    sample.sort_unstable();
    let xs = Array2::from_shape_fn((cap, x.ncols()), |(r, c)| x[[sample[r], c]]);
    let levels = multi_granularity_labels(xs.view(), g)?;

    let fine = &levels[0];
    let mut in_sample = vec![None; n];
    for (pos, &row) in sample.iter().enumerate() {
        in_sample[row] = Some(pos);
    }
    let fine_of_row: Vec<usize> = (0..n)
        .map(|row| match in_sample[row] {
            Some(pos) => fine.labels[pos],
            None => nearest_centroid(x.row(row), fine.centroids.view()).0,
        })
        .collect();

    levels
        .iter()
        .map(|level| {
            let mut coarse_of_fine = vec![0usize; fine.k];
            for (pos, &f) in fine.labels.iter().enumerate() {
                coarse_of_fine[f] = level.labels[pos];
            }
            let labels: Vec<usize> = fine_of_row.iter().map(|&f| coarse_of_fine[f]).collect();
            Ok(GranularityLevel { k: level.k, centroids: cluster_means(x, &labels, level.k), labels })
        })
        .collect()
}
