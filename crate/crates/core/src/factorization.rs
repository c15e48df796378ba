//! Nonnegative matrix factorization by multiplicative updates, and the
//! sparse-NMF clusterer that splits latent units into two groups.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Added to every multiplicative-update denominator.
pub const EPS_MU: f64 = 1e-12;
pub const DEFAULT_FACTOR_SEED: u64 = 17;

#[derive(Debug, Clone, PartialEq)]
pub struct NmfConfig {
    pub rank: usize,
    pub max_iters: usize,
    /// Stop once the relative objective improvement of an iteration falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for NmfConfig {
    fn default() -> Self {
        Self { rank: 20, max_iters: 500, tol: 1e-6, seed: DEFAULT_FACTOR_SEED }
    }
}

/// `V ≈ W H` with `W: F x A`, `H: A x N`.
#[derive(Debug, Clone, PartialEq)]
pub struct NmfFactors {
    pub w: Array2<f64>,
    pub h: Array2<f64>,
    /// Objective before the first update, then after each iteration.
    pub loss_history: Vec<f64>,
}

impl NmfFactors {
    pub fn rank(&self) -> usize {
        self.w.ncols()
    }

    pub fn reconstruction(&self) -> Array2<f64> {
        self.w.dot(&self.h)
    }
}

fn check_nonnegative(v: &ArrayView2<f64>) -> Result<()> {
    match v.indexed_iter().find(|(_, x)| !(x.is_finite() && **x >= 0.0)) {
        Some(((row, col), _)) => Err(Error::NotNonnegative { row, col }),
        None => Ok(()),
    }
}

fn random_factors(rows: usize, cols: usize, rank: usize, scale: f64, seed: u64) -> (Array2<f64>, Array2<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Array2::from_shape_fn((rows, rank), |_| scale * rng.random_range(0.01..1.0));
    let h = Array2::from_shape_fn((rank, cols), |_| scale * rng.random_range(0.01..1.0));
    (w, h)
}

// The products below stream over rows of a row-major V; with the thin factors
// used here this is faster than a general GEMM.

/// `Wᵀ V` as `A x N`.
fn wt_v(w: &Array2<f64>, v: &ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((w.ncols(), v.ncols()));
    for (wrow, vrow) in w.rows().into_iter().zip(v.rows()) {
        let vrow = vrow.as_slice().expect("row-major V");
        for (k, &coef) in wrow.iter().enumerate() {
            if coef != 0.0 {
                let mut acc = out.row_mut(k);
                let acc = acc.as_slice_mut().expect("contiguous");
                acc.iter_mut().zip(vrow).for_each(|(a, &x)| *a += coef * x);
            }
        }
    }
    out
}

/// `V Hᵀ` as `F x A`.
fn v_ht(v: &ArrayView2<f64>, h: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((v.nrows(), h.nrows()));
    for (vrow, mut orow) in v.rows().into_iter().zip(out.rows_mut()) {
        let vrow = vrow.as_slice().expect("row-major V");
        for (o, hrow) in orow.iter_mut().zip(h.rows()) {
            let hrow = hrow.as_slice().expect("contiguous");
            *o = vrow.iter().zip(hrow).map(|(a, b)| a * b).sum();
        }
    }
    out
}

/// `‖V − WH‖²_F + λ‖H‖₁`.
fn objective(v: &ArrayView2<f64>, w: &Array2<f64>, h: &Array2<f64>, l1: f64) -> f64 {
    let mut approx = vec![0.0; v.ncols()];
    let mut fit = 0.0;
    for (wrow, vrow) in w.rows().into_iter().zip(v.rows()) {
        approx.fill(0.0);
        for (&coef, hrow) in wrow.iter().zip(h.rows()) {
            let hrow = hrow.as_slice().expect("contiguous");
            approx.iter_mut().zip(hrow).for_each(|(a, &x)| *a += coef * x);
        }
        let vrow = vrow.as_slice().expect("row-major V");
        fit += vrow.iter().zip(&approx).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    fit + l1 * h.sum()
}

/// Runs Lee–Seung Euclidean updates (H, then W) with an optional L1 penalty on H.
///
/// `v` must be in standard (row-major) layout.
fn multiplicative_updates(
    v: &ArrayView2<f64>,
    w: &mut Array2<f64>,
    h: &mut Array2<f64>,
    l1: f64,
    max_iters: usize,
    tol: f64,
) -> Vec<f64> {
    let mut history = vec![objective(v, w, h, l1)];
    let half_l1 = 0.5 * l1;
    for _ in 0..max_iters {
        let num_h = wt_v(w, v);
        let den_h = w.t().dot(w).dot(&*h);
        ndarray::Zip::from(&mut *h).and(&num_h).and(&den_h).for_each(|x, &n, &d| *x *= n / (d + half_l1 + EPS_MU));

        let num_w = v_ht(v, h);
        let den_w = w.dot(&h.dot(&h.t()));
        ndarray::Zip::from(&mut *w).and(&num_w).and(&den_w).for_each(|x, &n, &d| *x *= n / (d + EPS_MU));

        let loss = objective(v, w, h, l1);
        let prev = *history.last().expect("non-empty history");
        history.push(loss);
        if prev <= 0.0 || (prev - loss) / prev < tol {
            break;
        }
    }
    history
}

/// Factorizes a nonnegative `F x N` matrix with rank `config.rank`, minimizing `‖V − WH‖²_F`.
pub fn nmf(v: ArrayView2<f64>, config: &NmfConfig) -> Result<NmfFactors> {
    check_nonnegative(&v)?;
    let (rows, cols) = v.dim();
    if config.rank == 0 || config.rank > rows.min(cols) {
        return Err(Error::InvalidRank { rank: config.rank, rows, cols });
    }
    let mean = v.mean().unwrap_or(0.0);
    let scale = (mean / config.rank as f64).sqrt().max(1e-6);
    let (mut w, mut h) = random_factors(rows, cols, config.rank, scale, config.seed);
    let v = v.as_standard_layout();
    let loss_history = multiplicative_updates(&v.view(), &mut w, &mut h, 0.0, config.max_iters, config.tol);
    Ok(NmfFactors { w, h, loss_history })
}

// ---------------------------------------------------------------------------
// Clustering
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Cluster(usize),
    /// Uninformative unit, kept in every source.
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Heart,
    Lung,
    Shared,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Heart => "heart",
            Role::Lung => "lung",
            Role::Shared => "shared",
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub k: usize,
    pub lambda: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { k: 2, lambda: 0.1, max_iters: 500, tol: 1e-7, seed: DEFAULT_FACTOR_SEED }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<Label>,
    pub k: usize,
    /// `k x M` membership scores; zero columns for shared rows.
    pub membership: Array2<f64>,
    /// Clustering objective history.
    pub loss_history: Vec<f64>,
    /// Modulation centroid (Hz) per cluster, filled by [`assign_cluster_roles`].
    pub centroid_freq: Vec<f64>,
    pub heart_cluster: Option<usize>,
}

impl ClusterAssignment {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn cluster_size(&self, cluster: usize) -> usize {
        self.labels.iter().filter(|&&l| l == Label::Cluster(cluster)).count()
    }

    pub fn shared_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == Label::Shared).count()
    }

    /// Source role of unit `j`. Before roles are assigned, cluster 0 reads as heart.
    pub fn role(&self, j: usize) -> Role {
        let heart = self.heart_cluster.unwrap_or(0);
        match self.labels[j] {
            Label::Shared => Role::Shared,
            Label::Cluster(c) if c == heart => Role::Heart,
            Label::Cluster(_) => Role::Lung,
        }
    }

    pub fn roles(&self) -> Vec<Role> {
        (0..self.labels.len()).map(|j| self.role(j)).collect()
    }

    pub fn role_count(&self, role: Role) -> usize {
        self.roles().into_iter().filter(|&r| r == role).count()
    }

    /// Centroid of the cluster playing `role`, when roles are assigned.
    pub fn role_centroid(&self, role: Role) -> Option<f64> {
        let heart = self.heart_cluster?;
        let idx = match role {
            Role::Heart => heart,
            Role::Lung => 1 - heart.min(1),
            Role::Shared => return None,
        };
        self.centroid_freq.get(idx).copied()
    }
}

/// Rows treated as informative: not constant and not negligible next to the strongest row.
pub fn informative_rows(p: &ArrayView2<f64>) -> Vec<bool> {
    let norms: Vec<f64> = p.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let max_norm = norms.iter().copied().fold(0.0, f64::max);
    p.rows()
        .into_iter()
        .zip(&norms)
        .map(|(row, &norm)| {
            let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            hi > lo && norm > 1e-12 * max_norm
        })
        .collect()
}

/// Clusters the rows of `P` (`M x D`) by sparse NMF of `Pᵀ`.
///
/// `Pᵀ` (informative rows only) is scaled to unit Frobenius norm, then
/// `‖Pᵀ − W H‖²_F + λ‖H‖₁` is minimized; each row goes to the cluster with the
/// largest membership score, ties toward the lower index. An empty cluster
/// takes the row whose score ratio toward it is largest.
pub fn sparse_nmf_cluster(p: ArrayView2<f64>, config: &ClusterConfig) -> Result<ClusterAssignment> {
    check_nonnegative(&p)?;
    let informative = informative_rows(&p);
    let idx: Vec<usize> = (0..p.nrows()).filter(|&j| informative[j]).collect();
    if config.k == 0 || config.k > idx.len() {
        return Err(Error::TooFewInformativeRows { clusters: config.k, informative: idx.len() });
    }
    if config.k > p.ncols() {
        return Err(Error::InvalidRank { rank: config.k, rows: p.ncols(), cols: idx.len() });
    }
    let mut v = p.select(Axis(0), &idx).reversed_axes().as_standard_layout().into_owned();
    let fro = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v /= fro;

    let scale = (v.mean().unwrap_or(0.0) / config.k as f64).sqrt().max(1e-6);
    let (mut w, mut h) = random_factors(v.nrows(), v.ncols(), config.k, scale, config.seed);
    let distinct = seed_centroids(&v, &mut w);
    let loss_history = multiplicative_updates(&v.view(), &mut w, &mut h, config.lambda, config.max_iters, config.tol);

    // Rows that all point the same way carry no grouping: they share cluster 0
    // and the empty-cluster fallback splits one off.
    let mut local: Vec<usize> = if distinct > 1 {
        h.columns().into_iter().map(|col| argmax_low(col.iter().copied())).collect()
    } else {
        vec![0; idx.len()]
    };
    fill_empty_clusters(&h, &mut local, config.k);

    let mut labels = vec![Label::Shared; p.nrows()];
    let mut membership = Array2::zeros((config.k, p.nrows()));
    for (pos, &j) in idx.iter().enumerate() {
        labels[j] = Label::Cluster(local[pos]);
        membership.column_mut(j).assign(&h.column(pos));
    }
    Ok(ClusterAssignment {
        labels,
        k: config.k,
        membership,
        loss_history,
        centroid_freq: Vec::new(),
        heart_cluster: None,
    })
}

/// Starts each centroid at a data column: the strongest column first, then
/// repeatedly the column least similar (by cosine) to those already chosen.
/// The random init is kept as a small floor so no entry starts at zero.
/// Centroids with no distinct column to start from keep their random init.
/// Returns how many centroids were seeded from data.
fn seed_centroids(v: &Array2<f64>, w: &mut Array2<f64>) -> usize {
    let norms: Vec<f64> = v.columns().into_iter().map(|c| c.dot(&c).sqrt()).collect();
    let cosine = |a: usize, b: usize| v.column(a).dot(&v.column(b)) / (norms[a] * norms[b]).max(f64::MIN_POSITIVE);
    let mut chosen = vec![argmax_low(norms.iter().copied())];
    while chosen.len() < w.ncols() {
        let closeness: Vec<f64> = (0..v.ncols())
            .map(|j| chosen.iter().map(|&c| cosine(j, c)).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let next = argmax_low(closeness.iter().map(|c| -c));
        // Nothing distinct left: the remaining centroids stay random.
        if closeness[next] > 1.0 - 1e-9 {
            break;
        }
        chosen.push(next);
    }
    for (c, &j) in chosen.iter().enumerate() {
        let mut col = w.column_mut(c);
        col *= 0.01;
        col += &v.column(j);
    }
    chosen.len()
}

fn argmax_low(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn fill_empty_clusters(h: &Array2<f64>, labels: &mut [usize], k: usize) {
    for target in 0..k {
        if labels.contains(&target) {
            continue;
        }
        let mut sizes = vec![0usize; k];
        labels.iter().for_each(|&l| sizes[l] += 1);
        let mut best: Option<(usize, f64)> = None;
        for (j, &l) in labels.iter().enumerate() {
            if sizes[l] <= 1 {
                continue;
            }
            let ratio = h[[target, j]] / (h[[l, j]] + EPS_MU);
            if best.is_none_or(|(_, r)| ratio > r) {
                best = Some((j, ratio));
            }
        }
        if let Some((j, _)) = best {
            labels[j] = target;
        }
    }
}

/// Spectral centroid (Hz) of a modulation spectrum, DC column excluded.
pub fn modulation_centroid(spectrum: &[f64], freq_axis: &[f64]) -> f64 {
    let (num, den) = spectrum
        .iter()
        .zip(freq_axis)
        .skip(1)
        .fold((0.0, 0.0), |(n, d), (&m, &f)| (n + f * m, d + m));
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn peak_frequency(spectrum: &[f64], freq_axis: &[f64]) -> f64 {
    let i = argmax_low(spectrum.iter().skip(1).copied()) + 1;
    freq_axis.get(i).copied().unwrap_or(0.0)
}

/// Names the cluster whose mean modulation spectrum has the larger centroid "heart".
///
/// Ties go to the larger peak frequency, then to cluster 0.
pub fn assign_cluster_roles(p: ArrayView2<f64>, freq_axis: &[f64], assignment: &mut ClusterAssignment) -> Result<()> {
    if p.nrows() != assignment.len() || p.ncols() != freq_axis.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} x {}", assignment.len(), freq_axis.len()),
            actual: format!("{} x {}", p.nrows(), p.ncols()),
        });
    }
    let k = assignment.k;
    if (0..k).any(|c| assignment.cluster_size(c) == 0) || k != 2 {
        return Err(Error::TooFewInformativeRows { clusters: 2, informative: assignment.len() - assignment.shared_count() });
    }
    let mut means = vec![Array1::<f64>::zeros(p.ncols()); k];
    for (j, label) in assignment.labels.iter().enumerate() {
        if let Label::Cluster(c) = label {
            means[*c] += &p.row(j);
        }
    }
    for (c, m) in means.iter_mut().enumerate() {
        *m /= assignment.cluster_size(c) as f64;
    }
    let centroids: Vec<f64> = means.iter().map(|m| modulation_centroid(m.as_slice().expect("contiguous"), freq_axis)).collect();
    let scale = centroids[0].abs().max(centroids[1].abs()).max(f64::MIN_POSITIVE);
    let heart = if (centroids[0] - centroids[1]).abs() > 1e-12 * scale {
        if centroids[1] > centroids[0] { 1 } else { 0 }
    } else {
        let peaks: Vec<f64> = means.iter().map(|m| peak_frequency(m.as_slice().expect("contiguous"), freq_axis)).collect();
        if peaks[1] > peaks[0] { 1 } else { 0 }
    };
    assignment.centroid_freq = centroids;
    assignment.heart_cluster = Some(heart);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_fro(a: &Array2<f64>, b: &ArrayView2<f64>) -> f64 {
        let num: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn rank_one_recovery() {
        let w: Vec<f64> = (0..12).map(|i| 0.5 + i as f64 * 0.1).collect();
        let h: Vec<f64> = (0..30).map(|j| 1.0 + (j as f64 * 0.7).sin().abs()).collect();
        let v = Array2::from_shape_fn((12, 30), |(i, j)| w[i] * h[j]);
        let cfg = NmfConfig { rank: 1, max_iters: 2000, tol: 0.0, ..Default::default() };
        let f = nmf(v.view(), &cfg).unwrap();
        assert!(rel_fro(&f.reconstruction(), &v.view()) <= 1e-4);
    }

    #[test]
    fn identity_plus_offset_improves() {
        let v = Array2::from_shape_fn((4, 4), |(i, j)| if i == j { 1.01 } else { 0.01 });
        let cfg = NmfConfig { rank: 4, max_iters: 500, tol: 0.0, ..Default::default() };
        let f = nmf(v.view(), &cfg).unwrap();
        let first = f.loss_history[0];
        let last = *f.loss_history.last().unwrap();
        assert!(first >= 100.0 * last, "{first} vs {last}");
    }

    #[test]
    fn rejects_negative_and_bad_rank() {
        let mut v = Array2::from_elem((3, 3), 1.0);
        assert!(matches!(nmf(v.view(), &NmfConfig { rank: 4, ..Default::default() }), Err(Error::InvalidRank { .. })));
        v[[1, 2]] = -0.5;
        assert!(matches!(nmf(v.view(), &NmfConfig { rank: 1, ..Default::default() }), Err(Error::NotNonnegative { row: 1, col: 2 })));
    }

    #[test]
    fn orthogonal_one_hot_rows_split() {
        let p = ndarray::array![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let cfg = ClusterConfig { lambda: 0.0, ..Default::default() };
        let a = sparse_nmf_cluster(p.view(), &cfg).unwrap();
        assert_ne!(a.labels[0], a.labels[1]);
        assert!(a.labels.iter().all(|l| matches!(l, Label::Cluster(_))));
    }

    #[test]
    fn identical_rows_fall_back_to_split() {
        let p = Array2::from_shape_fn((6, 5), |(_, d)| d as f64 + 1.0);
        let a = sparse_nmf_cluster(p.view(), &ClusterConfig::default()).unwrap();
        assert_eq!(a.cluster_size(0) + a.cluster_size(1), 6);
        assert_eq!(a.cluster_size(0).min(a.cluster_size(1)), 1);
    }

    #[test]
    fn constant_rows_are_shared_and_too_few_rows_error() {
        let p = ndarray::array![[0.0, 0.0, 0.0], [2.0, 2.0, 2.0], [1.0, 0.0, 3.0], [0.0, 4.0, 0.0]];
        let a = sparse_nmf_cluster(p.view(), &ClusterConfig::default()).unwrap();
        assert_eq!(a.labels[0], Label::Shared);
        assert_eq!(a.labels[1], Label::Shared);
        assert_ne!(a.labels[2], a.labels[3]);

        let dead = Array2::<f64>::zeros((5, 4));
        assert!(matches!(
            sparse_nmf_cluster(dead.view(), &ClusterConfig::default()),
            Err(Error::TooFewInformativeRows { informative: 0, .. })
        ));
    }

    fn axis(d: usize) -> Vec<f64> {
        (0..d).map(|i| i as f64 * 31.25 / (d - 1) as f64).collect()
    }

    fn two_cluster(labels: &[usize]) -> ClusterAssignment {
        ClusterAssignment {
            labels: labels.iter().map(|&c| Label::Cluster(c)).collect(),
            k: 2,
            membership: Array2::zeros((2, labels.len())),
            loss_history: vec![],
            centroid_freq: vec![],
            heart_cluster: None,
        }
    }

    #[test]
    fn roles_follow_centroid() {
        let d = 32;
        let mut p = Array2::zeros((2, d));
        p[[0, 3]] = 1.0;
        p[[1, 30]] = 1.0;
        let mut a = two_cluster(&[0, 1]);
        assign_cluster_roles(p.view(), &axis(d), &mut a).unwrap();
        assert_eq!(a.heart_cluster, Some(1));
        assert_eq!(a.role(1), Role::Heart);
        assert_eq!(a.role(0), Role::Lung);
    }

    #[test]
    fn roles_peak_ordering_and_tie() {
        // 1.2 Hz vs 0.25 Hz peaks on a 62.5 Hz / 500-frame modulation axis.
        let d = 251;
        let freq: Vec<f64> = (0..d).map(|i| i as f64 * 62.5 / 500.0).collect();
        let mut p = Array2::zeros((2, d));
        p[[0, 2]] = 1.0; // 0.25 Hz
        p[[1, 10]] = 1.0; // 1.25 Hz
        let mut a = two_cluster(&[1, 0]);
        assign_cluster_roles(p.view(), &freq, &mut a).unwrap();
        assert_eq!(a.role(1), Role::Heart);

        let same = Array2::from_elem((2, d), 0.5);
        let mut a = two_cluster(&[0, 1]);
        assign_cluster_roles(same.view(), &freq, &mut a).unwrap();
        assert_eq!(a.heart_cluster, Some(0));
    }

    #[test]
    fn prototype_family_is_partitioned() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 40;
        let proto_a: Vec<f64> = (0..d).map(|i| if (2..8).contains(&i) { 1.0 } else { 0.0 }).collect();
        let proto_b: Vec<f64> = (0..d).map(|i| if (20..30).contains(&i) { 1.0 } else { 0.0 }).collect();
        let truth: Vec<usize> = (0..30).map(|j| (j * 7 % 3 == 0) as usize).collect();
        let p = Array2::from_shape_fn((30, d), |(j, i)| {
            let proto = if truth[j] == 0 { &proto_a } else { &proto_b };
            let alpha = 0.5 + (j as f64 * 0.37).fract();
            (alpha * proto[i] + rng.random_range(0.0..0.002)).max(0.0)
        });
        let a = sparse_nmf_cluster(p.view(), &ClusterConfig::default()).unwrap();
        let first = a.labels[0];
        for (j, &t) in truth.iter().enumerate() {
            assert_eq!(a.labels[j] == first, t == truth[0], "row {j}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig, Strategy};
        use rand::Rng;

        fn nonneg_matrix() -> impl Strategy<Value = Array2<f64>> {
            (2usize..12, 2usize..12, any::<u64>()).prop_map(|(r, c, seed)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Array2::from_shape_fn((r, c), |_| rng.random_range(0.0..5.0))
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn nmf_objective_never_increases(v in nonneg_matrix(), seed in any::<u64>()) {
                let rank = 1 + (seed as usize) % v.nrows().min(v.ncols());
                let f = nmf(v.view(), &NmfConfig { rank, max_iters: 200, tol: 0.0, seed }).unwrap();
                for pair in f.loss_history.windows(2) {
                    prop_assert!(pair[1] <= pair[0] + 1e-9);
                }
                prop_assert!(f.w.iter().chain(f.h.iter()).all(|x| *x >= 0.0 && x.is_finite()));
            }

            #[test]
            fn sparse_objective_never_increases(v in nonneg_matrix(), lambda in 0.0f64..1.0) {
                let cfg = ClusterConfig { lambda, max_iters: 200, tol: 0.0, ..Default::default() };
                if let Ok(a) = sparse_nmf_cluster(v.view(), &cfg) {
                    for pair in a.loss_history.windows(2) {
                        prop_assert!(pair[1] <= pair[0] + 1e-9);
                    }
                }
            }

            #[test]
            fn row_permutation_permutes_labels(seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let d = 24;
                let p = Array2::from_shape_fn((12, d), |(j, i)| {
                    let on = if j % 2 == 0 { i < 6 } else { (12..18).contains(&i) };
                    (if on { 1.0 } else { 0.0 }) * (0.5 + rng.random_range(0.0..1.0)) + rng.random_range(0.0..0.01)
                });
                let perm: Vec<usize> = (0..12).rev().collect();
                let cfg = ClusterConfig { lambda: 0.0, ..Default::default() };
                let a = sparse_nmf_cluster(p.view(), &cfg).unwrap();
                let b = sparse_nmf_cluster(p.select(Axis(0), &perm).view(), &cfg).unwrap();
                for (pos, &j) in perm.iter().enumerate() {
                    for (pos2, &j2) in perm.iter().enumerate() {
                        prop_assert_eq!(a.labels[j] == a.labels[j2], b.labels[pos] == b.labels[pos2]);
                    }
                }
            }

            #[test]
            fn row_scaling_keeps_label(seed in any::<u64>(), alpha in 0.2f64..5.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let d = 24;
                let p = Array2::from_shape_fn((10, d), |(j, i)| {
                    let on = if j % 2 == 0 { i < 6 } else { (12..18).contains(&i) };
                    (if on { 1.0 } else { 0.0 }) * (0.5 + rng.random_range(0.0..1.0)) + rng.random_range(0.0..0.01)
                });
                let mut scaled = p.clone();
                scaled.row_mut(3).mapv_inplace(|x| x * alpha);
                let cfg = ClusterConfig { lambda: 0.0, ..Default::default() };
                let a = sparse_nmf_cluster(p.view(), &cfg).unwrap();
                let b = sparse_nmf_cluster(scaled.view(), &cfg).unwrap();
                for j in 0..10 {
                    prop_assert_eq!(a.labels[3] == a.labels[j], b.labels[3] == b.labels[j]);
                }
            }
        }
    }
}
