use nalgebra::DMatrix;
use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{check_len, Error, Result};

/// Largest sample the median heuristic looks at.
pub const MEDIAN_SUBSAMPLE: usize = 2000;
pub const MEDIAN_SUBSAMPLE_SEED: u64 = 0x6d65_6469_616e;

const PERMUTATIONS: usize = 1000;
const PERMUTATION_SEED: u64 = 0x7065_726d;

/// Exponentiated quadratic kernel `k(a, b) = exp(−‖a − b‖² / (2 h²))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "kernel bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(Self { bandwidth })
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        (-d2 / (2.0 * self.bandwidth * self.bandwidth)).exp()
    }

    /// Kernel matrix between the rows of `x` and the rows of `y`.
    pub fn gram(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
        let xr = rows(x);
        let yr = rows(y);
        DMatrix::from_fn(xr.len(), yr.len(), |i, j| self.eval(&xr[i], &yr[j]))
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Median pairwise Euclidean distance over distinct pairs. Inputs larger than
/// [`MEDIAN_SUBSAMPLE`] rows are subsampled with a fixed seed.
pub fn median_heuristic(z: &DMatrix<f64>) -> Result<f64> {
    if z.nrows() < 2 {
        return Err(Error::InvalidArgument(
            "median heuristic needs at least two points".into(),
        ));
    }
    let mut pts = rows(z);
    if pts.len() > MEDIAN_SUBSAMPLE {
        let mut rng = ChaCha8Rng::seed_from_u64(MEDIAN_SUBSAMPLE_SEED);
        let idx = sample_indices(&mut rng, pts.len(), MEDIAN_SUBSAMPLE);
        pts = idx.iter().map(|i| pts[i].clone()).collect();
    }
    let mut d = Vec::with_capacity(pts.len() * (pts.len() - 1) / 2);
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let d2: f64 = pts[i]
                .iter()
                .zip(&pts[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d.push(d2.sqrt());
        }
    }
    let m = d.len();
    let (_, hi, _) = d.select_nth_unstable_by(m / 2, f64::total_cmp);
    let hi = *hi;
    let median = if m % 2 == 1 {
        hi
    } else {
        let lo = d[..m / 2].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    };
    if !(median > 0.0) {
        return Err(Error::InvalidArgument(
            "median pairwise distance is zero (points identical)".into(),
        ));
    }
    Ok(median)
}

fn offdiag_mean(k: &DMatrix<f64>) -> f64 {
    let n = k.nrows();
    (k.sum() - k.trace()) / (n * (n - 1)) as f64
}

/// Unbiased MMD² U-statistic; self-pairs are excluded from the within-sample
/// terms.
pub fn mmd2_unbiased(x: &DMatrix<f64>, y: &DMatrix<f64>, kernel: &KernelSpec) -> Result<f64> {
    if x.nrows() < 2 || y.nrows() < 2 {
        return Err(Error::InvalidArgument(
            "MMD needs at least two samples per set".into(),
        ));
    }
    check_len("sample dimension", x.ncols(), y.ncols())?;
    let kxx = kernel.gram(x, x);
    let kyy = kernel.gram(y, y);
    let kxy = kernel.gram(x, y);
    Ok(offdiag_mean(&kxx) + offdiag_mean(&kyy) - 2.0 * kxy.mean())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    Asymptotic,
    Permutation,
}

/// Outcome of a relative MMD test. Small `p_value` means `Y` is
/// significantly closer to the reference than `Z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmdReport {
    /// Reference sample count.
    pub n: usize,
    pub n_y: usize,
    pub n_z: usize,
    pub bandwidth: f64,
    pub mmd2_xy: f64,
    pub mmd2_xz: f64,
    /// `mmd2_xy − mmd2_xz`.
    pub statistic: f64,
    pub p_value: f64,
    pub method: TestMethod,
}

struct Kernels {
    kyy: DMatrix<f64>,
    kzz: DMatrix<f64>,
    kxy: DMatrix<f64>,
    kxz: DMatrix<f64>,
    kxx_mean: f64,
}

fn kernels(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    z: &DMatrix<f64>,
    k: &KernelSpec,
) -> Result<Kernels> {
    for (name, m) in [("reference", x), ("Y", y), ("Z", z)] {
        if m.nrows() < 4 {
            return Err(Error::InvalidArgument(format!(
                "relative MMD test needs at least four {name} samples"
            )));
        }
    }
    check_len("Y dimension", x.ncols(), y.ncols())?;
    check_len("Z dimension", x.ncols(), z.ncols())?;
    Ok(Kernels {
        kyy: k.gram(y, y),
        kzz: k.gram(z, z),
        kxy: k.gram(x, y),
        kxz: k.gram(x, z),
        kxx_mean: offdiag_mean(&k.gram(x, x)),
    })
}

/// One term `coef · E_a k(p, a)` of a first-order Hoeffding projection,
/// where `p` ranges over the rows of `k`. `within` marks a gram matrix of a
/// sample with itself, whose diagonal is excluded.
struct Term<'a> {
    coef: f64,
    k: &'a DMatrix<f64>,
    within: bool,
    rows: Vec<f64>,
    row_sq: Vec<f64>,
    total: f64,
}

impl<'a> Term<'a> {
    fn new(coef: f64, k: &'a DMatrix<f64>, within: bool) -> Self {
        let mut rows = vec![0.0; k.nrows()];
        let mut row_sq = vec![0.0; k.nrows()];
        for i in 0..k.nrows() {
            for j in 0..k.ncols() {
                if within && i == j {
                    continue;
                }
                rows[i] += k[(i, j)];
                row_sq[i] += k[(i, j)] * k[(i, j)];
            }
        }
        let total = rows.iter().sum();
        Self {
            coef,
            k,
            within,
            rows,
            row_sq,
            total,
        }
    }

    /// Size of the sample each row is averaged over.
    fn m(&self) -> f64 {
        (self.k.ncols() - self.within as usize) as f64
    }
}

/// Unbiased estimate of `E_a[k(p,a)] E_b[k(p',b)]` over independent `p, p'`,
/// i.e. the product of the two mean kernel values, summing only over index
/// tuples with no repeated sample point.
fn mean_product(t: &Term, u: &Term) -> f64 {
    let n = t.rows.len() as f64;
    let dot: f64 = t.rows.iter().zip(&u.rows).map(|(a, b)| a * b).sum();
    if std::ptr::eq(t.k, u.k) {
        let sq: f64 = t.row_sq.iter().sum();
        if t.within {
            // Four distinct points of one sample.
            (t.total * t.total - 4.0 * dot + 2.0 * sq) / (n * (n - 1.0) * (n - 2.0) * (n - 3.0))
        } else {
            let m = t.m();
            let cols: f64 = t.k.column_iter().map(|c| c.sum().powi(2)).sum();
            (t.total * t.total - dot - cols + sq) / (n * (n - 1.0) * m * (m - 1.0))
        }
    } else if t.within || u.within {
        let (w, c) = if t.within { (t, u) } else { (u, t) };
        (w.total * c.total - 2.0 * dot) / (n * (n - 1.0) * (n - 2.0) * c.m())
    } else {
        (t.total * u.total - dot) / (n * (n - 1.0) * t.m() * u.m())
    }
}

/// Unbiased estimate of `Var_p[Σ_t coef_t E_a k(p, a)]` for a first-order
/// Hoeffding projection. The terms must average over mutually independent
/// samples.
fn projection_variance(terms: &[Term]) -> f64 {
    let n = terms[0].rows.len();
    let mut second = 0.0;
    for i in 0..n {
        for (a, t) in terms.iter().enumerate() {
            let ma = t.m();
            second += t.coef * t.coef * (t.rows[i] * t.rows[i] - t.row_sq[i]) / (ma * (ma - 1.0));
            for u in &terms[a + 1..] {
                second += 2.0 * t.coef * u.coef * t.rows[i] * u.rows[i] / (ma * u.m());
            }
        }
    }
    let mut square = 0.0;
    for t in terms {
        for u in terms {
            square += t.coef * u.coef * mean_product(t, u);
        }
    }
    second / n as f64 - square
}

/// Mean square of the doubly centred kernel matrix, i.e. the second-order
/// Hoeffding component. `within` excludes the diagonal.
fn centred_mean_square(k: &DMatrix<f64>, within: bool) -> f64 {
    let (r, c) = k.shape();
    let mut rm = vec![0.0; r];
    let mut cm = vec![0.0; c];
    for i in 0..r {
        for j in 0..c {
            if within && i == j {
                continue;
            }
            rm[i] += k[(i, j)];
            cm[j] += k[(i, j)];
        }
    }
    let (rd, cd) = if within {
        ((c - 1) as f64, (r - 1) as f64)
    } else {
        (c as f64, r as f64)
    };
    let total: f64 = rm.iter().sum();
    let mean = total / (rd * r as f64);
    rm.iter_mut().for_each(|v| *v /= rd);
    cm.iter_mut().for_each(|v| *v /= cd);
    let mut acc = 0.0;
    for i in 0..r {
        for j in 0..c {
            if within && i == j {
                continue;
            }
            let h = k[(i, j)] - rm[i] - cm[j] + mean;
            acc += h * h;
        }
    }
    acc / (rd * r as f64)
}

/// Variance of `D = MMD²_u(X,Y) − MMD²_u(X,Z)` from its Hoeffding
/// decomposition: first-order projections per sample set plus the
/// second-order terms, which dominate when all three distributions agree.
/// The squared-mean parts of the projections use estimators over distinct
/// index tuples; a naive squared sample mean shares points with the second
/// moment and biases the variance downwards, enough to turn it negative when
/// the candidates are close.
fn statistic_variance(k: &Kernels) -> f64 {
    let (nx, ny, nz) = (k.kxy.nrows(), k.kyy.nrows(), k.kzz.nrows());
    let kyx = k.kxy.transpose();
    let kzx = k.kxz.transpose();
    let var_y = projection_variance(&[Term::new(2.0, &k.kyy, true), Term::new(-2.0, &kyx, false)]);
    let var_z = projection_variance(&[Term::new(-2.0, &k.kzz, true), Term::new(2.0, &kzx, false)]);
    let var_x = projection_variance(&[
        Term::new(-2.0, &k.kxy, false),
        Term::new(2.0, &k.kxz, false),
    ]);
    let (nx, ny, nz) = (nx as f64, ny as f64, nz as f64);
    var_y / ny
        + var_z / nz
        + var_x / nx
        + 2.0 * centred_mean_square(&k.kyy, true) / (ny * (ny - 1.0))
        + 2.0 * centred_mean_square(&k.kzz, true) / (nz * (nz - 1.0))
        + 4.0 * centred_mean_square(&k.kxy, false) / (nx * ny)
        + 4.0 * centred_mean_square(&k.kxz, false) / (nx * nz)
}

fn base_report(
    x: &DMatrix<f64>,
    k: &Kernels,
    kernel: &KernelSpec,
    method: TestMethod,
) -> MmdReport {
    let mmd2_xy = k.kxx_mean + offdiag_mean(&k.kyy) - 2.0 * k.kxy.mean();
    let mmd2_xz = k.kxx_mean + offdiag_mean(&k.kzz) - 2.0 * k.kxz.mean();
    MmdReport {
        n: x.nrows(),
        n_y: k.kyy.nrows(),
        n_z: k.kzz.nrows(),
        bandwidth: kernel.bandwidth,
        mmd2_xy,
        mmd2_xz,
        statistic: mmd2_xy - mmd2_xz,
        p_value: 1.0,
        method,
    }
}

/// Relative three-sample MMD test of H0: MMD(X, Y) ≥ MMD(X, Z) using the
/// normal approximation. Falls back to [`relative_mmd_permutation_test`]
/// (1000 permutations, fixed seed) when the variance estimate is degenerate.
pub fn relative_mmd_test(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    z: &DMatrix<f64>,
    kernel: &KernelSpec,
) -> Result<MmdReport> {
    let k = kernels(x, y, z, kernel)?;
    let var = statistic_variance(&k);
    let mut report = base_report(x, &k, kernel, TestMethod::Asymptotic);
    if !(var > 0.0 && var.is_finite()) {
        let mut rng = ChaCha8Rng::seed_from_u64(PERMUTATION_SEED);
        return permutation_from_kernels(x, y, z, &k, kernel, PERMUTATIONS, &mut rng);
    }
    let normal = Normal::standard();
    report.p_value = normal.cdf(report.statistic / var.sqrt()).clamp(0.0, 1.0);
    Ok(report)
}

/// Permutation version of [`relative_mmd_test`]: the null distribution is
/// built by exchanging the roles of Y and Z. With equal sizes the swap is
/// paired (`y_i ↔ z_i`) and each permutation costs O(n); otherwise the pooled
/// set is re-split at random.
pub fn relative_mmd_permutation_test<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    z: &DMatrix<f64>,
    kernel: &KernelSpec,
    permutations: usize,
    rng: &mut R,
) -> Result<MmdReport> {
    let k = kernels(x, y, z, kernel)?;
    permutation_from_kernels(x, y, z, &k, kernel, permutations, rng)
}

fn permutation_from_kernels<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    z: &DMatrix<f64>,
    k: &Kernels,
    kernel: &KernelSpec,
    permutations: usize,
    rng: &mut R,
) -> Result<MmdReport> {
    if permutations == 0 {
        return Err(Error::InvalidArgument(
            "need at least one permutation".into(),
        ));
    }
    let mut report = base_report(x, k, kernel, TestMethod::Permutation);
    let observed = report.statistic;
    let nx = x.nrows() as f64;
    let null: Vec<f64> = if y.nrows() == z.nrows() {
        // D(s) = Σ_i s_i d_i for swap signs s_i ∈ {±1}.
        let n = y.nrows();
        let kyz = kernel.gram(y, z);
        let d: Vec<f64> = (0..n)
            .map(|i| {
                let mut c = 0.0;
                for j in 0..n {
                    if j != i {
                        c += k.kyy[(i, j)] - k.kzz[(i, j)] + kyz[(i, j)] - kyz[(j, i)];
                    }
                }
                let e: f64 = k.kxy.column(i).sum() - k.kxz.column(i).sum();
                c / (n * (n - 1)) as f64 - 2.0 * e / (nx * n as f64)
            })
            .collect();
        (0..permutations)
            .map(|_| {
                d.iter()
                    .map(|v| if rng.random::<bool>() { *v } else { -*v })
                    .sum()
            })
            .collect()
    } else {
        let (ny, nz) = (y.nrows(), z.nrows());
        let pooled = DMatrix::from_fn(ny + nz, y.ncols(), |i, j| {
            if i < ny {
                y[(i, j)]
            } else {
                z[(i - ny, j)]
            }
        });
        let kpp = kernel.gram(&pooled, &pooled);
        let kxp = kernel.gram(x, &pooled);
        let xcol: Vec<f64> = (0..ny + nz).map(|i| kxp.column(i).sum()).collect();
        let mut order: Vec<usize> = (0..ny + nz).collect();
        (0..permutations)
            .map(|_| {
                order.shuffle(rng);
                let (a, b) = order.split_at(ny);
                let within = |s: &[usize]| {
                    let mut t = 0.0;
                    for &i in s {
                        for &j in s {
                            if i != j {
                                t += kpp[(i, j)];
                            }
                        }
                    }
                    t / (s.len() * (s.len() - 1)) as f64
                };
                let cross =
                    |s: &[usize]| s.iter().map(|&i| xcol[i]).sum::<f64>() / (nx * s.len() as f64);
                within(a) - within(b) - 2.0 * cross(a) + 2.0 * cross(b)
            })
            .collect()
    };
    let below = null.iter().filter(|v| **v <= observed).count();
    report.p_value = (1 + below) as f64 / (1 + permutations) as f64;
    Ok(report)
}
