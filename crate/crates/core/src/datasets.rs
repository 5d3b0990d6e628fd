//! Dataset ingestion and synthesis.
//!
//! Real image data comes in as IDX files (big-endian headers, raw `u8`
//! payload) with pixels scaled to `[0, 1]`. Synthetic generators cover the
//! two desk-scale experiment families: federated linear regression with an
//! exactly isotropic design (`XᵀX = N·b·I`), and Gaussian-mixture
//! classification for label/quantity-skew studies.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{global_stream, Purpose};
use crate::vecmath::{axpy, dot, norm, zeros, Matrix, ParamVector};

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

/// An in-memory classification dataset. Features are row vectors; labels are
/// class indices in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// Original image geometry when loaded from IDX, used to write back.
    pub image_shape: Option<(usize, usize)>,
}

impl LabeledDataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::DimMismatch {
                expected: features.rows(),
                found: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidParam(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(LabeledDataset {
            features,
            labels,
            num_classes,
            image_shape: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Materialize a subset in the given index order.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
            labels.push(self.labels[i]);
        }
        LabeledDataset {
            features: Matrix::from_vec(indices.len(), d, data),
            labels,
            num_classes: self.num_classes,
            image_shape: self.image_shape,
        }
    }
}

fn read_u32_be(bytes: &[u8], off: usize, path: &str) -> Result<u32> {
    let end = off + 4;
    if bytes.len() < end {
        return Err(Error::IdxTruncated {
            path: path.to_string(),
            need: end,
            have: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]]))
}

/// Load an IDX image/label file pair. Pixels are scaled by `1/255`; each
/// image is flattened row-major.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let img_bytes = fs::read(images_path)?;
    let lbl_bytes = fs::read(labels_path)?;
    let ipath = images_path.display().to_string();
    let lpath = labels_path.display().to_string();

    let magic = read_u32_be(&img_bytes, 0, &ipath)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::IdxMagic {
            path: ipath,
            expected: IDX_IMAGE_MAGIC,
            found: magic,
        });
    }
    let n = read_u32_be(&img_bytes, 4, &ipath)? as usize;
    let rows = read_u32_be(&img_bytes, 8, &ipath)? as usize;
    let cols = read_u32_be(&img_bytes, 12, &ipath)? as usize;
    let need = 16 + n * rows * cols;
    if img_bytes.len() < need {
        return Err(Error::IdxTruncated {
            path: ipath,
            need,
            have: img_bytes.len(),
        });
    }

    let magic = read_u32_be(&lbl_bytes, 0, &lpath)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::IdxMagic {
            path: lpath,
            expected: IDX_LABEL_MAGIC,
            found: magic,
        });
    }
    let n_labels = read_u32_be(&lbl_bytes, 4, &lpath)? as usize;
    if lbl_bytes.len() < 8 + n_labels {
        return Err(Error::IdxTruncated {
            path: lpath,
            need: 8 + n_labels,
            have: lbl_bytes.len(),
        });
    }
    if n != n_labels {
        return Err(Error::IdxCountMismatch {
            images: n,
            labels: n_labels,
        });
    }

    let d = rows * cols;
    let mut data = Vec::with_capacity(n * d);
    for px in &img_bytes[16..16 + n * d] {
        data.push(*px as f64 / 255.0);
    }
    let labels: Vec<usize> = lbl_bytes[8..8 + n].iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().copied().max().map_or(1, |m| m + 1);
    let mut ds = LabeledDataset::new(Matrix::from_vec(n, d, data), labels, num_classes)?;
    ds.image_shape = Some((rows, cols));
    Ok(ds)
}

/// Write a dataset back to an IDX pair. Features are mapped to bytes as
/// `round(f * 255)`; for data loaded via [`load_idx`] this is a bit-exact
/// round trip.
pub fn write_idx(ds: &LabeledDataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let (rows, cols) = ds.image_shape.ok_or_else(|| {
        Error::InvalidParam("dataset has no image shape; cannot emit IDX".into())
    })?;
    if rows * cols != ds.dim() {
        return Err(Error::DimMismatch {
            expected: rows * cols,
            found: ds.dim(),
        });
    }
    let n = ds.len();
    let mut img = Vec::with_capacity(16 + n * ds.dim());
    img.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    img.extend_from_slice(&(n as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    for v in ds.features.data() {
        img.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
    }
    let mut lbl = Vec::with_capacity(8 + n);
    lbl.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    lbl.extend_from_slice(&(n as u32).to_be_bytes());
    for &l in &ds.labels {
        lbl.push(l as u8);
    }
    fs::write(images_path, img)?;
    fs::write(labels_path, lbl)?;
    Ok(())
}

/// Seeded 80/20-style split of `[0, n)` done once, before any partitioning.
pub fn train_test_split(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = global_stream(seed, Purpose::Data);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let test = idx[..n_test].to_vec();
    let train = idx[n_test..].to_vec();
    (train, test)
}

/// One client's federated linear-regression data with an exactly isotropic
/// design: `XᵀX = N·b·I_d` by construction.
#[derive(Debug, Clone)]
pub struct LinRegClientData {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub true_theta: ParamVector,
    pub b: f64,
    pub sigma: f64,
}

impl LinRegClientData {
    /// Least-squares estimator. With the isotropic design this is
    /// `Xᵀy / (N·b)`.
    pub fn theta_hat(&self) -> ParamVector {
        let mut t = self.x.matvec_t(&self.y);
        let inv = 1.0 / (self.x.rows() as f64 * self.b);
        for v in &mut t {
            *v *= inv;
        }
        t
    }

    /// Fresh observations on the same fixed design (test split).
    pub fn resample_noise(&self, seed: u64) -> LinRegClientData {
        let mut rng = global_stream(seed, Purpose::Data);
        let mut y = self.x.matvec(&self.true_theta);
        for v in &mut y {
            let z: f64 = rng.sample(StandardNormal);
            *v += self.sigma * z;
        }
        LinRegClientData {
            x: self.x.clone(),
            y,
            true_theta: self.true_theta.clone(),
            b: self.b,
            sigma: self.sigma,
        }
    }
}

/// How per-client ground-truth parameters are produced.
#[derive(Debug, Clone)]
pub enum ThetaGen {
    /// Use the given vectors verbatim (length must equal the client count).
    Fixed(Vec<ParamVector>),
    /// i.i.d. Gaussian entries with the given standard deviation.
    Gaussian { std: f64 },
    /// Random directions rescaled to a common norm. Needed by the fairness
    /// analysis, which assumes all clients share `‖θ_i‖`.
    EqualNorm { norm: f64 },
}

/// Orthonormal columns via modified Gram-Schmidt with one reorthogonalization
/// pass; adequate for the `1e-9`-relative isotropy tolerance.
fn orthonormal_columns(n: usize, d: usize, rng: &mut impl Rng) -> Matrix {
    // Work column-wise, then transpose into the row-major design.
    let mut cols: Vec<ParamVector> = Vec::with_capacity(d);
    while cols.len() < d {
        let mut v: ParamVector = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for _ in 0..2 {
            for q in &cols {
                let c = dot(&v, q);
                axpy(&mut v, -c, q);
            }
        }
        let nv = norm(&v);
        if nv < 1e-8 {
            continue; // essentially never for Gaussian draws; redraw
        }
        for x in &mut v {
            *x /= nv;
        }
        cols.push(v);
    }
    let mut m = Matrix::zeros(n, d);
    for (j, col) in cols.iter().enumerate() {
        for i in 0..n {
            m.set(i, j, col[i]);
        }
    }
    m
}

/// Generate `m` linear-regression clients. Each design satisfies
/// `XᵀX = N·b·I_d` up to floating-point error, and observations follow
/// `y = Xθ_i + z` with `z ~ N(0, σ²)`.
pub fn synth_linreg(
    m: usize,
    n_per_client: usize,
    d: usize,
    b: f64,
    sigma: f64,
    theta_gen: &ThetaGen,
    seed: u64,
) -> Result<Vec<LinRegClientData>> {
    if n_per_client < d {
        return Err(Error::InvalidParam(format!(
            "need N >= d for an orthogonal-column design (N={n_per_client}, d={d})"
        )));
    }
    if b <= 0.0 {
        return Err(Error::InvalidParam("design scale b must be positive".into()));
    }
    if sigma < 0.0 {
        return Err(Error::InvalidParam("noise std must be nonnegative".into()));
    }
    let thetas = match theta_gen {
        ThetaGen::Fixed(list) => {
            if list.len() != m {
                return Err(Error::InvalidParam(format!(
                    "theta list has {} entries for {m} clients",
                    list.len()
                )));
            }
            list.clone()
        }
        ThetaGen::Gaussian { std } => {
            let mut rng = global_stream(seed ^ 0x7455, Purpose::Data);
            (0..m)
                .map(|_| (0..d).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect())
                .collect()
        }
        ThetaGen::EqualNorm { norm: target } => {
            let mut rng = global_stream(seed ^ 0x7455, Purpose::Data);
            (0..m)
                .map(|_| {
                    loop {
                        let v: ParamVector =
                            (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                        let nv = norm(&v);
                        if nv > 1e-12 {
                            return v.iter().map(|x| x * target / nv).collect();
                        }
                    }
                })
                .collect()
        }
    };

    let scale = (n_per_client as f64 * b).sqrt();
    let mut clients = Vec::with_capacity(m);
    for (i, theta) in thetas.into_iter().enumerate() {
        let mut rng = crate::rng::stream(seed, 0, i as u64, Purpose::Data);
        let q = orthonormal_columns(n_per_client, d, &mut rng);
        let mut x = Matrix::zeros(n_per_client, d);
        for r in 0..n_per_client {
            for c in 0..d {
                x.set(r, c, scale * q.get(r, c));
            }
        }
        let mut y = x.matvec(&theta);
        for v in &mut y {
            let z: f64 = rng.sample(StandardNormal);
            *v += sigma * z;
        }
        clients.push(LinRegClientData {
            x,
            y,
            true_theta: theta,
            b,
            sigma,
        });
    }
    Ok(clients)
}

/// Class-conditional unit-variance Gaussians with pairwise mean distance
/// `separation` (when `d >= C`, means sit on scaled basis vectors so the
/// distance is exact). Labels are balanced: `n_per_client * m / C` per class,
/// remainder spread over the first classes.
pub fn synth_classification(
    m: usize,
    n_per_client: usize,
    d: usize,
    num_classes: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if num_classes < 2 {
        return Err(Error::InvalidParam("need at least 2 classes".into()));
    }
    if d < 1 {
        return Err(Error::InvalidParam("need at least 1 feature".into()));
    }
    let n = m * n_per_client;
    let mut rng = global_stream(seed, Purpose::Data);

    let mut means = vec![zeros(d); num_classes];
    if d >= num_classes {
        for (k, mu) in means.iter_mut().enumerate() {
            mu[k] = separation / std::f64::consts::SQRT_2;
        }
    } else {
        for mu in means.iter_mut() {
            let v: ParamVector = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let nv = norm(&v).max(1e-12);
            for (o, x) in mu.iter_mut().zip(&v) {
                *o = x / nv * separation / std::f64::consts::SQRT_2;
            }
        }
    }

    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        labels.push(i % num_classes);
    }
    // Shuffle so label order carries no structure before partitioning.
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        labels.swap(i, j);
    }

    let mut data = Vec::with_capacity(n * d);
    for &label in &labels {
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            data.push(means[label][j] + z);
        }
    }
    LabeledDataset::new(Matrix::from_vec(n, d, data), labels, num_classes)
}

/// Max-norm deviation of `XᵀX` from `N·b·I`, as a fraction of `N·b`.
pub fn design_isotropy_error(x: &Matrix, b: f64) -> f64 {
    let nb = x.rows() as f64 * b;
    let g = x.gram();
    let mut worst: f64 = 0.0;
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let target = if i == j { nb } else { 0.0 };
            worst = worst.max((g.get(i, j) - target).abs());
        }
    }
    worst / nb
}
