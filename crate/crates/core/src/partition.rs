//! Heterogeneity-inducing partition schemes.
//!
//! Every scheme maps dataset sample indices onto `m` clients, is
//! deterministic under a fixed seed, never returns an empty client (a full
//! re-draw handles unlucky proportion draws), and serializes to JSON so an
//! experiment's exact partition can be replayed.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{global_stream, stream, Purpose};

const REDRAW_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scheme {
    /// Sort by label, cut into `q·m` shards, hand each client `q` shards.
    QuantityLabel { shards_per_client: usize },
    /// Per-class Dirichlet(β) proportions over clients.
    DirichletLabel { beta: f64 },
    /// Equal random split plus additive Gaussian noise of variance `σ·i/m`
    /// on client `i` (1-based).
    Quality { sigma: f64 },
    /// One Dirichlet(β) draw over clients decides sample counts.
    Quantity { beta: f64 },
    /// Half the clients get label skew, the other half quantity skew.
    Hybrid { shards_per_client: usize, beta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub scheme: Scheme,
    pub seed: u64,
    pub client_indices: Vec<Vec<usize>>,
}

impl Partition {
    pub fn num_clients(&self) -> usize {
        self.client_indices.len()
    }

    pub fn client_sizes(&self) -> Vec<usize> {
        self.client_indices.iter().map(|c| c.len()).collect()
    }

    /// True when the index lists are pairwise disjoint, nonempty, and drawn
    /// from `[0, n)`.
    pub fn is_disjoint_cover(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for client in &self.client_indices {
            if client.is_empty() {
                return false;
            }
            for &i in client {
                if i >= n || seen[i] {
                    return false;
                }
                seen[i] = true;
            }
        }
        true
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Partition> {
        Ok(serde_json::from_str(s)?)
    }
}

fn shuffled(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Stable label sort: ties keep original index order.
fn sort_by_label(labels: &[usize], indices: &[usize]) -> Vec<usize> {
    let mut sorted = indices.to_vec();
    sorted.sort_by_key(|&i| (labels[i], i));
    sorted
}

/// Cut `sorted` into `count` contiguous shards; the remainder goes to the
/// leading shards one sample each.
pub fn shard_boundaries(total: usize, count: usize) -> Vec<(usize, usize)> {
    let base = total / count;
    let extra = total % count;
    let mut out = Vec::with_capacity(count);
    let mut start = 0;
    for s in 0..count {
        let len = base + usize::from(s < extra);
        out.push((start, start + len));
        start += len;
    }
    out
}

fn quantity_label_on(
    labels: &[usize],
    indices: &[usize],
    m: usize,
    q: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<usize>>> {
    let total_shards = q * m;
    if total_shards == 0 {
        return Err(Error::InvalidParam("shards_per_client must be positive".into()));
    }
    if total_shards > indices.len() {
        return Err(Error::InvalidParam(format!(
            "cannot cut {} samples into {total_shards} shards",
            indices.len()
        )));
    }
    let sorted = sort_by_label(labels, indices);
    let bounds = shard_boundaries(sorted.len(), total_shards);
    let order = shuffled(total_shards, rng);
    let mut clients = vec![Vec::new(); m];
    for (slot, &shard) in order.iter().enumerate() {
        let client = slot / q;
        let (lo, hi) = bounds[shard];
        clients[client].extend_from_slice(&sorted[lo..hi]);
    }
    Ok(clients)
}

pub fn quantity_label(ds: &LabeledDataset, m: usize, q: usize, seed: u64) -> Result<Partition> {
    let mut rng = global_stream(seed, Purpose::Data);
    let all: Vec<usize> = (0..ds.len()).collect();
    let clients = quantity_label_on(&ds.labels, &all, m, q, &mut rng)?;
    Ok(Partition {
        scheme: Scheme::QuantityLabel { shards_per_client: q },
        seed,
        client_indices: clients,
    })
}

fn dirichlet_draw(beta: f64, m: usize, rng: &mut impl Rng) -> Vec<f64> {
    // Gamma(β, 1) draws normalized to the simplex.
    let gamma = Gamma::new(beta, 1.0).expect("beta checked positive");
    loop {
        let draws: Vec<f64> = (0..m).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return draws.into_iter().map(|g| g / total).collect();
        }
    }
}

fn categorical(p: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

fn multinomial_assign(
    indices_by_group: &[Vec<usize>],
    proportions: &[Vec<f64>],
    m: usize,
    rng: &mut impl Rng,
) -> Vec<Vec<usize>> {
    let mut clients = vec![Vec::new(); m];
    for (group, p) in indices_by_group.iter().zip(proportions) {
        for &i in group {
            clients[categorical(p, rng)].push(i);
        }
    }
    clients
}

fn has_empty(clients: &[Vec<usize>]) -> bool {
    clients.iter().any(|c| c.is_empty())
}

fn dirichlet_label_on(
    labels: &[usize],
    indices: &[usize],
    num_classes: usize,
    m: usize,
    beta: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<usize>>> {
    if beta <= 0.0 {
        return Err(Error::InvalidParam("Dirichlet beta must be positive".into()));
    }
    if m == 1 {
        return Ok(vec![indices.to_vec()]);
    }
    if m > indices.len() {
        return Err(Error::InvalidParam(format!(
            "{m} clients cannot each receive a sample from {} total",
            indices.len()
        )));
    }
    let mut by_class = vec![Vec::new(); num_classes];
    for &i in indices {
        by_class[labels[i]].push(i);
    }
    for _ in 0..REDRAW_ATTEMPTS {
        let props: Vec<Vec<f64>> = (0..num_classes).map(|_| dirichlet_draw(beta, m, rng)).collect();
        let clients = multinomial_assign(&by_class, &props, m, rng);
        if !has_empty(&clients) {
            return Ok(clients);
        }
    }
    Err(Error::RedrawBudget {
        attempts: REDRAW_ATTEMPTS,
    })
}

pub fn dirichlet_label(ds: &LabeledDataset, m: usize, beta: f64, seed: u64) -> Result<Partition> {
    let mut rng = global_stream(seed, Purpose::Data);
    let all: Vec<usize> = (0..ds.len()).collect();
    let clients = dirichlet_label_on(&ds.labels, &all, ds.num_classes, m, beta, &mut rng)?;
    Ok(Partition {
        scheme: Scheme::DirichletLabel { beta },
        seed,
        client_indices: clients,
    })
}

/// Equal random split plus per-client feature noise. Client `i` (1-based)
/// receives additive `N(0, σ·i/m)` noise, so the last client is noisiest and
/// no client's noise variance is zero unless `σ = 0`.
pub fn quality_skew(
    ds: &LabeledDataset,
    m: usize,
    sigma: f64,
    seed: u64,
) -> Result<(Partition, LabeledDataset)> {
    if sigma < 0.0 {
        return Err(Error::InvalidParam("noise level must be nonnegative".into()));
    }
    if m == 0 || m > ds.len() {
        return Err(Error::InvalidParam(format!(
            "cannot split {} samples across {m} clients",
            ds.len()
        )));
    }
    let mut rng = global_stream(seed, Purpose::Data);
    let order = shuffled(ds.len(), &mut rng);
    let bounds = shard_boundaries(ds.len(), m);
    let clients: Vec<Vec<usize>> = bounds
        .iter()
        .map(|&(lo, hi)| order[lo..hi].to_vec())
        .collect();

    let mut noisy = ds.clone();
    if sigma > 0.0 {
        for (c, client) in clients.iter().enumerate() {
            let std = (sigma * (c + 1) as f64 / m as f64).sqrt();
            let mut crng = stream(seed, 0, c as u64, Purpose::Data);
            for &row in client {
                for v in noisy.features.row_mut(row) {
                    let z: f64 = crng.sample(StandardNormal);
                    *v += std * z;
                }
            }
        }
    }
    Ok((
        Partition {
            scheme: Scheme::Quality { sigma },
            seed,
            client_indices: clients,
        },
        noisy,
    ))
}

fn quantity_skew_on(
    indices: &[usize],
    m: usize,
    beta: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<usize>>> {
    if beta <= 0.0 {
        return Err(Error::InvalidParam("Dirichlet beta must be positive".into()));
    }
    if m == 1 {
        return Ok(vec![indices.to_vec()]);
    }
    if m > indices.len() {
        return Err(Error::InvalidParam(format!(
            "{m} clients cannot each receive a sample from {} total",
            indices.len()
        )));
    }
    let groups = vec![indices.to_vec()];
    for _ in 0..REDRAW_ATTEMPTS {
        let p = dirichlet_draw(beta, m, rng);
        let clients = multinomial_assign(&groups, &[p], m, rng);
        if !has_empty(&clients) {
            return Ok(clients);
        }
    }
    Err(Error::RedrawBudget {
        attempts: REDRAW_ATTEMPTS,
    })
}

pub fn quantity_skew(ds: &LabeledDataset, m: usize, beta: f64, seed: u64) -> Result<Partition> {
    let mut rng = global_stream(seed, Purpose::Data);
    let all: Vec<usize> = (0..ds.len()).collect();
    let clients = quantity_skew_on(&all, m, beta, &mut rng)?;
    Ok(Partition {
        scheme: Scheme::Quantity { beta },
        seed,
        client_indices: clients,
    })
}

/// Hybrid skew: the dataset is split in half at random; the first
/// `floor(m/2)` clients partition half A by label shards, the rest partition
/// half B by quantity skew. With odd `m` the label-skew side gets the
/// smaller client count.
pub fn hybrid_skew(
    ds: &LabeledDataset,
    m: usize,
    q: usize,
    beta: f64,
    seed: u64,
) -> Result<Partition> {
    if m < 2 {
        return Err(Error::InvalidParam("hybrid skew needs at least 2 clients".into()));
    }
    let mut rng = global_stream(seed, Purpose::Data);
    let order = shuffled(ds.len(), &mut rng);
    let half = ds.len() / 2;
    let half_a = &order[..half];
    let half_b = &order[half..];
    let m_label = m / 2;
    let m_quantity = m - m_label;

    let mut clients = quantity_label_on(&ds.labels, half_a, m_label, q, &mut rng)?;
    clients.extend(quantity_skew_on(half_b, m_quantity, beta, &mut rng)?);
    Ok(Partition {
        scheme: Scheme::Hybrid {
            shards_per_client: q,
            beta,
        },
        seed,
        client_indices: clients,
    })
}

/// Carve a per-client validation split (for hybrid-model selection) out of a
/// training partition. Validation gets `round(frac · n_i)` samples, at least
/// one when the client can spare it.
pub fn split_validation(part: &Partition, frac: f64, seed: u64) -> (Partition, Partition) {
    let mut train = part.clone();
    let mut val = part.clone();
    for (c, indices) in part.client_indices.iter().enumerate() {
        let mut rng = stream(seed, 0, c as u64, Purpose::Data);
        let order = shuffled(indices.len(), &mut rng);
        let mut n_val = ((indices.len() as f64) * frac).round() as usize;
        if n_val == 0 && indices.len() >= 2 && frac > 0.0 {
            n_val = 1;
        }
        if n_val >= indices.len() {
            n_val = indices.len().saturating_sub(1);
        }
        val.client_indices[c] = order[..n_val].iter().map(|&k| indices[k]).collect();
        train.client_indices[c] = order[n_val..].iter().map(|&k| indices[k]).collect();
    }
    (train, val)
}

/// Distinct labels held by each client; the shard-boundary oracle in tests
/// recomputes this independently.
pub fn distinct_labels_per_client(ds: &LabeledDataset, part: &Partition) -> Vec<usize> {
    part.client_indices
        .iter()
        .map(|client| {
            let mut seen = vec![false; ds.num_classes];
            for &i in client {
                seen[ds.labels[i]] = true;
            }
            seen.iter().filter(|&&s| s).count()
        })
        .collect()
}
