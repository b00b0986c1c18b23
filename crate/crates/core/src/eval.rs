//! Hamming ranking and retrieval metrics: mAP, precision within Hamming
//! radius 2 and precision at k.
//!
//! Items at equal Hamming distance are ranked by ascending database index.

use crate::codes::{bytes_per_row, padding_mask, BinaryCodes};
use crate::error::{Result, ScqError};

pub const DEFAULT_K: usize = 1000;

/// Number of differing bits among the first `bits` bits of two packed codes.
pub fn hamming_distance(a: &[u8], b: &[u8], bits: usize) -> Result<u32> {
    let stride = bytes_per_row(bits);
    if a.len() != stride || b.len() != stride {
        return Err(ScqError::InvalidInput(format!(
            "packed codes of {} and {} bytes for {bits}-bit codes (expected {stride})",
            a.len(),
            b.len()
        )));
    }
    Ok(distance_unchecked(a, b, !padding_mask(bits)))
}

#[inline]
fn distance_unchecked(a: &[u8], b: &[u8], last_mask: u8) -> u32 {
    let Some(last) = a.len().checked_sub(1) else {
        return 0;
    };
    let mut d = 0;
    for i in 0..last {
        d += (a[i] ^ b[i]).count_ones();
    }
    d + ((a[last] ^ b[last]) & last_mask).count_ones()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub k: usize,
    /// Leave queries without any relevant item out of the mAP average.
    pub exclude_no_relevant: bool,
    pub per_query: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            exclude_no_relevant: false,
            per_query: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryMetrics {
    pub ap: f64,
    pub prec_at_r2: f64,
    pub prec_at_k: f64,
    pub relevant: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub map: f64,
    pub prec_at_r2: f64,
    pub prec_at_k: f64,
    /// Effective `k` after capping at the database size.
    pub k: usize,
    pub per_query: Option<Vec<QueryMetrics>>,
}

fn check_inputs(db: &BinaryCodes, db_labels: &[i64], queries: &BinaryCodes, query_labels: &[i64], k: usize) -> Result<()> {
    if db.n() == 0 {
        return Err(ScqError::InvalidInput("database is empty".into()));
    }
    if db.bits() != queries.bits() {
        return Err(ScqError::InvalidInput(format!(
            "database codes have {} bits, queries {}",
            db.bits(),
            queries.bits()
        )));
    }
    if db_labels.len() != db.n() {
        return Err(ScqError::InvalidInput(format!("{} database labels for {} codes", db_labels.len(), db.n())));
    }
    if query_labels.len() != queries.n() {
        return Err(ScqError::InvalidInput(format!(
            "{} query labels for {} codes",
            query_labels.len(),
            queries.n()
        )));
    }
    if k == 0 {
        return Err(ScqError::InvalidConfig("k must be at least 1".into()));
    }
    Ok(())
}

/// Database indices ordered by (distance, index), via counting sort.
pub fn rank(db: &BinaryCodes, query: &[u8]) -> Result<Vec<(usize, u32)>> {
    let bits = db.bits();
    if query.len() != db.stride() {
        return Err(ScqError::InvalidInput(format!(
            "query has {} bytes, database rows {}",
            query.len(),
            db.stride()
        )));
    }
    let mask = !padding_mask(bits);
    let dist: Vec<u32> = (0..db.n()).map(|i| distance_unchecked(db.packed_row(i), query, mask)).collect();
    let mut start = vec![0usize; bits + 2];
    for &d in &dist {
        start[d as usize + 1] += 1;
    }
    for j in 1..start.len() {
        start[j] += start[j - 1];
    }
    let mut out = vec![(0, 0); db.n()];
    for (i, &d) in dist.iter().enumerate() {
        let slot = &mut start[d as usize];
        out[*slot] = (i, d);
        *slot += 1;
    }
    Ok(out)
}

fn query_metrics(db: &BinaryCodes, db_labels: &[i64], query: &[u8], label: i64, k: usize) -> QueryMetrics {
    let ranking = rank(db, query).expect("query stride checked by caller");
    let relevant = db_labels.iter().filter(|&&l| l == label).count();
    let (mut hits, mut ap_sum) = (0usize, 0.0);
    let (mut in_radius, mut hits_radius) = (0usize, 0usize);
    let mut hits_k = 0usize;
    for (pos, &(idx, d)) in ranking.iter().enumerate() {
        let rel = db_labels[idx] == label;
        if rel {
            hits += 1;
            ap_sum += hits as f64 / (pos + 1) as f64;
        }
        if d <= 2 {
            in_radius += 1;
            hits_radius += rel as usize;
        }
        if pos < k {
            hits_k += rel as usize;
        }
    }
    QueryMetrics {
        ap: if relevant > 0 { ap_sum / relevant as f64 } else { 0.0 },
        prec_at_r2: if in_radius > 0 { hits_radius as f64 / in_radius as f64 } else { 0.0 },
        prec_at_k: hits_k as f64 / k as f64,
        relevant,
    }
}

/// All three metrics in one pass over each query's ranking. Queries are
/// split across threads; sums are reduced in query order.
pub fn evaluate(
    db: &BinaryCodes,
    db_labels: &[i64],
    queries: &BinaryCodes,
    query_labels: &[i64],
    opts: &EvalOptions,
) -> Result<EvalResult> {
    check_inputs(db, db_labels, queries, query_labels, opts.k)?;
    let k = opts.k.min(db.n());
    let nq = queries.n();
    let workers = std::thread::available_parallelism().map_or(1, |p| p.get()).min(nq.max(1));
    let chunk = nq.div_ceil(workers.max(1)).max(1);
    let per_query: Vec<QueryMetrics> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..nq)
            .step_by(chunk)
            .map(|lo| {
                let hi = (lo + chunk).min(nq);
                scope.spawn(move || {
                    (lo..hi)
                        .map(|q| query_metrics(db, db_labels, queries.packed_row(q), query_labels[q], k))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    });
    let mean = |f: &dyn Fn(&QueryMetrics) -> f64, keep: &dyn Fn(&QueryMetrics) -> bool| {
        let (mut sum, mut count) = (0.0, 0usize);
        for m in per_query.iter().filter(|m| keep(m)) {
            sum += f(m);
            count += 1;
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    };
    let exclude = opts.exclude_no_relevant;
    let map = mean(&|m| m.ap, &|m| !exclude || m.relevant > 0);
    let prec_at_r2 = mean(&|m| m.prec_at_r2, &|_| true);
    let prec_at_k = mean(&|m| m.prec_at_k, &|_| true);
    Ok(EvalResult {
        map,
        prec_at_r2,
        prec_at_k,
        k,
        per_query: opts.per_query.then_some(per_query),
    })
}

pub fn mean_average_precision(db: &BinaryCodes, db_labels: &[i64], queries: &BinaryCodes, query_labels: &[i64]) -> Result<f64> {
    Ok(evaluate(db, db_labels, queries, query_labels, &EvalOptions::default())?.map)
}

pub fn precision_at_radius2(db: &BinaryCodes, db_labels: &[i64], queries: &BinaryCodes, query_labels: &[i64]) -> Result<f64> {
    Ok(evaluate(db, db_labels, queries, query_labels, &EvalOptions::default())?.prec_at_r2)
}

pub fn precision_at_k(db: &BinaryCodes, db_labels: &[i64], queries: &BinaryCodes, query_labels: &[i64], k: usize) -> Result<f64> {
    let opts = EvalOptions { k, ..EvalOptions::default() };
    Ok(evaluate(db, db_labels, queries, query_labels, &opts)?.prec_at_k)
}
