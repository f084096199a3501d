use crate::error::{GbdError, Result};
use crate::field::Domain;

/// Cell-wise label field `1..=N`; each label is one piece of a Caccioppoli partition.
#[derive(Clone, Debug, PartialEq)]
pub struct CaccioppoliPartition {
    domain: Domain,
    labels: Vec<u32>,
    n: usize,
}

/// Interior cell face between cell `lower` and its upper neighbour `upper` along `axis`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellFace {
    pub lower: usize,
    pub upper: usize,
    pub axis: usize,
}

impl CaccioppoliPartition {
    /// Labels must cover `1..=N` with no gaps.
    pub fn new(domain: Domain, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != domain.cell_count() {
            return Err(GbdError::Domain(format!(
                "expected {} labels, got {}",
                domain.cell_count(),
                labels.len()
            )));
        }
        let n = labels.iter().copied().max().unwrap_or(0) as usize;
        if labels.contains(&0) {
            return Err(GbdError::Parameter("labels start at 1".into()));
        }
        let mut used = vec![false; n + 1];
        for &l in &labels {
            used[l as usize] = true;
        }
        if let Some(missing) = (1..=n).find(|&l| !used[l]) {
            return Err(GbdError::Parameter(format!("label {missing} is not used by any cell")));
        }
        Ok(CaccioppoliPartition { domain, labels, n })
    }

    /// Single piece covering the whole domain.
    pub fn trivial(domain: Domain) -> Self {
        let labels = vec![1; domain.cell_count()];
        CaccioppoliPartition { domain, labels, n: 1 }
    }

    /// Relabels arbitrary ids to `1..=N` in order of first appearance.
    pub fn from_raw(domain: Domain, raw: &[u32]) -> Result<Self> {
        let mut map = std::collections::HashMap::new();
        let labels = raw
            .iter()
            .map(|r| {
                let next = map.len() as u32 + 1;
                *map.entry(*r).or_insert(next)
            })
            .collect();
        Self::new(domain, labels)
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, flat: usize) -> u32 {
        self.labels[flat]
    }

    pub fn piece_count(&self) -> usize {
        self.n
    }

    /// Number of cells per label, indexed `0..N` for labels `1..=N`.
    pub fn piece_sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.n];
        for &l in &self.labels {
            s[l as usize - 1] += 1;
        }
        s
    }

    /// Interior faces whose two cells carry different labels.
    pub fn interface_faces(&self) -> Vec<CellFace> {
        let d = &self.domain;
        let mut out = Vec::new();
        for flat in 0..d.cell_count() {
            let m = d.multi(flat);
            for axis in 0..d.dim() {
                if let Some(nb) = d.upper_neighbor(m, axis) {
                    let up = d.flat(nb);
                    if self.labels[flat] != self.labels[up] {
                        out.push(CellFace { lower: flat, upper: up, axis });
                    }
                }
            }
        }
        out
    }

    /// `H^{d-1}(∂*P ∩ Ω)` by facet counting.
    pub fn perimeter(&self) -> f64 {
        self.interface_faces().len() as f64 * self.domain.face_area()
    }
}
