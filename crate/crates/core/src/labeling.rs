//! Random labels for the unlabeled split.
//!
//! For every unlabeled point `K` labels are drawn uniformly without
//! replacement from the `c` classes; draw `i` is the label ensemble member
//! `i` is trained to fit on that point.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, UnlabeledSet};
use crate::error::{Error, Result};
use crate::io_util::write_atomic;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelAssignment {
    /// Row-major `m × K`.
    entries: Vec<usize>,
    members: usize,
    num_classes: usize,
    seed: u64,
}

/// Draws an `m × K` assignment; row `u` is the first `K` entries of a
/// Fisher–Yates shuffle of `0..c` driven by ChaCha stream `u` of `seed`.
pub fn draw_assignment(m: usize, num_classes: usize, k: usize, seed: u64) -> Result<LabelAssignment> {
    if k == 0 || m == 0 {
        return Err(Error::Constraint(format!(
            "need at least one member and one point, got K={k}, m={m}"
        )));
    }
    if k > num_classes {
        return Err(Error::Constraint(format!(
            "cannot draw K={k} distinct labels from c={num_classes} classes"
        )));
    }
    let mut entries = Vec::with_capacity(m * k);
    let mut pool: Vec<usize> = Vec::with_capacity(num_classes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for u in 0..m {
        rng.set_stream(u as u64);
        rng.set_word_pos(0);
        pool.clear();
        pool.extend(0..num_classes);
        for i in 0..k {
            let j = rng.random_range(i..num_classes);
            pool.swap(i, j);
        }
        entries.extend_from_slice(&pool[..k]);
    }
    Ok(LabelAssignment {
        entries,
        members: k,
        num_classes,
        seed,
    })
}

impl LabelAssignment {
    pub fn from_rows(rows: Vec<Vec<usize>>, num_classes: usize, seed: u64) -> Result<Self> {
        let members = rows.first().map_or(0, Vec::len);
        if members == 0 {
            return Err(Error::Constraint("assignment needs at least one row and column".into()));
        }
        let mut entries = Vec::with_capacity(rows.len() * members);
        for (u, row) in rows.iter().enumerate() {
            if row.len() != members {
                return Err(Error::Dimension(format!(
                    "row {u} has {} entries, expected {members}",
                    row.len()
                )));
            }
            for (a, &y) in row.iter().enumerate() {
                if y >= num_classes {
                    return Err(Error::Domain(format!("row {u}: label {y} outside [0, {num_classes})")));
                }
                if row[..a].contains(&y) {
                    return Err(Error::Constraint(format!("row {u}: label {y} repeated")));
                }
            }
            entries.extend_from_slice(row);
        }
        if members > num_classes {
            return Err(Error::Constraint(format!("K={members} exceeds c={num_classes}")));
        }
        Ok(LabelAssignment {
            entries,
            members,
            num_classes,
            seed,
        })
    }

    /// Number of unlabeled points `m`.
    pub fn len(&self) -> usize {
        self.entries.len() / self.members
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Ensemble size `K`.
    pub fn members(&self) -> usize {
        self.members
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn row(&self, u: usize) -> &[usize] {
        &self.entries[u * self.members..(u + 1) * self.members]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[usize]> {
        self.entries.chunks_exact(self.members)
    }

    /// Labels member `i` fits, one per unlabeled point.
    pub fn member_labels(&self, member: usize) -> Result<Vec<usize>> {
        if member >= self.members {
            return Err(Error::Domain(format!(
                "member {member} out of range for K={}",
                self.members
            )));
        }
        Ok(self.rows().map(|r| r[member]).collect())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = (0..self.members)
            .map(|i| format!("member_{i}"))
            .collect::<Vec<_>>()
            .join(",");
        out.push('\n');
        for row in self.rows() {
            let line: Vec<String> = row.iter().map(usize::to_string).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_csv_string().as_bytes())
    }

    pub fn load_csv(path: impl AsRef<Path>, num_classes: usize, seed: u64) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.into()))?;
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Parse {
                row: i + 1,
                msg: e.to_string(),
            })?;
            let row: std::result::Result<Vec<usize>, _> = record.iter().map(str::parse).collect();
            rows.push(row.map_err(|e| Error::Parse {
                row: i + 1,
                msg: e.to_string(),
            })?);
        }
        LabelAssignment::from_rows(rows, num_classes, seed)
    }
}

/// The randomly labeled set `U_i`: every unlabeled row paired with
/// member `i`'s label, in the order of `unlabeled`.
pub fn member_view(assignment: &LabelAssignment, unlabeled: &UnlabeledSet, member: usize) -> Result<Dataset> {
    if assignment.len() != unlabeled.len() {
        return Err(Error::Constraint(format!(
            "assignment has {} rows but the unlabeled set has {}",
            assignment.len(),
            unlabeled.len()
        )));
    }
    let labels = assignment.member_labels(member)?;
    let mut ds = Dataset::new(unlabeled.features.clone(), labels, assignment.num_classes)?;
    ds.feature_names = unlabeled.feature_names.clone();
    ds.feature_scale = unlabeled.feature_scale.clone();
    Ok(ds)
}

/// Fraction of points whose true label is among their `K` drawn labels.
pub fn hit_rate(assignment: &LabelAssignment, true_labels: &[usize]) -> Result<f64> {
    if true_labels.len() != assignment.len() {
        return Err(Error::Dimension(format!(
            "{} true labels for {} assignment rows",
            true_labels.len(),
            assignment.len()
        )));
    }
    let hits = assignment
        .rows()
        .zip(true_labels)
        .filter(|(row, y)| row.contains(y))
        .count();
    Ok(hits as f64 / assignment.len() as f64)
}
