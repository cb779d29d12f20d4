//! Alternate relations generator: online real/fake row pairs drawn from
//! unlabelled problems.
//!
//! Real pairs are the two complete context rows of one problem. Fake pairs
//! keep one of those rows and pair it with either a row of a different
//! problem (category A) or a shuffled row assembled from the same problem's
//! remaining cells (category B).

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{Cell, Row, RpmProblem, CANDIDATES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Real,
    FakeCatA,
    FakeCatBRowC,
    FakeCatBRowGamma,
}

impl Provenance {
    pub fn label(self) -> u8 {
        u8::from(self == Provenance::Real)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    Real,
    Fake,
}

/// What to do when category A is drawn but the pool holds a single problem.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmallPoolPolicy {
    /// Fall back to category B for that draw.
    #[default]
    Resample,
    Error,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairSample<'a> {
    pub row_1: Row<'a>,
    pub row_2: Row<'a>,
    pub label: u8,
    pub provenance: Provenance,
    /// Pool index of the problem `row_1` comes from.
    pub source: usize,
    /// Pool index of the problem `row_2` comes from.
    pub partner: usize,
    /// For category B: `row_2.cells[k]` is the `shuffle[k]`-th cell of the
    /// assembled, unshuffled row.
    pub shuffle: Option<[usize; 3]>,
}

#[derive(Clone, Debug)]
pub struct PairBatch<'a> {
    pub samples: Vec<PairSample<'a>>,
    pub kind: PairKind,
}

impl PairBatch<'_> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Every label agrees with the batch kind.
    pub fn is_homogeneous(&self) -> bool {
        let want = u8::from(self.kind == PairKind::Real);
        self.samples.iter().all(|s| s.label == want)
    }
}

const PERMUTATIONS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

/// Index of a permutation of `0..3` in lexicographic order.
pub fn permutation_index(p: [usize; 3]) -> usize {
    PERMUTATIONS
        .iter()
        .position(|q| *q == p)
        .expect("a permutation of 0..3")
}

fn context_row(problem: &RpmProblem, second: bool) -> Row<'_> {
    if second {
        problem.row_b()
    } else {
        problem.row_a()
    }
}

/// Rows A and B of `problem` in random order, label 1.
pub fn sample_real_pair<'a, R: Rng + ?Sized>(pool: &'a [RpmProblem], source: usize, rng: &mut R) -> PairSample<'a> {
    let problem = &pool[source];
    let swap = rng.random_bool(0.5);
    PairSample {
        row_1: context_row(problem, swap),
        row_2: context_row(problem, !swap),
        label: 1,
        provenance: Provenance::Real,
        source,
        partner: source,
        shuffle: None,
    }
}

/// A fake pair anchored on `pool[source]`, label 0.
pub fn sample_fake_pair<'a, R: Rng + ?Sized>(
    pool: &'a [RpmProblem],
    source: usize,
    policy: SmallPoolPolicy,
    rng: &mut R,
) -> Result<PairSample<'a>> {
    let problem = pool
        .get(source)
        .ok_or_else(|| Error::invalid(format!("source index {source} outside a pool of {}", pool.len())))?;
    let use_b = rng.random_bool(0.5);
    let row_1 = context_row(problem, use_b);
    let mut cat_a = rng.random_bool(0.5);
    if cat_a && pool.len() < 2 {
        match policy {
            SmallPoolPolicy::Resample => cat_a = false,
            SmallPoolPolicy::Error => {
                return Err(Error::invalid(
                    "category A fake pairs need a pool of at least two problems",
                ))
            }
        }
    }
    if cat_a {
        let mut partner = rng.random_range(0..pool.len() - 1);
        if partner >= source {
            partner += 1;
        }
        let row_2 = context_row(&pool[partner], rng.random_bool(0.5));
        return Ok(PairSample {
            row_1,
            row_2,
            label: 0,
            provenance: Provenance::FakeCatA,
            source,
            partner,
            shuffle: None,
        });
    }
    let gamma = context_row(problem, !use_b);
    let (cells, provenance): ([&Cell; 3], _) = if rng.random_bool(0.5) {
        let (_, _, [c7, c8]) = problem.rows_of();
        ([c7, c8, gamma.cells[rng.random_range(0..3)]], Provenance::FakeCatBRowC)
    } else {
        (
            [
                gamma.cells[0],
                gamma.cells[1],
                &problem.candidates()[rng.random_range(0..CANDIDATES)],
            ],
            Provenance::FakeCatBRowGamma,
        )
    };
    let perm = *PERMUTATIONS.choose(rng).expect("non-empty");
    Ok(PairSample {
        row_1,
        row_2: Row::new(cells[perm[0]], cells[perm[1]], cells[perm[2]]),
        label: 0,
        provenance,
        source,
        partner: source,
        shuffle: Some(perm),
    })
}

/// `size` fresh samples of one kind, each from a uniformly drawn problem.
pub fn make_batch<'a, R: Rng + ?Sized>(
    pool: &'a [RpmProblem],
    kind: PairKind,
    size: usize,
    policy: SmallPoolPolicy,
    rng: &mut R,
) -> Result<PairBatch<'a>> {
    if pool.is_empty() {
        return Err(Error::invalid("cannot sample pairs from an empty pool"));
    }
    if size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let samples = (0..size)
        .map(|_| {
            let source = rng.random_range(0..pool.len());
            match kind {
                PairKind::Real => Ok(sample_real_pair(pool, source, rng)),
                PairKind::Fake => sample_fake_pair(pool, source, policy, rng),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PairBatch { samples, kind })
}
