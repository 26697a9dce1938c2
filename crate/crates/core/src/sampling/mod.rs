//! Minibatch construction: uniform subsets and nearest-neighbour ("nearby") subsets.

mod kdtree;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use kdtree::SpatialIndex;

use crate::error::{Error, Result};
use crate::seed::stream_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingScheme {
    Uniform,
    Nearby,
}

impl SamplingScheme {
    pub fn name(self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::Nearby => "nearby",
        }
    }
}

impl std::fmt::Display for SamplingScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Distinct row indices forming one minibatch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Minibatch {
    indices: Vec<usize>,
    scheme: SamplingScheme,
    center: Option<usize>,
}

impl Minibatch {
    /// The whole index set `0..n` in order.
    pub fn full(n: usize) -> Self {
        Self {
            indices: (0..n).collect(),
            scheme: SamplingScheme::Uniform,
            center: None,
        }
    }

    /// Explicit indices; they must be distinct and below `n`.
    pub fn from_indices(indices: Vec<usize>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        for &i in &indices {
            if i >= n {
                return Err(Error::InvalidArgument(format!("index {i} out of range for {n} rows")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidArgument(format!("duplicate index {i} in minibatch")));
            }
        }
        if indices.is_empty() {
            return Err(Error::InvalidArgument("empty minibatch".into()));
        }
        Ok(Self {
            indices,
            scheme: SamplingScheme::Uniform,
            center: None,
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn scheme(&self) -> SamplingScheme {
        self.scheme
    }

    pub fn center(&self) -> Option<usize> {
        self.center
    }

    /// Indices in increasing order. Principal submatrices built from this
    /// depend only on the set, not on the draw order.
    pub fn sorted_indices(&self) -> Vec<usize> {
        let mut v = self.indices.clone();
        v.sort_unstable();
        v
    }
}

fn check_sizes(n: usize, m: usize) -> Result<()> {
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!(
            "minibatch size {m} must lie in 1..={n}"
        )));
    }
    Ok(())
}

/// `m` distinct indices from `0..n`, every subset equally likely.
pub fn uniform_minibatch<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<Minibatch> {
    check_sizes(n, m)?;
    Ok(Minibatch {
        indices: index::sample(rng, n, m).into_vec(),
        scheme: SamplingScheme::Uniform,
        center: None,
    })
}

/// A uniformly drawn centre followed by its `m − 1` nearest neighbours.
pub fn nearby_minibatch<R: Rng + ?Sized>(
    index: &SpatialIndex,
    n: usize,
    m: usize,
    rng: &mut R,
) -> Result<Minibatch> {
    if index.len() != n {
        return Err(Error::DimensionMismatch {
            what: "spatial index size",
            expected: n,
            got: index.len(),
        });
    }
    check_sizes(n, m)?;
    let center = rng.random_range(0..n);
    nearby_around(index, center, m)
}

/// The nearby batch for a fixed centre.
pub fn nearby_around(index: &SpatialIndex, center: usize, m: usize) -> Result<Minibatch> {
    check_sizes(index.len(), m)?;
    if center >= index.len() {
        return Err(Error::InvalidArgument(format!("centre {center} out of range")));
    }
    let mut indices = Vec::with_capacity(m);
    indices.push(center);
    indices.extend(index.query_excluding(index.point(center), m - 1, Some(center))?);
    Ok(Minibatch {
        indices,
        scheme: SamplingScheme::Nearby,
        center: Some(center),
    })
}

/// Draws the minibatch for iteration `k` as a pure function of `(seed, k)`.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    n: usize,
    m: usize,
    seed: u64,
    index: Option<SpatialIndex>,
}

impl BatchSampler {
    pub fn new(x: &DMatrix<f64>, m: usize, scheme: SamplingScheme, seed: u64) -> Result<Self> {
        let n = x.nrows();
        check_sizes(n, m)?;
        let index = match scheme {
            SamplingScheme::Uniform => None,
            SamplingScheme::Nearby => Some(SpatialIndex::build(x)?),
        };
        Ok(Self { n, m, seed, index })
    }

    pub fn scheme(&self) -> SamplingScheme {
        if self.index.is_some() {
            SamplingScheme::Nearby
        } else {
            SamplingScheme::Uniform
        }
    }

    pub fn batch_size(&self) -> usize {
        self.m
    }

    pub fn draw(&self, k: u64) -> Minibatch {
        let mut rng = stream_rng(self.seed, "batch", k);
        let batch = match &self.index {
            None => uniform_minibatch(self.n, self.m, &mut rng),
            Some(index) => nearby_minibatch(index, self.n, self.m, &mut rng),
        };
        batch.expect("sizes were validated at construction")
    }
}
