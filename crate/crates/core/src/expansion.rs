//! Memory vectors and automatic query expansion.
//!
//! A group of `M` global descriptors of length `D` is laid out as the
//! columns of a `D × M` matrix `G`. The p-sum memory vector is `G·1` and
//! the p-inv memory vector is `(G⁺)ᵀ·1`, which down-weights directions
//! shared by several members. Expansion searches once for the top
//! candidates, fuses them with the query and searches again.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{Index, RankedList};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{all_finite, Scalar};
use crate::vlad::GlobalDescriptor;

pub use crate::linalg::{default_pinv_tolerance, pseudo_inverse};

/// Candidates fused with the query.
pub const DEFAULT_EXPANSION_TOP: usize = 3;

/// Global descriptors stored as the columns of a `D × M` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorGroup<T> {
    g: Matrix<T>,
}

impl<T: Scalar> DescriptorGroup<T> {
    pub fn new<V: AsRef<[T]>>(members: &[V]) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::EmptyCollection("descriptor group has no members".into()))?;
        let dim = first.as_ref().len();
        for m in members {
            let m = m.as_ref();
            if m.len() != dim {
                return Err(Error::dim(dim, m.len()));
            }
            if !all_finite(m) {
                return Err(Error::Data("non-finite group member".into()));
            }
        }
        Ok(DescriptorGroup {
            g: Matrix::from_columns(members)?,
        })
    }

    /// Member count `M`.
    pub fn len(&self) -> usize {
        self.g.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.g.cols() == 0
    }

    /// Descriptor length `D`.
    pub fn dim(&self) -> usize {
        self.g.rows()
    }

    /// The `D × M` matrix `G`.
    pub fn matrix(&self) -> &Matrix<T> {
        &self.g
    }

    /// All members are zero; `pinv_mv` then yields the zero vector.
    pub fn is_degenerate(&self) -> bool {
        self.g.as_slice().iter().all(|x| *x == T::zero())
    }
}

/// `G·1`: element-wise sum of the members.
pub fn psum<T: Scalar>(group: &DescriptorGroup<T>) -> Vec<T> {
    group
        .g
        .row_iter()
        .map(|r| T::of(r.iter().map(|x| x.as_f64()).sum()))
        .collect()
}

/// `(G⁺)ᵀ·1` with the default singular-value cutoff.
pub fn pinv_mv<T: Scalar>(group: &DescriptorGroup<T>) -> Result<Vec<T>> {
    let pinv = pseudo_inverse(&group.g, None)?;
    // (G⁺)ᵀ·1 is the sum of the rows of G⁺ (M × D)
    let mut acc = vec![0.0f64; group.dim()];
    for r in pinv.row_iter() {
        for (a, &x) in acc.iter_mut().zip(r) {
            *a += x.as_f64();
        }
    }
    Ok(acc.into_iter().map(T::of).collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpansionMethod {
    #[default]
    None,
    /// Fuse with the p-sum memory vector.
    Psum,
    /// Fuse with the p-inv memory vector.
    Pinv,
}

impl fmt::Display for ExpansionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExpansionMethod::None => "none",
            ExpansionMethod::Psum => "psum",
            ExpansionMethod::Pinv => "pinv",
        })
    }
}

impl FromStr for ExpansionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ExpansionMethod::None),
            "psum" => Ok(ExpansionMethod::Psum),
            "pinv" => Ok(ExpansionMethod::Pinv),
            other => Err(Error::Data(format!("unknown expansion method `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionConfig {
    pub method: ExpansionMethod,
    /// First-pass candidates fused with the query.
    pub top: usize,
}

impl ExpansionConfig {
    pub fn new(method: ExpansionMethod) -> Self {
        ExpansionConfig {
            method,
            top: DEFAULT_EXPANSION_TOP,
        }
    }
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        Self::new(ExpansionMethod::None)
    }
}

/// Memory vector of `{query} ∪ candidates`, re-normalized.
///
/// Returns the query unchanged when there are no candidates, when
/// `method` is `None`, or when the memory vector is zero.
pub fn expand_query<T: Scalar, V: AsRef<[T]>>(
    query: &GlobalDescriptor<T>,
    candidates: &[V],
    method: ExpansionMethod,
) -> Result<GlobalDescriptor<T>> {
    if candidates.is_empty() || method == ExpansionMethod::None {
        return Ok(query.clone());
    }
    let mut members: Vec<&[T]> = Vec::with_capacity(candidates.len() + 1);
    members.push(&query.values);
    members.extend(candidates.iter().map(|c| c.as_ref()));
    let group = DescriptorGroup::new(&members)?;
    let memory = match method {
        ExpansionMethod::Psum => psum(&group),
        ExpansionMethod::Pinv => pinv_mv(&group)?,
        ExpansionMethod::None => unreachable!(),
    };
    let expanded = GlobalDescriptor::new(query.image_id.clone(), memory, false).normalized();
    if expanded.normalized {
        Ok(expanded)
    } else {
        log::warn!(
            "degenerate memory vector for `{}`; keeping the query",
            query.image_id
        );
        Ok(query.clone())
    }
}

/// Two-pass retrieval: the top `config.top` candidates of the first scan
/// are fused with the query, which is then searched again for `top_k`
/// candidates. `exclude` (the query's own row, if indexed) is skipped in
/// both scans. With `ExpansionMethod::None` a single scan is made.
pub fn query_with_expansion<T: Scalar>(
    index: &Index<T>,
    query: &GlobalDescriptor<T>,
    config: &ExpansionConfig,
    top_k: usize,
    exclude: Option<usize>,
) -> Result<RankedList> {
    if config.method == ExpansionMethod::None {
        return index.search_excluding(&query.values, top_k, exclude);
    }
    let first = index.search_excluding(&query.values, config.top.max(1), exclude)?;
    let candidates: Vec<&[T]> = first.rows().map(|r| index.row(r)).collect();
    let expanded = expand_query(query, &candidates, config.method)?;
    index.search_excluding(&expanded.values, top_k, exclude)
}
