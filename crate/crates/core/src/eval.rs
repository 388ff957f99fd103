//! Precision@N evaluation with every indexed image used once as a query.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{Index, RankedList};
use crate::error::{Error, Result};
use crate::expansion::{query_with_expansion, ExpansionConfig, ExpansionMethod};
use crate::model::DatasetManifest;
use crate::pca::PcaLevel;
use crate::scalar::Scalar;

/// Retrieval-set sizes reported by default.
pub const DEFAULT_NS: [usize; 6] = [1, 3, 5, 10, 15, 20];

/// Set size behind the per-class and average figures.
pub const MAIN_N: usize = 20;

/// Fraction of the first `n` entries labelled `query_class`.
pub fn precision_at_n(ranked: &RankedList, query_class: &str, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Evaluation("n must be at least 1".into()));
    }
    if ranked.len() < n {
        return Err(Error::Evaluation(format!(
            "precision@{n} needs {n} candidates, got {}",
            ranked.len()
        )));
    }
    let hits = ranked.entries[..n]
        .iter()
        .filter(|e| e.class_label == query_class)
        .count();
    Ok(hits as f64 / n as f64)
}

/// Pipeline settings recorded alongside the figures.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunDescription {
    pub k: usize,
    pub d: usize,
    pub top_n: usize,
    pub pca_level: Option<PcaLevel>,
    pub pca_dim: Option<usize>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    /// Retrieval-set sizes; `MAIN_N` is added when missing.
    pub ns: Vec<usize>,
    pub expansion: ExpansionConfig,
    /// Skip each query's own row in every scan.
    pub leave_one_out: bool,
    pub run: RunDescription,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ns: DEFAULT_NS.to_vec(),
            expansion: ExpansionConfig::default(),
            leave_one_out: true,
            run: RunDescription::default(),
        }
    }
}

impl EvalConfig {
    pub fn with_expansion(mut self, method: ExpansionMethod) -> Self {
        self.expansion.method = method;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassPrecision {
    pub class: String,
    pub queries: usize,
    /// Mean precision@`MAIN_N` over this class's queries.
    pub precision: f64,
    /// Mean precision per retrieval-set size.
    pub per_n: BTreeMap<usize, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    #[serde(flatten)]
    pub run: RunDescription,
    pub expansion: ExpansionMethod,
    pub expansion_top: usize,
    pub leave_one_out: bool,
    pub ns: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// In manifest class order; classes without queries are omitted.
    pub per_class: Vec<ClassPrecision>,
    /// Mean of the per-class precisions.
    pub average: f64,
    /// Mean over classes of the per-class precision@N.
    pub per_n: BTreeMap<usize, f64>,
    pub queries: usize,
    pub config: ReportConfig,
    pub warnings: Vec<String>,
}

impl EvaluationReport {
    pub fn class(&self, name: &str) -> Option<&ClassPrecision> {
        self.per_class.iter().find(|c| c.class == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("evaluation report serializes")
    }
}

impl fmt::Display for EvaluationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.config;
        writeln!(
            f,
            "k={} d={} top={} expansion={} pca={} seed={} leave-one-out={}",
            c.run.k,
            c.run.d,
            c.run.top_n,
            c.expansion,
            match (c.run.pca_level, c.run.pca_dim) {
                (Some(l), Some(d)) => format!("{l}:{d}"),
                _ => "off".to_string(),
            },
            c.run.seed,
            c.leave_one_out
        )?;
        let width = self
            .per_class
            .iter()
            .map(|p| p.class.len())
            .max()
            .unwrap_or(0)
            .max("Average".len());
        writeln!(
            f,
            "{:<width$}  {:>8}  {:>7}",
            "Class",
            "Queries",
            format!("P@{MAIN_N}")
        )?;
        for p in &self.per_class {
            writeln!(
                f,
                "{:<width$}  {:>8}  {:>7.3}",
                p.class, p.queries, p.precision
            )?;
        }
        writeln!(
            f,
            "{:<width$}  {:>8}  {:>7.3}",
            "Average", self.queries, self.average
        )?;
        writeln!(f)?;
        write!(f, "{:<6}", "N")?;
        for n in self.per_n.keys() {
            write!(f, " {:>6}", n)?;
        }
        writeln!(f)?;
        write!(f, "{:<6}", "P@N")?;
        for p in self.per_n.values() {
            write!(f, " {:>6.3}", p)?;
        }
        writeln!(f)?;
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

/// Queries the index with every image of `manifest` and aggregates
/// precision@N per class. Class labels come from the manifest.
pub fn evaluate_dataset<T: Scalar>(
    index: &Index<T>,
    manifest: &DatasetManifest,
    config: &EvalConfig,
) -> Result<EvaluationReport> {
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    let mut ns = config.ns.clone();
    if !ns.contains(&MAIN_N) {
        ns.push(MAIN_N);
    }
    ns.sort_unstable();
    ns.dedup();
    if ns[0] == 0 {
        return Err(Error::Evaluation(
            "retrieval-set sizes must be positive".into(),
        ));
    }
    let max_n = *ns.last().expect("ns is nonempty");
    let available = index.len() - usize::from(config.leave_one_out);
    if available < max_n {
        return Err(Error::Evaluation(format!(
            "precision@{max_n} needs {max_n} candidates but only {available} are searchable"
        )));
    }

    let labels = manifest.label_map();
    let mut rows = Vec::with_capacity(manifest.images.len());
    for entry in &manifest.images {
        let row = index
            .position(&entry.id)
            .ok_or_else(|| Error::Evaluation(format!("image `{}` is not indexed", entry.id)))?;
        rows.push(row);
    }
    let index = index.clone().with_labels(|id| labels.get(id).copied())?;

    let per_query: Vec<Vec<f64>> = rows
        .par_iter()
        .map(|&row| {
            let query = index.descriptor(row);
            let exclude = config.leave_one_out.then_some(row);
            let ranked = query_with_expansion(&index, &query, &config.expansion, max_n, exclude)?;
            let class = &index.labels()[row];
            ns.iter()
                .map(|&n| precision_at_n(&ranked, class, n))
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut sums: HashMap<&str, (usize, Vec<f64>)> = HashMap::new();
    for (entry, precisions) in manifest.images.iter().zip(&per_query) {
        let slot = sums
            .entry(entry.class.as_str())
            .or_insert_with(|| (0, vec![0.0; ns.len()]));
        slot.0 += 1;
        for (s, p) in slot.1.iter_mut().zip(precisions) {
            *s += p;
        }
    }

    let main_pos = ns
        .iter()
        .position(|&n| n == MAIN_N)
        .expect("MAIN_N present");
    let mut per_class = Vec::new();
    let mut warnings = Vec::new();
    for class in &manifest.classes {
        match sums.get(class.as_str()) {
            Some((count, totals)) => {
                let per_n: BTreeMap<usize, f64> = ns
                    .iter()
                    .zip(totals)
                    .map(|(&n, &t)| (n, t / *count as f64))
                    .collect();
                per_class.push(ClassPrecision {
                    class: class.clone(),
                    queries: *count,
                    precision: totals[main_pos] / *count as f64,
                    per_n,
                });
            }
            None => {
                log::warn!("class `{class}` has no queries");
                warnings.push(format!("class `{class}` has no queries and is omitted"));
            }
        }
    }
    if per_class.is_empty() {
        return Err(Error::Evaluation("no class has any query".into()));
    }
    let classes = per_class.len() as f64;
    let per_n: BTreeMap<usize, f64> = ns
        .iter()
        .map(|&n| {
            (
                n,
                per_class.iter().map(|c| c.per_n[&n]).sum::<f64>() / classes,
            )
        })
        .collect();
    let average = per_class.iter().map(|c| c.precision).sum::<f64>() / classes;

    Ok(EvaluationReport {
        per_class,
        average,
        per_n,
        queries: rows.len(),
        config: ReportConfig {
            run: config.run.clone(),
            expansion: config.expansion.method,
            expansion_top: config.expansion.top,
            leave_one_out: config.leave_one_out,
            ns,
        },
        warnings,
    })
}
