use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
    Generated,
    Augmented,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
            Domain::Generated => "generated",
            Domain::Augmented => "augmented",
        })
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            "generated" => Ok(Domain::Generated),
            "augmented" => Ok(Domain::Augmented),
            other => Err(Error::Argument(format!("unknown domain tag '{other}'"))),
        }
    }
}

/// Feature rows with optional integer class labels and a domain tag.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Matrix,
    labels: Option<Vec<usize>>,
    classes: usize,
    domain: Domain,
}

impl LabeledDataset {
    pub fn labeled(features: Matrix, labels: Vec<usize>, classes: usize, domain: Domain) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::dim("LabeledDataset labels", features.rows(), labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Label { label: bad, classes });
        }
        Ok(Self {
            features,
            labels: Some(labels),
            classes,
            domain,
        })
    }

    pub fn unlabeled(features: Matrix, domain: Domain) -> Self {
        Self {
            features,
            labels: None,
            classes: 0,
            domain,
        }
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn is_labeled(&self) -> bool {
        self.labels.is_some()
    }

    pub fn require_labels(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::Argument(format!("{} dataset has no labels", self.domain)))
    }

    /// Class count; zero for unlabeled data.
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    /// Widens the declared class count (labels stay valid).
    pub fn with_classes(mut self, classes: usize) -> Result<Self> {
        if let Some(&bad) = self.labels.iter().flatten().find(|&&l| l >= classes) {
            return Err(Error::Label { label: bad, classes });
        }
        if self.labels.is_some() {
            self.classes = classes;
        }
        Ok(self)
    }

    /// Drops labels. The result is the only form of target data the
    /// training paths accept.
    pub fn unlabeled_view(&self) -> TargetView<'_> {
        TargetView {
            features: &self.features,
        }
    }

    pub fn without_labels(&self) -> LabeledDataset {
        LabeledDataset::unlabeled(self.features.clone(), self.domain)
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &l in self.labels.iter().flatten() {
            h[l] += 1;
        }
        h
    }

    pub fn select_rows(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(idx),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            classes: self.classes,
            domain: self.domain,
        }
    }

    /// Rows of one class.
    pub fn class_rows(&self, class: usize) -> Matrix {
        let idx: Vec<usize> = self
            .labels
            .iter()
            .flatten()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        self.features.select_rows(&idx)
    }
}

/// Unlabeled borrowed features. Target ground truth cannot be reached from it.
#[derive(Debug, Clone, Copy)]
pub struct TargetView<'a> {
    features: &'a Matrix,
}

impl<'a> TargetView<'a> {
    pub fn new(features: &'a Matrix) -> Self {
        Self { features }
    }

    pub fn features(&self) -> &'a Matrix {
        self.features
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A labeled source domain, an unlabeled target domain, and held-back
/// target labels that only evaluation code reads.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainPair {
    pub source: LabeledDataset,
    target: LabeledDataset,
    target_truth: Vec<usize>,
    target_eval: LabeledDataset,
}

impl DomainPair {
    /// `target` carries ground truth which is split off here; `target_eval`
    /// is an additional labeled draw from the target distribution.
    pub fn new(source: LabeledDataset, target: LabeledDataset, target_eval: LabeledDataset) -> Result<Self> {
        source.require_labels()?;
        let target_truth = target.require_labels()?.to_vec();
        target_eval.require_labels()?;
        if source.dim() != target.dim() || source.dim() != target_eval.dim() {
            return Err(Error::dim(
                "DomainPair",
                format!("dimension {}", source.dim()),
                format!("{} / {}", target.dim(), target_eval.dim()),
            ));
        }
        let classes = source.classes();
        if target.classes() > classes || target_eval.classes() > classes {
            return Err(Error::Argument("class count differs across domains".into()));
        }
        Ok(Self {
            target: target.without_labels().with_domain(Domain::Target),
            target_eval: target_eval.with_classes(classes)?.with_domain(Domain::Target),
            source,
            target_truth,
        })
    }

    pub fn classes(&self) -> usize {
        self.source.classes()
    }

    /// The unlabeled training target.
    pub fn target(&self) -> &LabeledDataset {
        &self.target
    }

    pub fn target_view(&self) -> TargetView<'_> {
        self.target.unlabeled_view()
    }

    /// Training target with its ground truth attached, for evaluation only.
    pub fn target_with_truth(&self) -> LabeledDataset {
        LabeledDataset::labeled(
            self.target.features().clone(),
            self.target_truth.clone(),
            self.classes(),
            Domain::Target,
        )
        .expect("truth validated at construction")
    }

    /// Held-out labeled target sample, for evaluation only.
    pub fn target_eval(&self) -> &LabeledDataset {
        &self.target_eval
    }
}
