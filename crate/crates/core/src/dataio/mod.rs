//! Dataset model and everything that produces or consumes it: TSV loading
//! and saving, the synthetic screen generator with a known ground-truth
//! graph, exact-assignment pairing of perturbed and control cells, reference
//! differential-expression profiles, and train/val/test splits.

mod assign;
mod dge;
mod pairing;
mod split;
mod synth;
mod tsv;

use std::collections::BTreeSet;

use thiserror::Error;

use crate::diffcore::Matrix;

pub use assign::solve_assignment;
pub use dge::{compute_reference_dge, DgeReference};
pub use pairing::{build_ade_partners, build_reference_dge, pair_optimal_transport, PairingPlan};
pub use split::split_dataset;
pub use synth::{synthesize_dataset, SynthConfig};
pub use tsv::{load_dataset, load_truth_edges, save_dataset, save_truth_edges};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("unknown gene {name:?} at {path}:{line}: not in the modeled (perturbed or extended) set")]
    UnknownGene {
        name: String,
        path: String,
        line: usize,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("pairing failed: {0}")]
    Pairing(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

pub type DataResult<T> = Result<T, DataError>;

/// Role of a gene in the catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneRole {
    /// Interventional data exists for this gene.
    Perturbed,
    /// Modeled without interventional data (intermediate node candidates).
    Extended,
    /// Measured only; not part of the square edge matrix.
    Measured,
}

impl GeneRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            GeneRole::Perturbed => "perturbed",
            GeneRole::Extended => "extended",
            GeneRole::Measured => "measured",
        }
    }

    pub fn parse(s: &str) -> Option<GeneRole> {
        match s {
            "perturbed" => Some(GeneRole::Perturbed),
            "extended" => Some(GeneRole::Extended),
            "measured" => Some(GeneRole::Measured),
            _ => None,
        }
    }
}

/// Ordered gene catalog with the perturbed / extended partition.
///
/// The "modeled" ordering used by the treatment matrix, the edge matrix and
/// the differential-expression references is: perturbed genes in catalog
/// order, then extended genes in catalog order.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneCatalog {
    names: Vec<String>,
    roles: Vec<GeneRole>,
    perturbed_idx: Vec<usize>,
    extended_idx: Vec<usize>,
    modeled_idx: Vec<usize>,
}

impl GeneCatalog {
    pub fn new(names: Vec<String>, roles: Vec<GeneRole>) -> DataResult<Self> {
        if names.len() != roles.len() {
            return Err(DataError::Dimension(format!(
                "{} gene names but {} roles",
                names.len(),
                roles.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for n in &names {
            if !seen.insert(n.clone()) {
                return Err(DataError::Invalid(format!("duplicate gene name {n:?}")));
            }
        }
        let perturbed_idx: Vec<usize> = roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == GeneRole::Perturbed)
            .map(|(i, _)| i)
            .collect();
        let extended_idx: Vec<usize> = roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == GeneRole::Extended)
            .map(|(i, _)| i)
            .collect();
        let modeled_idx: Vec<usize> = perturbed_idx
            .iter()
            .chain(extended_idx.iter())
            .copied()
            .collect();
        Ok(GeneCatalog {
            names,
            roles,
            perturbed_idx,
            extended_idx,
            modeled_idx,
        })
    }

    pub fn n_genes(&self) -> usize {
        self.names.len()
    }

    /// Number of modeled genes (perturbed plus extended).
    pub fn n_modeled(&self) -> usize {
        self.modeled_idx.len()
    }

    pub fn n_perturbed(&self) -> usize {
        self.perturbed_idx.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn roles(&self) -> &[GeneRole] {
        &self.roles
    }

    pub fn name(&self, gene: usize) -> &str {
        &self.names[gene]
    }

    /// Catalog index of the j-th modeled gene.
    pub fn modeled_to_gene(&self, modeled: usize) -> usize {
        self.modeled_idx[modeled]
    }

    pub fn modeled_indices(&self) -> &[usize] {
        &self.modeled_idx
    }

    /// Modeled index of a gene name, if it is perturbed or extended.
    pub fn modeled_index_of(&self, name: &str) -> Option<usize> {
        self.modeled_idx
            .iter()
            .position(|&g| self.names[g] == name)
    }

    pub fn modeled_name(&self, modeled: usize) -> &str {
        &self.names[self.modeled_idx[modeled]]
    }

    pub fn modeled_names(&self) -> Vec<String> {
        self.modeled_idx
            .iter()
            .map(|&g| self.names[g].clone())
            .collect()
    }

    /// Whether the j-th modeled gene is perturbed (has interventional data).
    pub fn modeled_is_perturbed(&self, modeled: usize) -> bool {
        modeled < self.perturbed_idx.len()
    }
}

/// One screen: counts, one-hot treatments, QC flags, catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbDataset {
    x: Matrix,
    p: Matrix,
    qc: Vec<u8>,
    catalog: GeneCatalog,
    library_size: Vec<f64>,
    /// Modeled index of each row's treatment; `None` for controls.
    treatments: Vec<Option<usize>>,
}

impl PerturbDataset {
    pub fn new(x: Matrix, p: Matrix, qc: Vec<u8>, catalog: GeneCatalog) -> DataResult<Self> {
        let n = x.rows();
        if x.cols() != catalog.n_genes() {
            return Err(DataError::Dimension(format!(
                "expression has {} columns but catalog lists {} genes",
                x.cols(),
                catalog.n_genes()
            )));
        }
        if p.rows() != n || qc.len() != n {
            return Err(DataError::Dimension(format!(
                "row counts disagree: expression {}, treatments {}, qc {}",
                n,
                p.rows(),
                qc.len()
            )));
        }
        if p.cols() != catalog.n_modeled() {
            return Err(DataError::Dimension(format!(
                "treatment matrix has {} columns but there are {} modeled genes",
                p.cols(),
                catalog.n_modeled()
            )));
        }
        for (row, &flag) in qc.iter().enumerate() {
            if flag > 1 {
                return Err(DataError::Invalid(format!(
                    "qc flag at row {row} must be 0 or 1"
                )));
            }
        }
        let mut treatments = Vec::with_capacity(n);
        let mut library_size = Vec::with_capacity(n);
        for row in 0..n {
            let mut hot = None;
            let mut sum = 0.0;
            for (col, &v) in p.row(row).iter().enumerate() {
                if v != 0.0 && v != 1.0 {
                    return Err(DataError::Invalid(format!(
                        "treatment entry at row {row}, column {col} must be 0 or 1"
                    )));
                }
                if v == 1.0 {
                    hot = Some(col);
                }
                sum += v;
            }
            if sum > 1.0 {
                return Err(DataError::Invalid(format!(
                    "treatment row {row} selects more than one gene"
                )));
            }
            treatments.push(hot);
            let mut lib = 0.0;
            for (col, &v) in x.row(row).iter().enumerate() {
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(DataError::Invalid(format!(
                        "count at row {row}, column {col} is not a non-negative integer: {v}"
                    )));
                }
                lib += v;
            }
            if lib <= 0.0 {
                return Err(DataError::Invalid(format!(
                    "row {row} has zero total counts"
                )));
            }
            library_size.push(lib);
        }
        Ok(PerturbDataset {
            x,
            p,
            qc,
            catalog,
            library_size,
            treatments,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.x.rows()
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn p(&self) -> &Matrix {
        &self.p
    }

    pub fn qc(&self) -> &[u8] {
        &self.qc
    }

    pub fn catalog(&self) -> &GeneCatalog {
        &self.catalog
    }

    pub fn library_size(&self) -> &[f64] {
        &self.library_size
    }

    /// Modeled index of the row's treatment; `None` for control rows.
    pub fn treatment(&self, row: usize) -> Option<usize> {
        self.treatments[row]
    }

    pub fn control_rows(&self) -> Vec<usize> {
        (0..self.n_rows())
            .filter(|&r| self.treatments[r].is_none())
            .collect()
    }

    pub fn rows_with_treatment(&self, modeled: usize) -> Vec<usize> {
        (0..self.n_rows())
            .filter(|&r| self.treatments[r] == Some(modeled))
            .collect()
    }

    /// New dataset containing the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> PerturbDataset {
        PerturbDataset {
            x: self.x.select_rows(rows),
            p: self.p.select_rows(rows),
            qc: rows.iter().map(|&r| self.qc[r]).collect(),
            catalog: self.catalog.clone(),
            library_size: rows.iter().map(|&r| self.library_size[r]).collect(),
            treatments: rows.iter().map(|&r| self.treatments[r]).collect(),
        }
    }

    /// Expression of one gene across the given rows.
    pub fn gene_counts(&self, gene: usize, rows: &[usize]) -> Vec<f64> {
        rows.iter().map(|&r| self.x.get(r, gene)).collect()
    }
}

/// Known generating graph of a synthetic dataset; the oracle for recovery
/// experiments. Signed weights over modeled genes; zero means no edge.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthGrn {
    adjacency: Matrix,
}

impl GroundTruthGrn {
    pub fn new(adjacency: Matrix) -> DataResult<Self> {
        if adjacency.rows() != adjacency.cols() {
            return Err(DataError::Dimension(format!(
                "ground-truth adjacency must be square, got {}x{}",
                adjacency.rows(),
                adjacency.cols()
            )));
        }
        Ok(GroundTruthGrn { adjacency })
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn has_edge(&self, source: usize, target: usize) -> bool {
        self.adjacency.get(source, target) != 0.0
    }

    /// All (source, target, weight) triples with nonzero weight.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.adjacency.rows() {
            for j in 0..self.adjacency.cols() {
                let w = self.adjacency.get(i, j);
                if w != 0.0 {
                    out.push((i, j, w));
                }
            }
        }
        out
    }

    pub fn n_edges(&self) -> usize {
        self.adjacency.data().iter().filter(|&&w| w != 0.0).count()
    }

    /// Topological order of the DAG, if one exists.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.n_nodes();
        let mut indeg = vec![0usize; n];
        for (_, t, _) in self.edges() {
            indeg[t] += 1;
        }
        let mut queue: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(node) = queue.pop() {
            order.push(node);
            for j in 0..n {
                if self.adjacency.get(node, j) != 0.0 {
                    indeg[j] -= 1;
                    if indeg[j] == 0 {
                        queue.push(j);
                    }
                }
            }
        }
        (order.len() == n).then_some(order)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_catalog() -> GeneCatalog {
        GeneCatalog::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![GeneRole::Perturbed, GeneRole::Extended, GeneRole::Measured],
        )
        .unwrap()
    }

    #[test]
    fn catalog_partitions_are_disjoint_and_ordered() {
        let c = tiny_catalog();
        assert_eq!(c.n_modeled(), 2);
        assert_eq!(c.modeled_name(0), "a");
        assert_eq!(c.modeled_name(1), "b");
        assert!(c.modeled_is_perturbed(0));
        assert!(!c.modeled_is_perturbed(1));
        assert_eq!(c.modeled_index_of("c"), None);
    }

    #[test]
    fn duplicate_gene_names_rejected() {
        let r = GeneCatalog::new(
            vec!["a".into(), "a".into()],
            vec![GeneRole::Perturbed, GeneRole::Extended],
        );
        assert!(r.is_err());
    }

    #[test]
    fn dataset_validates_one_hot_and_integer_counts() {
        let catalog = tiny_catalog();
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 0.0, 1.0]]);
        let p = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        let d = PerturbDataset::new(x.clone(), p, vec![0, 1], catalog.clone()).unwrap();
        assert_eq!(d.treatment(0), Some(0));
        assert_eq!(d.treatment(1), None);
        assert_eq!(d.library_size(), &[6.0, 5.0]);

        let multi = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 0.0]]);
        assert!(PerturbDataset::new(x.clone(), multi, vec![0, 0], catalog.clone()).is_err());

        let frac = Matrix::from_rows(&[vec![1.5, 2.0, 3.0], vec![4.0, 0.0, 1.0]]);
        let p = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        assert!(PerturbDataset::new(frac, p, vec![0, 0], catalog).is_err());
    }

    #[test]
    fn ground_truth_reports_edges_and_topo_order() {
        let adj = Matrix::from_rows(&[
            vec![0.0, 0.8, 0.0],
            vec![0.0, 0.0, -0.5],
            vec![0.0, 0.0, 0.0],
        ]);
        let g = GroundTruthGrn::new(adj).unwrap();
        assert_eq!(g.edges(), vec![(0, 1, 0.8), (1, 2, -0.5)]);
        assert!(g.topological_order().is_some());

        let cyclic = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let g = GroundTruthGrn::new(cyclic).unwrap();
        assert!(g.topological_order().is_none());
    }
}
