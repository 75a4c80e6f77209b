//! On-disk TSV formats: expression, treatments, QC flags, catalog, and the
//! synthetic ground-truth edge list.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::diffcore::Matrix;

use super::{
    DataError, DataResult, GeneCatalog, GeneRole, GroundTruthGrn, PerturbDataset,
};

fn read_file(path: &Path) -> DataResult<String> {
    fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_file(path: &Path, contents: &str) -> DataResult<()> {
    let mut f = fs::File::create(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    f.write_all(contents.as_bytes()).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_error(path: &Path, line: usize, msg: impl Into<String>) -> DataError {
    DataError::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn load_catalog(path: &Path) -> DataResult<GeneCatalog> {
    let text = read_file(path)?;
    let mut names = Vec::new();
    let mut roles = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let name = parts
            .next()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| parse_error(path, i + 1, "missing gene name"))?;
        let role_str = parts
            .next()
            .ok_or_else(|| parse_error(path, i + 1, "missing gene role"))?;
        let role = GeneRole::parse(role_str).ok_or_else(|| {
            parse_error(
                path,
                i + 1,
                format!("unknown role {role_str:?}; expected perturbed, extended or measured"),
            )
        })?;
        names.push(name.to_string());
        roles.push(role);
    }
    GeneCatalog::new(names, roles)
}

fn load_expression(path: &Path, catalog: &GeneCatalog) -> DataResult<Matrix> {
    let text = read_file(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_error(path, 1, "missing header row"))?;
    let header_names: Vec<&str> = header.split('\t').collect();
    if header_names.len() != catalog.n_genes() {
        return Err(parse_error(
            path,
            1,
            format!(
                "header lists {} genes but catalog has {}",
                header_names.len(),
                catalog.n_genes()
            ),
        ));
    }
    for (col, (have, want)) in header_names.iter().zip(catalog.names()).enumerate() {
        if have != want {
            return Err(parse_error(
                path,
                1,
                format!("header column {} is {have:?} but catalog says {want:?}", col + 1),
            ));
        }
    }
    let mut data = Vec::new();
    let mut rows = 0usize;
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != catalog.n_genes() {
            return Err(parse_error(
                path,
                i + 1,
                format!(
                    "expected {} columns, found {}",
                    catalog.n_genes(),
                    fields.len()
                ),
            ));
        }
        for (col, field) in fields.iter().enumerate() {
            let value: u64 = field.parse().map_err(|_| {
                parse_error(
                    path,
                    i + 1,
                    format!("column {}: {field:?} is not a non-negative integer", col + 1),
                )
            })?;
            data.push(value as f64);
        }
        rows += 1;
    }
    Matrix::from_vec(rows, catalog.n_genes(), data)
        .map_err(|e| DataError::Dimension(e.to_string()))
}

fn load_treatments(path: &Path, catalog: &GeneCatalog) -> DataResult<Matrix> {
    let text = read_file(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        if line == "control" {
            rows.push(None);
        } else {
            let modeled = catalog.modeled_index_of(line).ok_or(DataError::UnknownGene {
                name: line.to_string(),
                path: path.display().to_string(),
                line: i + 1,
            })?;
            rows.push(Some(modeled));
        }
    }
    let mut p = Matrix::zeros(rows.len(), catalog.n_modeled());
    for (row, t) in rows.iter().enumerate() {
        if let Some(col) = t {
            p.set(row, *col, 1.0);
        }
    }
    Ok(p)
}

fn load_qc(path: &Path) -> DataResult<Vec<u8>> {
    let text = read_file(path)?;
    let mut flags = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        match line {
            "0" => flags.push(0),
            "1" => flags.push(1),
            other => {
                return Err(parse_error(
                    path,
                    i + 1,
                    format!("qc flag must be 0 or 1, got {other:?}"),
                ))
            }
        }
    }
    Ok(flags)
}

/// Load and cross-validate the four dataset files.
pub fn load_dataset(
    expr_path: &Path,
    treat_path: &Path,
    qc_path: &Path,
    catalog_path: &Path,
) -> DataResult<PerturbDataset> {
    let catalog = load_catalog(catalog_path)?;
    let x = load_expression(expr_path, &catalog)?;
    let p = load_treatments(treat_path, &catalog)?;
    let qc = load_qc(qc_path)?;
    PerturbDataset::new(x, p, qc, catalog)
}

/// Write the four dataset files; `load_dataset` reproduces the dataset
/// byte for byte through a save/load round trip.
pub fn save_dataset(
    dataset: &PerturbDataset,
    expr_path: &Path,
    treat_path: &Path,
    qc_path: &Path,
    catalog_path: &Path,
) -> DataResult<()> {
    let catalog = dataset.catalog();

    let mut cat = String::new();
    for (name, role) in catalog.names().iter().zip(catalog.roles()) {
        cat.push_str(name);
        cat.push('\t');
        cat.push_str(role.as_str());
        cat.push('\n');
    }
    write_file(catalog_path, &cat)?;

    let mut expr = catalog.names().join("\t");
    expr.push('\n');
    for row in 0..dataset.n_rows() {
        let mut first = true;
        for &v in dataset.x().row(row) {
            if !first {
                expr.push('\t');
            }
            expr.push_str(&format!("{}", v as u64));
            first = false;
        }
        expr.push('\n');
    }
    write_file(expr_path, &expr)?;

    let mut treat = String::new();
    for row in 0..dataset.n_rows() {
        match dataset.treatment(row) {
            Some(t) => treat.push_str(catalog.modeled_name(t)),
            None => treat.push_str("control"),
        }
        treat.push('\n');
    }
    write_file(treat_path, &treat)?;

    let mut qc = String::new();
    for &flag in dataset.qc() {
        qc.push_str(if flag == 1 { "1" } else { "0" });
        qc.push('\n');
    }
    write_file(qc_path, &qc)
}

/// Ground-truth edge list: `source<TAB>target<TAB>weight`, signed weights.
pub fn save_truth_edges(
    truth: &GroundTruthGrn,
    catalog: &GeneCatalog,
    path: &Path,
) -> DataResult<()> {
    let mut out = String::from("source\ttarget\tweight\n");
    for (s, t, w) in truth.edges() {
        out.push_str(&format!(
            "{}\t{}\t{:.6}\n",
            catalog.modeled_name(s),
            catalog.modeled_name(t),
            w
        ));
    }
    write_file(path, &out)
}

pub fn load_truth_edges(path: &Path, catalog: &GeneCatalog) -> DataResult<GroundTruthGrn> {
    let text = read_file(path)?;
    let m = catalog.n_modeled();
    let mut adjacency = Matrix::zeros(m, m);
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != "source\ttarget\tweight" {
                return Err(parse_error(path, 1, "expected header source/target/weight"));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_error(path, i + 1, "expected three tab-separated fields"));
        }
        let source = catalog
            .modeled_index_of(fields[0])
            .ok_or(DataError::UnknownGene {
                name: fields[0].to_string(),
                path: path.display().to_string(),
                line: i + 1,
            })?;
        let target = catalog
            .modeled_index_of(fields[1])
            .ok_or(DataError::UnknownGene {
                name: fields[1].to_string(),
                path: path.display().to_string(),
                line: i + 1,
            })?;
        let weight: f64 = fields[2]
            .parse()
            .map_err(|_| parse_error(path, i + 1, format!("bad weight {:?}", fields[2])))?;
        if adjacency.get(source, target) != 0.0 {
            return Err(parse_error(
                path,
                i + 1,
                format!("duplicate edge {} -> {}", fields[0], fields[1]),
            ));
        }
        adjacency.set(source, target, weight);
    }
    GroundTruthGrn::new(adjacency)
}
