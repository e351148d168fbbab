//! Delimited text formats for genotype matrices, phenotypes, group maps and graphs.
//!
//! * matrix: header row `sample_id,<feature ids...>`, then one row per sample
//! * phenotype: header row, then `sample id, value`
//! * groups: header row, then `feature id, group id`
//! * graph: header row, then `group id, group id, signed weight`
//!
//! Files ending in `.tsv` or `.tab` are tab separated; everything else is
//! comma separated. Writers emit exactly what the readers accept.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::model::{Dataset, GeneGraph, GroupMap};

fn delimiter(path: &Path) -> u8 {
    match path.extension().and_then(|e| e.to_str()) {
        Some("tsv") | Some("tab") => b'\t',
        _ => b',',
    }
}

fn parse_err(path: &Path, line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message: message.into(),
    }
}

/// Reads every row as trimmed strings along with its 1-based line number.
fn read_rows(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter(path))
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(path, line, 0, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        rows.push((line, record.iter().map(str::to_string).collect()));
    }
    Ok(rows)
}

fn parse_number(path: &Path, line: usize, column: usize, cell: &str) -> Result<f64> {
    let v: f64 = cell
        .parse()
        .map_err(|_| parse_err(path, line, column, format!("'{cell}' is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, column, format!("'{cell}' is not finite")));
    }
    Ok(v)
}

fn split_header(path: &Path, rows: Vec<(usize, Vec<String>)>) -> Result<(Vec<String>, Vec<(usize, Vec<String>)>)> {
    let mut it = rows.into_iter();
    let (_, header) = it
        .next()
        .ok_or_else(|| parse_err(path, 1, 1, "file is empty"))?;
    Ok((header, it.collect()))
}

fn expect_width(path: &Path, line: usize, row: &[String], width: usize) -> Result<()> {
    if row.len() == width {
        Ok(())
    } else {
        Err(parse_err(
            path,
            line,
            row.len().min(width) + 1,
            format!("expected {width} fields, found {}", row.len()),
        ))
    }
}

/// Genotype matrix: returns `(A, feature ids, sample ids)`.
pub fn read_matrix(path: &Path) -> Result<(Array2<f64>, Vec<String>, Vec<String>)> {
    let (header, body) = split_header(path, read_rows(path)?)?;
    if header.len() < 2 {
        return Err(parse_err(path, 1, 2, "matrix header has no feature ids"));
    }
    let feature_ids: Vec<String> = header[1..].to_vec();
    let mut seen = HashSet::new();
    for (c, id) in feature_ids.iter().enumerate() {
        if !seen.insert(id.as_str()) {
            return Err(parse_err(path, 1, c + 2, format!("duplicate feature id '{id}'")));
        }
    }
    if body.is_empty() {
        return Err(parse_err(path, 2, 1, "matrix has no sample rows"));
    }
    let p = feature_ids.len();
    let mut values = Vec::with_capacity(body.len() * p);
    let mut sample_ids = Vec::with_capacity(body.len());
    let mut seen = HashSet::new();
    for (line, row) in &body {
        expect_width(path, *line, row, p + 1)?;
        if !seen.insert(row[0].clone()) {
            return Err(parse_err(path, *line, 1, format!("duplicate sample id '{}'", row[0])));
        }
        sample_ids.push(row[0].clone());
        for (c, cell) in row[1..].iter().enumerate() {
            values.push(parse_number(path, *line, c + 2, cell)?);
        }
    }
    let a = Array2::from_shape_vec((body.len(), p), values).expect("row widths checked");
    Ok((a, feature_ids, sample_ids))
}

/// Phenotype `(line, sample id, value)` rows in file order.
pub fn read_phenotype(path: &Path) -> Result<Vec<(usize, String, f64)>> {
    let (_, body) = split_header(path, read_rows(path)?)?;
    body.iter()
        .map(|(line, row)| {
            expect_width(path, *line, row, 2)?;
            Ok((*line, row[0].clone(), parse_number(path, *line, 2, &row[1])?))
        })
        .collect()
}

/// Group map `(line, feature id, group id)` rows in file order.
pub fn read_groups(path: &Path) -> Result<Vec<(usize, String, String)>> {
    let (_, body) = split_header(path, read_rows(path)?)?;
    body.iter()
        .map(|(line, row)| {
            expect_width(path, *line, row, 2)?;
            Ok((*line, row[0].clone(), row[1].clone()))
        })
        .collect()
}

/// Graph `(line, group id, group id, weight)` rows in file order.
pub fn read_graph(path: &Path) -> Result<Vec<(usize, String, String, f64)>> {
    let (_, body) = split_header(path, read_rows(path)?)?;
    body.iter()
        .map(|(line, row)| {
            expect_width(path, *line, row, 3)?;
            Ok((
                *line,
                row[0].clone(),
                row[1].clone(),
                parse_number(path, *line, 3, &row[2])?,
            ))
        })
        .collect()
}

/// Loads a dataset, resolving the phenotype by sample id.
pub fn load_dataset(matrix_path: &Path, phenotype_path: &Path) -> Result<Dataset> {
    let (a, feature_ids, sample_ids) = read_matrix(matrix_path)?;
    let pheno = read_phenotype(phenotype_path)?;
    let index: HashSet<&str> = sample_ids.iter().map(String::as_str).collect();
    let mut by_id = HashMap::with_capacity(pheno.len());
    for (line, id, v) in &pheno {
        if !index.contains(id.as_str()) {
            return Err(parse_err(
                phenotype_path,
                *line,
                1,
                format!("sample '{id}' is not in the genotype matrix"),
            ));
        }
        if by_id.insert(id.as_str(), *v).is_some() {
            return Err(parse_err(phenotype_path, *line, 1, format!("duplicate sample id '{id}'")));
        }
    }
    let y = sample_ids
        .iter()
        .map(|id| {
            by_id.get(id.as_str()).copied().ok_or_else(|| {
                parse_err(phenotype_path, 0, 1, format!("no phenotype value for sample '{id}'"))
            })
        })
        .collect::<Result<Array1<f64>>>()?;
    Dataset::new(a, y, feature_ids, sample_ids)
}

/// Group indices follow the order in which group ids first appear in the file.
pub fn load_groups(groups_path: &Path, feature_ids: &[String]) -> Result<GroupMap> {
    let rows = read_groups(groups_path)?;
    let position: HashMap<&str, usize> = feature_ids
        .iter()
        .enumerate()
        .map(|(j, id)| (id.as_str(), j))
        .collect();
    let mut assignment = vec![usize::MAX; feature_ids.len()];
    let mut group_ids: Vec<String> = Vec::new();
    let mut group_index: HashMap<String, usize> = HashMap::new();
    for (line, feature, group) in &rows {
        let line = *line;
        let &j = position.get(feature.as_str()).ok_or_else(|| {
            parse_err(groups_path, line, 1, format!("feature '{feature}' is not in the genotype matrix"))
        })?;
        if assignment[j] != usize::MAX {
            return Err(parse_err(groups_path, line, 1, format!("feature '{feature}' is assigned twice")));
        }
        let next = group_ids.len();
        let k = *group_index.entry(group.clone()).or_insert_with(|| {
            group_ids.push(group.clone());
            next
        });
        assignment[j] = k;
    }
    if let Some(j) = assignment.iter().position(|&k| k == usize::MAX) {
        return Err(parse_err(
            groups_path,
            0,
            1,
            format!("feature '{}' has no group", feature_ids[j]),
        ));
    }
    GroupMap::with_ids(assignment, group_ids)
}

pub fn load_graph(graph_path: &Path, groups: &GroupMap) -> Result<GeneGraph> {
    let index: HashMap<&str, usize> = groups
        .ids()
        .iter()
        .enumerate()
        .map(|(k, id)| (id.as_str(), k))
        .collect();
    let mut edges = Vec::new();
    let mut seen = HashSet::new();
    for (line, a, b, w) in read_graph(graph_path)? {
        let lookup = |id: &str, col: usize| {
            index.get(id).copied().ok_or_else(|| {
                parse_err(graph_path, line, col, format!("group '{id}' is not in the group file"))
            })
        };
        let (i, j) = (lookup(&a, 1)?, lookup(&b, 2)?);
        if i == j {
            return Err(parse_err(graph_path, line, 2, format!("self-loop on group '{a}'")));
        }
        if w == 0.0 {
            return Err(parse_err(graph_path, line, 3, "edge weight must be nonzero"));
        }
        if !seen.insert((i.min(j), i.max(j))) {
            return Err(parse_err(graph_path, line, 1, format!("duplicate edge '{a}' - '{b}'")));
        }
        edges.push((i, j, w));
    }
    GeneGraph::new(groups.k(), edges)
}

/// Loads all four inputs; feature order in the matrix defines the index space.
pub fn load_design(
    matrix_path: &Path,
    phenotype_path: &Path,
    groups_path: &Path,
    graph_path: &Path,
) -> Result<(Dataset, GroupMap, GeneGraph)> {
    let dataset = load_dataset(matrix_path, phenotype_path)?;
    let groups = load_groups(groups_path, &dataset.feature_ids)?;
    let graph = load_graph(graph_path, &groups)?;
    Ok((dataset, groups, graph))
}

fn writer_for(path: &Path) -> Result<csv::Writer<Vec<u8>>> {
    Ok(csv::WriterBuilder::new()
        .delimiter(delimiter(path))
        .from_writer(Vec::new()))
}

fn finish(path: &Path, w: csv::Writer<Vec<u8>>) -> Result<()> {
    let bytes = w.into_inner().map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    write_atomic(path, &bytes)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

pub fn write_matrix(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut w = writer_for(path)?;
    let mut header = vec!["sample_id".to_string()];
    header.extend(dataset.feature_ids.iter().cloned());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (id, row) in dataset.sample_ids.iter().zip(dataset.a.rows()) {
        let mut record = vec![id.clone()];
        record.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&record).map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

pub fn write_phenotype(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut w = writer_for(path)?;
    w.write_record(["sample_id", "value"]).map_err(|e| csv_err(path, e))?;
    for (id, v) in dataset.sample_ids.iter().zip(dataset.y.iter()) {
        w.write_record([id.clone(), v.to_string()]).map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

/// Rows are ordered by group, then by feature, so reading the file back
/// reproduces the group numbering.
pub fn write_groups(path: &Path, groups: &GroupMap, feature_ids: &[String]) -> Result<()> {
    let mut w = writer_for(path)?;
    w.write_record(["feature_id", "group_id"]).map_err(|e| csv_err(path, e))?;
    for k in 0..groups.k() {
        for &j in groups.members(k) {
            w.write_record([feature_ids[j].as_str(), groups.ids()[k].as_str()])
                .map_err(|e| csv_err(path, e))?;
        }
    }
    finish(path, w)
}

pub fn write_graph(path: &Path, graph: &GeneGraph, groups: &GroupMap) -> Result<()> {
    let mut w = writer_for(path)?;
    w.write_record(["group_a", "group_b", "weight"]).map_err(|e| csv_err(path, e))?;
    for e in &graph.edges {
        w.write_record([
            groups.ids()[e.i].clone(),
            groups.ids()[e.j].clone(),
            e.weight.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

/// Writes `matrix.csv`, `phenotype.csv`, `groups.csv` and `graph.csv` into `dir`.
pub fn save_design(dir: &Path, dataset: &Dataset, groups: &GroupMap, graph: &GeneGraph) -> Result<DesignPaths> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = DesignPaths::in_dir(dir);
    write_matrix(&paths.matrix, dataset)?;
    write_phenotype(&paths.phenotype, dataset)?;
    write_groups(&paths.groups, groups, &dataset.feature_ids)?;
    write_graph(&paths.graph, graph, groups)?;
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignPaths {
    pub matrix: std::path::PathBuf,
    pub phenotype: std::path::PathBuf,
    pub groups: std::path::PathBuf,
    pub graph: std::path::PathBuf,
}

impl DesignPaths {
    pub fn in_dir(dir: &Path) -> Self {
        DesignPaths {
            matrix: dir.join("matrix.csv"),
            phenotype: dir.join("phenotype.csv"),
            groups: dir.join("groups.csv"),
            graph: dir.join("graph.csv"),
        }
    }

    pub fn load(&self) -> Result<(Dataset, GroupMap, GeneGraph)> {
        load_design(&self.matrix, &self.phenotype, &self.groups, &self.graph)
    }
}

/// Writes `contents` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::validation(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(contents).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fixture() -> (Dataset, GroupMap, GeneGraph) {
        let d = Dataset::new(
            array![[0.5, -1.25], [1.0, 0.0], [2.0, 3.125]],
            array![1.5, -0.25, 2.0],
            vec!["rs1".into(), "rs2".into()],
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        let groups = GroupMap::with_ids(vec![0, 1], vec!["APOE".into(), "TOMM40".into()]).unwrap();
        let graph = GeneGraph::new(2, [(0, 1, -0.4)]).unwrap();
        (d, groups, graph)
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (d, groups, graph) = fixture();
        let paths = save_design(dir.path(), &d, &groups, &graph).unwrap();
        let (d2, groups2, graph2) = paths.load().unwrap();
        assert_eq!(d2, d);
        assert_eq!(groups2, groups);
        assert_eq!(graph2, graph);
    }

    #[test]
    fn tab_separated() {
        let dir = tempfile::tempdir().unwrap();
        let (d, ..) = fixture();
        let m = dir.path().join("m.tsv");
        let y = dir.path().join("y.tsv");
        write_matrix(&m, &d).unwrap();
        write_phenotype(&y, &d).unwrap();
        assert!(std::fs::read_to_string(&m).unwrap().contains('\t'));
        assert_eq!(load_dataset(&m, &y).unwrap(), d);
    }

    #[test]
    fn phenotype_joined_by_id() {
        let dir = tempfile::tempdir().unwrap();
        let (d, ..) = fixture();
        let m = dir.path().join("m.csv");
        write_matrix(&m, &d).unwrap();
        let y = dir.path().join("y.csv");
        std::fs::write(&y, "id,value\nc,2\na,1.5\nb,-0.25\n").unwrap();
        assert_eq!(load_dataset(&m, &y).unwrap().y, d.y);
    }

    #[test]
    fn unknown_feature_in_group_file() {
        let dir = tempfile::tempdir().unwrap();
        let g = dir.path().join("g.csv");
        std::fs::write(&g, "feature,group\nrs1,A\nrs9,B\n").unwrap();
        let err = load_groups(&g, &["rs1".into(), "rs2".into()]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("rs9") && msg.contains(":3:1"), "{msg}");
    }

    #[test]
    fn unknown_group_in_graph_file() {
        let dir = tempfile::tempdir().unwrap();
        let (_, groups, _) = fixture();
        let g = dir.path().join("graph.csv");
        std::fs::write(&g, "a,b,w\nAPOE,CD33,0.5\n").unwrap();
        let msg = load_graph(&g, &groups).unwrap_err().to_string();
        assert!(msg.contains("CD33") && msg.contains(":2:2"), "{msg}");
    }

    #[test]
    fn ragged_and_non_numeric_rows() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.csv");
        std::fs::write(&m, "sample_id,rs1,rs2\na,1,2\nb,3\n").unwrap();
        let msg = read_matrix(&m).unwrap_err().to_string();
        assert!(msg.contains(":3:") && msg.contains("expected 3 fields"), "{msg}");

        std::fs::write(&m, "sample_id,rs1,rs2\na,1,2\nb,3,x\n").unwrap();
        let msg = read_matrix(&m).unwrap_err().to_string();
        assert!(msg.contains(":3:3") && msg.contains("'x'"), "{msg}");

        std::fs::write(&m, "sample_id,rs1,rs2\na,1,nan\n").unwrap();
        assert!(read_matrix(&m).is_err());
    }

    #[test]
    fn missing_and_extra_samples_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (d, ..) = fixture();
        let m = dir.path().join("m.csv");
        write_matrix(&m, &d).unwrap();
        let y = dir.path().join("y.csv");
        std::fs::write(&y, "id,value\na,1\nb,2\n").unwrap();
        assert!(load_dataset(&m, &y).unwrap_err().to_string().contains("'c'"));
        std::fs::write(&y, "id,value\na,1\nb,2\nc,3\nd,4\n").unwrap();
        assert!(load_dataset(&m, &y).unwrap_err().to_string().contains("'d'"));
    }

    #[test]
    fn group_file_must_cover_every_feature() {
        let dir = tempfile::tempdir().unwrap();
        let g = dir.path().join("g.csv");
        std::fs::write(&g, "feature,group\nrs1,A\n").unwrap();
        let msg = load_groups(&g, &["rs1".into(), "rs2".into()]).unwrap_err().to_string();
        assert!(msg.contains("rs2"), "{msg}");
        std::fs::write(&g, "feature,group\nrs1,A\nrs2,A\nrs1,B\n").unwrap();
        assert!(load_groups(&g, &["rs1".into(), "rs2".into()]).is_err());
    }

    #[test]
    fn bad_graph_rows() {
        let dir = tempfile::tempdir().unwrap();
        let (_, groups, _) = fixture();
        let g = dir.path().join("graph.csv");
        for body in [
            "a,b,w\nAPOE,APOE,0.5\n",
            "a,b,w\nAPOE,TOMM40,0\n",
            "a,b,w\nAPOE,TOMM40,0.5\nTOMM40,APOE,0.2\n",
            "a,b,w\nAPOE,TOMM40\n",
        ] {
            std::fs::write(&g, body).unwrap();
            assert!(load_graph(&g, &groups).is_err(), "{body}");
        }
        std::fs::write(&g, "a,b,w\n").unwrap();
        assert_eq!(load_graph(&g, &groups).unwrap().n_edges(), 0);
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
