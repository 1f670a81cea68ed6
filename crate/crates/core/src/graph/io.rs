//! Plain-text graph files.
//!
//! * edges: one `u<TAB>v` pair per line, 0-based ids
//! * features: one line per node, tab-separated floats, line index = node id
//! * labels: `node<TAB>class` lines; nodes not listed are unlabeled. A
//!   `# num_classes<TAB>C` line fixes the class count, otherwise it is
//!   `max class + 1`. Other `#` lines are comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::Graph;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_num<T: std::str::FromStr>(path: &Path, line: usize, field: &str) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("cannot parse {field:?}")))
}

pub fn load_graph(
    edge_path: impl AsRef<Path>,
    feature_path: impl AsRef<Path>,
    label_path: impl AsRef<Path>,
) -> Result<Graph> {
    let (edge_path, feature_path, label_path) =
        (edge_path.as_ref(), feature_path.as_ref(), label_path.as_ref());

    let mut rows = Vec::new();
    for (i, line) in read(feature_path)?.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        let row: Vec<f64> = if line.is_empty() {
            Vec::new()
        } else {
            line.split('\t')
                .map(|f| parse_num(feature_path, i + 1, f))
                .collect::<Result<_>>()?
        };
        if let Some(first) = rows.first() {
            let first: &Vec<f64> = first;
            if first.len() != row.len() {
                return Err(parse_err(
                    feature_path,
                    i + 1,
                    format!("{} features, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    let n = rows.len();
    let width = rows.first().map_or(0, Vec::len);
    let features = Matrix::from_vec(n, width, rows.into_iter().flatten().collect())?;

    let mut edges = Vec::new();
    for (i, line) in read(edge_path)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err(edge_path, i + 1, "expected two tab-separated node ids"));
        };
        let u: usize = parse_num(edge_path, i + 1, a)?;
        let v: usize = parse_num(edge_path, i + 1, b)?;
        if u >= n || v >= n {
            return Err(Error::NodeCount(format!(
                "{}:{} references node {} but the feature file has {n} rows",
                edge_path.display(),
                i + 1,
                u.max(v)
            )));
        }
        edges.push((u, v));
    }

    let mut labels = vec![None; n];
    let mut declared_classes = None;
    for (i, line) in read(label_path)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let mut parts = comment.trim().split('\t');
            if parts.next() == Some("num_classes") {
                let c = parts
                    .next()
                    .ok_or_else(|| parse_err(label_path, i + 1, "num_classes without a value"))?;
                declared_classes = Some(parse_num::<usize>(label_path, i + 1, c)?);
            }
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err(label_path, i + 1, "expected node<TAB>class"));
        };
        let v: usize = parse_num(label_path, i + 1, a)?;
        let c: usize = parse_num(label_path, i + 1, b)?;
        if v >= n {
            return Err(Error::NodeCount(format!(
                "{}:{} labels node {v} but the feature file has {n} rows",
                label_path.display(),
                i + 1
            )));
        }
        if labels[v].is_some_and(|old| old != c) {
            return Err(parse_err(label_path, i + 1, format!("conflicting label for node {v}")));
        }
        labels[v] = Some(c);
    }
    let observed = labels.iter().flatten().max().map_or(0, |&c| c + 1);
    let num_classes = declared_classes.unwrap_or(observed);
    Graph::new(n, edges, features, labels, num_classes)
}

/// Writes the three files read by [`load_graph`]. Floats use the shortest
/// representation that parses back to the same value.
pub fn save_graph(
    g: &Graph,
    edge_path: impl AsRef<Path>,
    feature_path: impl AsRef<Path>,
    label_path: impl AsRef<Path>,
) -> Result<()> {
    let mut edges = String::new();
    for (u, v) in g.edges() {
        let _ = writeln!(edges, "{u}\t{v}");
    }
    let mut features = String::new();
    for v in 0..g.num_nodes() {
        let row: Vec<String> = g.features().row(v).iter().map(|x| x.to_string()).collect();
        let _ = writeln!(features, "{}", row.join("\t"));
    }
    let mut labels = format!("# num_classes\t{}\n", g.num_classes());
    for (v, c) in g.labels().iter().enumerate() {
        if let Some(c) = c {
            let _ = writeln!(labels, "{v}\t{c}");
        }
    }
    for (path, body) in [
        (edge_path.as_ref(), edges),
        (feature_path.as_ref(), features),
        (label_path.as_ref(), labels),
    ] {
        fs::write(path, body).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Reads the LINQS distribution of Cora: `cora.content` rows are
/// `paper_id  w_1 .. w_p  class_name`, `cora.cites` rows are
/// `cited  citing`. Class names are indexed in sorted order. Citations to
/// papers missing from the content file are skipped.
pub fn load_cora(content_path: impl AsRef<Path>, cites_path: impl AsRef<Path>) -> Result<Graph> {
    let (content_path, cites_path) = (content_path.as_ref(), cites_path.as_ref());
    let mut ids = BTreeMap::new();
    let mut rows = Vec::new();
    let mut class_names = Vec::new();
    for (i, line) in read(content_path)?.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() < 2 {
            return Err(parse_err(content_path, i + 1, "expected id, features and class"));
        }
        let id = fields[0].to_string();
        let row: Vec<f64> = fields[1..fields.len() - 1]
            .iter()
            .map(|f| parse_num(content_path, i + 1, f))
            .collect::<Result<_>>()?;
        if rows.first().is_some_and(|r: &Vec<f64>| r.len() != row.len()) {
            return Err(parse_err(content_path, i + 1, "inconsistent feature width"));
        }
        if ids.insert(id, rows.len()).is_some() {
            return Err(parse_err(content_path, i + 1, "duplicate paper id"));
        }
        rows.push(row);
        class_names.push(fields[fields.len() - 1].to_string());
    }
    let mut classes: Vec<String> = class_names.clone();
    classes.sort();
    classes.dedup();
    let labels = class_names
        .iter()
        .map(|c| Some(classes.binary_search(c).expect("class collected above")))
        .collect();
    let n = rows.len();
    let width = rows.first().map_or(0, Vec::len);
    let features = Matrix::from_vec(n, width, rows.into_iter().flatten().collect())?;

    let mut edges = Vec::new();
    for (i, line) in read(cites_path)?.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            [] => continue,
            [a, b] => {
                if let (Some(&u), Some(&v)) = (ids.get(*a), ids.get(*b)) {
                    edges.push((u, v));
                }
            }
            _ => return Err(parse_err(cites_path, i + 1, "expected two paper ids")),
        }
    }
    Graph::new(n, edges, features, labels, classes.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_node_graph_loads_symmetric() {
        let dir = tempfile::tempdir().unwrap();
        let (e, f, l) = (dir.path().join("e"), dir.path().join("f"), dir.path().join("l"));
        fs::write(&e, "0\t1\n0\t1\n1\t0\n").unwrap();
        fs::write(&f, "1.5\t2\n-3\t0.25\n").unwrap();
        fs::write(&l, "1\t0\n").unwrap();
        let g = load_graph(&e, &f, &l).unwrap();
        assert_eq!(g.csr(), (&[0, 1, 2][..], &[1, 0][..]));
        assert_eq!(g.labels(), &[None, Some(0)]);
        assert_eq!(g.num_classes(), 1);
        assert_eq!(g.features().row(1), &[-3.0, 0.25]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let (e, f, l) = (dir.path().join("e"), dir.path().join("f"), dir.path().join("l"));
        fs::write(&f, "1\n2\n").unwrap();
        fs::write(&l, "").unwrap();
        fs::write(&e, "0\t1\n0\tx\n").unwrap();
        match load_graph(&e, &f, &l) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        fs::write(&e, "0\t5\n").unwrap();
        assert!(matches!(load_graph(&e, &f, &l), Err(Error::NodeCount(_))));
        fs::write(&e, "").unwrap();
        fs::write(&l, "7\t0\n").unwrap();
        assert!(matches!(load_graph(&e, &f, &l), Err(Error::NodeCount(_))));
        fs::write(&l, "").unwrap();
        fs::write(&f, "1\t2\n3\n").unwrap();
        assert!(matches!(load_graph(&e, &f, &l), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn save_then_load_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 15;
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rand::Rng::random::<f64>(&mut rng) < 0.3 {
                    edges.push((u, v));
                }
            }
        }
        let labels = (0..n).map(|v| (v % 3 != 0).then_some(v % 4)).collect();
        let g = Graph::new(n, edges, Matrix::uniform(n, 4, 10.0, &mut rng), labels, 6).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (e, f, l) = (dir.path().join("e"), dir.path().join("f"), dir.path().join("l"));
        save_graph(&g, &e, &f, &l).unwrap();
        assert_eq!(load_graph(&e, &f, &l).unwrap(), g);
    }

    #[test]
    fn cora_format() {
        let dir = tempfile::tempdir().unwrap();
        let (c, k) = (dir.path().join("cora.content"), dir.path().join("cora.cites"));
        fs::write(&c, "31336\t0\t1\t0\tNeural_Networks\n1061127\t1\t0\t0\tRule_Learning\n1106406\t0\t0\t1\tNeural_Networks\n").unwrap();
        fs::write(&k, "31336\t1061127\n1106406\t31336\n99\t31336\n").unwrap();
        let g = load_cora(&c, &k).unwrap();
        assert_eq!((g.num_nodes(), g.feature_dim(), g.num_classes()), (3, 3, 2));
        assert_eq!(g.labels(), &[Some(0), Some(1), Some(0)]);
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1), (0, 2)]);
    }
}
