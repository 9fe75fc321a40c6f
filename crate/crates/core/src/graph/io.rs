//! Plain-text dataset files.
//!
//! Blank lines and lines starting with `#` are ignored everywhere.
//!
//! Edge-list format (one graph):
//!
//! ```text
//! <nodes> <features> <undirected|directed> <node|graph>
//! <one row of feature values per node>          (omitted when features = 0)
//! <edge count>
//! <source> <target>                             (one line per edge)
//! labels <one label per node> | labels -
//! graph_label <k>                               (optional)
//! folds <one fold index per instance>           (optional)
//! ```
//!
//! Collection format (many graphs sharing a feature width):
//!
//! ```text
//! collection <graphs> <features> <undirected|directed> <node|graph>
//! graph <nodes> <edges> <graph label | ->       (repeated per graph, followed by
//!                                                its feature rows, edge lines and
//!                                                `labels` line as above)
//! folds <one fold index per instance>           (optional)
//! ```

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;

use super::{Dataset, Graph, Task};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    EdgeList,
    Collection,
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edgelist" | "edge-list" => Ok(DatasetFormat::EdgeList),
            "collection" => Ok(DatasetFormat::Collection),
            other => Err(Error::Config(format!("unknown dataset format `{other}`"))),
        }
    }
}

impl DatasetFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetFormat::EdgeList => "edgelist",
            DatasetFormat::Collection => "collection",
        }
    }
}

pub fn load_dataset(path: impl AsRef<Path>, format: DatasetFormat) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    parse_dataset(&text, format, name)
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>, format: DatasetFormat) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_dataset(dataset, format)?).map_err(|e| Error::io(path, e))
}

struct Lines<'a> {
    inner: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
    last_line: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let iter: Box<dyn Iterator<Item = (usize, &'a str)> + 'a> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.trim()))
                .filter(|(_, l)| !l.is_empty() && !l.starts_with('#')),
        );
        Self {
            inner: iter.peekable(),
            last_line: 0,
        }
    }

    fn next(&mut self, what: &str) -> Result<(usize, Vec<&'a str>)> {
        match self.inner.next() {
            Some((no, line)) => {
                self.last_line = no;
                Ok((no, line.split_whitespace().collect()))
            }
            None => Err(Error::Parse {
                line: self.last_line + 1,
                message: format!("unexpected end of file, expected {what}"),
            }),
        }
    }

    fn peek_keyword(&mut self) -> Option<&'a str> {
        self.inner
            .peek()
            .and_then(|(_, l)| l.split_whitespace().next())
    }
}

fn parse_tok<T: FromStr>(line: usize, tok: &str, what: &str) -> Result<T> {
    tok.parse().map_err(|_| Error::Parse {
        line,
        message: format!("cannot parse `{tok}` as {what}"),
    })
}

fn expect_len(line: usize, toks: &[&str], len: usize, what: &str) -> Result<()> {
    if toks.len() != len {
        return Err(Error::Parse {
            line,
            message: format!("expected {len} fields for {what}, found {}", toks.len()),
        });
    }
    Ok(())
}

fn parse_directedness(line: usize, tok: &str) -> Result<bool> {
    match tok {
        "directed" => Ok(true),
        "undirected" => Ok(false),
        other => Err(Error::Parse {
            line,
            message: format!("expected `directed` or `undirected`, found `{other}`"),
        }),
    }
}

fn parse_task(line: usize, tok: &str) -> Result<Task> {
    tok.parse().map_err(|_| Error::Parse {
        line,
        message: format!("expected task `node` or `graph`, found `{tok}`"),
    })
}

fn parse_optional_label(line: usize, tok: &str) -> Result<Option<usize>> {
    if tok == "-" {
        Ok(None)
    } else {
        parse_tok(line, tok, "class label").map(Some)
    }
}

fn parse_graph_body(
    lines: &mut Lines<'_>,
    n: usize,
    f: usize,
    m: Option<usize>,
    directed: bool,
) -> Result<Graph> {
    let mut features = Array2::zeros((n, f));
    if f > 0 {
        for i in 0..n {
            let (no, toks) = lines.next("a feature row")?;
            if toks.len() != f {
                return Err(Error::Dimension(format!(
                    "line {no}: feature row has {} values, expected {f}",
                    toks.len()
                )));
            }
            for (j, tok) in toks.iter().enumerate() {
                features[[i, j]] = parse_tok(no, tok, "a feature value")?;
            }
        }
    }
    let m = match m {
        Some(m) => m,
        None => {
            let (no, toks) = lines.next("the edge count")?;
            expect_len(no, &toks, 1, "the edge count")?;
            parse_tok(no, toks[0], "an edge count")?
        }
    };
    let mut edges = Vec::with_capacity(m);
    for _ in 0..m {
        let (no, toks) = lines.next("an edge")?;
        expect_len(no, &toks, 2, "an edge")?;
        let u: usize = parse_tok(no, toks[0], "a node index")?;
        let v: usize = parse_tok(no, toks[1], "a node index")?;
        for w in [u, v] {
            if w >= n {
                return Err(Error::Index {
                    index: w,
                    bound: n,
                    context: format!("edge ({u}, {v}) on line {no}"),
                });
            }
        }
        edges.push((u, v));
    }
    let mut graph = Graph::new(features, edges, directed)?;
    let (no, toks) = lines.next("a `labels` line")?;
    if toks.first() != Some(&"labels") {
        return Err(Error::Parse {
            line: no,
            message: "expected a `labels` line".into(),
        });
    }
    if toks[1..] != ["-"] {
        if toks.len() - 1 != n {
            return Err(Error::Dimension(format!(
                "line {no}: {} labels for {n} nodes",
                toks.len() - 1
            )));
        }
        let labels = toks[1..]
            .iter()
            .map(|t| parse_tok(no, t, "a node label"))
            .collect::<Result<Vec<usize>>>()?;
        graph = graph.with_node_labels(labels)?;
    }
    Ok(graph)
}

fn parse_folds(lines: &mut Lines<'_>) -> Result<Option<Vec<usize>>> {
    if lines.peek_keyword() != Some("folds") {
        return Ok(None);
    }
    let (no, toks) = lines.next("a `folds` line")?;
    toks[1..]
        .iter()
        .map(|t| parse_tok(no, t, "a fold index"))
        .collect::<Result<Vec<usize>>>()
        .map(Some)
}

pub fn parse_dataset(text: &str, format: DatasetFormat, name: impl Into<String>) -> Result<Dataset> {
    let mut lines = Lines::new(text);
    let (graphs, task) = match format {
        DatasetFormat::EdgeList => {
            let (no, toks) = lines.next("the header")?;
            expect_len(no, &toks, 4, "the header `<nodes> <features> <directedness> <task>`")?;
            let n: usize = parse_tok(no, toks[0], "a node count")?;
            let f: usize = parse_tok(no, toks[1], "a feature count")?;
            let directed = parse_directedness(no, toks[2])?;
            let task = parse_task(no, toks[3])?;
            let mut graph = parse_graph_body(&mut lines, n, f, None, directed)?;
            if lines.peek_keyword() == Some("graph_label") {
                let (no, toks) = lines.next("a graph label")?;
                expect_len(no, &toks, 2, "`graph_label <k>`")?;
                graph.graph_label = parse_optional_label(no, toks[1])?;
            }
            (vec![graph], task)
        }
        DatasetFormat::Collection => {
            let (no, toks) = lines.next("the header")?;
            expect_len(
                no,
                &toks,
                5,
                "the header `collection <graphs> <features> <directedness> <task>`",
            )?;
            if toks[0] != "collection" {
                return Err(Error::Parse {
                    line: no,
                    message: "collection files start with `collection`".into(),
                });
            }
            let count: usize = parse_tok(no, toks[1], "a graph count")?;
            let f: usize = parse_tok(no, toks[2], "a feature count")?;
            let directed = parse_directedness(no, toks[3])?;
            let task = parse_task(no, toks[4])?;
            let mut graphs = Vec::with_capacity(count);
            for _ in 0..count {
                let (no, toks) = lines.next("a `graph` line")?;
                expect_len(no, &toks, 4, "`graph <nodes> <edges> <label>`")?;
                if toks[0] != "graph" {
                    return Err(Error::Parse {
                        line: no,
                        message: format!("expected `graph`, found `{}`", toks[0]),
                    });
                }
                let n = parse_tok(no, toks[1], "a node count")?;
                let m = parse_tok(no, toks[2], "an edge count")?;
                let label = parse_optional_label(no, toks[3])?;
                let mut graph = parse_graph_body(&mut lines, n, f, Some(m), directed)?;
                graph.graph_label = label;
                graphs.push(graph);
            }
            (graphs, task)
        }
    };
    let folds = parse_folds(&mut lines)?;
    if let Some((no, _)) = lines.inner.next() {
        return Err(Error::Parse {
            line: no,
            message: "trailing content".into(),
        });
    }
    if graphs.is_empty() {
        return Err(Error::Config("dataset contains no graphs".into()));
    }
    let mut dataset = Dataset::new(name, graphs, task)?;
    dataset.folds = folds;
    dataset.validate()?;
    Ok(dataset)
}

fn write_graph_body(out: &mut String, g: &Graph, with_edge_count: bool) {
    for row in g.features.rows() {
        if row.is_empty() {
            break;
        }
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    if with_edge_count {
        let _ = writeln!(out, "{}", g.edge_count());
    }
    for &(u, v) in g.edges() {
        let _ = writeln!(out, "{u} {v}");
    }
    match &g.node_labels {
        Some(labels) => {
            let labels: Vec<String> = labels.iter().map(usize::to_string).collect();
            let _ = writeln!(out, "labels {}", labels.join(" "));
        }
        None => out.push_str("labels -\n"),
    }
}

/// Serializes `dataset`; floats use the shortest round-trip representation.
pub fn write_dataset(dataset: &Dataset, format: DatasetFormat) -> Result<String> {
    let mut out = String::new();
    let directedness = |g: &Graph| if g.is_directed() { "directed" } else { "undirected" };
    match format {
        DatasetFormat::EdgeList => {
            let [g] = dataset.graphs.as_slice() else {
                return Err(Error::Format(format!(
                    "edge-list format holds exactly one graph, dataset has {}",
                    dataset.graphs.len()
                )));
            };
            let _ = writeln!(
                out,
                "{} {} {} {}",
                g.node_count(),
                dataset.feature_dim(),
                directedness(g),
                dataset.task.as_str()
            );
            write_graph_body(&mut out, g, true);
            if let Some(label) = g.graph_label {
                let _ = writeln!(out, "graph_label {label}");
            }
        }
        DatasetFormat::Collection => {
            let directed = dataset.graphs.first().is_some_and(Graph::is_directed);
            let _ = writeln!(
                out,
                "collection {} {} {} {}",
                dataset.graphs.len(),
                dataset.feature_dim(),
                if directed { "directed" } else { "undirected" },
                dataset.task.as_str()
            );
            for g in &dataset.graphs {
                let label = g.graph_label.map_or("-".to_string(), |l| l.to_string());
                let _ = writeln!(out, "graph {} {} {label}", g.node_count(), g.edge_count());
                write_graph_body(&mut out, g, false);
            }
        }
    }
    if let Some(folds) = &dataset.folds {
        let folds: Vec<String> = folds.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "folds {}", folds.join(" "));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const KARATE: &str = include_str!("../../data/karate.txt");

    #[test]
    fn loads_bundled_karate() {
        let ds = parse_dataset(KARATE, DatasetFormat::EdgeList, "karate").unwrap();
        let g = &ds.graphs[0];
        assert_eq!(g.node_count(), 34);
        assert_eq!(g.edge_count(), 78);
        assert_eq!(g.edge_view().len(), 156);
        assert_eq!(ds.feature_dim(), 34);
        assert_eq!(ds.class_count(), 4);
        assert!(ds.feature_spec.discrete.iter().all(|&d| d));
    }

    #[test]
    fn empty_edge_list() {
        let text = "3 2 undirected node\n1 0\n0 1\n0.5 0.5\n0\nlabels 0 1 0\n";
        let ds = parse_dataset(text, DatasetFormat::EdgeList, "t").unwrap();
        assert_eq!(ds.graphs[0].node_count(), 3);
        assert_eq!(ds.graphs[0].edge_count(), 0);
    }

    #[test]
    fn edge_to_missing_node_is_index_error() {
        let text = "4 1 undirected node\n0\n0\n0\n0\n1\n0 5\nlabels 0 0 0 0\n";
        let err = parse_dataset(text, DatasetFormat::EdgeList, "t").unwrap_err();
        assert!(matches!(err, Error::Index { index: 5, bound: 4, .. }), "{err}");
    }

    #[test]
    fn malformed_value_names_line() {
        let text = "# comment\n2 1 undirected node\n0\nabc\n0\nlabels 0 0\n";
        let err = parse_dataset(text, DatasetFormat::EdgeList, "t").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err}");
    }

    #[test]
    fn ragged_feature_row_is_dimension_error() {
        let text = "2 2 undirected node\n0 1\n1\n0\nlabels 0 0\n";
        let err = parse_dataset(text, DatasetFormat::EdgeList, "t").unwrap_err();
        assert!(matches!(err, Error::Dimension(_)), "{err}");
    }

    #[test]
    fn collection_with_graph_labels() {
        let text = "collection 2 1 undirected graph\n\
                    graph 2 1 0\n1\n0\n0 1\nlabels -\n\
                    graph 1 0 1\n3\nlabels -\n\
                    folds 0 1\n";
        let ds = parse_dataset(text, DatasetFormat::Collection, "c").unwrap();
        assert_eq!(ds.graphs.len(), 2);
        assert_eq!(ds.graphs[1].graph_label, Some(1));
        assert_eq!(ds.folds, Some(vec![0, 1]));
        let again = parse_dataset(
            &write_dataset(&ds, DatasetFormat::Collection).unwrap(),
            DatasetFormat::Collection,
            "c",
        )
        .unwrap();
        assert_eq!(again.graphs, ds.graphs);
    }

    #[test]
    fn graph_task_missing_label_rejected() {
        let text = "collection 1 1 undirected graph\ngraph 1 0 -\n0\nlabels -\n";
        assert!(parse_dataset(text, DatasetFormat::Collection, "c").is_err());
    }
}
