//! LETOR / SVMLight datasets grouped by query id.
//!
//! Line grammar: `<label> qid:<int> <fid>:<float> ... [# comment]`. Feature ids
//! in files are 1-based; everything in memory is 0-based.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use thiserror::Error;

/// Highest relevance grade accepted.
pub const MAX_RELEVANCE: u8 = 4;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line_no}: {reason}: `{content}`")]
    Parse {
        line_no: usize,
        content: String,
        reason: String,
    },
    #[error("dataset is empty")]
    Empty,
    #[error("num_features = {given} but the data uses feature index {needed} (1-based)")]
    TooFewFeatures { given: usize, needed: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedLine {
    pub relevance: u8,
    pub query_id: u64,
    /// `(0-based index, value)` in file order.
    pub features: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    /// Ordinal within the owning query group.
    pub doc_index: usize,
    pub relevance: u8,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryGroup {
    pub query_id: u64,
    pub documents: Vec<Document>,
}

impl QueryGroup {
    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn relevances(&self) -> Vec<u8> {
        self.documents.iter().map(|d| d.relevance).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub groups: Vec<QueryGroup>,
    pub num_features: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetStats {
    pub num_queries: usize,
    pub num_documents: usize,
    pub mean_docs_per_query: f64,
}

fn parse_error(line_no: usize, content: &str, reason: impl Into<String>) -> DataError {
    DataError::Parse {
        line_no,
        content: content.to_string(),
        reason: reason.into(),
    }
}

/// Parses one LETOR line. The line must still hold a label and a `qid:` token
/// once the trailing comment is removed.
pub fn parse_letor_line(line: &str) -> Result<ParsedLine, DataError> {
    parse_line_at(line, 0)
}

fn parse_line_at(line: &str, line_no: usize) -> Result<ParsedLine, DataError> {
    let body = line.split('#').next().unwrap_or("").trim();
    if body.is_empty() {
        return Err(parse_error(line_no, line, "empty line"));
    }
    let mut tokens = body.split_whitespace();

    let label_tok = tokens.next().unwrap_or_default();
    let label: i64 = label_tok
        .parse()
        .map_err(|_| parse_error(line_no, line, format!("non-integer label `{label_tok}`")))?;
    if !(0..=MAX_RELEVANCE as i64).contains(&label) {
        return Err(parse_error(
            line_no,
            line,
            format!("relevance {label} outside [0, {MAX_RELEVANCE}]"),
        ));
    }

    let qid_tok = tokens.next().ok_or_else(|| parse_error(line_no, line, "missing qid"))?;
    let query_id = qid_tok
        .strip_prefix("qid:")
        .ok_or_else(|| parse_error(line_no, line, "missing qid"))?
        .parse::<u64>()
        .map_err(|_| parse_error(line_no, line, format!("malformed token `{qid_tok}`")))?;

    let mut features = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for tok in tokens {
        let (idx, val) = tok
            .split_once(':')
            .ok_or_else(|| parse_error(line_no, line, format!("malformed token `{tok}`")))?;
        let idx: usize = idx
            .parse()
            .map_err(|_| parse_error(line_no, line, format!("malformed token `{tok}`")))?;
        if idx == 0 {
            return Err(parse_error(line_no, line, "feature ids are 1-based"));
        }
        let val: f64 = val
            .parse()
            .map_err(|_| parse_error(line_no, line, format!("malformed token `{tok}`")))?;
        if !seen.insert(idx) {
            return Err(parse_error(line_no, line, format!("duplicate feature index {idx}")));
        }
        features.push((idx - 1, val));
    }

    Ok(ParsedLine {
        relevance: label as u8,
        query_id,
        features,
    })
}

/// Reads a whole LETOR file. Blank and comment-only lines are skipped.
/// Documents sharing a qid are merged into one group, in first-appearance order.
pub fn load_dataset<R: BufRead>(reader: R, num_features: Option<usize>) -> Result<Dataset, DataError> {
    let mut parsed = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.split('#').next().unwrap_or("").trim().is_empty() {
            continue;
        }
        parsed.push(parse_line_at(&line, i + 1)?);
    }
    from_parsed(parsed, num_features)
}

pub fn from_parsed(parsed: Vec<ParsedLine>, num_features: Option<usize>) -> Result<Dataset, DataError> {
    if parsed.is_empty() {
        return Err(DataError::Empty);
    }
    let observed = parsed
        .iter()
        .flat_map(|p| p.features.iter().map(|&(i, _)| i + 1))
        .max()
        .unwrap_or(0);
    let width = match num_features {
        Some(n) if n < observed => {
            return Err(DataError::TooFewFeatures {
                given: n,
                needed: observed,
            })
        }
        Some(n) => n,
        None => observed,
    };

    let mut slot: HashMap<u64, usize> = HashMap::new();
    let mut groups: Vec<QueryGroup> = Vec::new();
    for p in parsed {
        let g = *slot.entry(p.query_id).or_insert_with(|| {
            groups.push(QueryGroup {
                query_id: p.query_id,
                documents: Vec::new(),
            });
            groups.len() - 1
        });
        let mut dense = vec![0.0; width];
        for (i, v) in p.features {
            dense[i] = v;
        }
        let group = &mut groups[g];
        group.documents.push(Document {
            doc_index: group.documents.len(),
            relevance: p.relevance,
            features: dense,
        });
    }

    Ok(Dataset {
        groups,
        num_features: width,
    })
}

impl Dataset {
    pub fn stats(&self) -> DatasetStats {
        let num_queries = self.groups.len();
        let num_documents: usize = self.groups.iter().map(QueryGroup::len).sum();
        let mean_docs_per_query = if num_queries == 0 {
            0.0
        } else {
            num_documents as f64 / num_queries as f64
        };
        DatasetStats {
            num_queries,
            num_documents,
            mean_docs_per_query,
        }
    }

    pub fn num_documents(&self) -> usize {
        self.groups.iter().map(QueryGroup::len).sum()
    }

    /// Writes LETOR lines; zero-valued features are omitted.
    pub fn write_letor<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for g in &self.groups {
            for d in &g.documents {
                write!(out, "{} qid:{}", d.relevance, g.query_id)?;
                for (i, v) in d.features.iter().enumerate() {
                    if *v != 0.0 {
                        write!(out, " {}:{}", i + 1, v)?;
                    }
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }

    /// Splits off consecutive runs of query groups with the given fractions.
    /// The last part takes whatever remains.
    pub fn split_by_fractions(&self, fractions: &[f64]) -> Vec<Dataset> {
        let n = self.groups.len();
        let mut parts = Vec::with_capacity(fractions.len());
        let mut start = 0;
        let mut acc = 0.0;
        for (i, f) in fractions.iter().enumerate() {
            acc += f;
            let end = if i + 1 == fractions.len() {
                n
            } else {
                ((acc * n as f64).round() as usize).min(n)
            };
            parts.push(Dataset {
                groups: self.groups[start..end.max(start)].to_vec(),
                num_features: self.num_features,
            });
            start = end.max(start);
        }
        parts
    }
}

/// Convenience wrapper around [`load_dataset`] for a path on disk.
pub fn load_path(path: impl AsRef<std::path::Path>, num_features: Option<usize>) -> Result<Dataset, DataError> {
    let file = std::fs::File::open(path)?;
    load_dataset(std::io::BufReader::new(file), num_features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_basic_line() {
        let p = parse_letor_line("2 qid:7 1:0.5 3:1.25").unwrap();
        assert_eq!(p.relevance, 2);
        assert_eq!(p.query_id, 7);
        assert_eq!(p.features, vec![(0, 0.5), (2, 1.25)]);
    }

    #[test]
    fn comment_only_features() {
        let p = parse_letor_line("0 qid:1 # comment").unwrap();
        assert_eq!((p.relevance, p.query_id), (0, 1));
        assert!(p.features.is_empty());
    }

    #[test]
    fn duplicate_feature_is_rejected() {
        let err = parse_letor_line("1 qid:3 2:0 2:1").unwrap_err();
        assert!(err.to_string().contains("duplicate feature index 2"), "{err}");
        assert!(err.to_string().contains("1 qid:3 2:0 2:1"));
    }

    #[test]
    fn malformed_lines() {
        for bad in [
            "x qid:1 1:0.5",
            "1.5 qid:1",
            "1 1:0.5",
            "1 qid:abc",
            "1 qid:1 1-0.5",
            "1 qid:1 0:0.5",
            "1 qid:1 1:zz",
            "5 qid:1",
            "-1 qid:1",
            "   # only comment",
        ] {
            assert!(parse_letor_line(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn groups_by_qid() {
        let src = "1 qid:7 1:1\n0 qid:7 2:1\n3 qid:9 1:2\n";
        let ds = load_dataset(src.as_bytes(), None).unwrap();
        assert_eq!(ds.groups.len(), 2);
        assert_eq!(ds.groups[0].len(), 2);
        assert_eq!(ds.groups[1].len(), 1);
        assert_eq!(ds.groups[1].query_id, 9);
    }

    #[test]
    fn width_is_max_index() {
        let ds = load_dataset("1 qid:1 5:1.0\n0 qid:1 2:3\n".as_bytes(), None).unwrap();
        assert_eq!(ds.num_features, 5);
        assert_eq!(ds.groups[0].documents[1].features, vec![0.0, 3.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn interleaved_qids_merge_in_first_appearance_order() {
        let src = "0 qid:3 1:1\n1 qid:1 1:2\n2 qid:2 1:3\n0 qid:3 1:4\n1 qid:1 1:5\n2 qid:2 1:6\n";
        let ds = load_dataset(src.as_bytes(), None).unwrap();
        let ids: Vec<u64> = ds.groups.iter().map(|g| g.query_id).collect();
        assert_eq!(ids, vec![3, 1, 2]);
        for g in &ds.groups {
            let idx: Vec<usize> = g.documents.iter().map(|d| d.doc_index).collect();
            assert_eq!(idx, vec![0, 1]);
        }
        assert_eq!(ds.groups[0].documents[1].features, vec![4.0]);
    }

    #[test]
    fn num_features_override() {
        let src = "1 qid:1 3:1.0\n";
        assert_eq!(load_dataset(src.as_bytes(), Some(8)).unwrap().num_features, 8);
        assert!(matches!(
            load_dataset(src.as_bytes(), Some(2)),
            Err(DataError::TooFewFeatures { given: 2, needed: 3 })
        ));
    }

    #[test]
    fn empty_input_fails() {
        assert!(matches!(
            load_dataset("\n# nothing\n".as_bytes(), None),
            Err(DataError::Empty)
        ));
    }

    #[test]
    fn error_reports_line_number() {
        let err = load_dataset("1 qid:1 1:1\n\n2 qid:x\n".as_bytes(), None).unwrap_err();
        match err {
            DataError::Parse { line_no, .. } => assert_eq!(line_no, 3),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn stats() {
        let ds = load_dataset("1 qid:7 1:1\n0 qid:7 2:1\n3 qid:9 1:2\n".as_bytes(), None).unwrap();
        let s = ds.stats();
        assert_eq!((s.num_queries, s.num_documents), (2, 3));
        assert_eq!(s.mean_docs_per_query, 1.5);

        let lines: String = (0..120).map(|_| "0 qid:1 1:1\n").collect();
        let s = load_dataset(lines.as_bytes(), None).unwrap().stats();
        assert_eq!((s.num_queries, s.num_documents, s.mean_docs_per_query), (1, 120, 120.0));
    }

    #[test]
    fn split_fractions_cover_everything() {
        let lines: String = (0..20).map(|q| format!("0 qid:{q} 1:1\n")).collect();
        let ds = load_dataset(lines.as_bytes(), None).unwrap();
        let parts = ds.split_by_fractions(&[0.6, 0.2, 0.05, 0.15]);
        let sizes: Vec<usize> = parts.iter().map(|p| p.groups.len()).collect();
        assert_eq!(sizes, vec![12, 4, 1, 3]);
    }

    fn arb_line() -> impl Strategy<Value = (u8, u64, Vec<(usize, f64)>)> {
        (
            0u8..=4,
            0u64..6,
            proptest::collection::btree_map(0usize..12, -1e6f64..1e6, 0..6),
        )
            .prop_map(|(r, q, m)| (r, q, m.into_iter().collect()))
    }

    proptest! {
        #[test]
        fn letor_round_trip(lines in proptest::collection::vec(arb_line(), 1..30)) {
            let text: String = lines
                .iter()
                .map(|(r, q, f)| {
                    let feats: Vec<String> = f.iter().map(|(i, v)| format!("{}:{}", i + 1, v)).collect();
                    format!("{r} qid:{q} {}\n", feats.join(" "))
                })
                .collect();
            let ds = load_dataset(text.as_bytes(), Some(12)).unwrap();
            let mut buf = Vec::new();
            ds.write_letor(&mut buf).unwrap();
            let again = load_dataset(buf.as_slice(), Some(12)).unwrap();
            prop_assert_eq!(&ds, &again);
        }

        #[test]
        fn densification(line in arb_line()) {
            let (r, q, f) = line;
            let feats: Vec<String> = f.iter().map(|(i, v)| format!("{}:{}", i + 1, v)).collect();
            let text = format!("{r} qid:{q} {}", feats.join(" "));
            let ds = load_dataset(text.as_bytes(), Some(12)).unwrap();
            let dense = &ds.groups[0].documents[0].features;
            for (i, &got) in dense.iter().enumerate() {
                let expect = f.iter().find(|(j, _)| *j == i).map(|(_, v)| *v).unwrap_or(0.0);
                prop_assert_eq!(got, expect);
            }
        }
    }
}
