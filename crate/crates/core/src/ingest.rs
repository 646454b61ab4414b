//! Dataset loaders.
//!
//! Three sources are supported:
//!
//! * the native simple JSONL format, one example per line;
//! * the ERASER layout: a `docs/` directory (or `docs.jsonl`) plus
//!   `{train,val,test}.jsonl` annotation files with evidence offsets;
//! * Stanford Sentiment Treebank trees in parenthesized text, converted to
//!   token rationales by [`flatten_sst_tree`].
//!
//! Tokens are whitespace-separated throughout.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    check_example, Dataset, Example, Granularity, LabelSpace, Mask, QueryRationale, Split,
    SEPARATOR,
};

/// Sentence index given to separator tokens. They are special, so occlusion
/// never looks at it.
pub const SEPARATOR_UNIT: u32 = u32::MAX;

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Dataset name; defaults to the file or directory stem.
    pub name: Option<String>,
    /// Label order; defaults to the sorted distinct labels of the data.
    pub label_space: Option<LabelSpace>,
    /// Query marking when a rationale covers only the document.
    pub query_default: QueryRationale,
    /// Evidence granularity; ERASER loaders infer it from the name.
    pub granularity: Option<Granularity>,
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .or_else(|| path.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn infer_space(labels: impl IntoIterator<Item = String>) -> Result<LabelSpace> {
    let set: BTreeSet<String> = labels.into_iter().collect();
    LabelSpace::new(set)
}

/// Builds a flattened example from document and optional query parts. The
/// masks and sentence ids may cover the document alone or the document
/// followed by the query.
#[allow(clippy::too_many_arguments)]
fn assemble(
    id: String,
    doc: Vec<String>,
    query: Option<Vec<String>>,
    label: String,
    rationale: Option<Vec<i64>>,
    special: Option<Vec<i64>>,
    units: Option<Vec<u32>>,
    query_default: QueryRationale,
) -> Result<Example> {
    let d = doc.len();
    let query = query.unwrap_or_default();
    let q = query.len();
    let annotated = rationale.is_some();
    let rationale = Mask::from_ints(&rationale.unwrap_or_else(|| vec![0; d]))?;

    let split_parts = |len: usize| -> Result<bool> {
        if len == d {
            Ok(false)
        } else if q > 0 && len == d + q {
            Ok(true)
        } else {
            Err(Error::MaskLengthMismatch {
                expected: if q > 0 { d + q } else { d },
                actual: len,
            })
        }
    };

    let covers_query = split_parts(rationale.len())?;
    let (doc_mask, query_mask) = if covers_query {
        let bits = rationale.bits();
        (Mask::new(bits[..d].to_vec()), Some(Mask::new(bits[d..].to_vec())))
    } else {
        (rationale, None)
    };
    let mut ex = Example::with_query(id, doc, doc_mask, query, query_mask, query_default, label)?;
    ex.annotated = annotated;

    // re-insert the separator position into per-token side channels
    let with_sep = |v: Vec<bool>, sep: bool| -> Vec<bool> {
        let mut v = v;
        if q > 0 {
            v.insert(d, sep);
        }
        v
    };
    if let Some(special) = special {
        let special = Mask::from_ints(&special)?;
        if split_parts(special.len())? || q == 0 {
            ex.special = with_sep(special.bits().to_vec(), true).into();
        } else {
            ex.special = with_sep(
                special.concat(&Mask::zeros(q)).bits().to_vec(),
                true,
            )
            .into();
        }
    }
    if let Some(mut units) = units {
        if !split_parts(units.len())? && q > 0 {
            // query tokens form one extra unit after the document
            let next = units
                .iter()
                .filter(|&&u| u != SEPARATOR_UNIT)
                .max()
                .map_or(0, |m| m + 1);
            units.extend(std::iter::repeat_n(next, q));
        }
        if q > 0 {
            units.insert(d, SEPARATOR_UNIT);
        }
        ex.units = Some(units);
    }
    Ok(ex)
}

/// One line of the simple format.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SimpleRecord {
    id: String,
    tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    query_tokens: Option<Vec<String>>,
    label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rationale: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    annotated: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    special: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sentence_ids: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

/// Optional first line of a simple file carrying dataset metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SimpleHeader {
    meta: HeaderMeta,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HeaderMeta {
    name: String,
    labels: LabelSpace,
    granularity: Granularity,
}

/// Loads the simple JSONL format.
///
/// Each line holds `id`, `tokens`, `label` and optionally `query_tokens`,
/// `rationale` (over the document, or the document followed by the query),
/// `special`, `sentence_ids` and `split`. A line without `rationale` is an
/// unannotated example. The first line may instead be a header
/// `{"meta": {"name", "labels", "granularity"}}`.
pub fn load_simple_jsonl(path: &Path, opts: &LoadOptions) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut header: Option<HeaderMeta> = None;
    let mut rows: Vec<(usize, Example)> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if rows.is_empty() && header.is_none() && line.contains("\"meta\"") {
            if let Ok(h) = serde_json::from_str::<SimpleHeader>(&line) {
                header = Some(h.meta);
                continue;
            }
        }
        let rec: SimpleRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(path, lineno, e.to_string()))?;
        let annotated = rec.annotated;
        let mut ex = assemble(
            rec.id,
            rec.tokens,
            rec.query_tokens,
            rec.label,
            rec.rationale,
            rec.special,
            rec.sentence_ids,
            opts.query_default,
        )
        .map_err(|e| Error::InvalidRecord {
            line: lineno,
            source: Box::new(e),
        })?;
        if let Some(a) = annotated {
            ex.annotated = a;
        }
        ex.split = rec.split;
        rows.push((lineno, ex));
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let space = match (&opts.label_space, &header) {
        (Some(s), _) => s.clone(),
        (None, Some(h)) => h.labels.clone(),
        (None, None) => infer_space(rows.iter().map(|(_, e)| e.gold_label.clone()))?,
    };
    for (line, e) in &rows {
        check_example(e, &space).map_err(|err| Error::InvalidRecord {
            line: *line,
            source: Box::new(err),
        })?;
    }
    let name = opts
        .name
        .clone()
        .or_else(|| header.as_ref().map(|h| h.name.clone()))
        .unwrap_or_else(|| stem(path));
    let granularity = opts
        .granularity
        .or(header.as_ref().map(|h| h.granularity))
        .unwrap_or(Granularity::Token);
    Dataset::new(
        name,
        space,
        rows.into_iter().map(|(_, e)| e).collect(),
        granularity,
    )
}

fn to_record(e: &Example) -> SimpleRecord {
    let d = e.doc_len;
    let drop_sep = |v: &[bool]| -> Vec<i64> {
        v.iter()
            .enumerate()
            .filter(|(i, _)| e.query_tokens().is_none() || *i != d)
            .map(|(_, &b)| b as i64)
            .collect()
    };
    let special = drop_sep(e.special.bits());
    SimpleRecord {
        id: e.id.clone(),
        tokens: e.doc_tokens().to_vec(),
        query_tokens: e.query_tokens().map(<[String]>::to_vec),
        label: e.gold_label.clone(),
        rationale: Some(drop_sep(e.rationale.bits())),
        annotated: (!e.annotated).then_some(false),
        special: special.contains(&1).then_some(special),
        sentence_ids: e.units.as_ref().map(|u| {
            u.iter()
                .enumerate()
                .filter(|(i, _)| e.query_tokens().is_none() || *i != d)
                .map(|(_, &x)| x)
                .collect()
        }),
        split: e.split,
    }
}

/// Writes `dataset` in the simple format, header first, such that
/// [`load_simple_jsonl`] reproduces it exactly.
pub fn write_simple_jsonl(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = SimpleHeader {
        meta: HeaderMeta {
            name: dataset.name.clone(),
            labels: dataset.label_space.clone(),
            granularity: dataset.granularity,
        },
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for e in &dataset.examples {
        serde_json::to_writer(&mut w, &to_record(e))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- ERASER

#[derive(Debug, Clone, Deserialize)]
struct EraserEvidence {
    docid: String,
    #[serde(default)]
    start_token: Option<i64>,
    #[serde(default)]
    end_token: Option<i64>,
    #[serde(default)]
    start_sentence: Option<i64>,
    #[serde(default)]
    end_sentence: Option<i64>,
}

#[derive(Debug, Clone, Deserialize)]
struct EraserAnnotation {
    annotation_id: String,
    classification: String,
    #[serde(default)]
    query: Option<String>,
    #[serde(default)]
    evidences: Vec<Vec<EraserEvidence>>,
    #[serde(default)]
    docids: Option<Vec<String>>,
}

/// A document as a list of sentences of tokens.
type EraserDoc = Vec<Vec<String>>;

fn split_doc(text: &str) -> EraserDoc {
    text.lines()
        .map(|l| l.split_whitespace().map(String::from).collect::<Vec<_>>())
        .filter(|s| !s.is_empty())
        .collect()
}

#[derive(Deserialize)]
struct DocLine {
    docid: String,
    document: String,
}

fn load_docs(dir: &Path) -> Result<HashMap<String, EraserDoc>> {
    let mut docs = HashMap::new();
    let docs_dir = dir.join("docs");
    if docs_dir.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&docs_dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        entries.sort();
        let loaded: Vec<(String, EraserDoc)> = entries
            .par_iter()
            .filter(|p| p.is_file())
            .map(|p| {
                let id = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
                Ok((id, split_doc(&std::fs::read_to_string(p)?)))
            })
            .collect::<Result<_>>()?;
        docs.extend(loaded);
    }
    let jsonl = dir.join("docs.jsonl");
    if jsonl.is_file() {
        let reader = BufReader::new(File::open(&jsonl)?);
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let d: DocLine =
                serde_json::from_str(&line).map_err(|e| parse_err(&jsonl, i + 1, e.to_string()))?;
            docs.insert(d.docid, split_doc(&d.document));
        }
    }
    Ok(docs)
}

fn evidence_granularity(name: &str) -> Granularity {
    let lower = name.to_lowercase();
    if lower.contains("multirc") || lower.contains("fever") {
        Granularity::Sentence
    } else {
        Granularity::Token
    }
}

fn eraser_example(
    ann: EraserAnnotation,
    docs: &HashMap<String, EraserDoc>,
    granularity: Granularity,
    query_default: QueryRationale,
) -> Result<Example> {
    let docids: Vec<String> = match ann.docids.clone() {
        Some(ids) if !ids.is_empty() => ids,
        _ => {
            let mut ids: Vec<String> = Vec::new();
            for ev in ann.evidences.iter().flatten() {
                if !ids.contains(&ev.docid) {
                    ids.push(ev.docid.clone());
                }
            }
            if ids.is_empty() {
                ids.push(ann.annotation_id.clone());
            }
            ids
        }
    };

    // per document: token offset, sentence offset, token count
    let mut tokens: Vec<String> = Vec::new();
    let mut special: Vec<bool> = Vec::new();
    let mut units: Vec<u32> = Vec::new();
    let mut layout: HashMap<&str, (usize, usize, usize, Vec<usize>)> = HashMap::new();
    let mut sentence_base = 0u32;
    for (k, docid) in docids.iter().enumerate() {
        let doc = docs
            .get(docid)
            .ok_or_else(|| Error::MissingDocument(docid.clone()))?;
        if k > 0 {
            tokens.push(SEPARATOR.to_string());
            special.push(true);
            units.push(SEPARATOR_UNIT);
        }
        let start = tokens.len();
        let mut sentence_starts = Vec::with_capacity(doc.len() + 1);
        for (s, sentence) in doc.iter().enumerate() {
            sentence_starts.push(tokens.len() - start);
            for t in sentence {
                tokens.push(t.clone());
                special.push(false);
                units.push(sentence_base + s as u32);
            }
        }
        let len = tokens.len() - start;
        sentence_starts.push(len);
        sentence_base += doc.len() as u32;
        layout.insert(docid.as_str(), (start, len, doc.len(), sentence_starts));
    }

    let mut rationale = vec![false; tokens.len()];
    for ev in ann.evidences.iter().flatten() {
        let (start, len, n_sent, starts) = layout
            .get(ev.docid.as_str())
            .ok_or_else(|| Error::MissingDocument(ev.docid.clone()))?;
        let by_sentence = granularity == Granularity::Sentence
            && ev.start_sentence.is_some_and(|s| s >= 0);
        let (lo, hi) = if by_sentence {
            let s0 = ev.start_sentence.unwrap_or(0);
            let s1 = ev.end_sentence.unwrap_or(s0 + 1);
            if s0 < 0 || s1 < s0 || s1 as usize > *n_sent {
                return Err(Error::SpanOutOfRange {
                    docid: ev.docid.clone(),
                    start: s0,
                    end: s1,
                    len: *n_sent,
                });
            }
            (starts[s0 as usize], starts[s1 as usize])
        } else {
            let (t0, t1) = (ev.start_token.unwrap_or(-1), ev.end_token.unwrap_or(-1));
            if t0 < 0 || t1 < t0 || t1 as usize > *len {
                return Err(Error::SpanOutOfRange {
                    docid: ev.docid.clone(),
                    start: t0,
                    end: t1,
                    len: *len,
                });
            }
            (t0 as usize, t1 as usize)
        };
        for bit in &mut rationale[start + lo..start + hi] {
            *bit = true;
        }
    }

    let query: Vec<String> = ann
        .query
        .as_deref()
        .map(|q| q.split_whitespace().map(String::from).collect())
        .unwrap_or_default();
    let annotated = !ann.evidences.is_empty();
    let q = query.len();
    let doc_special = Mask::new(special);
    let mut ex = Example::with_query(
        ann.annotation_id,
        tokens,
        Mask::new(rationale),
        query,
        None,
        query_default,
        ann.classification,
    )?;
    let d = ex.doc_len;
    // keep inner document separators special
    let mut sp = ex.special.bits().to_vec();
    for (i, b) in doc_special.iter().enumerate() {
        sp[i] |= b;
    }
    ex.special = sp.into();
    if q > 0 {
        let next = sentence_base;
        units.push(SEPARATOR_UNIT);
        units.extend(std::iter::repeat_n(next, q));
    }
    debug_assert_eq!(units.len(), d + if q > 0 { q + 1 } else { 0 });
    ex.units = Some(units);
    ex.annotated = annotated;
    Ok(ex)
}

/// Loads an ERASER-style directory: documents in `docs/` (one file per
/// docid, one sentence per line) or `docs.jsonl`, and annotations in
/// `train.jsonl`, `val.jsonl` and `test.jsonl` (each optional).
///
/// Multiple documents of one annotation are joined with separators and the
/// query follows the last one. Sentence-level evidence expands to whole
/// sentences.
pub fn load_eraser(dir: &Path, opts: &LoadOptions) -> Result<Dataset> {
    let name = opts.name.clone().unwrap_or_else(|| stem(dir));
    let granularity = opts.granularity.unwrap_or_else(|| evidence_granularity(&name));
    let docs = load_docs(dir)?;

    let files: Vec<(Split, PathBuf)> = [
        (Split::Train, "train.jsonl"),
        (Split::Dev, "val.jsonl"),
        (Split::Test, "test.jsonl"),
    ]
    .into_iter()
    .map(|(s, f)| (s, dir.join(f)))
    .filter(|(_, p)| p.is_file())
    .collect();

    let per_file: Vec<Vec<Example>> = files
        .par_iter()
        .map(|(split, path)| {
            let reader = BufReader::new(File::open(path)?);
            let mut out = Vec::new();
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let ann: EraserAnnotation = serde_json::from_str(&line)
                    .map_err(|e| parse_err(path, i + 1, e.to_string()))?;
                let ex = eraser_example(ann, &docs, granularity, opts.query_default)?;
                out.push(ex.with_split(*split));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let examples: Vec<Example> = per_file.into_iter().flatten().collect();
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let space = match &opts.label_space {
        Some(s) => s.clone(),
        None => infer_space(examples.iter().map(|e| e.gold_label.clone()))?,
    };
    Dataset::new(name, space, examples, granularity)
}

// ------------------------------------------------------------------- SST

/// A node of a sentiment-annotated constituency tree. Sentiment runs from
/// -2 (very negative) to 2 (very positive).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentimentTreeNode {
    pub sentiment: i8,
    pub children: Vec<SentimentTreeNode>,
    /// Present exactly on leaves.
    pub token: Option<String>,
}

impl SentimentTreeNode {
    pub fn leaf(sentiment: i8, token: impl Into<String>) -> Self {
        Self {
            sentiment,
            children: Vec::new(),
            token: Some(token.into()),
        }
    }

    pub fn node(sentiment: i8, children: Vec<SentimentTreeNode>) -> Self {
        Self {
            sentiment,
            children,
            token: None,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Leaf tokens in order.
    pub fn tokens(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_tokens(&mut out);
        out
    }

    fn collect_tokens(&self, out: &mut Vec<String>) {
        match &self.token {
            Some(t) => out.push(t.clone()),
            None => self.children.iter().for_each(|c| c.collect_tokens(out)),
        }
    }

    fn check(&self) -> Result<()> {
        if !(-2..=2).contains(&self.sentiment) {
            return Err(Error::MalformedTree(format!(
                "sentiment {} outside [-2, 2]",
                self.sentiment
            )));
        }
        match (&self.token, self.children.is_empty()) {
            (Some(_), true) => Ok(()),
            (None, false) => self.children.iter().try_for_each(Self::check),
            (Some(t), false) => Err(Error::MalformedTree(format!(
                "internal node carries token {t:?}"
            ))),
            (None, true) => Err(Error::MalformedTree("leaf without a token".into())),
        }
    }
}

/// Parses one tree in PTB notation, e.g. `(3 (2 a) (4 (3 fine) (2 film)))`,
/// with labels 0..=4 mapped to -2..=2.
pub fn parse_sst_tree(text: &str) -> Result<SentimentTreeNode> {
    let mut lexemes = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        match ch {
            '(' | ')' => {
                if !word.is_empty() {
                    lexemes.push(std::mem::take(&mut word));
                }
                lexemes.push(ch.to_string());
            }
            c if c.is_whitespace() => {
                if !word.is_empty() {
                    lexemes.push(std::mem::take(&mut word));
                }
            }
            c => word.push(c),
        }
    }
    if !word.is_empty() {
        lexemes.push(word);
    }
    let mut pos = 0;
    let tree = parse_node(&lexemes, &mut pos)?;
    if pos != lexemes.len() {
        return Err(Error::MalformedTree(format!(
            "trailing input after position {pos}"
        )));
    }
    tree.check()?;
    Ok(tree)
}

fn parse_node(lx: &[String], pos: &mut usize) -> Result<SentimentTreeNode> {
    let next = |pos: &mut usize| -> Result<&String> {
        let t = lx
            .get(*pos)
            .ok_or_else(|| Error::MalformedTree("unexpected end of tree".into()))?;
        *pos += 1;
        Ok(t)
    };
    if next(pos)? != "(" {
        return Err(Error::MalformedTree("expected '('".into()));
    }
    let label = next(pos)?;
    let raw: i8 = label
        .parse()
        .map_err(|_| Error::MalformedTree(format!("bad sentiment label {label:?}")))?;
    if !(0..=4).contains(&raw) {
        return Err(Error::MalformedTree(format!("sentiment label {raw} outside 0..=4")));
    }
    let sentiment = raw - 2;
    match lx.get(*pos).map(String::as_str) {
        Some("(") => {
            let mut children = Vec::new();
            while lx.get(*pos).map(String::as_str) == Some("(") {
                children.push(parse_node(lx, pos)?);
            }
            if next(pos)? != ")" {
                return Err(Error::MalformedTree("expected ')'".into()));
            }
            Ok(SentimentTreeNode::node(sentiment, children))
        }
        Some(")") => Err(Error::MalformedTree("leaf without a token".into())),
        Some(_) => {
            let token = next(pos)?.clone();
            if next(pos)? != ")" {
                return Err(Error::MalformedTree(format!(
                    "expected ')' after token {token:?}"
                )));
            }
            Ok(SentimentTreeNode::leaf(sentiment, token))
        }
        None => Err(Error::MalformedTree("unexpected end of tree".into())),
    }
}

/// Tokens, rationale and binary label derived from one sentiment tree.
#[derive(Debug, Clone, PartialEq)]
pub struct SstRationale {
    pub tokens: Vec<String>,
    pub rationale: Mask,
    pub label: String,
}

pub const SST_NEGATIVE: &str = "neg";
pub const SST_POSITIVE: &str = "pos";

/// Converts a tree into a token rationale.
///
/// Nodes are visited breadth-first from the root. An internal node whose
/// |sentiment| strictly exceeds that of every descendant is selected: its
/// whole span joins the rationale and its subtree is not visited further.
/// A visited leaf is selected when its sentiment is non-zero. The label is
/// the sign of the root sentiment; neutral roots yield `None`.
pub fn flatten_sst_tree(root: &SentimentTreeNode) -> Result<Option<SstRationale>> {
    root.check()?;
    let label = match root.sentiment.signum() {
        0 => return Ok(None),
        1 => SST_POSITIVE,
        _ => SST_NEGATIVE,
    };
    let tokens = root.tokens();

    // span start and max descendant magnitude, post-order
    fn annotate(
        n: &SentimentTreeNode,
        start: usize,
        out: &mut HashMap<*const SentimentTreeNode, (usize, usize, i8)>,
    ) -> (usize, i8) {
        if n.is_leaf() {
            out.insert(n, (start, 1, -1));
            return (1, n.sentiment.abs());
        }
        let mut len = 0;
        let mut max_desc = -1i8;
        for c in &n.children {
            let (l, m) = annotate(c, start + len, out);
            len += l;
            max_desc = max_desc.max(m);
        }
        out.insert(n, (start, len, max_desc));
        (len, max_desc.max(n.sentiment.abs()))
    }
    let mut info = HashMap::new();
    annotate(root, 0, &mut info);

    let mut bits = vec![false; tokens.len()];
    let mut queue: VecDeque<&SentimentTreeNode> = VecDeque::from([root]);
    while let Some(n) = queue.pop_front() {
        let (start, len, max_desc) = info[&(n as *const _)];
        let selected = if n.is_leaf() {
            n.sentiment != 0
        } else {
            n.sentiment.abs() > max_desc
        };
        if selected {
            bits[start..start + len].iter_mut().for_each(|b| *b = true);
        } else {
            queue.extend(n.children.iter());
        }
    }
    Ok(Some(SstRationale {
        tokens,
        rationale: bits.into(),
        label: label.to_string(),
    }))
}

fn sst_space() -> LabelSpace {
    LabelSpace::new([SST_NEGATIVE, SST_POSITIVE]).expect("two distinct labels")
}

/// Reads one tree per line. Neutral-root trees are skipped; ids are
/// `<prefix>-<line>`.
pub fn load_sst_file(path: &Path, prefix: &str, split: Option<Split>) -> Result<Vec<Example>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let tree = parse_sst_tree(line).map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        if let Some(flat) = flatten_sst_tree(&tree)? {
            let mut ex = Example::new(
                format!("{prefix}-{}", i + 1),
                flat.tokens,
                flat.label,
                flat.rationale,
            );
            ex.split = split;
            out.push(ex);
        }
    }
    Ok(out)
}

/// Loads `train.txt`, `dev.txt` and `test.txt` from `dir` (each optional),
/// or a single tree file.
pub fn load_sst(path: &Path, opts: &LoadOptions) -> Result<Dataset> {
    let name = opts.name.clone().unwrap_or_else(|| "sst".into());
    let examples = if path.is_dir() {
        let files: Vec<(Split, PathBuf)> = [
            (Split::Train, "train.txt"),
            (Split::Dev, "dev.txt"),
            (Split::Test, "test.txt"),
        ]
        .into_iter()
        .map(|(s, f)| (s, path.join(f)))
        .filter(|(_, p)| p.is_file())
        .collect();
        let parts: Vec<Vec<Example>> = files
            .par_iter()
            .map(|(split, p)| load_sst_file(p, split.as_str(), Some(*split)))
            .collect::<Result<_>>()?;
        parts.into_iter().flatten().collect::<Vec<_>>()
    } else {
        load_sst_file(path, &stem(path), None)?
    };
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Dataset::new(name, sst_space(), examples, Granularity::Token)
}

/// Source format accepted by [`load_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DatasetFormat {
    #[default]
    Simple,
    Eraser,
    Sst,
}

impl std::str::FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(Self::Simple),
            "eraser" => Ok(Self::Eraser),
            "sst" => Ok(Self::Sst),
            other => Err(Error::InvalidConfig(format!("unknown dataset format {other:?}"))),
        }
    }
}

pub fn load_dataset(path: &Path, format: DatasetFormat, opts: &LoadOptions) -> Result<Dataset> {
    match format {
        DatasetFormat::Simple => load_simple_jsonl(path, opts),
        DatasetFormat::Eraser => load_eraser(path, opts),
        DatasetFormat::Sst => load_sst(path, opts),
    }
}

/// Label counts, for quick summaries.
pub fn label_counts(dataset: &Dataset) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for e in &dataset.examples {
        *counts.entry(e.gold_label.clone()).or_insert(0) += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn simple_two_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "toy.jsonl",
            "{\"id\":\"a\",\"tokens\":[\"good\",\"film\"],\"label\":\"pos\",\"rationale\":[1,0]}\n\
             {\"id\":\"b\",\"tokens\":[\"bad\"],\"label\":\"neg\",\"rationale\":[1],\"split\":\"val\"}\n",
        );
        let d = load_simple_jsonl(&p, &LoadOptions::default()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.name, "toy");
        assert_eq!(d.label_space.labels(), ["neg", "pos"]);
        assert_eq!(d.examples[1].split, Some(Split::Dev));
    }

    #[test]
    fn simple_mismatch_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "bad.jsonl",
            "{\"id\":\"a\",\"tokens\":[\"x\"],\"label\":\"pos\",\"rationale\":[1]}\n\
             {\"id\":\"b\",\"tokens\":[\"x\",\"y\"],\"label\":\"neg\",\"rationale\":[1]}\n",
        );
        match load_simple_jsonl(&p, &LoadOptions::default()) {
            Err(Error::InvalidRecord { line: 2, source }) => {
                assert!(matches!(*source, Error::MaskLengthMismatch { expected: 2, actual: 1 }))
            }
            other => panic!("{other:?}"),
        }
        let p = write(dir.path(), "junk.jsonl", "{\"id\":\"a\"}\nnot json\n");
        assert!(matches!(
            load_simple_jsonl(&p, &LoadOptions::default()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn simple_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "e.jsonl", "");
        assert!(matches!(
            load_simple_jsonl(&p, &LoadOptions::default()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn simple_query_defaults_and_explicit() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "q.jsonl",
            "{\"id\":\"a\",\"tokens\":[\"d1\",\"d2\"],\"query_tokens\":[\"q\"],\"label\":\"x\",\"rationale\":[1,0]}\n\
             {\"id\":\"b\",\"tokens\":[\"d1\"],\"query_tokens\":[\"q\"],\"label\":\"y\",\"rationale\":[0,0]}\n",
        );
        let d = load_simple_jsonl(&p, &LoadOptions::default()).unwrap();
        assert_eq!(d.examples[0].tokens, ["d1", "d2", SEPARATOR, "q"]);
        assert_eq!(d.examples[0].rationale.to_ints(), [1, 0, 0, 1]);
        assert_eq!(d.examples[0].special.to_ints(), [0, 0, 1, 0]);
        assert_eq!(d.examples[1].rationale.to_ints(), [0, 0, 0]);
    }

    fn eraser_dir(docs: &[(&str, &str)], train: &str) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("docs")).unwrap();
        for (id, text) in docs {
            write(&dir.path().join("docs"), id, text);
        }
        write(dir.path(), "train.jsonl", train);
        dir
    }

    #[test]
    fn eraser_token_span() {
        let dir = eraser_dir(
            &[("d1", "a b c\nd e f\n")],
            r#"{"annotation_id":"x","classification":"POS","evidences":[[{"docid":"d1","start_token":3,"end_token":5}]]}
{"annotation_id":"y","classification":"NEG","docids":["d1"],"evidences":[]}
"#,
        );
        let opts = LoadOptions {
            name: Some("movies".into()),
            ..Default::default()
        };
        let d = load_eraser(dir.path(), &opts).unwrap();
        assert_eq!(d.examples[0].rationale.to_ints(), [0, 0, 0, 1, 1, 0]);
        assert_eq!(d.examples[0].units.as_deref(), Some(&[0, 0, 0, 1, 1, 1][..]));
        assert!(!d.examples[1].annotated);
        assert_eq!(d.granularity, Granularity::Token);
    }

    #[test]
    fn eraser_fever_claim_is_rationale() {
        let dir = eraser_dir(
            &[("w", "first one\nsecond sentence here\n")],
            r#"{"annotation_id":"c","classification":"SUPPORTS","query":"the claim","evidences":[[{"docid":"w","start_sentence":1,"end_sentence":2,"start_token":2,"end_token":5}]]}
{"annotation_id":"d","classification":"REFUTES","query":"other","evidences":[],"docids":["w"]}
"#,
        );
        let opts = LoadOptions {
            name: Some("fever".into()),
            ..Default::default()
        };
        let d = load_eraser(dir.path(), &opts).unwrap();
        assert_eq!(d.granularity, Granularity::Sentence);
        let e = &d.examples[0];
        assert_eq!(e.tokens[e.doc_len], SEPARATOR);
        assert_eq!(e.rationale.to_ints(), [0, 0, 1, 1, 1, 0, 1, 1]);
        assert_eq!(e.query_tokens().unwrap(), ["the", "claim"]);
    }

    #[test]
    fn eraser_errors() {
        let dir = eraser_dir(
            &[("d1", "a b c\n")],
            r#"{"annotation_id":"x","classification":"P","evidences":[[{"docid":"d1","start_token":2,"end_token":9}]]}"#,
        );
        assert!(matches!(
            load_eraser(dir.path(), &LoadOptions::default()),
            Err(Error::SpanOutOfRange { end: 9, len: 3, .. })
        ));
        let dir = eraser_dir(
            &[("d1", "a b c\n")],
            r#"{"annotation_id":"x","classification":"P","evidences":[[{"docid":"nope","start_token":0,"end_token":1}]]}"#,
        );
        assert!(matches!(
            load_eraser(dir.path(), &LoadOptions::default()),
            Err(Error::MissingDocument(d)) if d == "nope"
        ));
    }

    #[test]
    fn eraser_multiple_documents() {
        let dir = eraser_dir(
            &[("p", "a man sleeps\n"), ("h", "a person rests\n")],
            r#"{"annotation_id":"x","classification":"entailment","query":"rel","evidences":[[{"docid":"h","start_token":1,"end_token":3}]],"docids":["p","h"]}
{"annotation_id":"y","classification":"neutral","query":"rel","evidences":[[{"docid":"p","start_token":0,"end_token":1}]],"docids":["p","h"]}"#,
        );
        let d = load_eraser(dir.path(), &LoadOptions::default()).unwrap();
        let e = &d.examples[0];
        assert_eq!(e.tokens.len(), 3 + 1 + 3 + 1 + 1);
        assert_eq!(e.special.to_ints(), [0, 0, 0, 1, 0, 0, 0, 1, 0]);
        assert_eq!(e.rationale.to_ints(), [0, 0, 0, 0, 0, 1, 1, 0, 1]);
    }

    #[test]
    fn sst_greater_than_descendants() {
        let t = parse_sst_tree("(4 (4 great) (2 movie))").unwrap();
        let f = flatten_sst_tree(&t).unwrap().unwrap();
        assert_eq!(f.rationale.to_ints(), [1, 0]);
        assert_eq!(f.label, "pos");

        let t = parse_sst_tree("(4 (2 so) (2 so))").unwrap();
        let f = flatten_sst_tree(&t).unwrap().unwrap();
        assert_eq!(f.rationale.to_ints(), [1, 1]);
    }

    #[test]
    fn sst_phrase_selected_under_weaker_parent() {
        // "top notch" (+2) over leaves (+1, 0) is selected as a unit
        let t = parse_sst_tree("(3 (2 the) (3 (2 cast) (4 (3 top) (2 notch))))").unwrap();
        let f = flatten_sst_tree(&t).unwrap().unwrap();
        assert_eq!(f.tokens, ["the", "cast", "top", "notch"]);
        assert_eq!(f.rationale.to_ints(), [0, 0, 1, 1]);
    }

    #[test]
    fn sst_neutral_root_and_malformed() {
        let t = parse_sst_tree("(2 (4 good) (0 bad))").unwrap();
        assert_eq!(flatten_sst_tree(&t).unwrap(), None);
        for bad in ["(3 (2 a)", "(7 a)", "(3)", "(x a)", "(3 a) (2 b)", "3 a"] {
            assert!(matches!(parse_sst_tree(bad), Err(Error::MalformedTree(_))), "{bad}");
        }
        let t = parse_sst_tree("(1 (0 awful) (2 film))").unwrap();
        assert_eq!(flatten_sst_tree(&t).unwrap().unwrap().label, "neg");
    }

    fn arb_tree() -> impl Strategy<Value = SentimentTreeNode> {
        let leaf = (-2i8..=2, "[a-z]{1,3}").prop_map(|(s, t)| SentimentTreeNode::leaf(s, t));
        leaf.prop_recursive(4, 24, 3, |inner| {
            (-2i8..=2, prop::collection::vec(inner, 1..4))
                .prop_map(|(s, c)| SentimentTreeNode::node(s, c))
        })
    }

    /// Spans of selected nodes, by the rule restated recursively.
    fn selected_spans(n: &SentimentTreeNode, start: usize, out: &mut Vec<(usize, usize)>) -> usize {
        let len = n.tokens().len();
        let max_desc = fn_max_desc(n);
        let sel = if n.is_leaf() {
            n.sentiment != 0
        } else {
            n.sentiment.abs() > max_desc
        };
        if sel {
            out.push((start, start + len));
        } else {
            let mut off = start;
            for c in &n.children {
                off += selected_spans(c, off, out);
            }
        }
        len
    }

    fn fn_max_desc(n: &SentimentTreeNode) -> i8 {
        n.children
            .iter()
            .map(|c| c.sentiment.abs().max(fn_max_desc(c)))
            .max()
            .unwrap_or(-1)
    }

    proptest! {
        #[test]
        fn sst_mask_is_union_of_disjoint_subtree_spans(t in arb_tree()) {
            prop_assume!(t.sentiment != 0);
            let f = flatten_sst_tree(&t).unwrap().unwrap();
            prop_assert_eq!(f.rationale.len(), t.tokens().len());
            let mut spans = Vec::new();
            selected_spans(&t, 0, &mut spans);
            let mut expected = vec![false; f.rationale.len()];
            for w in spans.windows(2) {
                prop_assert!(w[0].1 <= w[1].0);
            }
            for (a, b) in spans {
                expected[a..b].iter_mut().for_each(|x| *x = true);
            }
            prop_assert_eq!(f.rationale.bits(), &expected[..]);
        }

        #[test]
        fn sst_parse_round_trips(t in arb_tree()) {
            fn show(n: &SentimentTreeNode) -> String {
                match &n.token {
                    Some(tok) => format!("({} {})", n.sentiment + 2, tok),
                    None => format!(
                        "({} {})",
                        n.sentiment + 2,
                        n.children.iter().map(show).collect::<Vec<_>>().join(" ")
                    ),
                }
            }
            prop_assert_eq!(parse_sst_tree(&show(&t)).unwrap(), t);
        }
    }

    #[test]
    fn simple_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let eraser = eraser_dir(
            &[("p", "a man sleeps\nzz\n"), ("h", "a person rests\n")],
            r#"{"annotation_id":"x","classification":"entailment","query":"rel q","evidences":[[{"docid":"h","start_token":1,"end_token":3}]],"docids":["p","h"]}
{"annotation_id":"y","classification":"neutral","evidences":[],"docids":["p"]}"#,
        );
        let d = load_eraser(eraser.path(), &LoadOptions::default()).unwrap();
        let p = dir.path().join("out.jsonl");
        write_simple_jsonl(&d, &p).unwrap();
        let back = load_simple_jsonl(&p, &LoadOptions::default()).unwrap();
        assert_eq!(back, d);
    }
}
