//! Word-embedding alignment: ingestion of text-format embedding tables and
//! bilingual dictionaries, unit normalization, the two-stage scaled solve,
//! CSLS retrieval and precision@k evaluation.
//!
//! The two-stage solve runs the full annealing schedule on the top-k most
//! frequent words of each language, then re-solves the larger problem with λ
//! pinned at its floor and the map seeded from stage one. Both stages are the
//! same optimization problem at different sizes; re-annealing stage two would
//! throw away the map stage one found.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::PointSet;
use crate::solver::{solve_best_of, solve_from, AlignmentResult, SolverConfig, TraceRecord};

/// Magic line opening the binary map dump format.
const MAP_MAGIC: &str = "OTALIGN-MAP v1";

/// An ordered vocabulary with its vectors. Order is meaningful: input files
/// list higher-frequency words first, and the scaled solve leans on that.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    tokens: Vec<String>,
    vectors: DMatrix<f64>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(tokens: Vec<String>, vectors: DMatrix<f64>) -> Result<Self> {
        if tokens.len() != vectors.ncols() {
            return Err(Error::dims(format!(
                "{} tokens but {} vector columns",
                tokens.len(),
                vectors.ncols()
            )));
        }
        if vectors.nrows() == 0 || vectors.ncols() == 0 {
            return Err(Error::invalid("embedding table must be at least 1x1"));
        }
        if !vectors.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("embedding table has non-finite entries"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate token '{t}'")));
            }
        }
        Ok(EmbeddingTable {
            tokens,
            vectors,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn position(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// The first `k` entries in file (frequency) order.
    pub fn head(&self, k: usize) -> Result<EmbeddingTable> {
        if k == 0 || k > self.vocab_size() {
            return Err(Error::invalid(format!(
                "cannot take {k} of {} vocabulary entries",
                self.vocab_size()
            )));
        }
        EmbeddingTable::new(
            self.tokens[..k].to_vec(),
            self.vectors.columns(0, k).clone_owned(),
        )
    }

    /// Entries `[from, to)` in file order.
    pub fn slice(&self, from: usize, to: usize) -> Result<EmbeddingTable> {
        if from >= to || to > self.vocab_size() {
            return Err(Error::invalid(format!(
                "bad slice [{from}, {to}) of {} entries",
                self.vocab_size()
            )));
        }
        EmbeddingTable::new(
            self.tokens[from..to].to_vec(),
            self.vectors.columns(from, to - from).clone_owned(),
        )
    }
}

/// A parsed table plus how many duplicate rows were dropped on the way.
#[derive(Debug, Clone)]
pub struct LoadOutcome {
    pub table: EmbeddingTable,
    pub duplicates_skipped: usize,
}

/// Loads the word2vec-style text format: a `"V d"` header line followed by
/// `V` lines of `token v1 ... vd`. Reads at most `max_vocab` rows; duplicate
/// tokens after the first are skipped and counted.
pub fn load_embeddings(path: &Path, max_vocab: usize) -> Result<LoadOutcome> {
    let file = std::fs::File::open(path)?;
    read_embeddings(BufReader::new(file), max_vocab)
}

/// As [`load_embeddings`] from any buffered reader.
pub fn read_embeddings<R: Read>(reader: R, max_vocab: usize) -> Result<LoadOutcome> {
    if max_vocab == 0 {
        return Err(Error::invalid("max_vocab must be >= 1"));
    }
    let mut reader = BufReader::new(reader);
    let mut raw = Vec::new();
    let mut line_no = 0usize;

    let header = read_line(&mut reader, &mut raw, &mut line_no)?
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: "empty file, expected 'V d' header".into(),
        })?;
    let mut parts = header.split_whitespace();
    let declared: usize = parse_field(parts.next(), line_no, "vocabulary count")?;
    let dim: usize = parse_field(parts.next(), line_no, "dimension")?;
    if parts.next().is_some() {
        return Err(Error::Parse {
            line: line_no,
            message: "header must be exactly 'V d'".into(),
        });
    }
    if declared == 0 || dim == 0 {
        return Err(Error::Parse {
            line: line_no,
            message: format!("degenerate header {declared} x {dim}"),
        });
    }

    let take = declared.min(max_vocab);
    let mut tokens: Vec<String> = Vec::with_capacity(take);
    let mut index: HashMap<String, usize> = HashMap::with_capacity(take);
    let mut data: Vec<f64> = Vec::with_capacity(take * dim);
    let mut duplicates = 0usize;
    let mut rows_seen = 0usize;

    while tokens.len() < take && rows_seen < declared {
        let line = match read_line(&mut reader, &mut raw, &mut line_no)? {
            Some(l) => l,
            None => break,
        };
        if line.is_empty() {
            continue;
        }
        rows_seen += 1;
        let mut fields = line.split_whitespace();
        let token = fields.next().ok_or_else(|| Error::Parse {
            line: line_no,
            message: "missing token".into(),
        })?;
        let mut values = Vec::with_capacity(dim);
        for field in fields {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("cannot parse '{field}' as a float"),
            })?;
            values.push(v);
        }
        if values.len() != dim {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {dim} components, found {}", values.len()),
            });
        }
        if index.contains_key(token) {
            duplicates += 1;
            continue;
        }
        index.insert(token.to_string(), tokens.len());
        tokens.push(token.to_string());
        data.extend_from_slice(&values);
    }

    if tokens.is_empty() {
        return Err(Error::Parse {
            line: line_no,
            message: "no embedding rows parsed".into(),
        });
    }
    // Rows were appended token-major; the table stores vectors as columns.
    let vectors = DMatrix::from_fn(dim, tokens.len(), |r, c| data[c * dim + r]);
    Ok(LoadOutcome {
        table: EmbeddingTable::new(tokens, vectors)?,
        duplicates_skipped: duplicates,
    })
}

fn read_line<R: BufRead>(
    reader: &mut R,
    raw: &mut Vec<u8>,
    line_no: &mut usize,
) -> Result<Option<String>> {
    raw.clear();
    let n = reader.read_until(b'\n', raw)?;
    if n == 0 {
        return Ok(None);
    }
    *line_no += 1;
    while raw.last() == Some(&b'\n') || raw.last() == Some(&b'\r') {
        raw.pop();
    }
    match std::str::from_utf8(raw) {
        Ok(s) => Ok(Some(s.to_string())),
        Err(_) => Err(Error::Parse {
            line: *line_no,
            message: "line is not valid UTF-8".into(),
        }),
    }
}

fn parse_field<T: std::str::FromStr>(
    field: Option<&str>,
    line: usize,
    what: &str,
) -> Result<T> {
    field
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| Error::Parse {
            line,
            message: format!("malformed header: missing or invalid {what}"),
        })
}

/// Rescales every column to unit ℓ2 norm; zero vectors are rejected with the
/// offending token named.
pub fn unit_normalize(table: &EmbeddingTable) -> Result<EmbeddingTable> {
    let mut vectors = table.vectors.clone();
    for (j, mut col) in vectors.column_iter_mut().enumerate() {
        let norm = col.norm();
        if norm < 1e-300 {
            return Err(Error::invalid(format!(
                "token '{}' has a zero embedding vector",
                table.tokens[j]
            )));
        }
        col /= norm;
    }
    EmbeddingTable::new(table.tokens.clone(), vectors)
}

/// Source-to-target translation pairs; repeated source tokens accumulate
/// acceptable targets.
#[derive(Debug, Clone)]
pub struct BilingualDictionary {
    pairs: Vec<(String, String)>,
    index: HashMap<String, BTreeSet<String>>,
}

impl BilingualDictionary {
    pub fn from_pairs(pairs: Vec<(String, String)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::invalid("dictionary has no pairs"));
        }
        let mut index: HashMap<String, BTreeSet<String>> = HashMap::new();
        for (s, t) in &pairs {
            index.entry(s.clone()).or_default().insert(t.clone());
        }
        Ok(BilingualDictionary { pairs, index })
    }

    /// The identity dictionary over a shared vocabulary: every token
    /// translates to itself. Used when two tables share token sets (rotated
    /// copies, synthetic vocabularies).
    pub fn identity(tokens: &[String]) -> Result<Self> {
        Self::from_pairs(tokens.iter().map(|t| (t.clone(), t.clone())).collect())
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn acceptable(&self, source: &str) -> Option<&BTreeSet<String>> {
        self.index.get(source)
    }

    pub fn source_tokens(&self) -> impl Iterator<Item = &String> {
        self.index.keys()
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }
}

/// Loads a dictionary file: one `src tgt` pair per whitespace-separated
/// line; blank lines are ignored.
pub fn load_dictionary(path: &Path) -> Result<BilingualDictionary> {
    let file = std::fs::File::open(path)?;
    read_dictionary(BufReader::new(file))
}

pub fn read_dictionary<R: Read>(reader: R) -> Result<BilingualDictionary> {
    let mut reader = BufReader::new(reader);
    let mut raw = Vec::new();
    let mut line_no = 0usize;
    let mut pairs = Vec::new();
    while let Some(line) = read_line(&mut reader, &mut raw, &mut line_no)? {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 'src tgt', found {} fields", fields.len()),
            });
        }
        pairs.push((fields[0].to_string(), fields[1].to_string()));
    }
    BilingualDictionary::from_pairs(pairs)
}

/// Controls for the scaled two-stage alignment.
#[derive(Debug, Clone)]
pub struct TwoStageConfig {
    /// Subsample size of the fully annealed first stage.
    pub stage1_size: usize,
    pub base: SolverConfig,
    /// Outer-iteration budget of the fixed-λ second stage.
    pub stage2_max_iters: usize,
    /// Vocabulary size of the second stage.
    pub stage2_vocab: usize,
    /// Random restarts of stage one (best final transport cost wins). One is
    /// plenty at realistic vocabulary sizes; toy problems may need more.
    pub restarts: usize,
}

impl TwoStageConfig {
    pub fn new(base: SolverConfig) -> Self {
        TwoStageConfig {
            stage1_size: 5000,
            base,
            stage2_max_iters: 150,
            stage2_vocab: 20_000,
            restarts: 1,
        }
    }
}

/// Two-stage alignment of `tgt` onto `src`: the returned map sends target
/// space to source space and applies to out-of-sample vectors. Inputs should
/// be unit-normalized; the solver consumes the tables in file order with
/// uniform weights.
pub fn align_embeddings(
    src: &EmbeddingTable,
    tgt: &EmbeddingTable,
    cfg: &TwoStageConfig,
) -> Result<AlignmentResult> {
    align_embeddings_observed(src, tgt, cfg, &mut |_| {})
}

/// As [`align_embeddings`] with a trace observer spanning both stages.
pub fn align_embeddings_observed(
    src: &EmbeddingTable,
    tgt: &EmbeddingTable,
    cfg: &TwoStageConfig,
    observer: &mut dyn FnMut(&TraceRecord),
) -> Result<AlignmentResult> {
    if src.dim() != tgt.dim() {
        return Err(Error::dims(format!(
            "embedding dimensions differ: {} vs {}",
            src.dim(),
            tgt.dim()
        )));
    }
    let vocab = src.vocab_size().min(tgt.vocab_size());
    if cfg.stage1_size > cfg.stage2_vocab {
        return Err(Error::invalid(format!(
            "stage1_size {} exceeds stage2_vocab {}",
            cfg.stage1_size, cfg.stage2_vocab
        )));
    }
    if cfg.stage2_vocab > vocab {
        return Err(Error::invalid(format!(
            "stage2_vocab {} exceeds available vocabulary {vocab}",
            cfg.stage2_vocab
        )));
    }

    let x1 = PointSet::uniform(src.head(cfg.stage1_size)?.vectors().clone())?;
    let y1 = PointSet::uniform(tgt.head(cfg.stage1_size)?.vectors().clone())?;
    let stage1 = if cfg.restarts > 1 {
        // Restarts run in parallel; the winner's trace is replayed through
        // the observer afterwards so the stream stays ordered.
        let best = solve_best_of(&x1, &y1, &cfg.base, cfg.restarts)?;
        for record in &best.trace.records {
            observer(record);
        }
        best
    } else {
        solve_with_observer_fwd(&x1, &y1, &cfg.base, observer)?
    };

    if cfg.stage2_vocab == cfg.stage1_size {
        return Ok(stage1);
    }

    let x2 = PointSet::uniform(src.head(cfg.stage2_vocab)?.vectors().clone())?;
    let y2 = PointSet::uniform(tgt.head(cfg.stage2_vocab)?.vectors().clone())?;
    let mut stage2_cfg = cfg.base.clone();
    // λ stays at its floor: stage one already earned the sharp regime.
    stage2_cfg.lambda0 = cfg.base.lambda_min;
    stage2_cfg.outer_max_iters = cfg.stage2_max_iters;
    solve_from(&x2, &y2, &stage2_cfg, &stage1.map, observer)
}

fn solve_with_observer_fwd(
    x: &PointSet,
    y: &PointSet,
    cfg: &SolverConfig,
    observer: &mut dyn FnMut(&TraceRecord),
) -> Result<AlignmentResult> {
    crate::solver::solve_with_observer(x, y, cfg, observer)
}

/// CSLS retrieval: `score(x, y) = 2 cos(x, y) - r_keys(x) - r_queries(y)`,
/// where `r_keys(x)` is the mean cosine of query `x` to its `k_neigh`
/// nearest keys and `r_queries(y)` the mean cosine of key `y` to its
/// `k_neigh` nearest queries. Subtracting the local densities penalizes hub
/// keys that would otherwise crowd every ranking. Returns the `topk` key
/// indices per query, best first.
pub fn csls_neighbors(
    queries: &DMatrix<f64>,
    keys: &DMatrix<f64>,
    k_neigh: usize,
    topk: usize,
) -> Result<Vec<Vec<usize>>> {
    let (a, b) = (queries.ncols(), keys.ncols());
    if queries.nrows() != keys.nrows() {
        return Err(Error::dims(format!(
            "query dimension {} differs from key dimension {}",
            queries.nrows(),
            keys.nrows()
        )));
    }
    if k_neigh == 0 || k_neigh > b || k_neigh > a {
        return Err(Error::invalid(format!(
            "neighborhood size {k_neigh} must lie in [1, min({a}, {b}))"
        )));
    }
    if topk == 0 || topk > b {
        return Err(Error::invalid(format!("topk {topk} must lie in [1, {b}]")));
    }
    check_unit(queries, "query")?;
    check_unit(keys, "key")?;

    // Pass 1: local densities on both sides, blocked over queries.
    let block = 512usize;
    let blocks: Vec<usize> = (0..a).step_by(block).collect();
    let partials: Vec<(Vec<f64>, Vec<TopK>)> = blocks
        .par_iter()
        .map(|&start| {
            let len = block.min(a - start);
            let sims = queries.columns(start, len).tr_mul(keys); // len x b
            let mut r_q = vec![0.0f64; len];
            let mut key_tops = vec![TopK::new(k_neigh); b];
            for local in 0..len {
                let mut row_top = TopK::new(k_neigh);
                for j in 0..b {
                    let s = sims[(local, j)];
                    row_top.push(s);
                    key_tops[j].push(s);
                }
                r_q[local] = row_top.mean();
            }
            (r_q, key_tops)
        })
        .collect();

    let mut r_queries = vec![0.0f64; a];
    let mut key_tops = vec![TopK::new(k_neigh); b];
    for (bi, &start) in blocks.iter().enumerate() {
        let (r_q, tops) = &partials[bi];
        r_queries[start..start + r_q.len()].copy_from_slice(r_q);
        for j in 0..b {
            key_tops[j].merge(&tops[j]);
        }
    }
    let r_keys: Vec<f64> = key_tops.iter().map(|t| t.mean()).collect();

    // Pass 2: scores and per-query selection.
    let results: Vec<Vec<Vec<usize>>> = blocks
        .par_iter()
        .map(|&start| {
            let len = block.min(a - start);
            let sims = queries.columns(start, len).tr_mul(keys);
            let mut out = Vec::with_capacity(len);
            for local in 0..len {
                let mut scored: Vec<(f64, usize)> = (0..b)
                    .map(|j| {
                        (
                            2.0 * sims[(local, j)] - r_queries[start + local] - r_keys[j],
                            j,
                        )
                    })
                    .collect();
                let cut = topk.min(b - 1);
                scored.select_nth_unstable_by(cut, |x, y| {
                    y.0.total_cmp(&x.0).then(x.1.cmp(&y.1))
                });
                scored.truncate(topk.max(cut + 1));
                scored.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
                scored.truncate(topk);
                out.push(scored.into_iter().map(|(_, j)| j).collect());
            }
            out
        })
        .collect();

    Ok(results.into_iter().flatten().collect())
}

fn check_unit(m: &DMatrix<f64>, what: &str) -> Result<()> {
    for (j, col) in m.column_iter().enumerate() {
        if (col.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "{what} column {j} has norm {:.6}, expected 1",
                col.norm()
            )));
        }
    }
    Ok(())
}

/// Bounded running top-k of streamed values.
#[derive(Debug, Clone)]
struct TopK {
    k: usize,
    values: Vec<f64>,
}

impl TopK {
    fn new(k: usize) -> Self {
        TopK {
            k,
            values: Vec::with_capacity(k),
        }
    }

    fn push(&mut self, v: f64) {
        if self.values.len() < self.k {
            self.values.push(v);
            return;
        }
        let (mi, &mv) = self
            .values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        if v > mv {
            self.values[mi] = v;
        }
    }

    fn merge(&mut self, other: &TopK) {
        for &v in &other.values {
            self.push(v);
        }
    }

    fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len().max(1) as f64
    }
}

/// Maps the target table into source space (`map · tgt`), re-normalizes, and
/// runs CSLS retrieval of target tokens for every source token.
pub fn translation_retrieval(
    src: &EmbeddingTable,
    tgt: &EmbeddingTable,
    map: &DMatrix<f64>,
    csls_k: usize,
    topk: usize,
) -> Result<Vec<Vec<usize>>> {
    if map.nrows() != src.dim() || map.ncols() != tgt.dim() {
        return Err(Error::dims(format!(
            "map is {}x{} but embeddings have dimensions {} and {}",
            map.nrows(),
            map.ncols(),
            src.dim(),
            tgt.dim()
        )));
    }
    let mut mapped = map * tgt.vectors();
    for (j, mut col) in mapped.column_iter_mut().enumerate() {
        let norm = col.norm();
        if norm < 1e-12 {
            return Err(Error::numerical(format!(
                "mapped vector for token '{}' collapsed to zero",
                tgt.tokens[j]
            )));
        }
        col /= norm;
    }
    csls_neighbors(src.vectors(), &mapped, csls_k, topk)
}

/// Precision@k over a retrieval table.
#[derive(Debug, Clone)]
pub struct PrecisionReport {
    /// k -> fraction of evaluated source tokens whose top-k retrieved
    /// targets intersect the acceptable set.
    pub p_at: BTreeMap<usize, f64>,
    pub evaluated: usize,
    /// Dictionary source tokens absent from the query vocabulary.
    pub skipped: usize,
}

/// Scores ranked retrieval lists against a dictionary. `retrieved[i]` holds
/// ranked key indices for query token `src_tokens[i]`; dictionary entries
/// whose source token is not among the queries are skipped and counted.
pub fn evaluate_precision(
    retrieved: &[Vec<usize>],
    dict: &BilingualDictionary,
    src_tokens: &[String],
    tgt_tokens: &[String],
    ks: &[usize],
) -> Result<PrecisionReport> {
    if retrieved.len() != src_tokens.len() {
        return Err(Error::dims(format!(
            "{} retrieval lists for {} query tokens",
            retrieved.len(),
            src_tokens.len()
        )));
    }
    if ks.is_empty() {
        return Err(Error::invalid("no k values requested"));
    }
    let position: HashMap<&str, usize> = src_tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();

    let mut evaluated = 0usize;
    let mut skipped = 0usize;
    let mut hits: BTreeMap<usize, usize> = ks.iter().map(|&k| (k, 0)).collect();

    let mut sources: Vec<&String> = dict.source_tokens().collect();
    sources.sort();
    for source in sources {
        let Some(&qi) = position.get(source.as_str()) else {
            skipped += 1;
            continue;
        };
        evaluated += 1;
        let acceptable = dict.acceptable(source).expect("source came from the index");
        let ranked = &retrieved[qi];
        for (&k, hit_count) in hits.iter_mut() {
            let found = ranked
                .iter()
                .take(k)
                .any(|&j| j < tgt_tokens.len() && acceptable.contains(&tgt_tokens[j]));
            if found {
                *hit_count += 1;
            }
        }
    }
    let denom = evaluated.max(1) as f64;
    Ok(PrecisionReport {
        p_at: hits
            .into_iter()
            .map(|(k, h)| (k, h as f64 / denom))
            .collect(),
        evaluated,
        skipped,
    })
}

/// Writes a map matrix as a small self-describing dump: a text header
/// recording the dimension, layout and byte order, then raw little-endian
/// f64 data.
pub fn save_map(path: &Path, map: &DMatrix<f64>) -> Result<()> {
    if map.nrows() != map.ncols() {
        return Err(Error::invalid("map dump expects a square matrix"));
    }
    let mut bytes = Vec::with_capacity(64 + map.len() * 8);
    write!(
        &mut bytes,
        "{MAP_MAGIC}\ndim {}\nlayout column-major\nbyte-order little-endian\ndata\n",
        map.nrows()
    )?;
    for v in map.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    crate::util::write_atomic(path, &bytes)
}

/// Reads a dump produced by [`save_map`].
pub fn load_map(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = std::fs::read(path)?;
    let header_end = find_data_offset(&bytes).ok_or_else(|| Error::Parse {
        line: 1,
        message: "missing 'data' marker in map dump".into(),
    })?;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| Error::Parse {
        line: 1,
        message: "map dump header is not UTF-8".into(),
    })?;
    let mut lines = header.lines();
    if lines.next() != Some(MAP_MAGIC) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected '{MAP_MAGIC}' magic line"),
        });
    }
    let mut dim = None;
    for (i, line) in lines.enumerate() {
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next()) {
            (Some("dim"), Some(v)) => {
                dim = Some(v.parse::<usize>().map_err(|_| Error::Parse {
                    line: i + 2,
                    message: format!("bad dimension '{v}'"),
                })?)
            }
            (Some("layout"), Some("column-major")) => {}
            (Some("byte-order"), Some("little-endian")) => {}
            (Some("data"), None) => break,
            _ => {
                return Err(Error::Parse {
                    line: i + 2,
                    message: format!("unrecognized header line '{line}'"),
                })
            }
        }
    }
    let d = dim.ok_or_else(|| Error::Parse {
        line: 2,
        message: "map dump missing 'dim'".into(),
    })?;
    let payload = &bytes[header_end..];
    if payload.len() != d * d * 8 {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "payload holds {} bytes, expected {} for a {d}x{d} matrix",
                payload.len(),
                d * d * 8
            ),
        });
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DMatrix::from_fn(d, d, |r, c| values[c * d + r]))
}

fn find_data_offset(bytes: &[u8]) -> Option<usize> {
    let marker = b"data\n";
    bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .map(|p| p + marker.len())
}

/// Convenience: in-degree histogram of a retrieval table (how many queries
/// picked each key first). Used to compare hubness across retrieval scores.
pub fn first_choice_in_degrees(retrieved: &[Vec<usize>], keys: usize) -> DVector<usize> {
    let mut degrees = DVector::from_element(keys, 0usize);
    for ranked in retrieved {
        if let Some(&first) = ranked.first() {
            degrees[first] += 1;
        }
    }
    degrees
}
