//! Tag-based candidate retrieval and prototype-driven clip selection.
//!
//! External videos carry user tags; each video is indexed by the mean
//! embedding of its in-vocabulary tags. A class is queried by the mean
//! embedding of its name tokens, the top-N videos by cosine similarity
//! become candidates, and the M candidate clips closest to the class
//! prototype (mean of the few-shot clip features) form the pseudo-labeled
//! set for that class. Rankings match an exhaustive scan exactly: ties
//! break by ascending id, so input row order never matters.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, BTreeMap, HashMap, HashSet};
use std::path::Path;

use crate::datastore::formats::{parse_err, parse_finite, read_text, write_text};
use crate::datastore::{ClassId, FeatureTable, TagCorpus, WordEmbeddingTable};
use crate::numkernel::{dot, RngStream};
use crate::{Error, Result};

fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Collapses -0.0 to 0.0 so tie ordering never depends on the sign of zero.
fn canonical(c: f64) -> f64 {
    if c == 0.0 {
        0.0
    } else {
        c
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TagIndexEntry {
    pub video_id: String,
    pub embedding: Vec<f64>,
    pub norm: f64,
}

/// Per-video mean tag embeddings, sorted by video id.
#[derive(Clone, Debug, PartialEq)]
pub struct TagIndex {
    pub dim: usize,
    pub entries: Vec<TagIndexEntry>,
    /// Videos dropped because none of their tags were in vocabulary.
    pub dropped_no_vocab: usize,
    /// Videos dropped because their mean tag embedding had zero norm.
    pub dropped_zero_norm: usize,
}

/// Averages the in-vocabulary tag embeddings per video. Videos with no
/// usable tags are dropped and counted rather than zero-filled, which would
/// bias cosine rankings toward the origin.
pub fn build_tag_index(corpus: &TagCorpus, embeddings: &WordEmbeddingTable) -> Result<TagIndex> {
    let mut entries = Vec::new();
    let mut dropped_no_vocab = 0usize;
    let mut dropped_zero_norm = 0usize;
    for row in &corpus.rows {
        let mut mean = vec![0.0; embeddings.dim];
        let mut hits = 0usize;
        for tag in &row.tags {
            if let Some(e) = embeddings.map.get(tag) {
                for (m, v) in mean.iter_mut().zip(e) {
                    *m += v;
                }
                hits += 1;
            }
        }
        if hits == 0 {
            dropped_no_vocab += 1;
            continue;
        }
        for m in &mut mean {
            *m /= hits as f64;
        }
        let norm = l2_norm(&mean);
        if norm == 0.0 {
            dropped_zero_norm += 1;
            continue;
        }
        entries.push(TagIndexEntry {
            video_id: row.video_id.clone(),
            embedding: mean,
            norm,
        });
    }
    if entries.is_empty() {
        return Err(Error::Validation(
            "tag index is empty: no video has an in-vocabulary tag".into(),
        ));
    }
    entries.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    Ok(TagIndex {
        dim: embeddings.dim,
        entries,
        dropped_no_vocab,
        dropped_zero_norm,
    })
}

/// Mean embedding of the class name's whitespace-split tokens.
pub fn class_query(class_name: &str, embeddings: &WordEmbeddingTable) -> Result<Vec<f64>> {
    let mut mean = vec![0.0; embeddings.dim];
    let mut hits = 0usize;
    for token in class_name.split_whitespace() {
        if let Some(e) = embeddings.map.get(token) {
            for (m, v) in mean.iter_mut().zip(e) {
                *m += v;
            }
            hits += 1;
        }
    }
    if hits == 0 {
        return Err(Error::Validation(format!(
            "class name {class_name:?} has no in-vocabulary token"
        )));
    }
    for m in &mut mean {
        *m /= hits as f64;
    }
    Ok(mean)
}

/// Ranking key: higher cosine wins, then the lexicographically smaller id.
struct Ranked<'a> {
    cosine: f64,
    id: &'a str,
    pos: usize,
}

impl PartialEq for Ranked<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Ranked<'_> {}
impl PartialOrd for Ranked<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ranked<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cosine
            .total_cmp(&other.cosine)
            .then_with(|| other.id.cmp(self.id))
    }
}

/// Keeps the best `n` of a scored stream using a min-heap of size n, then
/// returns them best-first. Output order equals a full sort's.
fn top_n<'a>(scored: impl Iterator<Item = Ranked<'a>>, n: usize) -> Vec<Ranked<'a>> {
    let mut heap: BinaryHeap<std::cmp::Reverse<Ranked>> = BinaryHeap::with_capacity(n + 1);
    for r in scored {
        heap.push(std::cmp::Reverse(r));
        if heap.len() > n {
            heap.pop();
        }
    }
    let mut best: Vec<Ranked> = heap.into_iter().map(|r| r.0).collect();
    best.sort_by(|a, b| b.cmp(a));
    best
}

/// Top-N index videos by cosine similarity to the query, descending, ties by
/// ascending video id. N larger than the index returns every video.
pub fn retrieve_candidates(
    query: &[f64],
    index: &TagIndex,
    n: usize,
) -> Result<Vec<(String, f64)>> {
    if n == 0 {
        return Err(Error::Validation("retrieval needs N >= 1".into()));
    }
    if query.len() != index.dim {
        return Err(Error::Shape(format!(
            "query has dim {}, tag index has dim {}",
            query.len(),
            index.dim
        )));
    }
    let qnorm = l2_norm(query);
    if qnorm == 0.0 {
        return Err(Error::Validation("retrieval query has zero norm".into()));
    }
    let scored = index.entries.iter().enumerate().map(|(pos, e)| Ranked {
        cosine: canonical(dot(query, &e.embedding) / (qnorm * e.norm)),
        id: &e.video_id,
        pos,
    });
    Ok(top_n(scored, n)
        .into_iter()
        .map(|r| (index.entries[r.pos].video_id.clone(), r.cosine))
        .collect())
}

/// Mean over all sampled clips of all few-shot videos of one class.
pub fn class_prototype(clips: &[&[f64]]) -> Result<Vec<f64>> {
    let first = clips
        .first()
        .ok_or_else(|| Error::Validation("class prototype needs at least one clip".into()))?;
    let mut mean = vec![0.0; first.len()];
    for clip in clips {
        assert_eq!(clip.len(), mean.len(), "class_prototype: ragged clip dims");
        for (m, v) in mean.iter_mut().zip(*clip) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= clips.len() as f64;
    }
    Ok(mean)
}

/// Reference to one stored clip.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClipRef {
    pub video_id: String,
    pub clip_index: u32,
}

/// One selected clip with its cosine to the class prototype.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredClip {
    pub clip: ClipRef,
    pub cosine: f64,
}

/// The M candidate clips nearest the prototype by cosine, descending, ties
/// by ascending (video_id, clip_index). Zero-norm clips cannot be ranked and
/// are skipped; the second return value counts them.
pub fn select_best_clips(
    prototype: &[f64],
    candidates: &[(ClipRef, &[f64])],
    m: usize,
) -> Result<(Vec<ScoredClip>, usize)> {
    if m == 0 {
        return Err(Error::Validation("clip selection needs M >= 1".into()));
    }
    let pnorm = l2_norm(prototype);
    if pnorm == 0.0 {
        return Err(Error::Validation("class prototype has zero norm".into()));
    }
    let mut skipped = 0usize;
    let mut keyed: Vec<(String, usize)> = Vec::with_capacity(candidates.len());
    for (pos, (clip, values)) in candidates.iter().enumerate() {
        if values.len() != prototype.len() {
            return Err(Error::Shape(format!(
                "candidate clip {}:{} has dim {}, prototype has {}",
                clip.video_id,
                clip.clip_index,
                values.len(),
                prototype.len()
            )));
        }
        let norm = l2_norm(values);
        if norm == 0.0 {
            skipped += 1;
            continue;
        }
        // Composite id makes the heap's id tiebreak equal (video_id,
        // clip_index) ascending: the index is zero-padded to fixed width.
        keyed.push((format!("{}\t{:010}", clip.video_id, clip.clip_index), pos));
    }
    let scored = keyed.iter().map(|(key, pos)| {
        let (clip, values) = &candidates[*pos];
        let _ = clip;
        Ranked {
            cosine: canonical(dot(prototype, values) / (pnorm * l2_norm(values))),
            id: key.as_str(),
            pos: *pos,
        }
    });
    let best = top_n(scored, m)
        .into_iter()
        .map(|r| ScoredClip {
            clip: candidates[r.pos].0.clone(),
            cosine: r.cosine,
        })
        .collect();
    Ok((best, skipped))
}

/// Immutable clip lookup over a feature table: rows grouped per video with
/// clips in ascending clip_index order.
pub struct ClipStore<'a> {
    table: &'a FeatureTable,
    by_video: BTreeMap<&'a str, Vec<usize>>,
}

impl<'a> ClipStore<'a> {
    pub fn new(table: &'a FeatureTable) -> Self {
        ClipStore {
            table,
            by_video: table.clips_by_video(),
        }
    }

    pub fn dim(&self) -> usize {
        self.table.dim
    }

    /// Feature-table row indices of one video's clips, or None if unknown.
    pub fn clips_of(&self, video_id: &str) -> Option<&[usize]> {
        self.by_video.get(video_id).map(|v| v.as_slice())
    }

    pub fn feature(&self, row: usize) -> &'a [f64] {
        &self.table.rows[row].values
    }

    pub fn clip_ref(&self, row: usize) -> ClipRef {
        let r = &self.table.rows[row];
        ClipRef {
            video_id: r.video_id.clone(),
            clip_index: r.clip_index,
        }
    }
}

/// Retrieval and selection sizes. Defaults: 20 candidate videos, 5 best
/// clips, 15 sampled clips per candidate.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PseudoParams {
    pub candidates: usize,
    pub best: usize,
    pub clips_per_candidate: usize,
    /// When false, every sampled candidate clip is kept (still ranked by
    /// prototype cosine) instead of only the `best` nearest ones.
    pub select_best: bool,
}

impl Default for PseudoParams {
    fn default() -> Self {
        PseudoParams {
            candidates: 20,
            best: 5,
            clips_per_candidate: 15,
            select_best: true,
        }
    }
}

/// Per-class retrieval inputs: the tag-space query vector and the
/// feature-space prototype.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoRequest {
    pub class_id: ClassId,
    pub query: Vec<f64>,
    pub prototype: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoClassEntry {
    pub class_id: ClassId,
    pub clips: Vec<ScoredClip>,
    /// True when fewer than the requested M clips survived.
    pub shortfall: bool,
}

/// Pseudo-labeled clips per novel class. A clip reference appears under at
/// most one class.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoSet {
    pub classes: Vec<PseudoClassEntry>,
    pub zero_norm_clips_skipped: usize,
}

impl PseudoSet {
    /// Entries for one class, if present.
    pub fn class(&self, class_id: ClassId) -> Option<&PseudoClassEntry> {
        self.classes.iter().find(|e| e.class_id == class_id)
    }
}

/// Full pipeline per class: retrieve top-N candidate videos, sample
/// clips_per_candidate stored clips from each (without replacement when a
/// video stores at least that many, with replacement otherwise), then keep
/// the M clips nearest the class prototype. Classes are processed in
/// ascending class_id and a clip assigned to an earlier class is skipped for
/// later ones, so pseudo-labels never contradict. A class whose candidate
/// pool comes up empty yields an empty, flagged entry and the run continues.
pub fn assemble_pseudo_set(
    requests: &[PseudoRequest],
    index: &TagIndex,
    store: &ClipStore<'_>,
    params: &PseudoParams,
    rng: &mut RngStream,
) -> Result<PseudoSet> {
    if params.clips_per_candidate == 0 {
        return Err(Error::Validation("clips_per_candidate must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..requests.len()).collect();
    order.sort_by_key(|&i| requests[i].class_id);
    for pair in order.windows(2) {
        if requests[pair[0]].class_id == requests[pair[1]].class_id {
            return Err(Error::Validation(format!(
                "duplicate pseudo-set request for class {}",
                requests[pair[0]].class_id
            )));
        }
    }

    let mut taken: HashSet<usize> = HashSet::new();
    let mut classes = Vec::with_capacity(requests.len());
    let mut zero_norm_clips_skipped = 0usize;
    for &i in &order {
        let req = &requests[i];
        let ranked = retrieve_candidates(&req.query, index, params.candidates)?;
        let mut pool: Vec<usize> = Vec::new();
        let mut seen: HashSet<usize> = HashSet::new();
        for (video_id, _) in &ranked {
            let rows = store.clips_of(video_id).ok_or_else(|| {
                Error::Validation(format!(
                    "retrieved video {video_id} has no stored clip features"
                ))
            })?;
            let picks = if rows.len() >= params.clips_per_candidate {
                rng.sample_indices(rows.len(), params.clips_per_candidate)
            } else {
                rng.sample_with_replacement(rows.len(), params.clips_per_candidate)
            };
            for p in picks {
                let row = rows[p];
                if !taken.contains(&row) && seen.insert(row) {
                    pool.push(row);
                }
            }
        }
        let refs: Vec<(ClipRef, &[f64])> = pool
            .iter()
            .map(|&row| (store.clip_ref(row), store.feature(row)))
            .collect();
        let keep = if params.select_best {
            params.best
        } else {
            refs.len().max(1)
        };
        let (selected, skipped) = select_best_clips(&req.prototype, &refs, keep)?;
        zero_norm_clips_skipped += skipped;
        let mut row_of: HashMap<ClipRef, usize> = HashMap::with_capacity(pool.len());
        for &row in &pool {
            row_of.insert(store.clip_ref(row), row);
        }
        for s in &selected {
            taken.insert(row_of[&s.clip]);
        }
        let shortfall = selected.len() < params.best;
        classes.push(PseudoClassEntry {
            class_id: req.class_id,
            clips: selected,
            shortfall,
        });
    }
    Ok(PseudoSet {
        classes,
        zero_norm_clips_skipped,
    })
}

/// TSV export: `class_id<TAB>video_id<TAB>clip_index<TAB>cosine` per clip,
/// classes ascending, clips in rank order.
pub fn write_pseudo_set(set: &PseudoSet, path: &Path) -> Result<()> {
    let mut out = String::new();
    for entry in &set.classes {
        for s in &entry.clips {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                entry.class_id, s.clip.video_id, s.clip.clip_index, s.cosine
            ));
        }
    }
    write_text(path, &out)
}

pub fn read_pseudo_set(path: &Path) -> Result<PseudoSet> {
    let text = read_text(path)?;
    let mut classes: Vec<PseudoClassEntry> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected 4 columns, found {}", fields.len()),
            ));
        }
        let class_id: ClassId = fields[0]
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("invalid class id {:?}", fields[0])))?;
        let clip_index: u32 = fields[2]
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("invalid clip index {:?}", fields[2])))?;
        let cosine = parse_finite(path, lineno, fields[3])?;
        let scored = ScoredClip {
            clip: ClipRef {
                video_id: fields[1].to_string(),
                clip_index,
            },
            cosine,
        };
        match classes.last_mut() {
            Some(entry) if entry.class_id == class_id => entry.clips.push(scored),
            _ => classes.push(PseudoClassEntry {
                class_id,
                clips: vec![scored],
                shortfall: false,
            }),
        }
    }
    Ok(PseudoSet {
        classes,
        zero_norm_clips_skipped: 0,
    })
}
