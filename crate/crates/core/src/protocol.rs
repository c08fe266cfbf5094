//! Tag grammar of the rollout protocol and the rollout parser.
//!
//! A rollout is free text in which the model interleaves reasoning with four
//! kinds of tagged boxes:
//!
//! ```text
//! <search>query</search>
//! <observation>retrieved documents</observation>      (injected by the engine)
//! <original_evidence>distilled facts</original_evidence>
//! <answer>final answer</answer>
//! ```
//!
//! Parsing is total: malformed or unclosed tags never fail, they degrade to
//! reasoning text and are penalized through [`FormatFlags`] instead.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default rollout system prompt. The question is appended after it.
pub const SYSTEM_TEMPLATE: &str = "You are a helpful assistant that can solve the given question step by step. \
For each step, start by explaining your thought process. \
If additional information is needed, provide a specific query enclosed in <search> and </search>. \
The system will return the top search results within <observation> and </observation>. \
You can perform multiple searches as needed. \
When you know the final answer, use <original_evidence> and </original_evidence> to provide all potentially relevant original information from the observations. \
Ensure the information is complete and preserves the original wording without modification. \
If no searches were conducted or observations were made, omit the evidence section. \
Finally, provide the final answer within <answer> and </answer> tags.";

/// System prompt for the evidence-free ablation: identical to
/// [`SYSTEM_TEMPLATE`] with the evidence instructions removed.
pub const NO_EVIDENCE_SYSTEM_TEMPLATE: &str =
    "You are a helpful assistant that can solve the given question step by step. \
For each step, start by explaining your thought process. \
If additional information is needed, provide a specific query enclosed in <search> and </search>. \
The system will return the top search results within <observation> and </observation>. \
You can perform multiple searches as needed. \
When you know the final answer, provide the final answer within <answer> and </answer> tags.";

/// The four tagged box kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TagKind {
    Search,
    Observation,
    Evidence,
    Answer,
}

impl TagKind {
    pub const ALL: [TagKind; 4] = [
        TagKind::Search,
        TagKind::Observation,
        TagKind::Evidence,
        TagKind::Answer,
    ];

    pub const fn open(self) -> &'static str {
        match self {
            TagKind::Search => "<search>",
            TagKind::Observation => "<observation>",
            TagKind::Evidence => "<original_evidence>",
            TagKind::Answer => "<answer>",
        }
    }

    pub const fn close(self) -> &'static str {
        match self {
            TagKind::Search => "</search>",
            TagKind::Observation => "</observation>",
            TagKind::Evidence => "</original_evidence>",
            TagKind::Answer => "</answer>",
        }
    }

    fn segment_kind(self) -> SegmentKind {
        match self {
            TagKind::Search => SegmentKind::SearchQuery,
            TagKind::Observation => SegmentKind::Observation,
            TagKind::Evidence => SegmentKind::Evidence,
            TagKind::Answer => SegmentKind::Answer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Reasoning,
    SearchQuery,
    Observation,
    Evidence,
    Answer,
}

impl SegmentKind {
    pub fn tag(self) -> Option<TagKind> {
        match self {
            SegmentKind::Reasoning => None,
            SegmentKind::SearchQuery => Some(TagKind::Search),
            SegmentKind::Observation => Some(TagKind::Observation),
            SegmentKind::Evidence => Some(TagKind::Evidence),
            SegmentKind::Answer => Some(TagKind::Answer),
        }
    }
}

/// Who produced a segment's bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Model,
    Environment,
}

/// Half-open byte range over a rollout's raw text. Serialized as `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct ByteRange {
    pub start: usize,
    pub end: usize,
}

impl ByteRange {
    pub const fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub const fn len(&self) -> usize {
        self.end - self.start
    }

    pub const fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn contains_range(&self, other: &ByteRange) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

impl From<(usize, usize)> for ByteRange {
    fn from((start, end): (usize, usize)) -> Self {
        Self { start, end }
    }
}

impl From<ByteRange> for (usize, usize) {
    fn from(r: ByteRange) -> Self {
        (r.start, r.end)
    }
}

impl From<Range<usize>> for ByteRange {
    fn from(r: Range<usize>) -> Self {
        Self::new(r.start, r.end)
    }
}

impl fmt::Display for ByteRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

/// One parsed piece of a rollout.
///
/// For tagged kinds `byte_range` covers the delimiters and `text` is the
/// content between them. For reasoning both cover the same bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub kind: SegmentKind,
    pub text: String,
    pub byte_range: ByteRange,
    pub origin: Origin,
}

/// A parsed rollout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub question: String,
    pub raw: String,
    pub segments: Vec<Segment>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("injected span {span} is out of bounds for rollout of {len} bytes")]
    SpanOutOfBounds { span: ByteRange, len: usize },
    #[error("injected span {span} overlaps or precedes the previous span")]
    SpanOrder { span: ByteRange },
    #[error("injected span {span} is not an observation block")]
    NotAnObservation { span: ByteRange },
}

/// Indicator flags feeding the format reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FormatFlags {
    pub retrieval_triggered: bool,
    pub answer_well_formed: bool,
    pub evidence_well_formed: bool,
}

#[derive(Debug, Clone, Copy)]
struct Piece {
    kind: SegmentKind,
    range: ByteRange,
    origin: Origin,
}

/// Finds balanced boxes in `raw[region]`. The box content runs up to the
/// first matching closing tag, so same-kind inner tags are literal text.
/// An opening tag with no closing tag is skipped and scanning resumes after it.
fn scan_boxes(raw: &str, region: Range<usize>) -> Vec<(TagKind, ByteRange)> {
    let bytes = raw.as_bytes();
    let mut boxes = Vec::new();
    let mut at = region.start;
    while at < region.end {
        let Some(off) = bytes[at..region.end].iter().position(|&b| b == b'<') else {
            break;
        };
        let lt = at + off;
        let window = &raw[lt..region.end];
        let Some(kind) = TagKind::ALL
            .into_iter()
            .find(|k| window.starts_with(k.open()))
        else {
            at = lt + 1;
            continue;
        };
        let content_start = lt + kind.open().len();
        match raw[content_start..region.end].find(kind.close()) {
            Some(c) => {
                let end = content_start + c + kind.close().len();
                boxes.push((kind, ByteRange::new(lt, end)));
                at = end;
            }
            None => at = content_start,
        }
    }
    boxes
}

fn pieces_for_region(raw: &str, region: Range<usize>, out: &mut Vec<Piece>) {
    let mut cursor = region.start;
    for (tag, range) in scan_boxes(raw, region.clone()) {
        if range.start > cursor {
            out.push(Piece {
                kind: SegmentKind::Reasoning,
                range: ByteRange::new(cursor, range.start),
                origin: Origin::Model,
            });
        }
        out.push(Piece {
            kind: tag.segment_kind(),
            range,
            origin: Origin::Model,
        });
        cursor = range.end;
    }
    if region.end > cursor {
        out.push(Piece {
            kind: SegmentKind::Reasoning,
            range: ByteRange::new(cursor, region.end),
            origin: Origin::Model,
        });
    }
}

/// Enforces the protocol order and merges adjacent reasoning.
///
/// `trust_observations` selects how model-region observation boxes are
/// handled: when the caller supplied authoritative injection spans, every
/// observation box found in model text is forged and becomes reasoning.
/// Otherwise observation boxes count once a search has been issued.
fn finish(
    raw: &str,
    question: &str,
    mut pieces: Vec<Piece>,
    trust_observations: bool,
) -> Trajectory {
    let mut seen_search = false;
    for p in pieces.iter_mut() {
        match p.kind {
            SegmentKind::SearchQuery => seen_search = true,
            SegmentKind::Observation if p.origin == Origin::Model => {
                if !trust_observations || !seen_search {
                    p.kind = SegmentKind::Reasoning;
                } else {
                    p.origin = Origin::Environment;
                }
            }
            _ => {}
        }
    }

    // Evidence and answer boxes must follow every observation.
    if let Some(last_obs) = pieces
        .iter()
        .rposition(|p| p.kind == SegmentKind::Observation)
    {
        for p in pieces[..last_obs].iter_mut() {
            if matches!(p.kind, SegmentKind::Evidence | SegmentKind::Answer) {
                p.kind = SegmentKind::Reasoning;
            }
        }
    }

    let mut merged: Vec<Piece> = Vec::with_capacity(pieces.len());
    for p in pieces {
        match merged.last_mut() {
            Some(prev)
                if prev.kind == SegmentKind::Reasoning && p.kind == SegmentKind::Reasoning =>
            {
                prev.range.end = p.range.end;
            }
            _ => merged.push(p),
        }
    }

    let segments = merged
        .into_iter()
        .map(|p| {
            let text = match p.kind.tag() {
                Some(tag) => {
                    &raw[p.range.start + tag.open().len()..p.range.end - tag.close().len()]
                }
                None => &raw[p.range.range()],
            };
            Segment {
                kind: p.kind,
                text: text.to_owned(),
                byte_range: p.range,
                origin: p.origin,
            }
        })
        .collect();

    Trajectory {
        question: question.to_owned(),
        raw: raw.to_owned(),
        segments,
    }
}

/// Parses rollout text without knowledge of which bytes the engine injected.
///
/// Observation boxes are trusted as environment output once a search has
/// been issued. Use [`parse_with_injections`] when injection spans are known.
pub fn parse_rollout(raw: &str, question: &str) -> Trajectory {
    let mut pieces = Vec::new();
    pieces_for_region(raw, 0..raw.len(), &mut pieces);
    finish(raw, question, pieces, true)
}

/// Parses rollout text given the authoritative spans of engine-injected
/// observation blocks. Only those spans become environment segments; any
/// observation box the model wrote itself is classified as reasoning.
pub fn parse_with_injections(
    raw: &str,
    question: &str,
    injected: &[ByteRange],
) -> Result<Trajectory, ProtocolError> {
    let mut pieces = Vec::new();
    let mut cursor = 0;
    for &span in injected {
        if span.end > raw.len() || span.start > span.end {
            return Err(ProtocolError::SpanOutOfBounds {
                span,
                len: raw.len(),
            });
        }
        if span.start < cursor {
            return Err(ProtocolError::SpanOrder { span });
        }
        let block = raw
            .get(span.range())
            .ok_or(ProtocolError::NotAnObservation { span })?;
        let obs = TagKind::Observation;
        if block.len() < obs.open().len() + obs.close().len()
            || !block.starts_with(obs.open())
            || !block.ends_with(obs.close())
        {
            return Err(ProtocolError::NotAnObservation { span });
        }
        pieces_for_region(raw, cursor..span.start, &mut pieces);
        pieces.push(Piece {
            kind: SegmentKind::Observation,
            range: span,
            origin: Origin::Environment,
        });
        cursor = span.end;
    }
    pieces_for_region(raw, cursor..raw.len(), &mut pieces);
    Ok(finish(raw, question, pieces, false))
}

/// Finds the first complete `<search>…</search>` box in freshly generated
/// text. Returns the query and the offset just past the closing tag.
pub fn detect_completed_search(generated_suffix: &str) -> Option<(String, usize)> {
    scan_boxes(generated_suffix, 0..generated_suffix.len())
        .into_iter()
        .find(|(kind, _)| *kind == TagKind::Search)
        .map(|(kind, range)| {
            let content =
                &generated_suffix[range.start + kind.open().len()..range.end - kind.close().len()];
            (content.to_owned(), range.end)
        })
}

/// Byte range of the first complete answer box in `text`, if any.
pub(crate) fn first_answer_box(text: &str) -> Option<ByteRange> {
    scan_boxes(text, 0..text.len())
        .into_iter()
        .find(|(kind, _)| *kind == TagKind::Answer)
        .map(|(_, range)| range)
}

fn box_well_formed(t: &Trajectory, kind: SegmentKind) -> bool {
    let tag = kind.tag().expect("tagged kind");
    let count = t.segments.iter().filter(|s| s.kind == kind).count();
    // A stray delimiter in model reasoning means the box was opened or
    // closed more than once.
    let stray = t
        .segments
        .iter()
        .filter(|s| s.kind == SegmentKind::Reasoning)
        .any(|s| s.text.contains(tag.open()) || s.text.contains(tag.close()));
    count == 1 && !stray
}

pub fn format_flags(t: &Trajectory) -> FormatFlags {
    FormatFlags {
        retrieval_triggered: t
            .segments
            .iter()
            .any(|s| s.kind == SegmentKind::Observation),
        answer_well_formed: box_well_formed(t, SegmentKind::Answer),
        evidence_well_formed: box_well_formed(t, SegmentKind::Evidence),
    }
}

fn unique_box(t: &Trajectory, kind: SegmentKind) -> Option<String> {
    if !box_well_formed(t, kind) {
        return None;
    }
    t.segments
        .iter()
        .find(|s| s.kind == kind)
        .map(|s| s.text.clone())
}

pub fn extract_answer(t: &Trajectory) -> Option<String> {
    unique_box(t, SegmentKind::Answer)
}

pub fn extract_evidence(t: &Trajectory) -> Option<String> {
    unique_box(t, SegmentKind::Evidence)
}

pub fn extract_queries(t: &Trajectory) -> Vec<String> {
    t.segments
        .iter()
        .filter(|s| s.kind == SegmentKind::SearchQuery)
        .map(|s| s.text.clone())
        .collect()
}

impl Trajectory {
    pub fn empty(question: &str) -> Self {
        parse_rollout("", question)
    }

    pub fn format_flags(&self) -> FormatFlags {
        format_flags(self)
    }

    pub fn answer(&self) -> Option<String> {
        extract_answer(self)
    }

    pub fn evidence(&self) -> Option<String> {
        extract_evidence(self)
    }

    pub fn queries(&self) -> Vec<String> {
        extract_queries(self)
    }

    /// Byte ranges of environment-origin segments, in order.
    pub fn injected_spans(&self) -> Vec<ByteRange> {
        self.segments
            .iter()
            .filter(|s| s.origin == Origin::Environment)
            .map(|s| s.byte_range)
            .collect()
    }

    /// Concatenates the bytes addressed by every segment.
    pub fn reassemble(&self) -> String {
        self.segments
            .iter()
            .map(|s| &self.raw[s.byte_range.range()])
            .collect()
    }
}
