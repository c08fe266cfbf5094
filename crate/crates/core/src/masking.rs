//! Loss masks over rollout bytes.
//!
//! Environment-injected observation blocks (delimiters included) are
//! excluded from the optimization signal. Everything the model wrote,
//! including the evidence box, stays in.

use serde::{Deserialize, Serialize};

use crate::protocol::{ByteRange, Origin, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskFlag {
    Optimize,
    Exclude,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpan {
    pub byte_range: ByteRange,
    pub flag: MaskFlag,
}

/// Contiguous, merged spans covering `[0, raw.len())` exactly.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LossMask {
    pub spans: Vec<MaskSpan>,
}

pub fn compute_loss_mask(t: &Trajectory) -> LossMask {
    let mut spans: Vec<MaskSpan> = Vec::new();
    for seg in &t.segments {
        if seg.byte_range.is_empty() {
            continue;
        }
        let flag = match seg.origin {
            Origin::Environment => MaskFlag::Exclude,
            Origin::Model => MaskFlag::Optimize,
        };
        match spans.last_mut() {
            Some(last) if last.flag == flag && last.byte_range.end == seg.byte_range.start => {
                last.byte_range.end = seg.byte_range.end;
            }
            _ => spans.push(MaskSpan {
                byte_range: seg.byte_range,
                flag,
            }),
        }
    }
    LossMask { spans }
}

impl LossMask {
    /// True iff the spans tile `[0, len)` with no gaps, overlaps or empty spans.
    pub fn covers(&self, len: usize) -> bool {
        let mut cursor = 0;
        for s in &self.spans {
            if s.byte_range.start != cursor || s.byte_range.is_empty() {
                return false;
            }
            cursor = s.byte_range.end;
        }
        cursor == len
    }

    pub fn ranges(&self, flag: MaskFlag) -> impl Iterator<Item = ByteRange> + '_ {
        self.spans
            .iter()
            .filter(move |s| s.flag == flag)
            .map(|s| s.byte_range)
    }

    pub fn flag_at(&self, offset: usize) -> Option<MaskFlag> {
        self.spans
            .iter()
            .find(|s| s.byte_range.start <= offset && offset < s.byte_range.end)
            .map(|s| s.flag)
    }

    pub fn count(&self, flag: MaskFlag) -> usize {
        self.ranges(flag).map(|r| r.len()).sum()
    }

    /// Per-byte flags, handy for mapping onto a tokenizer's offsets.
    pub fn to_byte_flags(&self) -> Vec<MaskFlag> {
        let mut out = Vec::new();
        for s in &self.spans {
            out.extend(std::iter::repeat_n(s.flag, s.byte_range.len()));
        }
        out
    }
}
