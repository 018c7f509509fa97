//! Token vocabulary, sequences, and the segment <-> token codec.
//!
//! Each segment becomes two triplets `(move, qx, qy) (line, qx, qy)` and the
//! sequence ends with one `stop`. Token ids: `stop = 0`, `move = 1`,
//! `line = 2`, coordinate bin `q_i = 2 + i`.

use serde::{Deserialize, Serialize};

use super::Quantizer;
use crate::geometry::{Point, Segment};
use crate::{Error, Result};

pub type Token = u32;

pub const STOP: Token = 0;
pub const MOVE: Token = 1;
pub const LINE: Token = 2;

/// Tokens per segment.
pub const TOKENS_PER_SEGMENT: usize = 6;

/// Token vocabulary `{stop, move, line, q_1..q_NQ}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub n_q: usize,
}

impl Vocab {
    pub const fn new(n_q: usize) -> Self {
        Self { n_q }
    }

    pub const fn size(&self) -> usize {
        self.n_q + 3
    }

    pub fn coord(&self, bin: usize) -> Token {
        debug_assert!((1..=self.n_q).contains(&bin));
        (2 + bin) as Token
    }

    /// Coordinate bin of a token, if it is a coordinate token.
    pub fn bin(&self, t: Token) -> Option<usize> {
        let t = t as usize;
        (t >= 3 && t < self.size()).then(|| t - 2)
    }

    pub fn is_coord(&self, t: Token) -> bool {
        self.bin(t).is_some()
    }
}

/// Role of a flat token position within its six-token segment group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Slot {
    MoveOp,
    MoveX,
    MoveY,
    LineOp,
    LineX,
    LineY,
}

impl Slot {
    pub const ALL: [Slot; 6] = [Slot::MoveOp, Slot::MoveX, Slot::MoveY, Slot::LineOp, Slot::LineX, Slot::LineY];

    pub fn of_position(pos: usize) -> Slot {
        Self::ALL[pos % TOKENS_PER_SEGMENT]
    }

    pub fn is_opcode(self) -> bool {
        matches!(self, Slot::MoveOp | Slot::LineOp)
    }

    pub fn name(self) -> &'static str {
        match self {
            Slot::MoveOp => "c_mu",
            Slot::MoveX => "x_mu",
            Slot::MoveY => "y_mu",
            Slot::LineOp => "c_lambda",
            Slot::LineX => "x_lambda",
            Slot::LineY => "y_lambda",
        }
    }
}

/// A flat sequence of token ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence {
    pub tokens: Vec<Token>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<Token>) -> Self {
        Self { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of complete segment groups.
    pub fn segment_count(&self) -> usize {
        self.tokens.len() / TOKENS_PER_SEGMENT
    }

    pub fn ends_with_stop(&self) -> bool {
        self.tokens.last() == Some(&STOP)
    }

    /// Token expected class at a flat position, ignoring `stop`.
    fn check_token(vocab: &Vocab, pos: usize, t: Token) -> Result<()> {
        let slot = Slot::of_position(pos);
        let ok = match slot {
            Slot::MoveOp => t == MOVE || t == STOP,
            Slot::LineOp => t == LINE,
            _ => vocab.is_coord(t),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::MalformedTokens {
                index: pos,
                reason: format!("token {t} not allowed in slot {}", slot.name()),
            })
        }
    }

    /// Checks the grammar of a (possibly incomplete) prefix: opcodes in
    /// opcode slots, coordinates elsewhere, nothing after `stop`.
    pub fn validate_prefix(&self, vocab: &Vocab) -> Result<()> {
        for (i, &t) in self.tokens.iter().enumerate() {
            Self::check_token(vocab, i, t)?;
            if t == STOP && i + 1 != self.tokens.len() {
                return Err(Error::MalformedTokens { index: i + 1, reason: "token after stop".into() });
            }
        }
        Ok(())
    }

    /// Checks that the sequence is complete: `6k` grammatical tokens then `stop`.
    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        self.validate_prefix(vocab)?;
        if !self.ends_with_stop() {
            return Err(Error::MalformedTokens { index: self.tokens.len(), reason: "missing stop".into() });
        }
        Ok(())
    }

    /// Prefix holding the first `k` segments (no stop).
    pub fn segment_prefix(&self, k: usize) -> TokenSequence {
        let n = (k * TOKENS_PER_SEGMENT).min(self.segment_count() * TOKENS_PER_SEGMENT);
        TokenSequence::new(self.tokens[..n].to_vec())
    }

    /// Drops the opcode tokens `move` and `line`, keeping coordinates and `stop`.
    pub fn without_opcodes(&self) -> TokenSequence {
        TokenSequence::new(self.tokens.iter().copied().filter(|&t| t != MOVE && t != LINE).collect())
    }

    /// Flat positions (in the full sequence) of each token kept by
    /// [`Self::without_opcodes`], assuming a grammatical sequence.
    pub fn reduced_positions(&self) -> Vec<usize> {
        self.tokens
            .iter()
            .enumerate()
            .filter(|(_, &t)| t != MOVE && t != LINE)
            .map(|(i, _)| i)
            .collect()
    }

    /// Reinserts `move`/`line` into an opcode-free sequence. The parity of
    /// each coordinate pair decides which opcode precedes it.
    pub fn with_opcodes(reduced: &[Token]) -> TokenSequence {
        let mut out = Vec::with_capacity(reduced.len() * 3 / 2 + 1);
        let mut coords = 0usize;
        for &t in reduced {
            if t == STOP {
                out.push(STOP);
                break;
            }
            if coords.is_multiple_of(2) {
                out.push(if (coords / 2).is_multiple_of(2) { MOVE } else { LINE });
            }
            out.push(t);
            coords += 1;
        }
        TokenSequence::new(out)
    }
}

/// Encodes segments (already in local coordinates) into a token sequence.
///
/// Segments whose endpoints land in the same `(x, y)` bins are dropped.
pub fn encode(segs: &[Segment], q: &Quantizer) -> TokenSequence {
    let vocab = Vocab::new(q.n_q);
    let mut tokens = Vec::with_capacity(segs.len() * TOKENS_PER_SEGMENT + 1);
    for s in segs {
        let (ax, ay, bx, by) = (q.quantize(s.a.x), q.quantize(s.a.y), q.quantize(s.b.x), q.quantize(s.b.y));
        if (ax, ay) == (bx, by) {
            continue;
        }
        tokens.extend([MOVE, vocab.coord(ax), vocab.coord(ay), LINE, vocab.coord(bx), vocab.coord(by)]);
    }
    tokens.push(STOP);
    TokenSequence::new(tokens)
}

/// True if `s` survives [`encode`] (its endpoints fall in distinct bins).
pub fn survives_quantization(s: &Segment, q: &Quantizer) -> bool {
    (q.quantize(s.a.x), q.quantize(s.a.y)) != (q.quantize(s.b.x), q.quantize(s.b.y))
}

/// Decodes complete segment groups to segments at bin centers.
///
/// A trailing incomplete group is ignored.
pub fn decode(t: &TokenSequence, q: &Quantizer) -> Result<Vec<Segment>> {
    let vocab = Vocab::new(q.n_q);
    t.validate_prefix(&vocab)?;
    let coord = |tok: Token| q.dequantize(vocab.bin(tok).expect("validated coordinate"));
    let mut out = Vec::with_capacity(t.segment_count());
    for g in t.tokens.chunks_exact(TOKENS_PER_SEGMENT) {
        out.push(Segment::new(
            Point::new(coord(g[1])?, coord(g[2])?),
            Point::new(coord(g[4])?, coord(g[5])?),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q() -> Quantizer {
        Quantizer::default()
    }

    fn c(i: usize) -> Token {
        Vocab::new(256).coord(i)
    }

    fn center(i: usize) -> f64 {
        q().dequantize(i).unwrap()
    }

    #[test]
    fn encode_one_segment() {
        let s = Segment::from_coords(center(1), center(1), center(3), center(1));
        assert_eq!(encode(&[s], &q()).tokens, vec![MOVE, c(1), c(1), LINE, c(3), c(1), STOP]);
        assert_eq!(encode(&[], &q()).tokens, vec![STOP]);
    }

    #[test]
    fn encode_drops_same_bin_segments() {
        let s = Segment::from_coords(0.0, 0.0, 0.01, 0.01);
        assert_eq!(encode(&[s], &q()).tokens, vec![STOP]);
    }

    #[test]
    fn decode_examples() {
        let t = TokenSequence::new(vec![MOVE, c(1), c(4), LINE, c(1), c(1), STOP]);
        let segs = decode(&t, &q()).unwrap();
        assert_eq!(segs, vec![Segment::from_coords(center(1), center(4), center(1), center(1))]);
        assert!(decode(&TokenSequence::new(vec![STOP]), &q()).unwrap().is_empty());
        assert!(decode(&TokenSequence::new(vec![MOVE, c(1)]), &q()).unwrap().is_empty());
    }

    #[test]
    fn decode_reports_first_violation() {
        let t = TokenSequence::new(vec![MOVE, c(1), c(4), MOVE, c(1), c(1), STOP]);
        match decode(&t, &q()) {
            Err(Error::MalformedTokens { index, .. }) => assert_eq!(index, 3),
            other => panic!("{other:?}"),
        }
        let t = TokenSequence::new(vec![STOP, MOVE]);
        assert!(matches!(decode(&t, &q()), Err(Error::MalformedTokens { index: 1, .. })));
        let t = TokenSequence::new(vec![MOVE, LINE]);
        assert!(matches!(decode(&t, &q()), Err(Error::MalformedTokens { index: 1, .. })));
    }

    #[test]
    fn opcode_removal_roundtrip() {
        let t = TokenSequence::new(vec![MOVE, c(1), c(4), LINE, c(1), c(1), MOVE, c(2), c(2), LINE, c(5), c(2), STOP]);
        let r = t.without_opcodes();
        assert_eq!(r.len(), 9);
        assert_eq!(TokenSequence::with_opcodes(&r.tokens), t);
        assert_eq!(t.reduced_positions(), vec![1, 2, 4, 5, 7, 8, 10, 11, 12]);
    }

    #[test]
    fn slots() {
        assert_eq!(Slot::of_position(0), Slot::MoveOp);
        assert_eq!(Slot::of_position(9), Slot::LineOp);
        assert_eq!(Slot::of_position(11), Slot::LineY);
    }
}
