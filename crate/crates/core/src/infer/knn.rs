use super::eval::{Predictor, Scores};
use crate::dataset::{DatasetRecord, Token};
use crate::{Error, Result};

/// Padding symbol standing in for the start of a sequence.
const PAD: Token = Token::MAX;

/// Number of positions where `a` and `b` differ.
pub fn hamming(a: &[Token], b: &[Token]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count() + a.len().abs_diff(b.len())
}

/// Nearest-neighbor baseline over sliding windows of training tokens.
///
/// Every training position contributes the `window` tokens before it
/// (start-padded) and the token that follows.
#[derive(Debug, Clone)]
pub struct NearestNeighbors {
    pub window: usize,
    pub neighbors: usize,
    windows: Vec<Token>,
    successors: Vec<Token>,
}

fn window_before(tokens: &[Token], end: usize, window: usize, out: &mut Vec<Token>) {
    for k in 0..window {
        let idx = (end + k).checked_sub(window);
        out.push(idx.map_or(PAD, |i| tokens[i]));
    }
}

impl NearestNeighbors {
    pub fn new(train: &[DatasetRecord], window: usize, neighbors: usize) -> Result<Self> {
        if window == 0 || neighbors == 0 {
            return Err(Error::InvalidArgument("window and neighbor count must be positive".into()));
        }
        let mut windows = Vec::new();
        let mut successors = Vec::new();
        for r in train {
            let t = &r.tokens.tokens;
            for j in 0..t.len() {
                window_before(t, j, window, &mut windows);
                successors.push(t[j]);
            }
        }
        if successors.is_empty() {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        Ok(Self { window, neighbors, windows, successors })
    }

    pub fn len(&self) -> usize {
        self.successors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.successors.is_empty()
    }

    /// Successor tokens ranked by frequency among the nearest windows
    /// (distance ties by earliest window, count ties by smaller id).
    pub fn rank(&self, prefix: &[Token]) -> Vec<Token> {
        let mut query = Vec::with_capacity(self.window);
        window_before(prefix, prefix.len(), self.window, &mut query);
        let mut dist: Vec<(usize, usize)> = self
            .windows
            .chunks_exact(self.window)
            .enumerate()
            .map(|(i, w)| (hamming(w, &query), i))
            .collect();
        let k = self.neighbors.min(dist.len());
        if k < dist.len() {
            dist.select_nth_unstable(k - 1);
        }
        let mut counts: std::collections::BTreeMap<Token, usize> = Default::default();
        for &(_, i) in &dist[..k] {
            *counts.entry(self.successors[i]).or_default() += 1;
        }
        let mut ranked: Vec<(Token, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.into_iter().map(|(t, _)| t).collect()
    }

    pub fn predict_next(&self, prefix: &[Token]) -> Token {
        self.rank(prefix)[0]
    }
}

impl Predictor for NearestNeighbors {
    fn predict(&self, record: &DatasetRecord) -> Result<Vec<Scores>> {
        let t = &record.tokens.tokens;
        Ok((0..t.len()).map(|j| Scores::Ranking(self.rank(&t[..j]).into_iter().take(5).collect())).collect())
    }
}
