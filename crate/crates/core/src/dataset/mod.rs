//! From floor plans to token-sequence datasets.

mod augment;
mod quant;
mod synth;
mod tokens;
mod view;

pub use augment::{augment, inverse_index, signed_permutation, SignedPermutation, NUM_SIGNED_PERMUTATIONS};
pub use quant::Quantizer;
pub use synth::synth_plan;
pub use tokens::{
    decode, encode, survives_quantization, Slot, Token, TokenSequence, Vocab, LINE, MOVE, STOP,
    TOKENS_PER_SEGMENT,
};
pub use view::{
    extract_view, farthest_point_selection, is_valid_location, sample_candidates, sample_viewpoints,
    SampleParams, ViewParams,
};

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::geometry::{canonicalize_segments_with_offset, flatten_plan, CanonParams, FloorPlan, Point, Segment};
use crate::rng::derive_seed;
use crate::{Error, Result};

/// One training or test example: a tokenized view from one viewpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub building_id: String,
    pub plan_id: String,
    pub viewpoint: Point,
    pub tokens: TokenSequence,
    /// View segments in local coordinates; `encode(local_segments) == tokens`.
    pub local_segments: Vec<Segment>,
}

impl DatasetRecord {
    /// Builds a record from local segments, dropping those that vanish
    /// under quantization so segments and token groups line up.
    pub fn from_view(building_id: &str, plan_id: &str, viewpoint: Point, segs: Vec<Segment>, q: &Quantizer) -> Self {
        let local_segments: Vec<Segment> = segs.into_iter().filter(|s| survives_quantization(s, q)).collect();
        let tokens = encode(&local_segments, q);
        Self { building_id: building_id.into(), plan_id: plan_id.into(), viewpoint, tokens, local_segments }
    }

    /// Rebuilds a record from stored tokens; segments are bin centers.
    pub fn from_tokens(building_id: &str, plan_id: &str, viewpoint: Point, tokens: TokenSequence, q: &Quantizer) -> Result<Self> {
        tokens.validate(&Vocab::new(q.n_q))?;
        let local_segments = decode(&tokens, q)?;
        Ok(Self { building_id: building_id.into(), plan_id: plan_id.into(), viewpoint, tokens, local_segments })
    }
}

/// On-disk form of a record: one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordLine {
    pub building: String,
    pub plan: String,
    pub vp: [f64; 2],
    pub tokens: Vec<Token>,
}

pub fn write_records<W: Write>(mut w: W, records: &[DatasetRecord]) -> Result<()> {
    for r in records {
        let line = RecordLine {
            building: r.building_id.clone(),
            plan: r.plan_id.clone(),
            vp: [r.viewpoint.x, r.viewpoint.y],
            tokens: r.tokens.tokens.clone(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(r: R, q: &Quantizer) -> Result<Vec<DatasetRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rl: RecordLine = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidArgument(format!("record line {}: {e}", i + 1)))?;
        let rec = DatasetRecord::from_tokens(&rl.building, &rl.plan, Point::new(rl.vp[0], rl.vp[1]), TokenSequence::new(rl.tokens), q)
            .map_err(|e| Error::InvalidArgument(format!("record line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Chooses the test buildings so that their share of records is as close
/// as possible to `test_fraction`.
///
/// Buildings are atomic. For `0 < test_fraction < 1`, both splits are
/// non-empty; ties prefer the smaller test set, then the earliest buildings
/// in id order. Exact subset-sum over record counts.
pub fn split_buildings(counts: &BTreeMap<String, usize>, test_fraction: f64) -> Result<BTreeSet<String>> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::InvalidArgument(format!("test fraction {test_fraction} outside [0, 1]")));
    }
    if test_fraction == 0.0 {
        return Ok(BTreeSet::new());
    }
    if test_fraction == 1.0 {
        return Ok(counts.keys().cloned().collect());
    }
    if counts.len() < 2 {
        return Err(Error::InvalidArgument(
            "a train/test split needs at least two buildings to avoid leakage".into(),
        ));
    }
    let ids: Vec<&String> = counts.keys().collect();
    let sizes: Vec<usize> = counts.values().copied().collect();
    let total: usize = sizes.iter().sum();
    // sets[s]: the subset with sum s using the fewest buildings, earliest first.
    let mut sets: Vec<Option<Vec<usize>>> = vec![None; total + 1];
    sets[0] = Some(Vec::new());
    for (b, &sz) in sizes.iter().enumerate() {
        for s in (0..=total - sz).rev() {
            let Some(prev) = &sets[s] else { continue };
            if prev.contains(&b) {
                continue;
            }
            let t = s + sz;
            if sets[t].as_ref().is_none_or(|cur| prev.len() + 1 < cur.len()) {
                let mut next = prev.clone();
                next.push(b);
                sets[t] = Some(next);
            }
        }
    }
    let target = test_fraction * total as f64;
    let mut best: Option<(f64, usize, &Vec<usize>)> = None;
    for (s, set) in sets.iter().enumerate() {
        let Some(set) = set else { continue };
        if set.is_empty() || set.len() == ids.len() {
            continue;
        }
        let err = (s as f64 - target).abs();
        if best.as_ref().is_none_or(|(be, bs, _)| err < *be || (err == *be && s < *bs)) {
            best = Some((err, s, set));
        }
    }
    let (_, _, set) = best.ok_or_else(|| Error::InvalidArgument("no valid building split".into()))?;
    Ok(set.iter().map(|&b| ids[b].clone()).collect())
}

/// Records of one plan: canonicalize, sample viewpoints, extract, encode.
pub fn plan_records(
    plan: &FloorPlan,
    canon: &CanonParams,
    view: &ViewParams,
    sample: &SampleParams,
    q: &Quantizer,
) -> Result<Vec<DatasetRecord>> {
    let (segs, offset) = canonicalize_segments_with_offset(&flatten_plan(plan)?, canon)?;
    // Viewpoints are drawn in the canonical frame.
    let framed = plan.transformed(canon.global_scale, offset);
    let seed = derive_seed(sample.rng_seed, &format!("plan/{}/{}", plan.building_id, plan.floor_id), 0);
    let vps = sample_viewpoints(&framed, &SampleParams { rng_seed: seed, ..*sample })?;
    Ok(vps
        .into_iter()
        .map(|vp| DatasetRecord::from_view(&plan.building_id, &plan.floor_id, vp, extract_view(&segs, vp, view), q))
        .collect())
}

/// Builds records for all plans and splits them by building.
pub fn build_dataset(
    plans: &[FloorPlan],
    canon: &CanonParams,
    view: &ViewParams,
    sample: &SampleParams,
    q: &Quantizer,
    test_fraction: f64,
) -> Result<(Vec<DatasetRecord>, Vec<DatasetRecord>)> {
    if plans.is_empty() {
        return Err(Error::InvalidArgument("no floor plans".into()));
    }
    view.validate()?;
    q.validate()?;
    let mut all = Vec::new();
    for plan in plans {
        all.extend(plan_records(plan, canon, view, sample, q)?);
    }
    let mut counts: BTreeMap<String, usize> = plans.iter().map(|p| (p.building_id.clone(), 0)).collect();
    for r in &all {
        *counts.get_mut(&r.building_id).expect("known building") += 1;
    }
    let test_ids = split_buildings(&counts, test_fraction)?;
    let (test, train) = all.into_iter().partition(|r| test_ids.contains(&r.building_id));
    Ok((train, test))
}
