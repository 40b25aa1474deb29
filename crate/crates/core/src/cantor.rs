//! Finite interval approximations of Cantor sets, their thickness and the
//! Gap Lemma predicate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sorted, pairwise disjoint closed intervals inside a hull interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct IntervalSet {
    intervals: Vec<(f64, f64)>,
    hull: (f64, f64),
}

impl IntervalSet {
    /// Builds a set whose hull is the span of its intervals.
    pub fn new(intervals: Vec<(f64, f64)>) -> Result<Self> {
        let hull = match (intervals.first(), intervals.last()) {
            (Some(f), Some(l)) => (f.0, l.1),
            _ => return Err(Error::Degenerate("empty interval set".into())),
        };
        Self::with_hull(intervals, hull)
    }

    pub fn with_hull(intervals: Vec<(f64, f64)>, hull: (f64, f64)) -> Result<Self> {
        if intervals.is_empty() {
            return Err(Error::Degenerate("empty interval set".into()));
        }
        for (i, &(l, r)) in intervals.iter().enumerate() {
            if !(l.is_finite() && r.is_finite() && l <= r) {
                return Err(Error::Degenerate(format!("bad interval [{l}, {r}]")));
            }
            if i > 0 && intervals[i - 1].1 >= l {
                return Err(Error::Degenerate(format!(
                    "intervals {} and {} overlap or are unsorted",
                    i - 1,
                    i
                )));
            }
        }
        let (lo, hi) = (intervals[0].0, intervals[intervals.len() - 1].1);
        if !(hull.0 <= lo && hi <= hull.1) {
            return Err(Error::Degenerate("hull does not contain the intervals".into()));
        }
        Ok(Self { intervals, hull })
    }

    /// Level-`level` stage of the two-piece construction on `[0, 1]` keeping
    /// `[0, left]` and `[1 - right, 1]` at every step.
    pub fn two_piece(left: f64, right: f64, level: u32) -> Result<Self> {
        if !(left > 0.0 && right > 0.0 && left + right < 1.0) {
            return Err(Error::Degenerate(format!(
                "piece ratios {left}, {right} do not leave a gap"
            )));
        }
        let mut cur = vec![(0.0, 1.0)];
        for _ in 0..level {
            let mut next = Vec::with_capacity(cur.len() * 2);
            for &(l, r) in &cur {
                let w = r - l;
                next.push((l, l + left * w));
                next.push((r - right * w, r));
            }
            cur = next;
        }
        Self::new(cur)
    }

    /// Symmetric construction removing the central `removed` fraction of
    /// every interval (1/3 gives the ternary set).
    pub fn middle_removed(removed: f64, level: u32) -> Result<Self> {
        let piece = (1.0 - removed) / 2.0;
        Self::two_piece(piece, piece, level)
    }

    /// The same symmetric construction with `1/parts` removed, drawn on `[0, parts^level]`
    /// so that every endpoint is an integer and every length is exact.
    pub fn middle_removed_lattice(parts: u64, level: u32) -> Result<Self> {
        if parts < 3 || parts.is_multiple_of(2) {
            return Err(Error::Degenerate(format!(
                "removed fraction 1/{parts} needs an odd denominator above 1"
            )));
        }
        let total = parts
            .checked_pow(level)
            .filter(|t| *t <= 1u64 << 53)
            .ok_or_else(|| Error::Degenerate(format!("{parts}^{level} is not exact in doubles")))?;
        let mut cur = vec![(0u64, total)];
        for _ in 0..level {
            let mut next = Vec::with_capacity(cur.len() * 2);
            for &(l, r) in &cur {
                let piece = (r - l) / parts * ((parts - 1) / 2);
                next.push((l, l + piece));
                next.push((r - piece, r));
            }
            cur = next;
        }
        Self::new(cur.into_iter().map(|(l, r)| (l as f64, r as f64)).collect())
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn hull(&self) -> (f64, f64) {
        self.hull
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Bounded gaps between consecutive intervals.
    pub fn gaps(&self) -> Vec<(f64, f64)> {
        self.intervals.windows(2).map(|w| (w[0].1, w[1].0)).collect()
    }

    /// Image under `t -> alpha t + beta`; orientation is restored when
    /// `alpha < 0`.
    pub fn affine(&self, alpha: f64, beta: f64) -> Result<Self> {
        if alpha == 0.0 || !alpha.is_finite() {
            return Err(Error::Degenerate("affine factor must be nonzero".into()));
        }
        let map = |(l, r): (f64, f64)| {
            let (a, b) = (alpha * l + beta, alpha * r + beta);
            (a.min(b), a.max(b))
        };
        let mut iv: Vec<_> = self.intervals.iter().copied().map(map).collect();
        if alpha < 0.0 {
            iv.reverse();
        }
        Self::with_hull(iv, map(self.hull))
    }

    /// Index of the interval containing `t`, if any.
    pub fn containing(&self, t: f64) -> Option<usize> {
        let i = self.intervals.partition_point(|&(l, _)| l <= t);
        (i > 0 && t <= self.intervals[i - 1].1).then(|| i - 1)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }
}

impl TryFrom<Vec<[f64; 2]>> for IntervalSet {
    type Error = Error;

    fn try_from(v: Vec<[f64; 2]>) -> Result<Self> {
        Self::new(v.into_iter().map(|[l, r]| (l, r)).collect())
    }
}

impl From<IntervalSet> for Vec<[f64; 2]> {
    fn from(s: IntervalSet) -> Self {
        s.intervals.into_iter().map(|(l, r)| [l, r]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub gap: (f64, f64),
    pub point: f64,
    pub bridge: (f64, f64),
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThicknessReport {
    /// `f64::INFINITY` when the set has no gaps.
    pub tau: f64,
    pub witnesses: Vec<Witness>,
    pub min_witness: Option<usize>,
}

/// Exact thickness of the finite interval set.
///
/// Each gap contributes its left boundary point (bridge running left) and
/// its right boundary point (bridge running right). A bridge stops at the
/// nearest gap at least as long as the one it borders, or at the hull.
pub fn thickness(k: &IntervalSet) -> ThicknessReport {
    let gaps = k.gaps();
    let n = gaps.len();
    let glen: Vec<f64> = gaps.iter().map(|g| g.1 - g.0).collect();
    let (lo, hi) = k.hull;

    let mut left_end = vec![lo; n];
    let mut stack: Vec<usize> = Vec::new();
    for i in 0..n {
        while let Some(&j) = stack.last() {
            if glen[j] >= glen[i] {
                break;
            }
            stack.pop();
        }
        if let Some(&j) = stack.last() {
            left_end[i] = gaps[j].1;
        }
        stack.push(i);
    }

    let mut right_end = vec![hi; n];
    stack.clear();
    for i in (0..n).rev() {
        while let Some(&j) = stack.last() {
            if glen[j] >= glen[i] {
                break;
            }
            stack.pop();
        }
        if let Some(&j) = stack.last() {
            right_end[i] = gaps[j].0;
        }
        stack.push(i);
    }

    let mut witnesses = Vec::with_capacity(2 * n);
    for i in 0..n {
        let (gl, gr) = gaps[i];
        let g = glen[i];
        witnesses.push(Witness {
            gap: gaps[i],
            point: gl,
            bridge: (left_end[i], gl),
            ratio: (gl - left_end[i]) / g,
        });
        witnesses.push(Witness {
            gap: gaps[i],
            point: gr,
            bridge: (gr, right_end[i]),
            ratio: (right_end[i] - gr) / g,
        });
    }
    let min_witness = witnesses
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.ratio.total_cmp(&b.1.ratio))
        .map(|(i, _)| i);
    let tau = min_witness.map_or(f64::INFINITY, |i| witnesses[i].ratio);
    ThicknessReport {
        tau,
        witnesses,
        min_witness,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProductClass {
    ProductExceedsOne,
    ProductAtMostOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Placement {
    K1InGapOfK2,
    K2InGapOfK1,
    NonemptyIntersection,
    Undetermined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapLemmaVerdict {
    pub product: ProductClass,
    pub placement: Placement,
    pub tau_product: f64,
}

enum HullSite {
    InGap,
    InOneInterval,
    Linked,
}

fn hull_site(inner: (f64, f64), outer: &IntervalSet) -> HullSite {
    let (l, r) = inner;
    match (outer.containing(l), outer.containing(r)) {
        (Some(i), Some(j)) if i == j => HullSite::InOneInterval,
        (None, None) => {
            let i = outer.intervals.partition_point(|&(a, _)| a <= l);
            let j = outer.intervals.partition_point(|&(a, _)| a <= r);
            if i == j {
                HullSite::InGap
            } else {
                HullSite::Linked
            }
        }
        _ => HullSite::Linked,
    }
}

fn approximations_overlap(k1: &IntervalSet, k2: &IntervalSet) -> bool {
    let (a, b) = (&k1.intervals, &k2.intervals);
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i].0.max(b[j].0) <= a[i].1.min(b[j].1) {
            return true;
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    false
}

/// Gap Lemma predicate on two finite approximations.
///
/// A hull falling inside a single interval of the other set cannot be
/// placed at this level and yields `LevelTooCoarse`. Disjoint
/// approximations with linked hulls and thickness product above one
/// contradict the lemma and yield `GapLemmaViolation`.
pub fn gap_lemma_predicate(k1: &IntervalSet, k2: &IntervalSet) -> Result<GapLemmaVerdict> {
    let tau_product = thickness(k1).tau * thickness(k2).tau;
    let product = if tau_product > 1.0 {
        ProductClass::ProductExceedsOne
    } else {
        ProductClass::ProductAtMostOne
    };
    let verdict = |placement| GapLemmaVerdict {
        product,
        placement,
        tau_product,
    };
    let s1 = hull_site(k1.hull, k2);
    let s2 = hull_site(k2.hull, k1);
    if let HullSite::InGap = s1 {
        return Ok(verdict(Placement::K1InGapOfK2));
    }
    if let HullSite::InGap = s2 {
        return Ok(verdict(Placement::K2InGapOfK1));
    }
    if matches!(s1, HullSite::InOneInterval) || matches!(s2, HullSite::InOneInterval) {
        return Err(Error::LevelTooCoarse);
    }
    if approximations_overlap(k1, k2) {
        return Ok(verdict(Placement::NonemptyIntersection));
    }
    match product {
        ProductClass::ProductExceedsOne => Err(Error::GapLemmaViolation),
        ProductClass::ProductAtMostOne => Ok(verdict(Placement::Undetermined)),
    }
}

/// One node of a [`NestedCantor`]: placement inside its parent in units of the parent's length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NestedNode {
    pub depth: u32,
    pub parent: Option<usize>,
    pub children: Option<[usize; 2]>,
    pub offset: f64,
    pub width: f64,
    /// Natural log of the absolute length.
    pub log_len: f64,
}

/// Two-branch Cantor approximation stored as a tree of relative placements.
///
/// Absolute endpoints stop being representable once intervals shrink below
/// the spacing of doubles around the hull, while relative placements keep
/// full precision at every depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedCantor {
    root: (f64, f64),
    nodes: Vec<NestedNode>,
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

impl NestedCantor {
    pub fn new(root: (f64, f64)) -> Result<Self> {
        let len = root.1 - root.0;
        if !(len > 0.0 && len.is_finite()) {
            return Err(Error::Degenerate(format!("bad root interval [{}, {}]", root.0, root.1)));
        }
        Ok(Self {
            root,
            nodes: vec![NestedNode {
                depth: 0,
                parent: None,
                children: None,
                offset: 0.0,
                width: 1.0,
                log_len: len.ln(),
            }],
        })
    }

    pub fn root(&self) -> (f64, f64) {
        self.root
    }

    pub fn nodes(&self) -> &[NestedNode] {
        &self.nodes
    }

    /// Deepest level reached by every branch.
    pub fn depth(&self) -> u32 {
        self.nodes
            .iter()
            .filter(|n| n.children.is_none())
            .map(|n| n.depth)
            .min()
            .unwrap_or(0)
    }

    /// Splits a leaf into two children given as `(offset, width)` relative to it.
    pub fn refine(&mut self, node: usize, pieces: [(f64, f64); 2]) -> Result<[usize; 2]> {
        let parent = *self
            .nodes
            .get(node)
            .ok_or_else(|| Error::Degenerate(format!("no node {node}")))?;
        if parent.children.is_some() {
            return Err(Error::Degenerate(format!("node {node} already refined")));
        }
        let mut pieces = pieces;
        pieces.sort_by(|a, b| a.0.total_cmp(&b.0));
        let [(o0, w0), (o1, w1)] = pieces;
        let level = parent.depth as usize + 1;
        let fits = o0 >= -1e-12 && o1 + w1 <= 1.0 + 1e-12;
        if !(w0 > 0.0 && w1 > 0.0 && fits && w0.is_finite() && w1.is_finite()) {
            return Err(Error::Degenerate(format!("children {pieces:?} do not fit node {node}")));
        }
        if !(o0 + w0 < o1) {
            return Err(Error::ResolutionExhausted { level });
        }
        let first = self.nodes.len();
        for (offset, width) in pieces {
            self.nodes.push(NestedNode {
                depth: parent.depth + 1,
                parent: Some(node),
                children: None,
                offset,
                width,
                log_len: parent.log_len + width.ln(),
            });
        }
        self.nodes[node].children = Some([first, first + 1]);
        Ok([first, first + 1])
    }

    /// Nodes at `level`, left to right.
    pub fn level_nodes(&self, level: u32) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let n = &self.nodes[i];
            if n.depth == level {
                out.push(i);
            } else if let Some([a, b]) = n.children {
                stack.push(b);
                stack.push(a);
            }
        }
        out
    }

    pub fn interval_count(&self, level: u32) -> usize {
        self.level_nodes(level).len()
    }

    /// Absolute left end and length of a node, rounded to doubles.
    pub fn absolute(&self, node: usize) -> (f64, f64) {
        let n = &self.nodes[node];
        match n.parent {
            None => (self.root.0, self.root.1 - self.root.0),
            Some(p) => {
                let (lo, len) = self.absolute(p);
                (lo + n.offset * len, n.log_len.exp())
            }
        }
    }

    /// Absolute intervals at `level`; touching or overlapping intervals are merged and
    /// reported through the flag.
    pub fn to_interval_set(&self, level: u32) -> Result<(IntervalSet, bool)> {
        let mut merged = false;
        let mut out: Vec<(f64, f64)> = Vec::new();
        for i in self.level_nodes(level) {
            let (lo, len) = self.absolute(i);
            let hi = lo + len;
            match out.last_mut() {
                Some(last) if last.1 >= lo => {
                    last.1 = last.1.max(hi);
                    merged = true;
                }
                _ => out.push((lo, hi)),
            }
        }
        if out.len() < self.interval_count(level) {
            merged = true;
        }
        Ok((IntervalSet::new(out)?, merged))
    }

    /// Thickness of the level-`level` approximation computed from log-lengths, so that it is
    /// exact up to rounding at any depth. Witness positions are absolute and may be rounded.
    pub fn thickness(&self, level: u32) -> ThicknessReport {
        let leaves = self.level_nodes(level);
        if leaves.is_empty() {
            return ThicknessReport {
                tau: f64::INFINITY,
                witnesses: Vec::new(),
                min_witness: None,
            };
        }
        // Items alternate leaf, gap, leaf, ...; gaps sit between consecutive leaves.
        let mut log_items: Vec<f64> = Vec::with_capacity(2 * leaves.len());
        let mut gap_pos: Vec<(f64, f64)> = Vec::new();
        for w in leaves.windows(2) {
            log_items.push(self.nodes[w[0]].log_len);
            let (lg, pos) = self.gap_between(w[0], w[1]);
            log_items.push(lg);
            gap_pos.push(pos);
        }
        log_items.push(self.nodes[leaves[leaves.len() - 1]].log_len);
        let n_gaps = leaves.len() - 1;
        let gap_log = |g: usize| log_items[2 * g + 1];
        let mut witnesses = Vec::with_capacity(2 * n_gaps);
        for g in 0..n_gaps {
            let own = gap_log(g);
            let mut left = f64::NEG_INFINITY;
            let mut k = 2 * g;
            loop {
                left = log_sum_exp(left, log_items[k]);
                if k < 2 || log_items[k - 1] >= own {
                    break;
                }
                left = log_sum_exp(left, log_items[k - 1]);
                k -= 2;
            }
            let mut right = f64::NEG_INFINITY;
            let mut k = 2 * g + 2;
            loop {
                right = log_sum_exp(right, log_items[k]);
                if k + 1 >= log_items.len() || log_items[k + 1] >= own {
                    break;
                }
                right = log_sum_exp(right, log_items[k + 1]);
                k += 2;
            }
            let (gl, gr) = gap_pos[g];
            let left_len = left.exp();
            let right_len = right.exp();
            witnesses.push(Witness {
                gap: (gl, gr),
                point: gl,
                bridge: (gl - left_len, gl),
                ratio: (left - own).exp(),
            });
            witnesses.push(Witness {
                gap: (gl, gr),
                point: gr,
                bridge: (gr, gr + right_len),
                ratio: (right - own).exp(),
            });
        }
        let min_witness = witnesses
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.ratio.total_cmp(&b.1.ratio))
            .map(|(i, _)| i);
        let tau = min_witness.map_or(f64::INFINITY, |i| witnesses[i].ratio);
        ThicknessReport {
            tau,
            witnesses,
            min_witness,
        }
    }

    /// Log-length and absolute position of the gap between two consecutive leaves. The gap
    /// collects the sibling gap under the common ancestor plus the slack each leaf leaves at
    /// the facing ends of its ancestors.
    fn gap_between(&self, left: usize, right: usize) -> (f64, (f64, f64)) {
        let mut path_left = vec![left];
        let mut a = left;
        while let Some(p) = self.nodes[a].parent {
            path_left.push(p);
            a = p;
        }
        let mut total = f64::NEG_INFINITY;
        let mut add = |parent: usize, rel: f64| {
            if rel > 0.0 {
                total = log_sum_exp(total, self.nodes[parent].log_len + rel.ln());
            }
        };
        let mut b = right;
        loop {
            let p = self.nodes[b].parent.expect("leaves share the root");
            if let Some(pos) = path_left.iter().position(|&x| x == p) {
                let na = &self.nodes[path_left[pos - 1]];
                add(p, self.nodes[b].offset - (na.offset + na.width));
                for w in path_left[..pos].windows(2) {
                    let n = &self.nodes[w[0]];
                    add(w[1], 1.0 - n.offset - n.width);
                }
                break;
            }
            add(p, self.nodes[b].offset);
            b = p;
        }
        let (alo, alen) = self.absolute(left);
        let (blo, _) = self.absolute(right);
        (total, (alo + alen, blo))
    }
}
