//! Structure recovery from a trained network: response-weighted averages,
//! effective-filter classification, filter-to-subunit matching and feature
//! tiling.

use rayon::prelude::*;

use crate::cnn::model::CnnModel;
use crate::cnn::network;
use crate::error::{Error, Result};
use crate::rgc::{rgc_rate, threshold_quadratic, RgcModel};
use crate::stimulus::{sample_frame, Frame};

/// Frames per accumulation shard. Shards are merged in index order.
const SHARD: usize = 1024;

/// Row-major real-valued image.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

/// A receptive-field estimate at stimulus resolution.
pub type RfMap = Grid;

impl Grid {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} grid",
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.values[row * self.cols + col] = v;
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// The `size x size` block whose top-left corner is `(top, left)`.
    pub fn window(&self, top: usize, left: usize, size: usize) -> Result<Grid> {
        if top + size > self.rows || left + size > self.cols {
            return Err(Error::Shape(format!(
                "{size}x{size} window at ({top}, {left}) leaves a {}x{} grid",
                self.rows, self.cols
            )));
        }
        let values = (0..size)
            .flat_map(|r| {
                let start = (top + r) * self.cols + left;
                self.values[start..start + size].iter().copied()
            })
            .collect();
        Ok(Grid {
            rows: size,
            cols: size,
            values,
        })
    }

    /// Copy of `self` placed at `(top, left)` inside a zero grid.
    pub fn embed(&self, rows: usize, cols: usize, top: usize, left: usize) -> Result<Grid> {
        if top + self.rows > rows || left + self.cols > cols {
            return Err(Error::Shape("embedded grid does not fit".into()));
        }
        let mut out = Grid::zeros(rows, cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(top + r, left + c, self.get(r, c));
            }
        }
        Ok(out)
    }

    /// Location of the entry with the largest magnitude.
    pub fn argmax_abs(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if v.abs() > self.values[best].abs() {
                best = i;
            }
        }
        (best / self.cols, best % self.cols)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Cosine similarity of two equally sized vectors.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("lengths {} and {}", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine of a zero vector".into()));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Pearson correlation coefficient.
pub fn pearson_cc(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Shape(format!(
            "pearson_cc needs two vectors of equal length >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if constant(a) || constant(b) {
        return Err(Error::UndefinedCorrelation("an input has zero variance".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation("an input has zero variance".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Anything that maps a batch of frames to one response per frame.
pub trait Responder: Sync {
    fn respond(&self, frames: &[&Frame]) -> Result<Vec<f64>>;
}

impl Responder for CnnModel {
    fn respond(&self, frames: &[&Frame]) -> Result<Vec<f64>> {
        network::rates(self, frames)
    }
}

impl Responder for RgcModel {
    fn respond(&self, frames: &[&Frame]) -> Result<Vec<f64>> {
        frames.iter().map(|f| rgc_rate(f, self)).collect()
    }
}

/// Adapts a per-frame closure into a [`Responder`].
pub struct FnResponder<F>(pub F);

impl<F> Responder for FnResponder<F>
where
    F: Fn(&Frame) -> Result<f64> + Sync,
{
    fn respond(&self, frames: &[&Frame]) -> Result<Vec<f64>> {
        frames.iter().map(|f| (self.0)(f)).collect()
    }
}

/// Response-weighted average of `n_frames` fresh white-noise frames drawn
/// from `seed`: `sum_t r_t x_t / sum_t r_t`.
pub fn compute_sta<R: Responder + ?Sized>(
    responder: &R,
    n_frames: usize,
    width: usize,
    height: usize,
    seed: u64,
) -> Result<RfMap> {
    if n_frames < 1000 {
        return Err(Error::Config(format!("STA needs at least 1000 frames, got {n_frames}")));
    }
    let mut maps = weighted_averages(1, n_frames, width, height, seed, |frames| {
        Ok(responder.respond(frames)?.into_iter().map(|r| vec![r]).collect())
    })?;
    let (map, total) = maps.pop().expect("one channel");
    if total == 0.0 {
        return Err(Error::Degenerate("responder never responded; STA undefined".into()));
    }
    Ok(map)
}

/// Shared accumulator: per-channel `sum_t a_c(t) x_t / sum_t a_c(t)` plus the
/// activation total. Channels with zero total come back as zero maps.
fn weighted_averages<F>(
    channels: usize,
    n_frames: usize,
    width: usize,
    height: usize,
    seed: u64,
    activations: F,
) -> Result<Vec<(Grid, f64)>>
where
    F: Fn(&[&Frame]) -> Result<Vec<Vec<f64>>> + Sync,
{
    let n_shards = n_frames.div_ceil(SHARD);
    let shards: Vec<(Vec<f64>, Vec<f64>)> = (0..n_shards)
        .into_par_iter()
        .map(|s| {
            let start = s * SHARD;
            let end = (start + SHARD).min(n_frames);
            let frames = (start..end)
                .map(|i| sample_frame(seed, i as u64, width, height))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&Frame> = frames.iter().collect();
            let acts = activations(&refs)?;
            let mut sums = vec![0.0; channels * width * height];
            let mut totals = vec![0.0; channels];
            for (frame, a) in frames.iter().zip(&acts) {
                for (c, &ac) in a.iter().enumerate() {
                    if ac == 0.0 {
                        continue;
                    }
                    totals[c] += ac;
                    let dst = &mut sums[c * width * height..(c + 1) * width * height];
                    dst.iter_mut().zip(frame.values()).for_each(|(d, x)| *d += ac * x);
                }
            }
            Ok((sums, totals))
        })
        .collect::<Result<_>>()?;

    let mut sums = vec![0.0; channels * width * height];
    let mut totals = vec![0.0; channels];
    for (s, t) in &shards {
        sums.iter_mut().zip(s).for_each(|(a, b)| *a += b);
        totals.iter_mut().zip(t).for_each(|(a, b)| *a += b);
    }
    Ok(sums
        .chunks_exact(width * height)
        .zip(totals)
        .map(|(s, t)| {
            let values = if t == 0.0 { vec![0.0; s.len()] } else { s.iter().map(|v| v / t).collect() };
            (Grid::new(height, width, values).expect("sized above"), t)
        })
        .collect())
}

/// Default relative norm threshold for [`classify_effective`].
pub const DEFAULT_TAU: f64 = 0.3;

/// Flags every norm at least `tau` times the largest one.
pub fn effective_flags(norms: &[f64], tau: f64) -> Result<Vec<bool>> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Config(format!("tau must lie in (0, 1), got {tau}")));
    }
    let max = norms.iter().fold(0.0f64, |m, &n| m.max(n));
    if max == 0.0 {
        return Err(Error::Degenerate("every filter is exactly zero".into()));
    }
    Ok(norms.iter().map(|&n| n >= tau * max).collect())
}

/// Which first-layer filters carry non-negligible weight.
pub fn classify_effective(model: &CnnModel, tau: f64) -> Result<Vec<bool>> {
    effective_flags(&model.conv1_filter_norms(), tau)
}

/// First-layer filter `k` as a grid.
pub fn conv1_filter_grid(model: &CnnModel, k: usize) -> Grid {
    let f = model.arch.conv1_size;
    Grid::new(f, f, model.conv1_filter(k).to_vec()).expect("square filter")
}

/// The `size x size` window of `filter` holding the most energy, with its
/// top-left corner. Ties go to the smallest `(row, col)`.
pub fn crop_effective(filter: &Grid, size: usize) -> Result<(Grid, (usize, usize))> {
    if size == 0 || size > filter.rows || size > filter.cols {
        return Err(Error::Shape(format!(
            "cannot crop {size}x{size} from a {}x{} filter",
            filter.rows, filter.cols
        )));
    }
    let mut best = (f64::NEG_INFINITY, (0, 0));
    for top in 0..=filter.rows - size {
        for left in 0..=filter.cols - size {
            let mut energy = 0.0;
            for r in top..top + size {
                energy += filter.values[r * filter.cols + left..r * filter.cols + left + size]
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>();
            }
            if energy > best.0 {
                best = (energy, (top, left));
            }
        }
    }
    let (top, left) = best.1;
    Ok((filter.window(top, left, size)?, (top, left)))
}

/// Best normalized cross-correlation between two equal-size patches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NccMatch {
    /// Magnitude of the best correlation, in `[0, 1]`.
    pub score: f64,
    /// `(dy, dx)` such that `candidate[r + dy][c + dx]` lines up with `truth[r][c]`.
    pub shift: (i32, i32),
    /// +1 if the candidate matches the truth directly, -1 if it matches its negation.
    pub sign: i8,
}

/// Searches integer shifts in `[-max_shift, max_shift]^2` and both signs for
/// the highest NCC between the candidate and the shifted, zero-filled truth.
///
/// Correlating over the whole window (rather than only the overlap) keeps
/// small-overlap shifts from producing high scores on pure noise.
pub fn ncc_best(candidate: &Grid, truth: &Grid, max_shift: usize) -> Result<NccMatch> {
    if candidate.rows != truth.rows || candidate.cols != truth.cols {
        return Err(Error::Shape(format!(
            "candidate {}x{} vs truth {}x{}",
            candidate.rows, candidate.cols, truth.rows, truth.cols
        )));
    }
    let first = candidate.values.first().copied().unwrap_or(0.0);
    if candidate.values.iter().all(|&v| v == first) {
        return Err(Error::UndefinedCorrelation("candidate patch has zero variance".into()));
    }
    let m = max_shift as i32;
    let mut shifts: Vec<(i32, i32)> = (-m..=m).flat_map(|dy| (-m..=m).map(move |dx| (dy, dx))).collect();
    shifts.sort_by_key(|&(dy, dx)| (dy * dy + dx * dx, dy, dx));

    let (rows, cols) = (truth.rows as i32, truth.cols as i32);
    let mut best: Option<NccMatch> = None;
    let mut a = Vec::with_capacity(candidate.values.len());
    let mut b = Vec::with_capacity(candidate.values.len());
    for (dy, dx) in shifts {
        // The candidate window stays fixed; the truth is shifted with zero fill,
        // so pixels it no longer covers still count against the match.
        a.clear();
        b.clear();
        for r in 0..rows {
            for c in 0..cols {
                let (tr, tc) = (r - dy, c - dx);
                let inside = (0..rows).contains(&tr) && (0..cols).contains(&tc);
                a.push(candidate.get(r as usize, c as usize));
                b.push(if inside { truth.get(tr as usize, tc as usize) } else { 0.0 });
            }
        }
        let Ok(cc) = pearson_cc(&a, &b) else { continue };
        if best.map_or(true, |m| cc.abs() > m.score) {
            best = Some(NccMatch {
                score: cc.abs(),
                shift: (dy, dx),
                sign: if cc < 0.0 { -1 } else { 1 },
            });
        }
    }
    best.ok_or_else(|| Error::UndefinedCorrelation("no shift produced a defined correlation".into()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchOptions {
    pub tau: f64,
    pub crop: usize,
    pub max_shift: usize,
}

impl Default for MatchOptions {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            crop: 6,
            max_shift: 3,
        }
    }
}

/// Per-filter row of a [`FilterReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct FilterEntry {
    pub index: usize,
    pub norm: f64,
    pub effective: bool,
    /// Top-left corner of the crop window (effective filters only).
    pub crop_origin: Option<(usize, usize)>,
    /// Assigned ground-truth subunit, if any.
    pub subunit: Option<usize>,
    pub ncc: Option<f64>,
    pub shift: Option<(i32, i32)>,
    pub sign: Option<i8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterReport {
    pub entries: Vec<FilterEntry>,
    /// Number of ground-truth subunits the filters were matched against.
    pub n_subunits: usize,
}

impl FilterReport {
    /// Subunits matched with an NCC of at least `threshold`.
    pub fn recovered(&self, threshold: f64) -> usize {
        self.entries
            .iter()
            .filter(|e| e.subunit.is_some() && e.ncc.unwrap_or(0.0) >= threshold)
            .count()
    }

    pub fn total_score(&self) -> f64 {
        self.entries.iter().filter(|e| e.subunit.is_some()).filter_map(|e| e.ncc).sum()
    }

    pub fn n_effective(&self) -> usize {
        self.entries.iter().filter(|e| e.effective).count()
    }
}

/// Filter report without ground truth: norms, effective flags and crops only.
pub fn describe_filters(model: &CnnModel, opts: &MatchOptions) -> Result<FilterReport> {
    let flags = classify_effective(model, opts.tau)?;
    let norms = model.conv1_filter_norms();
    let entries = (0..model.arch.conv1_filters)
        .map(|k| {
            let crop_origin = if flags[k] {
                Some(crop_effective(&conv1_filter_grid(model, k), opts.crop)?.1)
            } else {
                None
            };
            Ok(FilterEntry {
                index: k,
                norm: norms[k],
                effective: flags[k],
                crop_origin,
                subunit: None,
                ncc: None,
                shift: None,
                sign: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FilterReport { entries, n_subunits: 0 })
}

/// Largest number of ground-truth subunits [`match_filters`] will enumerate over.
pub const MAX_MATCH_SUBUNITS: usize = 8;

/// NCC scores of every effective filter against every truth subunit, with
/// the injective assignment maximizing the summed score.
pub fn match_filters(model: &CnnModel, truth: &RgcModel, opts: &MatchOptions) -> Result<FilterReport> {
    let n_sub = truth.subunits.len();
    if n_sub > MAX_MATCH_SUBUNITS {
        return Err(Error::Config(format!(
            "cannot enumerate assignments for {n_sub} subunits (max {MAX_MATCH_SUBUNITS})"
        )));
    }
    if let Some(s) = truth.subunits.iter().find(|s| s.size != opts.crop) {
        return Err(Error::Shape(format!(
            "crop size {} differs from subunit size {}",
            opts.crop, s.size
        )));
    }
    let mut report = describe_filters(model, opts)?;
    report.n_subunits = n_sub;
    let effective: Vec<usize> = report.entries.iter().filter(|e| e.effective).map(|e| e.index).collect();
    if effective.is_empty() {
        return Err(Error::Degenerate("no effective filters to match".into()));
    }
    let truths: Vec<Grid> = truth
        .subunits
        .iter()
        .map(|s| Grid::new(s.size, s.size, s.weights.clone()))
        .collect::<Result<_>>()?;
    // scores[i][s] for the i-th effective filter.
    let mut scores = vec![vec![None; n_sub]; effective.len()];
    for (i, &k) in effective.iter().enumerate() {
        let (crop, _) = crop_effective(&conv1_filter_grid(model, k), opts.crop)?;
        for (s, t) in truths.iter().enumerate() {
            scores[i][s] = match ncc_best(&crop, t, opts.max_shift) {
                Ok(m) => Some(m),
                Err(Error::UndefinedCorrelation(_)) => None,
                Err(e) => return Err(e),
            };
        }
    }
    let weight: Vec<Vec<f64>> = scores
        .iter()
        .map(|row| row.iter().map(|m| m.map_or(0.0, |m| m.score)).collect())
        .collect();
    let assignment = best_assignment(&weight);
    for (s, slot) in assignment.iter().enumerate() {
        if let Some(i) = *slot {
            let Some(m) = scores[i][s] else { continue };
            let e = &mut report.entries[effective[i]];
            e.subunit = Some(s);
            e.ncc = Some(m.score);
            e.shift = Some(m.shift);
            e.sign = Some(m.sign);
        }
    }
    Ok(report)
}

/// Exhaustive search for the injective map subunit -> filter (or none)
/// maximizing the summed weight. `weight[filter][subunit]`.
pub fn best_assignment(weight: &[Vec<f64>]) -> Vec<Option<usize>> {
    fn recurse(
        s: usize,
        weight: &[Vec<f64>],
        used: &mut Vec<bool>,
        current: &mut Vec<Option<usize>>,
        total: f64,
        best: &mut (f64, Vec<Option<usize>>),
    ) {
        let n_sub = current.len();
        if s == n_sub {
            if total > best.0 {
                *best = (total, current.clone());
            }
            return;
        }
        for f in 0..weight.len() {
            if !used[f] {
                used[f] = true;
                current[s] = Some(f);
                recurse(s + 1, weight, used, current, total + weight[f][s], best);
                used[f] = false;
            }
        }
        current[s] = None;
        recurse(s + 1, weight, used, current, total, best);
    }
    let n_sub = weight.first().map_or(0, Vec::len);
    let mut best = (f64::NEG_INFINITY, vec![None; n_sub]);
    recurse(0, weight, &mut vec![false; weight.len()], &mut vec![None; n_sub], 0.0, &mut best);
    best.1
}

/// Activation-weighted average stimulus of one first-layer channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub map: Grid,
    /// Summed activation over all probe frames.
    pub total_activation: f64,
    /// The channel never activated, so the map is undefined (reported as zeros).
    pub degenerate: bool,
}

pub const MIN_FEATURE_FRAMES: usize = 10_000;

fn to_features(maps: Vec<(Grid, f64)>) -> Vec<FeatureMap> {
    maps.into_iter()
        .map(|(map, t)| FeatureMap {
            map,
            total_activation: t,
            degenerate: t == 0.0,
        })
        .collect()
}

/// For each first-layer filter, the stimulus average weighted by that
/// channel's summed rectified map.
pub fn feature_average(model: &CnnModel, n_frames: usize, seed: u64) -> Result<Vec<FeatureMap>> {
    if n_frames < MIN_FEATURE_FRAMES {
        return Err(Error::Config(format!(
            "feature averages need at least {MIN_FEATURE_FRAMES} frames, got {n_frames}"
        )));
    }
    let k1 = model.arch.conv1_filters;
    let (h1, w1) = model.arch.conv1_out();
    let maps = weighted_averages(k1, n_frames, model.arch.input_width, model.arch.input_height, seed, |frames| {
        frames
            .iter()
            .map(|f| {
                let act = network::conv1_activations(model, f)?;
                Ok(act.chunks_exact(h1 * w1).map(|c| c.iter().sum()).collect())
            })
            .collect()
    })?;
    Ok(to_features(maps))
}

/// Activation-weighted averages of the ground-truth subunits, each weighted
/// by its own rectified output.
pub fn subunit_feature_average(truth: &RgcModel, width: usize, height: usize, n_frames: usize, seed: u64) -> Result<Vec<FeatureMap>> {
    if n_frames < MIN_FEATURE_FRAMES {
        return Err(Error::Config(format!(
            "feature averages need at least {MIN_FEATURE_FRAMES} frames, got {n_frames}"
        )));
    }
    let maps = weighted_averages(truth.subunits.len(), n_frames, width, height, seed, |frames| {
        frames
            .iter()
            .map(|f| Ok(truth.drives(f)?.into_iter().map(threshold_quadratic).collect()))
            .collect()
    })?;
    Ok(to_features(maps))
}

/// Fraction of the supra-half-maximum region of `sta` covered by the union
/// of every non-degenerate feature's highest-energy `window x window` block.
pub fn tiling_coverage(features: &[FeatureMap], sta: &RfMap, window: usize) -> Result<f64> {
    let mut covered = vec![false; sta.values.len()];
    for f in features.iter().filter(|f| !f.degenerate) {
        if f.map.rows != sta.rows || f.map.cols != sta.cols {
            return Err(Error::Shape("feature map and STA differ in size".into()));
        }
        let (_, (top, left)) = crop_effective(&f.map, window)?;
        for r in top..top + window {
            for c in left..left + window {
                covered[r * sta.cols + c] = true;
            }
        }
    }
    let half = 0.5 * sta.max_abs();
    if half == 0.0 {
        return Err(Error::Degenerate("STA is identically zero".into()));
    }
    let region: Vec<usize> = (0..sta.values.len()).filter(|&i| sta.values[i].abs() >= half).collect();
    Ok(region.iter().filter(|&&i| covered[i]).count() as f64 / region.len() as f64)
}
