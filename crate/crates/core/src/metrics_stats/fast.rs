//! Resampling kernels over presorted scores. A resample or swap pattern is
//! scored with one linear pass instead of a sort.
use rayon::prelude::*;

use super::metrics::{ece_bin, Metric, ECE_BINS};
use super::resample::{percentile_ci, swap_bit, swap_words, BootstrapCi, PermutationResult, PERMUTATION_TIE_EPS};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Per-unit scores, optional multiplicities, and the units with non-zero
/// weight in ascending score order.
struct View<'a> {
    scores: &'a [f64],
    weights: Option<&'a [u32]>,
    order: &'a [u32],
}

impl View<'_> {
    #[inline]
    fn w(&self, u: usize) -> u64 {
        self.weights.map_or(1, |w| u64::from(w[u]))
    }

    fn total(&self) -> u64 {
        self.order.iter().map(|&u| self.w(u as usize)).sum()
    }

    /// Calls `f(units_in_group)` for each run of equal scores, ascending.
    fn for_each_group(&self, mut f: impl FnMut(&[u32])) {
        let o = self.order;
        let mut i = 0;
        while i < o.len() {
            let s = self.scores[o[i] as usize];
            let mut j = i;
            while j + 1 < o.len() && self.scores[o[j + 1] as usize] == s {
                j += 1;
            }
            f(&o[i..=j]);
            i = j + 1;
        }
    }
}

/// `(units, positives)` per tie group, ascending.
fn tie_groups(v: &View, labels: &[bool], groups: &mut Vec<(u64, u64)>) {
    groups.clear();
    v.for_each_group(|g| {
        let (mut c, mut p) = (0u64, 0u64);
        for &u in g {
            let w = v.w(u as usize);
            c += w;
            p += w * u64::from(labels[u as usize]);
        }
        groups.push((c, p));
    });
}

fn auroc_groups(groups: &[(u64, u64)]) -> Option<f64> {
    let (mut n, mut n_pos, mut twice) = (0u64, 0u64, 0u64);
    for &(c, p) in groups {
        twice += p * (2 * n + c + 1);
        n += c;
        n_pos += p;
    }
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    Some((twice - n_pos * (n_pos + 1)) as f64 / (2 * n_pos * n_neg) as f64)
}

fn auprc_groups(groups: &[(u64, u64)]) -> Option<f64> {
    let n_pos: u64 = groups.iter().map(|g| g.1).sum();
    if n_pos == 0 {
        return None;
    }
    let (mut tp, mut seen) = (0u64, 0u64);
    let (mut prev, mut ap) = (0.0, 0.0);
    for &(c, p) in groups.iter().rev() {
        tp += p;
        seen += c;
        let recall = tp as f64 / n_pos as f64;
        ap += (recall - prev) * (tp as f64 / seen as f64);
        prev = recall;
    }
    Some(ap)
}

fn in_unit(v: &View) -> bool {
    v.order.iter().all(|&u| (0.0..=1.0).contains(&v.scores[u as usize]))
}

fn brier_view(v: &View, labels: &[bool], unit_ok: bool) -> Option<f64> {
    if v.order.is_empty() || !(unit_ok || in_unit(v)) {
        return None;
    }
    let mut s = 0.0;
    let mut n = 0u64;
    for (u, &p) in v.scores.iter().enumerate() {
        let w = v.w(u);
        if w > 0 {
            s += w as f64 * (p - f64::from(u8::from(labels[u]))).powi(2);
            n += w;
        }
    }
    Some(s / n as f64)
}

fn ece_view(v: &View, labels: &[bool], unit_ok: bool) -> Option<f64> {
    if v.order.is_empty() || !(unit_ok || in_unit(v)) {
        return None;
    }
    let mut count = [0u64; ECE_BINS];
    let mut pos = [0u64; ECE_BINS];
    let mut conf = [0.0f64; ECE_BINS];
    let mut n = 0u64;
    for (u, &p) in v.scores.iter().enumerate() {
        let w = v.w(u);
        if w > 0 {
            let b = ece_bin(p);
            count[b] += w;
            if labels[u] {
                pos[b] += w;
            }
            conf[b] += w as f64 * p;
            n += w;
        }
    }
    let n = n as f64;
    Some(
        (0..ECE_BINS)
            .filter(|&b| count[b] > 0)
            .map(|b| {
                let c = count[b] as f64;
                (c / n) * (pos[b] as f64 / c - conf[b] / c).abs()
            })
            .sum(),
    )
}

fn ranks_view(v: &View, out: &mut [f64]) {
    let mut before = 0u64;
    v.for_each_group(|g| {
        let c: u64 = g.iter().map(|&u| v.w(u as usize)).sum();
        let r = (2 * before + c + 1) as f64 / 2.0;
        for &u in g {
            out[u as usize] = r;
        }
        before += c;
    });
}

fn spearman_view(x: &View, y: &View, rx: &mut [f64], ry: &mut [f64]) -> Option<f64> {
    let n = x.total();
    if n < 2 {
        return None;
    }
    ranks_view(x, rx);
    ranks_view(y, ry);
    let live = |u: usize| x.w(u) > 0;
    let nf = n as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for u in (0..rx.len()).filter(|&u| live(u)) {
        let w = x.w(u) as f64;
        sx += w * rx[u];
        sy += w * ry[u];
    }
    let (mx, my) = (sx / nf, sy / nf);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for u in (0..rx.len()).filter(|&u| live(u)) {
        let w = x.w(u) as f64;
        let (dx, dy) = (rx[u] - mx, ry[u] - my);
        sxy += w * (dx * dy);
        sxx += w * (dx * dx);
        syy += w * (dy * dy);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

struct Scratch {
    rx: Vec<f64>,
    ry: Vec<f64>,
    groups: Vec<(u64, u64)>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Scratch {
            rx: vec![0.0; n],
            ry: vec![0.0; n],
            groups: Vec::with_capacity(n),
        }
    }
}

/// Evaluates `metrics` on one view, pushing one value per metric. The tie
/// groups are built once for AUROC and AUPRC. `unit_ok` asserts that every
/// score of the arm lies in `[0, 1]`.
fn eval_many(
    metrics: &[Metric],
    x: &View,
    labels: &[bool],
    y: &View,
    s: &mut Scratch,
    unit_ok: bool,
    out: &mut Vec<Option<f64>>,
) {
    let mut grouped = false;
    for &m in metrics {
        let v = match m {
            Metric::Auroc | Metric::Auprc => {
                if !grouped {
                    tie_groups(x, labels, &mut s.groups);
                    grouped = true;
                }
                if m == Metric::Auroc {
                    auroc_groups(&s.groups)
                } else {
                    auprc_groups(&s.groups)
                }
            }
            Metric::Brier => brier_view(x, labels, unit_ok),
            Metric::Ece15 => ece_view(x, labels, unit_ok),
            Metric::Spearman => spearman_view(x, y, &mut s.rx, &mut s.ry),
        };
        out.push(v);
    }
}

fn all_in_unit(xs: &[f64]) -> bool {
    xs.iter().all(|p| (0.0..=1.0).contains(p))
}

fn argsort_u32(xs: &[f64]) -> Vec<u32> {
    let mut idx: Vec<u32> = (0..xs.len() as u32).collect();
    idx.sort_by(|&a, &b| xs[a as usize].total_cmp(&xs[b as usize]));
    idx
}

fn check(a: &[f64], target: &[f64]) -> Result<()> {
    if a.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: target.len(),
            got: a.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::invalid("resampling over empty data"));
    }
    if a.len() > u32::MAX as usize || a.iter().chain(target).any(|v| v.is_nan()) {
        return Err(Error::invalid("scores must be non-NaN"));
    }
    Ok(())
}

fn labels_of(target: &[f64]) -> Vec<bool> {
    target.iter().map(|&t| t > 0.5).collect()
}

/// Multiplicities of the [`super::resample_indices`] draw for replicate `b`.
fn counts_for(n: usize, seed: u64, b: usize, counts: &mut [u32]) {
    counts.iter_mut().for_each(|c| *c = 0);
    let mut rng = SplitMix64::for_stream(seed, b as u64);
    for _ in 0..n {
        counts[rng.below(n)] += 1;
    }
}

fn filtered(order: &[u32], counts: &[u32], out: &mut Vec<u32>) {
    out.clear();
    out.extend(order.iter().copied().filter(|&u| counts[u as usize] > 0));
}

/// Bootstrap intervals for several arms scored on the same admissions:
/// `ci[arm][metric]` per arm and, with a reference arm,
/// `delta[arm][metric]` for `metric(arm) - metric(reference)`. Every arm
/// and metric sees the same resamples, which are the index multisets
/// [`super::bootstrap_ci`] draws for the same seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmsBootstrap {
    pub ci: Vec<Vec<BootstrapCi>>,
    pub delta: Option<Vec<Vec<BootstrapCi>>>,
}

pub fn bootstrap_arms(
    metrics: &[Metric],
    arms: &[&[f64]],
    reference: Option<usize>,
    target: &[f64],
    n_boot: usize,
    seed: u64,
) -> Result<ArmsBootstrap> {
    for a in arms {
        check(a, target)?;
    }
    if reference.is_some_and(|r| r >= arms.len()) {
        return Err(Error::invalid("reference arm out of range"));
    }
    let n = target.len();
    let labels = labels_of(target);
    let orders: Vec<Vec<u32>> = arms.iter().map(|a| argsort_u32(a)).collect();
    let unit: Vec<bool> = arms.iter().map(|a| all_in_unit(a)).collect();
    let oy = argsort_u32(target);
    let (na, nm) = (arms.len(), metrics.len());
    // reps[b][arm * nm + m]
    let reps: Vec<Vec<Option<f64>>> = (0..n_boot)
        .into_par_iter()
        .map_init(
            || (vec![0u32; n], Vec::new(), Vec::new(), Scratch::new(n)),
            |(counts, fx, fy, scratch), b| {
                counts_for(n, seed, b, counts);
                filtered(&oy, counts, fy);
                let y = View { scores: target, weights: Some(counts), order: fy };
                let mut out = Vec::with_capacity(na * nm);
                for (k, (arm, order)) in arms.iter().zip(&orders).enumerate() {
                    filtered(order, counts, fx);
                    let x = View { scores: arm, weights: Some(counts), order: fx };
                    eval_many(metrics, &x, &labels, &y, scratch, unit[k], &mut out);
                }
                for v in &mut out {
                    *v = v.filter(|x| x.is_finite());
                }
                out
            },
        )
        .collect();
    let column = |f: &dyn Fn(&[Option<f64>]) -> Option<f64>| -> Vec<Option<f64>> {
        reps.iter().map(|r| f(r)).collect()
    };
    let mut ci = Vec::with_capacity(na);
    for arm in 0..na {
        let mut row = Vec::with_capacity(nm);
        for m in 0..nm {
            row.push(percentile_ci(column(&|r| r[arm * nm + m]), n_boot)?);
        }
        ci.push(row);
    }
    let delta = match reference {
        None => None,
        Some(rf) => {
            let mut all = Vec::with_capacity(na);
            for arm in 0..na {
                let mut row = Vec::with_capacity(nm);
                for m in 0..nm {
                    row.push(percentile_ci(
                        column(&|r| {
                            Some(r[arm * nm + m]? - r[rf * nm + m]?).filter(|v| v.is_finite())
                        }),
                        n_boot,
                    )?);
                }
                all.push(row);
            }
            Some(all)
        }
    };
    Ok(ArmsBootstrap { ci, delta })
}

/// Percentile bootstrap of `metric(scores, target)`.
pub fn metric_bootstrap(metric: Metric, scores: &[f64], target: &[f64], n_boot: usize, seed: u64) -> Result<BootstrapCi> {
    let r = bootstrap_arms(&[metric], &[scores], None, target, n_boot, seed)?;
    Ok(r.ci[0][0])
}

/// Bootstrap of `metric(a) - metric(b)` with both arms on the same resample.
pub fn delta_bootstrap(metric: Metric, a: &[f64], b: &[f64], target: &[f64], n_boot: usize, seed: u64) -> Result<BootstrapCi> {
    let r = bootstrap_arms(&[metric], &[a, b], Some(1), target, n_boot, seed)?;
    Ok(r.delta.expect("reference given")[0][0])
}

struct PermBuf {
    /// Index 0 is the first arm after swapping, 1 the second.
    s: [Vec<f64>; 2],
    o: [Vec<u32>; 2],
    scratch: Scratch,
    ea: Vec<Option<f64>>,
    eb: Vec<Option<f64>>,
}

/// Paired permutation tests of several metrics on one pair of arms. Each
/// metric's result equals [`super::paired_permutation`] with the same
/// `n_perm` and seed; the swap patterns are shared across metrics.
pub fn permutation_metrics(
    metrics: &[Metric],
    a: &[f64],
    b: &[f64],
    target: &[f64],
    n_perm: usize,
    seed: u64,
) -> Result<Vec<PermutationResult>> {
    check(a, target)?;
    check(b, target)?;
    let n = a.len();
    let labels = labels_of(target);
    let mut thresh = Vec::with_capacity(metrics.len());
    let mut deltas = Vec::with_capacity(metrics.len());
    for &m in metrics {
        let ma = m.eval(a, target).ok_or_else(|| Error::invalid(format!("{} undefined on first arm", m.as_str())))?;
        let mb = m.eval(b, target).ok_or_else(|| Error::invalid(format!("{} undefined on second arm", m.as_str())))?;
        deltas.push(ma - mb);
        thresh.push((ma - mb).abs() - PERMUTATION_TIE_EPS);
    }
    // Both arms' scores in one ascending list; a pattern splits it into two
    // sorted runs.
    let mut pooled: Vec<(f64, u32, bool)> = Vec::with_capacity(2 * n);
    for i in 0..n {
        pooled.push((a[i], i as u32, false));
        pooled.push((b[i], i as u32, true));
    }
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));
    let oy = argsort_u32(target);
    let unit_ok = all_in_unit(a) && all_in_unit(b);
    let null = |buf: &mut PermBuf, words: &[u64]| -> Vec<Option<bool>> {
        // Branch-free split: swap bits are coin flips.
        let mut len = [0usize; 2];
        for &(v, u, is_b) in &pooled {
            let ui = u as usize;
            let k = usize::from(is_b ^ swap_bit(words, ui));
            buf.s[k][ui] = v;
            buf.o[k][len[k]] = u;
            len[k] += 1;
        }
        let y = View { scores: target, weights: None, order: &oy };
        let va = View { scores: &buf.s[0], weights: None, order: &buf.o[0] };
        let vb = View { scores: &buf.s[1], weights: None, order: &buf.o[1] };
        buf.ea.clear();
        buf.eb.clear();
        eval_many(metrics, &va, &labels, &y, &mut buf.scratch, unit_ok, &mut buf.ea);
        eval_many(metrics, &vb, &labels, &y, &mut buf.scratch, unit_ok, &mut buf.eb);
        buf.ea
            .iter()
            .zip(&buf.eb)
            .zip(&thresh)
            .map(|((da, db), &t)| Some((da.as_ref()? - db.as_ref()?).abs() >= t))
            .collect()
    };
    let init = || PermBuf {
        s: [vec![0.0; n], vec![0.0; n]],
        o: [vec![0; n], vec![0; n]],
        scratch: Scratch::new(n),
        ea: Vec::with_capacity(metrics.len()),
        eb: Vec::with_capacity(metrics.len()),
    };
    let exhaustive = n < 63 && (1u64 << n) <= n_perm as u64;
    let draws: Vec<Vec<Option<bool>>> = if exhaustive {
        (0..1u64 << n)
            .into_par_iter()
            .map_init(init, |buf, mask| null(buf, &[mask]))
            .collect()
    } else {
        (0..n_perm)
            .into_par_iter()
            .map_init(init, |buf, r| {
                let mut rng = SplitMix64::for_stream(seed, r as u64);
                null(buf, &swap_words(&mut rng, n))
            })
            .collect()
    };
    Ok((0..metrics.len())
        .map(|k| {
            let col: Vec<Option<bool>> = draws.iter().map(|d| d[k]).collect();
            PermutationResult::from_draws(deltas[k], &col, exhaustive)
        })
        .collect())
}

/// Paired permutation test for one named metric.
pub fn metric_permutation(metric: Metric, a: &[f64], b: &[f64], target: &[f64], n_perm: usize, seed: u64) -> Result<PermutationResult> {
    Ok(permutation_metrics(&[metric], a, b, target, n_perm, seed)?.remove(0))
}
