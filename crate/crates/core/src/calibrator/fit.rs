use super::simplex::{minimize, SimplexSettings};
use crate::error::{Error, Result};
use crate::model::{CalibrationConfig, CalibrationParams, HistogramConfig, RangePolicy};
use crate::stats::{kl_masses, smoothed_mass_into, BinLayout};

enum Bins {
    /// Cells `[(k - 1/2) w, (k + 1/2) w)` spanning whatever the candidate and proxy occupy.
    Aligned {
        width: f64,
        proxy_lo: i64,
        proxy_counts: Vec<u32>,
    },
    /// Configured range; out-of-range values clamp to the edge bins.
    Fixed { layout: BinLayout, proxy_mass: Vec<f64> },
}

/// KL objective `D_KL(candidate || proxy)` for one window.
///
/// Each candidate `(b0, b1, b2)` maps the window through the measurement model
/// and is histogrammed against the proxy. Under the joint min/max policy the
/// bins sit on a fixed grid centred on multiples of the bin width, extended to cover
/// both samples; bins empty in both add nothing, so the value depends on the
/// parameters alone and never on where the search started.
pub struct KlObjective<'a> {
    c_ox: &'a [f64],
    c_o3: &'a [f64],
    bins: Bins,
    n_proxy: usize,
    epsilon: f64,
    cells: Vec<i64>,
    counts: Vec<u32>,
    proxy_full: Vec<u32>,
    mass: Vec<f64>,
    proxy_mass: Vec<f64>,
}

/// Bins are centred on multiples of the width so the zero floor of clipped
/// concentrations sits inside a bin rather than on an edge.
fn cell(v: f64, width: f64) -> i64 {
    (v / width + 0.5).floor() as i64
}

impl<'a> KlObjective<'a> {
    pub fn new(c_ox: &'a [f64], c_o3: &'a [f64], z: &[f64], hist: &HistogramConfig) -> Result<Self> {
        if c_ox.len() != c_o3.len() {
            return Err(Error::InvalidParams("c_ox and c_o3 lengths differ".into()));
        }
        if c_ox.is_empty() || z.is_empty() {
            return Err(Error::EmptyWindow);
        }
        if z.iter().chain(c_ox).chain(c_o3).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite input".into()));
        }
        let bins = match hist.range_policy {
            RangePolicy::Fixed { min, max } => {
                let layout = BinLayout::new(min, max, hist.bin_width);
                let mut counts = vec![0u32; layout.bins];
                let n = layout.count_into(z.iter().copied(), &mut counts);
                let mut proxy_mass = vec![0.0; layout.bins];
                smoothed_mass_into(&counts, n, hist.smoothing_epsilon, &mut proxy_mass);
                Bins::Fixed { layout, proxy_mass }
            }
            RangePolicy::JointMinMax => {
                let cells: Vec<i64> = z.iter().map(|&v| cell(v, hist.bin_width)).collect();
                let lo = *cells.iter().min().unwrap();
                let hi = *cells.iter().max().unwrap();
                let mut proxy_counts = vec![0u32; (hi - lo + 1) as usize];
                for c in cells {
                    proxy_counts[(c - lo) as usize] += 1;
                }
                Bins::Aligned {
                    width: hist.bin_width,
                    proxy_lo: lo,
                    proxy_counts,
                }
            }
        };
        Ok(Self {
            c_ox,
            c_o3,
            bins,
            n_proxy: z.len(),
            epsilon: hist.smoothing_epsilon,
            cells: Vec::with_capacity(c_ox.len()),
            counts: Vec::new(),
            proxy_full: Vec::new(),
            mass: Vec::new(),
            proxy_mass: Vec::new(),
        })
    }

    pub fn evaluate(&mut self, b: &[f64; 3]) -> f64 {
        let [b0, b1, b2] = *b;
        let values = self
            .c_ox
            .iter()
            .zip(self.c_o3)
            .map(move |(&x, &o)| b0 + b1 * x - b2 * o);
        match &self.bins {
            Bins::Fixed { layout, proxy_mass } => {
                self.counts.resize(layout.bins, 0);
                self.mass.resize(layout.bins, 0.0);
                let n = layout.count_into(values, &mut self.counts);
                smoothed_mass_into(&self.counts, n, self.epsilon, &mut self.mass);
                kl_masses(&self.mass, proxy_mass)
            }
            Bins::Aligned {
                width,
                proxy_lo,
                proxy_counts,
            } => {
                self.cells.clear();
                self.cells.extend(values.map(|v| cell(v, *width)));
                let proxy_hi = proxy_lo + proxy_counts.len() as i64 - 1;
                let lo = self.cells.iter().copied().fold(*proxy_lo, i64::min);
                let hi = self.cells.iter().copied().fold(proxy_hi, i64::max);
                let bins = (hi - lo + 1) as usize;
                self.counts.clear();
                self.counts.resize(bins, 0);
                for &c in &self.cells {
                    self.counts[(c - lo) as usize] += 1;
                }
                self.proxy_full.clear();
                self.proxy_full.resize(bins, 0);
                let offset = (proxy_lo - lo) as usize;
                self.proxy_full[offset..offset + proxy_counts.len()].copy_from_slice(proxy_counts);
                self.mass.resize(bins, 0.0);
                self.proxy_mass.resize(bins, 0.0);
                smoothed_mass_into(&self.counts, self.cells.len(), self.epsilon, &mut self.mass);
                smoothed_mass_into(&self.proxy_full, self.n_proxy, self.epsilon, &mut self.proxy_mass);
                kl_masses(&self.mass, &self.proxy_mass)
            }
        }
    }
}

/// Quantile-matching profile over the slope ratio `r = b2 / b1`.
///
/// For fixed `r` the sort order of `c_ox - r c_o3` is fixed, so matching the
/// candidate quantiles to the proxy quantiles is a linear least-squares problem
/// in `(b0, b1)`. The profile is continuous in `r`, unlike the histogram KL,
/// and is zero at the generating parameters of a noiseless window.
struct QuantileProfile<'a> {
    c_ox: &'a [f64],
    c_o3: &'a [f64],
    levels: Vec<f64>,
    proxy_quantiles: Vec<f64>,
    lower: [f64; 3],
    upper: [f64; 3],
    buf: Vec<f64>,
    q: Vec<f64>,
}

impl<'a> QuantileProfile<'a> {
    fn new(c_ox: &'a [f64], c_o3: &'a [f64], z: &[f64], lower: [f64; 3], upper: [f64; 3]) -> Self {
        let k = c_ox.len().max(z.len());
        let levels: Vec<f64> = (0..k).map(|i| (i as f64 + 0.5) / k as f64).collect();
        let mut sorted = z.to_vec();
        sorted.sort_by(f64::total_cmp);
        let proxy_quantiles = levels.iter().map(|&q| quantile_sorted(&sorted, q)).collect();
        Self {
            c_ox,
            c_o3,
            levels,
            proxy_quantiles,
            lower,
            upper,
            buf: Vec::with_capacity(c_ox.len()),
            q: Vec::with_capacity(k),
        }
    }

    /// Best feasible `(b0, b1, b2)` for ratio `r` and its mean squared
    /// quantile residual.
    fn solve(&mut self, r: f64) -> ([f64; 3], f64) {
        self.buf.clear();
        self.buf
            .extend(self.c_ox.iter().zip(self.c_o3).map(|(&x, &o)| x - r * o));
        self.buf.sort_by(f64::total_cmp);
        self.q.clear();
        for &level in &self.levels {
            self.q.push(quantile_sorted(&self.buf, level));
        }
        let n = self.q.len() as f64;
        let mq = self.q.iter().sum::<f64>() / n;
        let mz = self.proxy_quantiles.iter().sum::<f64>() / n;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (&a, &b) in self.q.iter().zip(&self.proxy_quantiles) {
            sxy += (a - mq) * (b - mz);
            sxx += (a - mq) * (a - mq);
        }
        let b1_lo = self.lower[1].max(self.lower[2] / r);
        let b1_hi = self.upper[1].min(self.upper[2] / r);
        if b1_lo > b1_hi {
            return ([0.0; 3], f64::INFINITY);
        }
        let b1 = if sxx > 0.0 { sxy / sxx } else { 1.0 }.clamp(b1_lo, b1_hi);
        let b0 = (mz - b1 * mq).clamp(self.lower[0], self.upper[0]);
        let mut sse = 0.0;
        for (&a, &b) in self.q.iter().zip(&self.proxy_quantiles) {
            let d = b0 + b1 * a - b;
            sse += d * d;
        }
        ([b0, b1, r * b1], sse / n)
    }

    /// Log-spaced grid over the feasible ratios, refined by golden section
    /// around the best grid point.
    fn minimize(&mut self) -> [f64; 3] {
        const GRID: usize = 400;
        const GOLDEN_STEPS: usize = 60;
        let r_lo = (self.lower[2] / self.upper[1]).ln();
        let r_hi = (self.upper[2] / self.lower[1]).ln();
        let at = |i: usize| r_lo + (r_hi - r_lo) * i as f64 / (GRID - 1) as f64;
        let mut best = (0, f64::INFINITY);
        for i in 0..GRID {
            let (_, f) = self.solve(at(i).exp());
            if f < best.1 {
                best = (i, f);
            }
        }
        let (mut a, mut b) = (at(best.0.saturating_sub(1)), at((best.0 + 1).min(GRID - 1)));
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
        let (mut fc, mut fd) = (self.solve(c.exp()).1, self.solve(d.exp()).1);
        for _ in 0..GOLDEN_STEPS {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = self.solve(c.exp()).1;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = self.solve(d.exp()).1;
            }
        }
        let (grid_x, grid_f) = self.solve(at(best.0).exp());
        let (x, f) = self.solve(((a + b) / 2.0).exp());
        if f <= grid_f {
            x
        } else {
            grid_x
        }
    }
}

/// Linear-interpolated quantile at level `q` in (0, 1), with plotting
/// positions `(i + 0.5) / n`.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let pos = (q * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < n {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Signed jitter pattern for restart `r` (1-based), cycling through the
/// corners of a cube so successive restarts probe different directions.
fn jitter_direction(r: usize) -> [f64; 3] {
    const CORNERS: [[f64; 3]; 8] = [
        [1.0, 1.0, -1.0],
        [-1.0, -1.0, 1.0],
        [1.0, -1.0, -1.0],
        [-1.0, 1.0, 1.0],
        [1.0, 1.0, 1.0],
        [-1.0, -1.0, -1.0],
        [1.0, -1.0, 1.0],
        [-1.0, 1.0, -1.0],
    ];
    CORNERS[(r - 1) % CORNERS.len()]
}

struct Search<'a> {
    c_ox: &'a [f64],
    c_o3: &'a [f64],
    z: &'a [f64],
    hist: &'a HistogramConfig,
    restarts: usize,
    settings: SimplexSettings<3>,
    offset_step: f64,
    warm: [f64; 3],
}

struct PassOutcome {
    x: [f64; 3],
    fx: f64,
    /// Objective at the anchor on the anchor's own range.
    anchor_fx: f64,
    iterations: usize,
    converged: bool,
}

impl Search<'_> {
    fn settings_at(&self, x: &[f64; 3]) -> SimplexSettings<3> {
        SimplexSettings {
            steps: [self.offset_step, 0.1 * x[1], 0.1 * x[2]],
            ..self.settings
        }
    }

    /// One pass: simplex runs from the anchor, its jittered copies and the
    /// quantile warm start.
    fn pass(&self, anchor: [f64; 3]) -> Result<PassOutcome> {
        let mut objective = KlObjective::new(self.c_ox, self.c_o3, self.z, self.hist)?;
        let anchor_fx = objective.evaluate(&anchor);
        let mut out = PassOutcome {
            x: anchor,
            fx: anchor_fx,
            anchor_fx,
            iterations: 0,
            converged: true,
        };
        let (lower, upper) = (self.settings.lower, self.settings.upper);
        let mut starts = vec![anchor];
        for r in 1..=self.restarts {
            let dir = jitter_direction(r);
            let mut jittered = [
                anchor[0] + dir[0] * self.offset_step,
                anchor[1] * (1.0 + 0.1 * dir[1]),
                anchor[2] * (1.0 + 0.1 * dir[2]),
            ];
            for i in 0..3 {
                jittered[i] = jittered[i].clamp(lower[i], upper[i]);
            }
            starts.push(jittered);
        }
        starts.push(self.warm);
        for (k, start) in starts.into_iter().enumerate() {
            let run = minimize(|b| objective.evaluate(b), start, &self.settings_at(&start));
            out.iterations += run.iterations;
            if k == 0 {
                out.converged = run.converged;
            }
            if run.fx < out.fx {
                out.x = run.x;
                out.fx = run.fx;
                out.converged = run.converged;
            }
        }
        Ok(out)
    }
}

const MAX_PASSES: usize = 10;

/// Minimise the KL objective from `init` inside the configured parameter box.
///
/// Each pass runs the simplex from the anchor, `cal.restarts` jittered copies
/// and a quantile-matching warm start. The best point becomes the next anchor
/// until a pass finds nothing strictly better, so re-fitting a result returns
/// it unchanged. The returned `achieved_dkl` never exceeds the objective at
/// the (box-projected) `init`.
pub fn fit_params(
    init: &CalibrationParams,
    c_ox: &[f64],
    c_o3: &[f64],
    z: &[f64],
    hist: &HistogramConfig,
    cal: &CalibrationConfig,
) -> Result<CalibrationParams> {
    if c_ox.len() != c_o3.len() {
        return Err(Error::InvalidParams("c_ox and c_o3 lengths differ".into()));
    }
    if c_ox.is_empty() || z.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let lower = [cal.offset_bounds.0, cal.slope_bounds.0, cal.slope_bounds.0];
    let upper = [cal.offset_bounds.1, cal.slope_bounds.1, cal.slope_bounds.1];
    let mut start = init.triple();
    for i in 0..3 {
        start[i] = start[i].clamp(lower[i], upper[i]);
    }
    let settings = SimplexSettings {
        lower,
        upper,
        steps: [0.0; 3],
        max_iterations: cal.max_iterations,
        tolerance: cal.tolerance,
    };
    let search = Search {
        c_ox,
        c_o3,
        z,
        hist,
        restarts: cal.restarts,
        settings,
        offset_step: (2.0 * hist.bin_width).max(1.0),
        warm: QuantileProfile::new(c_ox, c_o3, z, lower, upper).minimize(),
    };

    let mut anchor = start;
    let mut anchor_fx = f64::NAN;
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..MAX_PASSES {
        let pass = search.pass(anchor)?;
        iterations += pass.iterations;
        anchor_fx = pass.anchor_fx;
        if !(pass.fx < pass.anchor_fx) {
            converged = pass.converged;
            break;
        }
        anchor = pass.x;
        anchor_fx = pass.fx;
    }

    let [b0, b1, b2] = anchor;
    let mut out = CalibrationParams::new(b0, b1, b2)?;
    out.achieved_dkl = anchor_fx;
    out.iterations = iterations;
    out.converged = converged;
    out.fitted_at = init.fitted_at;
    out.window = init.window;
    Ok(out)
}

/// Objective value of `params` on a window.
pub fn kl_objective(
    params: &CalibrationParams,
    c_ox: &[f64],
    c_o3: &[f64],
    z: &[f64],
    hist: &HistogramConfig,
) -> Result<f64> {
    let mut objective = KlObjective::new(c_ox, c_o3, z, hist)?;
    Ok(objective.evaluate(&params.triple()))
}
