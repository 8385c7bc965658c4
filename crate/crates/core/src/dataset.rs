//! Sampling of initial states, assembly of macro-step training data and the
//! separability diagnostic.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::hb::HbDataset;
use crate::integrators::{flow_map, step_count};
use crate::systems::{PhaseState, SystemSpec};

/// Draw budget after which a sampler with acceptance below 0.1% gives up.
pub const MAX_DRAWS: usize = 10_000_000;
const MIN_ACCEPTANCE: f64 = 1e-3;

/// Closed interval `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        let iv = Self { lower, upper };
        iv.validate()?;
        Ok(iv)
    }

    pub fn symmetric(half_width: f64) -> Result<Self> {
        Self::new(-half_width, half_width)
    }

    fn validate(&self) -> Result<()> {
        if !(self.lower.is_finite() && self.upper.is_finite() && self.lower <= self.upper) {
            return Err(Error::InvalidArgument(format!("bad interval [{}, {}]", self.lower, self.upper)));
        }
        Ok(())
    }

    /// `count` equispaced nodes including both ends.
    fn nodes(&self, count: usize) -> Vec<f64> {
        if count == 1 {
            return vec![0.5 * (self.lower + self.upper)];
        }
        let h = (self.upper - self.lower) / (count - 1) as f64;
        (0..count).map(|i| if i + 1 == count { self.upper } else { self.lower + i as f64 * h }).collect()
    }
}

/// How candidate states are produced. Bounds and counts are given per
/// phase-space coordinate in `(q, p)` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplerMode {
    /// Tensor-product grid with nodes at both ends of every interval.
    Grid { counts: Vec<usize>, bounds: Vec<Interval> },
    /// Uniform draws from a box until `target_count` pass the energy cap.
    UniformBox {
        bounds: Vec<Interval>,
        target_count: usize,
        #[serde(default)]
        seed: u64,
    },
    /// Uniform draws from `[−z_max, z_max]^{2n}` of a reduced system.
    ReducedBox {
        z_max: f64,
        target_count: usize,
        #[serde(default)]
        seed: u64,
    },
    /// The `B²` unit-amplitude sine-mode pairs `(Φ_a, Φ_b)` of a wave system.
    SineModes { b: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyCap {
    pub value: f64,
    /// `H < value` when set, `H ≤ value` otherwise.
    pub strict: bool,
}

impl EnergyCap {
    pub fn admits(&self, h: f64) -> bool {
        if self.strict {
            h < self.value
        } else {
            h <= self.value
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    NonPositive,
    NonNegative,
}

/// Keeps states whose flat coordinate `coord` (0-based, `(q, p)` order) lies
/// on one side of zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfSpace {
    pub coord: usize,
    pub side: Side,
}

impl HalfSpace {
    pub fn admits(&self, x: &PhaseState) -> bool {
        let n = x.dof();
        let v = if self.coord < n { x.q[self.coord] } else { x.p[self.coord - n] };
        match self.side {
            Side::NonPositive => v <= 0.0,
            Side::NonNegative => v >= 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    pub mode: SamplerMode,
    #[serde(default)]
    pub energy_cap: Option<EnergyCap>,
    #[serde(default)]
    pub halfspace: Option<HalfSpace>,
}

impl SamplerSpec {
    pub fn new(mode: SamplerMode) -> Self {
        Self { mode, energy_cap: None, halfspace: None }
    }

    pub fn with_energy_cap(mut self, value: f64, strict: bool) -> Self {
        self.energy_cap = Some(EnergyCap { value, strict });
        self
    }

    pub fn with_halfspace(mut self, coord: usize, side: Side) -> Self {
        self.halfspace = Some(HalfSpace { coord, side });
        self
    }

    /// Replaces the RNG seed of the random modes; grids and sine modes have none.
    pub fn set_seed(&mut self, new_seed: u64) {
        match &mut self.mode {
            SamplerMode::UniformBox { seed, .. } | SamplerMode::ReducedBox { seed, .. } => *seed = new_seed,
            SamplerMode::Grid { .. } | SamplerMode::SineModes { .. } => {}
        }
    }

    pub fn validate(&self, sys: &SystemSpec) -> Result<()> {
        let d = 2 * sys.dof();
        let check_bounds = |bounds: &[Interval]| -> Result<()> {
            check_len(d, bounds.len())?;
            bounds.iter().try_for_each(Interval::validate)
        };
        match &self.mode {
            SamplerMode::Grid { counts, bounds } => {
                check_len(d, counts.len())?;
                check_bounds(bounds)?;
                if counts.contains(&0) {
                    return Err(Error::InvalidArgument("grid counts must be at least 1".into()));
                }
            }
            SamplerMode::UniformBox { bounds, target_count, .. } => {
                check_bounds(bounds)?;
                if *target_count == 0 {
                    return Err(Error::InvalidArgument("target_count must be at least 1".into()));
                }
            }
            SamplerMode::ReducedBox { z_max, target_count, .. } => {
                if !(*z_max > 0.0 && z_max.is_finite()) {
                    return Err(Error::InvalidArgument(format!("z_max must be positive, got {z_max}")));
                }
                if *target_count == 0 {
                    return Err(Error::InvalidArgument("target_count must be at least 1".into()));
                }
            }
            SamplerMode::SineModes { b } => {
                if *b == 0 {
                    return Err(Error::InvalidArgument("B must be at least 1".into()));
                }
                if sys.wave_grid().is_none() {
                    return Err(Error::InvalidArgument("sine modes need a wave system".into()));
                }
            }
        }
        if let Some(hs) = &self.halfspace {
            if hs.coord >= d {
                return Err(Error::InvalidCoordinate { coord: hs.coord, dim: d });
            }
        }
        Ok(())
    }

    fn admits_energy(&self, sys: &SystemSpec, x: &PhaseState) -> Result<bool> {
        match &self.energy_cap {
            Some(cap) => Ok(cap.admits(sys.energy(x)?)),
            None => Ok(true),
        }
    }
}

/// Draws the initial states described by `spec`; the energy cap is applied
/// to every candidate, the half-space restriction to the accepted set.
pub fn sample_states(sys: &SystemSpec, spec: &SamplerSpec) -> Result<Vec<PhaseState>> {
    spec.validate(sys)?;
    let n = sys.dof();
    let accepted = match &spec.mode {
        SamplerMode::Grid { counts, bounds } => {
            let axes: Vec<Vec<f64>> = bounds.iter().zip(counts).map(|(b, &c)| b.nodes(c)).collect();
            let mut out = Vec::new();
            let mut idx = vec![0usize; axes.len()];
            loop {
                let flat: Vec<f64> = idx.iter().zip(&axes).map(|(&i, a)| a[i]).collect();
                let x = PhaseState::from_flat(&flat)?;
                if spec.admits_energy(sys, &x)? {
                    out.push(x);
                }
                // odometer with the last axis fastest
                let mut k = axes.len();
                loop {
                    if k == 0 {
                        return finish(spec, out);
                    }
                    k -= 1;
                    idx[k] += 1;
                    if idx[k] < axes[k].len() {
                        break;
                    }
                    idx[k] = 0;
                }
            }
        }
        SamplerMode::UniformBox { bounds, target_count, seed } => draw_box(sys, spec, bounds, *target_count, *seed)?,
        SamplerMode::ReducedBox { z_max, target_count, seed } => {
            let bounds = vec![Interval::symmetric(*z_max)?; 2 * n];
            draw_box(sys, spec, &bounds, *target_count, *seed)?
        }
        SamplerMode::SineModes { b } => {
            let mut out = Vec::new();
            for x in sine_mode_snapshots(sys, *b)? {
                if spec.admits_energy(sys, &x)? {
                    out.push(x);
                }
            }
            out
        }
    };
    finish(spec, accepted)
}

fn finish(spec: &SamplerSpec, states: Vec<PhaseState>) -> Result<Vec<PhaseState>> {
    Ok(match &spec.halfspace {
        Some(hs) => states.into_iter().filter(|x| hs.admits(x)).collect(),
        None => states,
    })
}

fn draw_box(sys: &SystemSpec, spec: &SamplerSpec, bounds: &[Interval], target: usize, seed: u64) -> Result<Vec<PhaseState>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(target);
    let mut draws = 0usize;
    let mut flat = vec![0.0; bounds.len()];
    while out.len() < target {
        for (v, b) in flat.iter_mut().zip(bounds) {
            *v = if b.lower == b.upper { b.lower } else { rng.gen_range(b.lower..b.upper) };
        }
        draws += 1;
        let x = PhaseState::from_flat(&flat)?;
        if spec.admits_energy(sys, &x)? {
            out.push(x);
        }
        if draws >= MAX_DRAWS && (out.len() as f64) < MIN_ACCEPTANCE * draws as f64 {
            return Err(Error::FilterTooTight { accepted: out.len(), draws });
        }
    }
    Ok(out)
}

/// Discrete sine vector `(sin(kπξ_i/L))_i` on the wave grid.
pub fn sine_mode(sys: &SystemSpec, k: usize) -> Result<Vec<f64>> {
    let SystemSpec::Wave { length, .. } = sys else {
        return Err(Error::InvalidArgument("sine modes need a wave system".into()));
    };
    let grid = sys.wave_grid().expect("wave variant");
    Ok(grid.iter().map(|xi| (k as f64 * std::f64::consts::PI * xi / length).sin()).collect())
}

/// States `(Φ_a, Φ_b)` for `(a, b) ∈ {1..B}²`, enumerated with `b` fastest.
pub fn sine_mode_snapshots(sys: &SystemSpec, b: usize) -> Result<Vec<PhaseState>> {
    let modes: Vec<Vec<f64>> = (1..=b).map(|k| sine_mode(sys, k)).collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(b * b);
    for qa in &modes {
        for pb in &modes {
            out.push(PhaseState::new(qa.clone(), pb.clone())?);
        }
    }
    Ok(out)
}

/// Test initial conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestIcSpec {
    /// `q₀ ~ U(box)`, `p₀ = 0`.
    RestPositions {
        bounds: Vec<Interval>,
        count: usize,
        #[serde(default)]
        seed: u64,
    },
    /// `q₀ = Σ a_k Φ̂_k`, `p₀ = Σ b_k Φ̂_k` over the first `B` normalized sine
    /// modes with `a_k, b_k ~ U([−amplitude, amplitude])`, rejected unless
    /// `H(x₀) ≤ h_max`.
    SineModes {
        b: usize,
        amplitude: f64,
        h_max: f64,
        count: usize,
        #[serde(default)]
        seed: u64,
    },
}

impl TestIcSpec {
    pub fn set_seed(&mut self, new_seed: u64) {
        match self {
            TestIcSpec::RestPositions { seed, .. } | TestIcSpec::SineModes { seed, .. } => *seed = new_seed,
        }
    }

    pub fn count(&self) -> usize {
        match self {
            TestIcSpec::RestPositions { count, .. } | TestIcSpec::SineModes { count, .. } => *count,
        }
    }
}

pub fn test_states(sys: &SystemSpec, spec: &TestIcSpec) -> Result<Vec<PhaseState>> {
    match spec {
        TestIcSpec::RestPositions { bounds, count, seed } => {
            check_len(sys.dof(), bounds.len())?;
            bounds.iter().try_for_each(Interval::validate)?;
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            (0..*count)
                .map(|_| {
                    let q = bounds.iter().map(|b| b.lower + (b.upper - b.lower) * rng.gen::<f64>()).collect();
                    PhaseState::new(q, vec![0.0; sys.dof()])
                })
                .collect()
        }
        TestIcSpec::SineModes { b, amplitude, h_max, count, seed } => {
            if *b == 0 || !(*amplitude > 0.0) {
                return Err(Error::InvalidArgument("sine-mode test states need B ≥ 1 and a positive amplitude".into()));
            }
            let modes: Vec<Vec<f64>> = (1..=*b)
                .map(|k| {
                    let mut m = sine_mode(sys, k)?;
                    let norm = crate::linalg::norm2(&m);
                    m.iter_mut().for_each(|v| *v /= norm);
                    Ok(m)
                })
                .collect::<Result<_>>()?;
            let n = sys.dof();
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let cap = EnergyCap { value: *h_max, strict: false };
            let mut out = Vec::with_capacity(*count);
            let mut draws = 0usize;
            while out.len() < *count {
                let mut q = vec![0.0; n];
                let mut p = vec![0.0; n];
                for m in &modes {
                    let a = rng.gen_range(-amplitude..*amplitude);
                    let c = rng.gen_range(-amplitude..*amplitude);
                    for i in 0..n {
                        q[i] += a * m[i];
                        p[i] += c * m[i];
                    }
                }
                draws += 1;
                let x = PhaseState::new(q, p)?;
                if cap.admits(sys.energy(&x)?) {
                    out.push(x);
                }
                if draws >= MAX_DRAWS && (out.len() as f64) < MIN_ACCEPTANCE * draws as f64 {
                    return Err(Error::FilterTooTight { accepted: out.len(), draws });
                }
            }
            Ok(out)
        }
    }
}

/// Mixed input and target for one initial state.
pub fn training_pair(sys: &SystemSpec, x0: &PhaseState, delta_t: f64, micro_dt: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let x1 = flow_map(sys, x0, delta_t, micro_dt)?;
    Ok(pair_from_states(x0, &x1, delta_t))
}

/// `ξ = (q₀, p_ΔT)`, `y = Jᵀ(x_ΔT − x₀)/ΔT = (−Δp, Δq)/ΔT`.
pub fn pair_from_states(x0: &PhaseState, x1: &PhaseState, delta_t: f64) -> (Vec<f64>, Vec<f64>) {
    let mut xi = x0.q.clone();
    xi.extend_from_slice(&x1.p);
    let mut y: Vec<f64> = x1.p.iter().zip(&x0.p).map(|(b, a)| -(b - a) / delta_t).collect();
    y.extend(x1.q.iter().zip(&x0.q).map(|(b, a)| (b - a) / delta_t));
    (xi, y)
}

#[cfg(feature = "parallel")]
fn map_samples<T: Send>(states: &[PhaseState], f: impl Fn(&PhaseState) -> Result<T> + Sync + Send) -> Vec<Result<T>> {
    use rayon::prelude::*;
    states.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_samples<T>(states: &[PhaseState], f: impl Fn(&PhaseState) -> Result<T>) -> Vec<Result<T>> {
    states.iter().map(f).collect()
}

/// Propagates every state over one macro step with `K = ΔT/Δt` micro
/// midpoint steps and assembles the training pairs in sample order.
pub fn build_hb_dataset(sys: &SystemSpec, states: &[PhaseState], delta_t: f64, micro_dt: f64) -> Result<HbDataset> {
    step_count(delta_t, micro_dt)?;
    let results = map_samples(states, |x0| training_pair(sys, x0, delta_t, micro_dt));
    let mut inputs = Vec::with_capacity(states.len());
    let mut targets = Vec::with_capacity(states.len());
    for (j, r) in results.into_iter().enumerate() {
        let (xi, y) = r.map_err(|e| Error::at_sample(j, e))?;
        inputs.push(xi);
        targets.push(y);
    }
    HbDataset::new(inputs, targets, delta_t, sys.name(), "")
}

/// Seeded shuffle, then the first `round(fraction·N)` samples (clamped to
/// `1..N−1`) go to training.
pub fn split_train_validation(data: &HbDataset, fraction: f64, seed: u64) -> Result<(HbDataset, HbDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("split fraction must lie in (0, 1), got {fraction}")));
    }
    let n = data.len();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    Ok((data.subset(&idx[..n_train]), data.subset(&idx[n_train..])))
}

/// Scatter views of a one-degree-of-freedom dataset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SeparabilityTables {
    /// `(p_ΔT, (q_ΔT − q₀)/ΔT)`: the position update as a function of one
    /// variable, as a separable ansatz would have it.
    pub position_rate: Vec<[f64; 2]>,
    /// `(q₀, −(p_ΔT − p₀)/ΔT)`.
    pub momentum_rate: Vec<[f64; 2]>,
    /// `(q₀, p_ΔT, y₁, y₂)` keyed by the full mixed input.
    pub mixed: Vec<[f64; 4]>,
}

pub fn separability_diagnostic(data: &HbDataset) -> Result<SeparabilityTables> {
    if data.dim() != 2 {
        return Err(Error::NotOneDof(data.dim() / 2));
    }
    let mut t = SeparabilityTables::default();
    for (xi, y) in data.inputs.iter().zip(&data.targets) {
        t.position_rate.push([xi[1], y[1]]);
        t.momentum_rate.push([xi[0], y[0]]);
        t.mixed.push([xi[0], xi[1], y[0], y[1]]);
    }
    Ok(t)
}

fn bin(v: f64, width: f64) -> i64 {
    (v / width).floor() as i64
}

/// Largest output spread among inputs sharing a bin of the given width.
pub fn max_bin_spread_1d(rows: &[[f64; 2]], width: f64) -> f64 {
    let mut bins: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
    for [x, y] in rows {
        let e = bins.entry(bin(*x, width)).or_insert((*y, *y));
        e.0 = e.0.min(*y);
        e.1 = e.1.max(*y);
    }
    bins.values().fold(0.0, |m, (lo, hi)| m.max(hi - lo))
}

/// Same as [`max_bin_spread_1d`] on 2-D inputs and 2-D outputs (max over
/// components).
pub fn max_bin_spread_2d(rows: &[[f64; 4]], width: f64) -> f64 {
    let mut bins: BTreeMap<(i64, i64), [f64; 4]> = BTreeMap::new();
    for r in rows {
        let e = bins.entry((bin(r[0], width), bin(r[1], width))).or_insert([r[2], r[2], r[3], r[3]]);
        e[0] = e[0].min(r[2]);
        e[1] = e[1].max(r[2]);
        e[2] = e[2].min(r[3]);
        e[3] = e[3].max(r[3]);
    }
    bins.values().fold(0.0, |m, e| m.max(e[1] - e[0]).max(e[3] - e[2]))
}

impl SeparabilityTables {
    /// Columns `view,input,output` with views `position_rate` and
    /// `momentum_rate`.
    pub fn write_separable_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "view,input,output")?;
        for [x, y] in &self.position_rate {
            writeln!(w, "position_rate,{x:e},{y:e}")?;
        }
        for [x, y] in &self.momentum_rate {
            writeln!(w, "momentum_rate,{x:e},{y:e}")?;
        }
        Ok(())
    }

    /// Columns `xi_1,xi_2,y_1,y_2`.
    pub fn write_mixed_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "xi_1,xi_2,y_1,y_2")?;
        for r in &self.mixed {
            writeln!(w, "{:e},{:e},{:e},{:e}", r[0], r[1], r[2], r[3])?;
        }
        Ok(())
    }
}

/// Sidecar describing how a dataset CSV was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub system: String,
    pub scenario: String,
    pub delta_t: f64,
    pub micro_dt: f64,
    pub samples: usize,
    pub sampler: Option<SamplerSpec>,
    pub seed: Option<u64>,
}

/// Columns `xi_1..xi_2n, y_1..y_2n`, values in shortest round-trip form.
pub fn write_dataset_csv(data: &HbDataset, w: impl Write) -> Result<()> {
    let d = data.dim();
    let mut out = csv::Writer::from_writer(w);
    let header: Vec<String> = (1..=d).map(|i| format!("xi_{i}")).chain((1..=d).map(|i| format!("y_{i}"))).collect();
    out.write_record(&header)?;
    for (xi, y) in data.inputs.iter().zip(&data.targets) {
        out.write_record(xi.iter().chain(y).map(|v| v.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset_csv(r: impl Read, delta_t: f64, system: &str, scenario: &str) -> Result<HbDataset> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.len() % 2 != 0 || header.is_empty() {
        return Err(Error::InvalidArgument(format!("dataset header has {} columns", header.len())));
    }
    let d = header.len() / 2;
    for (i, name) in header.iter().enumerate() {
        let want = if i < d { format!("xi_{}", i + 1) } else { format!("y_{}", i - d + 1) };
        if name.trim() != want {
            return Err(Error::InvalidArgument(format!("dataset column {} is '{name}', expected '{want}'", i + 1)));
        }
    }
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|e| Error::InvalidArgument(format!("bad number '{s}': {e}"))))
            .collect::<Result<_>>()?;
        check_len(2 * d, vals.len())?;
        inputs.push(vals[..d].to_vec());
        targets.push(vals[d..].to_vec());
    }
    HbDataset::new(inputs, targets, delta_t, system, scenario)
}

/// Writes `<stem>.csv` and `<stem>.json`.
pub fn save_dataset(data: &HbDataset, meta: &DatasetMetadata, dir: &Path, stem: &str) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{stem}.csv")))?);
    write_dataset_csv(data, f)?;
    std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(meta)? + "\n")?;
    Ok(())
}

/// Reads a dataset written by [`save_dataset`] given the CSV path.
pub fn load_dataset(csv_path: &Path) -> Result<(HbDataset, DatasetMetadata)> {
    let meta: DatasetMetadata = serde_json::from_str(&std::fs::read_to_string(csv_path.with_extension("json"))?)?;
    let f = std::fs::File::open(csv_path)?;
    let data = read_dataset_csv(std::io::BufReader::new(f), meta.delta_t, &meta.system, &meta.scenario)?;
    Ok((data, meta))
}
