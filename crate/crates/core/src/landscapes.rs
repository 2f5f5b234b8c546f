//! Deterministic fitness landscapes.
//!
//! Five named 2D landscapes (donut, narrowing path, fleeting peaks, gradient
//! gap, gradient cliff) plus a generic Gaussian peak and a constant surface.
//! Every landscape is plain data: it serializes to the same TOML used by
//! experiment configs and the landscape manifest, and evaluation is a pure
//! function of the parameters.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::text::fmt_real;

/// A point in the search domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::invalid("coords", "parameter vector must be non-empty"));
        }
        if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::invalid(
                "coords",
                format!("coordinate {i} is not finite ({})", coords[i]),
            ));
        }
        Ok(Self(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn distance(&self, other: &[f64]) -> f64 {
        distance(&self.0, other)
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        ParamVector::new(v)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(p: ParamVector) -> Self {
        p.0
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn gaussian(a: &[f64], center: &[f64], width: f64) -> f64 {
    (-squared_distance(a, center) / (2.0 * width * width)).exp()
}

/// Per-axis closed interval used for plotting, grids and initialization.
pub type Bounds = Vec<[f64; 2]>;

fn unit_box(dim: usize) -> Bounds {
    vec![[0.0, 1.0]; dim]
}

/// Gaussian bump with its peak disk flattened to zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Donut {
    pub center: Vec<f64>,
    pub spread: f64,
    pub hole_radius: f64,
    pub amplitude: f64,
}

impl Default for Donut {
    fn default() -> Self {
        Self {
            center: vec![0.5, 0.5],
            spread: 0.2,
            hole_radius: 0.1,
            amplitude: 1.0,
        }
    }
}

impl Donut {
    fn value(&self, z: &[f64]) -> f64 {
        let d2 = squared_distance(z, &self.center);
        // The hole's rim belongs to the Gaussian.
        if d2 < self.hole_radius * self.hole_radius {
            0.0
        } else {
            self.amplitude * (-d2 / (2.0 * self.spread * self.spread)).exp()
        }
    }
}

/// Ramp `f = x` restricted to a band around `path_y` that narrows linearly
/// from `base_width` at x = 0 to `tip_width` at x = 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NarrowingPath {
    pub base_width: f64,
    pub tip_width: f64,
    pub path_y: f64,
}

impl Default for NarrowingPath {
    fn default() -> Self {
        Self {
            base_width: 0.4,
            tip_width: 0.01,
            path_y: 0.5,
        }
    }
}

impl NarrowingPath {
    /// Full path width at `x`.
    pub fn width_at(&self, x: f64) -> f64 {
        (1.0 - x) * self.base_width + x * self.tip_width
    }

    pub fn on_path(&self, x: f64, y: f64) -> bool {
        (y - self.path_y).abs() <= self.width_at(x) / 2.0
    }

    fn value(&self, z: &[f64]) -> f64 {
        if self.on_path(z[0], z[1]) {
            z[0]
        } else {
            0.0
        }
    }
}

/// Linear ramp in x decorated with narrow Gaussian bumps and a broad goal peak.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetingPeaks {
    pub ramp_slope: f64,
    pub bump_positions: Vec<Vec<f64>>,
    pub bump_amplitude: f64,
    pub bump_width: f64,
    pub goal_center: Vec<f64>,
    pub goal_amplitude: f64,
    pub goal_width: f64,
}

impl Default for FleetingPeaks {
    fn default() -> Self {
        Self {
            ramp_slope: 0.5,
            bump_positions: evenly_spaced_bumps(4, 0.2, 0.65, 0.5),
            bump_amplitude: 0.3,
            bump_width: 0.03,
            goal_center: vec![0.9, 0.5],
            goal_amplitude: 2.0,
            goal_width: 0.1,
        }
    }
}

/// `count` bump centers on the line y = `y`, from `first_x` to `last_x`.
pub fn evenly_spaced_bumps(count: usize, first_x: f64, last_x: f64, y: f64) -> Vec<Vec<f64>> {
    match count {
        0 => Vec::new(),
        1 => vec![vec![first_x, y]],
        _ => (0..count)
            .map(|i| {
                let t = i as f64 / (count - 1) as f64;
                vec![first_x + t * (last_x - first_x), y]
            })
            .collect(),
    }
}

impl FleetingPeaks {
    fn value(&self, z: &[f64]) -> f64 {
        let bumps: f64 = self
            .bump_positions
            .iter()
            .map(|b| self.bump_amplitude * gaussian(z, b, self.bump_width))
            .sum();
        self.ramp_slope * z[0]
            + bumps
            + self.goal_amplitude * gaussian(z, &self.goal_center, self.goal_width)
    }

    /// x-derivative of the goal peak at `z`.
    fn goal_pull_x(&self, z: &[f64]) -> f64 {
        let dx = self.goal_center[0] - z[0];
        self.goal_amplitude * dx / (self.goal_width * self.goal_width)
            * gaussian(z, &self.goal_center, self.goal_width)
    }
}

/// Ramp in x along a horizontal corridor, interrupted by a zero-fitness gap.
/// With `GradientCliff` the ramp does not resume past the gap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GapParams {
    pub ramp_slope: f64,
    pub gap_left: f64,
    pub gap_right: f64,
    pub path_half_width: f64,
    pub path_y: f64,
}

impl Default for GapParams {
    fn default() -> Self {
        Self {
            ramp_slope: 1.0,
            gap_left: 0.45,
            gap_right: 0.65,
            path_half_width: 0.2,
            path_y: 0.5,
        }
    }
}

impl GapParams {
    fn value(&self, z: &[f64], cliff: bool) -> f64 {
        let (x, y) = (z[0], z[1]);
        if (y - self.path_y).abs() > self.path_half_width {
            return 0.0;
        }
        if x < self.gap_left {
            self.ramp_slope * x
        } else if x <= self.gap_right || cliff {
            0.0
        } else {
            self.ramp_slope * x
        }
    }
}

/// Isotropic Gaussian bump in any dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianPeak {
    pub center: Vec<f64>,
    pub width: f64,
    pub amplitude: f64,
}

impl Default for GaussianPeak {
    fn default() -> Self {
        Self {
            center: vec![0.5, 0.5],
            width: 0.2,
            amplitude: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Constant {
    pub value: f64,
    pub dim: usize,
}

impl Default for Constant {
    fn default() -> Self {
        Self { value: 0.0, dim: 2 }
    }
}

/// The shape of a landscape. Serialized with its name as the `name` tag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Shape {
    Donut(Donut),
    NarrowingPath(NarrowingPath),
    FleetingPeaks(FleetingPeaks),
    GradientGap(GapParams),
    GradientCliff(GapParams),
    GaussianPeak(GaussianPeak),
    Constant(Constant),
}

/// A validated landscape: a shape plus its advisory bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LandscapeRepr", into = "LandscapeRepr")]
pub struct Landscape {
    shape: Shape,
    bounds: Bounds,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct LandscapeRepr {
    #[serde(flatten)]
    shape: Shape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bounds: Option<Bounds>,
}

impl TryFrom<LandscapeRepr> for Landscape {
    type Error = Error;

    fn try_from(r: LandscapeRepr) -> Result<Self> {
        let landscape = Landscape::from_shape(r.shape)?;
        match r.bounds {
            Some(b) => landscape.with_bounds(b),
            None => Ok(landscape),
        }
    }
}

impl From<Landscape> for LandscapeRepr {
    fn from(l: Landscape) -> Self {
        LandscapeRepr {
            shape: l.shape,
            bounds: Some(l.bounds),
        }
    }
}

/// Names of the five landscapes in the named suite.
pub const SUITE_NAMES: [&str; 5] = [
    "donut",
    "narrowing_path",
    "fleeting_peaks",
    "gradient_gap",
    "gradient_cliff",
];

impl Landscape {
    pub fn from_shape(shape: Shape) -> Result<Self> {
        validate(&shape)?;
        let dim = shape_dim(&shape);
        Ok(Self {
            shape,
            bounds: unit_box(dim),
        })
    }

    pub fn with_bounds(mut self, bounds: Bounds) -> Result<Self> {
        if bounds.len() != self.dim() {
            return Err(Error::invalid(
                "bounds",
                format!("expected {} intervals, got {}", self.dim(), bounds.len()),
            ));
        }
        for (i, [lo, hi]) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(
                    "bounds",
                    format!("interval {i} = [{lo}, {hi}] is empty or not finite"),
                ));
            }
        }
        self.bounds = bounds;
        Ok(self)
    }

    /// Default-parameter landscape by suite name (or `gaussian_peak` / `constant`).
    pub fn by_name(name: &str) -> Option<Landscape> {
        let shape = match name {
            "donut" => Shape::Donut(Donut::default()),
            "narrowing_path" => Shape::NarrowingPath(NarrowingPath::default()),
            "fleeting_peaks" => Shape::FleetingPeaks(FleetingPeaks::default()),
            "gradient_gap" => Shape::GradientGap(GapParams::default()),
            "gradient_cliff" => Shape::GradientCliff(GapParams::default()),
            "gaussian_peak" => Shape::GaussianPeak(GaussianPeak::default()),
            "constant" => Shape::Constant(Constant::default()),
            _ => return None,
        };
        Some(Landscape::from_shape(shape).expect("default parameters are valid"))
    }

    /// The five named landscapes with their default parameters.
    pub fn suite() -> Vec<Landscape> {
        SUITE_NAMES
            .iter()
            .map(|n| Landscape::by_name(n).expect("suite name"))
            .collect()
    }

    pub fn name(&self) -> &'static str {
        match &self.shape {
            Shape::Donut(_) => "donut",
            Shape::NarrowingPath(_) => "narrowing_path",
            Shape::FleetingPeaks(_) => "fleeting_peaks",
            Shape::GradientGap(_) => "gradient_gap",
            Shape::GradientCliff(_) => "gradient_cliff",
            Shape::GaussianPeak(_) => "gaussian_peak",
            Shape::Constant(_) => "constant",
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        shape_dim(&self.shape)
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn evaluate(&self, p: &ParamVector) -> Result<f64> {
        if p.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: p.dim(),
            });
        }
        Ok(self.value(p.as_slice()))
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim()
            && p
                .iter()
                .zip(&self.bounds)
                .all(|(x, [lo, hi])| *lo <= *x && *x <= *hi)
    }

    /// Flat listing of every named real constant, for manifests and
    /// `list-landscapes`.
    pub fn params(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        let push_vec = |name: &str, v: &[f64], out: &mut Vec<(String, f64)>| {
            for (i, x) in v.iter().enumerate() {
                out.push((format!("{name}[{i}]"), *x));
            }
        };
        match &self.shape {
            Shape::Donut(d) => {
                push_vec("center", &d.center, &mut out);
                out.push(("spread".into(), d.spread));
                out.push(("hole_radius".into(), d.hole_radius));
                out.push(("amplitude".into(), d.amplitude));
            }
            Shape::NarrowingPath(p) => {
                out.push(("base_width".into(), p.base_width));
                out.push(("tip_width".into(), p.tip_width));
                out.push(("path_y".into(), p.path_y));
            }
            Shape::FleetingPeaks(p) => {
                out.push(("ramp_slope".into(), p.ramp_slope));
                for (j, b) in p.bump_positions.iter().enumerate() {
                    push_vec(&format!("bump_positions[{j}]"), b, &mut out);
                }
                out.push(("bump_amplitude".into(), p.bump_amplitude));
                out.push(("bump_width".into(), p.bump_width));
                push_vec("goal_center", &p.goal_center, &mut out);
                out.push(("goal_amplitude".into(), p.goal_amplitude));
                out.push(("goal_width".into(), p.goal_width));
            }
            Shape::GradientGap(g) | Shape::GradientCliff(g) => {
                out.push(("ramp_slope".into(), g.ramp_slope));
                out.push(("gap_left".into(), g.gap_left));
                out.push(("gap_right".into(), g.gap_right));
                out.push(("path_half_width".into(), g.path_half_width));
                out.push(("path_y".into(), g.path_y));
            }
            Shape::GaussianPeak(g) => {
                push_vec("center", &g.center, &mut out);
                out.push(("width".into(), g.width));
                out.push(("amplitude".into(), g.amplitude));
            }
            Shape::Constant(c) => {
                out.push(("value".into(), c.value));
                out.push(("dim".into(), c.dim as f64));
            }
        }
        out
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("landscapes serialize")
    }

    pub fn as_donut(&self) -> Option<&Donut> {
        match &self.shape {
            Shape::Donut(d) => Some(d),
            _ => None,
        }
    }

    pub fn as_narrowing_path(&self) -> Option<&NarrowingPath> {
        match &self.shape {
            Shape::NarrowingPath(p) => Some(p),
            _ => None,
        }
    }

    pub fn as_fleeting_peaks(&self) -> Option<&FleetingPeaks> {
        match &self.shape {
            Shape::FleetingPeaks(p) => Some(p),
            _ => None,
        }
    }

    pub fn as_gap(&self) -> Option<&GapParams> {
        match &self.shape {
            Shape::GradientGap(g) | Shape::GradientCliff(g) => Some(g),
            _ => None,
        }
    }
}

impl Objective for Landscape {
    fn dim(&self) -> usize {
        Landscape::dim(self)
    }

    fn value(&self, z: &[f64]) -> f64 {
        match &self.shape {
            Shape::Donut(d) => d.value(z),
            Shape::NarrowingPath(p) => p.value(z),
            Shape::FleetingPeaks(p) => p.value(z),
            Shape::GradientGap(g) => g.value(z, false),
            Shape::GradientCliff(g) => g.value(z, true),
            Shape::GaussianPeak(g) => g.amplitude * gaussian(z, &g.center, g.width),
            Shape::Constant(c) => c.value,
        }
    }
}

fn shape_dim(shape: &Shape) -> usize {
    match shape {
        Shape::Donut(d) => d.center.len(),
        Shape::NarrowingPath(_) | Shape::GradientGap(_) | Shape::GradientCliff(_) => 2,
        Shape::FleetingPeaks(p) => p.goal_center.len(),
        Shape::GaussianPeak(g) => g.center.len(),
        Shape::Constant(c) => c.dim,
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must be positive and finite, got {v}")))
    }
}

fn finite_point(field: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() || v.iter().any(|c| !c.is_finite()) {
        Err(Error::invalid(field, "must be a non-empty vector of finite reals"))
    } else {
        Ok(())
    }
}

fn validate(shape: &Shape) -> Result<()> {
    match shape {
        Shape::Donut(d) => {
            finite_point("center", &d.center)?;
            positive("spread", d.spread)?;
            positive("hole_radius", d.hole_radius)?;
            positive("amplitude", d.amplitude)
        }
        Shape::NarrowingPath(p) => {
            positive("tip_width", p.tip_width)?;
            if !(p.base_width.is_finite() && p.base_width > p.tip_width) {
                return Err(Error::invalid(
                    "base_width",
                    format!(
                        "must exceed tip_width ({} <= {})",
                        p.base_width, p.tip_width
                    ),
                ));
            }
            if !p.path_y.is_finite() {
                return Err(Error::invalid("path_y", "must be finite"));
            }
            Ok(())
        }
        Shape::FleetingPeaks(p) => validate_fleeting_peaks(p),
        Shape::GradientGap(g) | Shape::GradientCliff(g) => {
            if !(0.0 < g.gap_left && g.gap_left < g.gap_right && g.gap_right < 1.0) {
                return Err(Error::invalid(
                    "gap_left",
                    format!(
                        "gap [{}, {}] must satisfy 0 < gap_left < gap_right < 1",
                        g.gap_left, g.gap_right
                    ),
                ));
            }
            positive("ramp_slope", g.ramp_slope)?;
            positive("path_half_width", g.path_half_width)?;
            if !g.path_y.is_finite() {
                return Err(Error::invalid("path_y", "must be finite"));
            }
            Ok(())
        }
        Shape::GaussianPeak(g) => {
            finite_point("center", &g.center)?;
            positive("width", g.width)?;
            positive("amplitude", g.amplitude)
        }
        Shape::Constant(c) => {
            if c.dim == 0 {
                return Err(Error::invalid("dim", "must be at least 1"));
            }
            if !c.value.is_finite() {
                return Err(Error::invalid("value", "must be finite"));
            }
            Ok(())
        }
    }
}

fn validate_fleeting_peaks(p: &FleetingPeaks) -> Result<()> {
    finite_point("goal_center", &p.goal_center)?;
    let dim = p.goal_center.len();
    positive("bump_amplitude", p.bump_amplitude)?;
    positive("bump_width", p.bump_width)?;
    positive("goal_width", p.goal_width)?;
    if !(p.goal_amplitude.is_finite() && p.goal_amplitude > p.bump_amplitude) {
        return Err(Error::invalid(
            "goal_amplitude",
            format!(
                "must exceed bump_amplitude ({} <= {})",
                p.goal_amplitude, p.bump_amplitude
            ),
        ));
    }
    if !p.ramp_slope.is_finite() {
        return Err(Error::invalid("ramp_slope", "must be finite"));
    }
    // Steepest restoring slope of a bump, reached one width from its center.
    let restoring = p.bump_amplitude / p.bump_width * (-0.5f64).exp();
    for (j, b) in p.bump_positions.iter().enumerate() {
        if b.len() != dim || b.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid(
                format!("bump_positions[{j}]"),
                format!("must be a finite {dim}-vector"),
            ));
        }
        let mut probe = b.clone();
        probe[0] += p.bump_width;
        let push = p.ramp_slope + p.goal_pull_x(&probe).max(0.0);
        if restoring <= push {
            return Err(Error::invalid(
                format!("bump_positions[{j}]"),
                format!(
                    "bump {j} at {b:?} is not a strict local maximum: restoring slope \
                     {restoring:.4} <= outward slope {push:.4}"
                ),
            ));
        }
    }
    Ok(())
}

pub fn make_donut(center: Vec<f64>, spread: f64, hole_radius: f64, amplitude: f64) -> Result<Landscape> {
    Landscape::from_shape(Shape::Donut(Donut {
        center,
        spread,
        hole_radius,
        amplitude,
    }))
}

pub fn make_narrowing_path(base_width: f64, tip_width: f64, path_y: f64) -> Result<Landscape> {
    Landscape::from_shape(Shape::NarrowingPath(NarrowingPath {
        base_width,
        tip_width,
        path_y,
    }))
}

#[allow(clippy::too_many_arguments)]
pub fn make_fleeting_peaks(
    ramp_slope: f64,
    bump_positions: Vec<Vec<f64>>,
    bump_amplitude: f64,
    bump_width: f64,
    goal_center: Vec<f64>,
    goal_amplitude: f64,
    goal_width: f64,
) -> Result<Landscape> {
    Landscape::from_shape(Shape::FleetingPeaks(FleetingPeaks {
        ramp_slope,
        bump_positions,
        bump_amplitude,
        bump_width,
        goal_center,
        goal_amplitude,
        goal_width,
    }))
}

pub fn make_gradient_gap(
    ramp_slope: f64,
    gap_left: f64,
    gap_right: f64,
    path_half_width: f64,
    cliff: bool,
) -> Result<Landscape> {
    let params = GapParams {
        ramp_slope,
        gap_left,
        gap_right,
        path_half_width,
        ..GapParams::default()
    };
    Landscape::from_shape(if cliff {
        Shape::GradientCliff(params)
    } else {
        Shape::GradientGap(params)
    })
}

pub fn make_gaussian_peak(center: Vec<f64>, width: f64, amplitude: f64) -> Result<Landscape> {
    Landscape::from_shape(Shape::GaussianPeak(GaussianPeak {
        center,
        width,
        amplitude,
    }))
}

pub fn make_constant(value: f64, dim: usize) -> Result<Landscape> {
    Landscape::from_shape(Shape::Constant(Constant { value, dim }))
}

/// Fitness sampled on a regular lattice over a 2D landscape's bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct GridData {
    pub resolution: usize,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Row-major: `values[iy * resolution + ix]`.
    pub values: Vec<f64>,
}

impl GridData {
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.resolution + ix]
    }

    /// Lattice point and value of the largest fitness (first on ties).
    pub fn argmax(&self) -> ([f64; 2], f64) {
        let (idx, v) = self
            .values
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best });
        let (iy, ix) = (idx / self.resolution, idx % self.resolution);
        ([self.xs[ix], self.ys[iy]], v)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.values.len() * 48);
        s.push_str("x,y,fitness\n");
        for (iy, y) in self.ys.iter().enumerate() {
            for (ix, x) in self.xs.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{},{},{}",
                    fmt_real(*x),
                    fmt_real(*y),
                    fmt_real(self.at(ix, iy))
                );
            }
        }
        s
    }
}

fn lattice(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Sample a 2D landscape at `resolution` x `resolution` lattice points,
/// both bound endpoints included.
pub fn grid_sample(landscape: &Landscape, resolution: usize) -> Result<GridData> {
    if resolution < 2 {
        return Err(Error::invalid(
            "resolution",
            format!("must be at least 2, got {resolution}"),
        ));
    }
    if landscape.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: landscape.dim(),
        });
    }
    let [x0, x1] = landscape.bounds()[0];
    let [y0, y1] = landscape.bounds()[1];
    let xs = lattice(x0, x1, resolution);
    let ys = lattice(y0, y1, resolution);
    let mut values = Vec::with_capacity(resolution * resolution);
    for y in &ys {
        for x in &xs {
            values.push(landscape.value(&[*x, *y]));
        }
    }
    Ok(GridData {
        resolution,
        xs,
        ys,
        values,
    })
}

/// TOML listing of the five named landscapes with every parameter.
pub fn landscape_manifest() -> String {
    #[derive(Serialize)]
    struct Manifest {
        landscape: Vec<Landscape>,
    }
    toml::to_string(&Manifest {
        landscape: Landscape::suite(),
    })
    .expect("landscapes serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(c: &[f64]) -> ParamVector {
        ParamVector::new(c.to_vec()).unwrap()
    }

    #[test]
    fn param_vector_rejects_non_finite() {
        assert!(ParamVector::new(vec![0.0, f64::NAN]).is_err());
        assert!(ParamVector::new(vec![]).is_err());
        let err = serde_json::from_str::<ParamVector>("[]").unwrap_err();
        assert!(err.to_string().contains("non-empty"));
    }

    #[test]
    fn evaluate_checks_dimension() {
        let donut = Landscape::by_name("donut").unwrap();
        assert!(matches!(
            donut.evaluate(&pv(&[0.5])),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn donut_hole_center_is_zero() {
        let donut = Landscape::by_name("donut").unwrap();
        assert_eq!(donut.evaluate(&pv(&[0.5, 0.5])).unwrap(), 0.0);
    }

    #[test]
    fn donut_three_spreads_matches_closed_form() {
        let d = Donut::default();
        let land = Landscape::by_name("donut").unwrap();
        let r = 3.0 * d.spread;
        let angle = 0.3f64;
        let p = [d.center[0] + r * angle.cos(), d.center[1] + r * angle.sin()];
        let got = land.evaluate(&pv(&p)).unwrap();
        // Recompute from scratch rather than through Donut::value.
        let dx = p[0] - 0.5;
        let dy = p[1] - 0.5;
        let direct = 1.0 * (-(dx * dx + dy * dy) / (2.0 * 0.2 * 0.2)).exp();
        assert!((got - direct).abs() < 1e-15);
        assert!((got - (-4.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn donut_half_hole_and_rim() {
        let d = Donut::default();
        let land = Landscape::by_name("donut").unwrap();
        let inside = [d.center[0] + d.hole_radius / 2.0, d.center[1]];
        assert_eq!(land.evaluate(&pv(&inside)).unwrap(), 0.0);
        // On the rim: center + (hole_radius, 0), computed so the squared
        // distance is exactly hole_radius^2.
        let rim = make_donut(vec![0.0, 0.0], 0.2, 0.125, 1.0).unwrap();
        let expected = (-0.125f64 * 0.125 / (2.0 * 0.04)).exp();
        assert_eq!(rim.evaluate(&pv(&[0.125, 0.0])).unwrap(), expected);
    }

    #[test]
    fn donut_grid_argmax_on_hole_circle() {
        // Brute-force oracle: 1000x1000 lattice.
        let land = Landscape::by_name("donut").unwrap();
        let d = land.as_donut().unwrap().clone();
        let grid = grid_sample(&land, 1000).unwrap();
        let (p, _) = grid.argmax();
        let r = distance(&p, &d.center);
        let cell = 1.0 / 999.0;
        assert!((r - d.hole_radius).abs() <= cell * 2f64.sqrt(), "r = {r}");
    }

    #[test]
    fn donut_rejects_bad_shape() {
        assert_eq!(
            make_donut(vec![0.5, 0.5], 0.0, 0.1, 1.0).unwrap_err().field(),
            Some("spread")
        );
        assert_eq!(
            make_donut(vec![0.5, 0.5], 0.2, -0.1, 1.0).unwrap_err().field(),
            Some("hole_radius")
        );
        assert_eq!(
            make_donut(vec![0.5, 0.5], 0.2, 0.1, 0.0).unwrap_err().field(),
            Some("amplitude")
        );
    }

    #[test]
    fn narrowing_path_examples() {
        let land = Landscape::by_name("narrowing_path").unwrap();
        let p = land.as_narrowing_path().unwrap().clone();
        assert_eq!(land.evaluate(&pv(&[0.0, p.path_y])).unwrap(), 0.0);
        // w(0.5) = 0.205 < 2 * base_width, so an offset of base_width is off-path.
        assert!(p.width_at(0.5) / 2.0 < p.base_width);
        assert_eq!(
            land.evaluate(&pv(&[0.5, p.path_y + p.base_width])).unwrap(),
            0.0
        );
        let hi = land.evaluate(&pv(&[0.9, p.path_y])).unwrap();
        let lo = land.evaluate(&pv(&[0.1, p.path_y])).unwrap();
        assert!(hi > lo);
        assert!(make_narrowing_path(0.01, 0.4, 0.5).is_err());
        assert!(make_narrowing_path(0.4, 0.0, 0.5).is_err());
    }

    #[test]
    fn fleeting_peaks_far_field_slope() {
        let land = Landscape::by_name("fleeting_peaks").unwrap();
        let p = land.as_fleeting_peaks().unwrap().clone();
        let h = 1e-6;
        let y = 0.05;
        let slope = (land.value(&[0.3 + h, y]) - land.value(&[0.3 - h, y])) / (2.0 * h);
        assert!((slope - p.ramp_slope).abs() < 1e-6, "{slope}");
    }

    #[test]
    fn fleeting_peaks_bump_beats_one_width_right() {
        let land = Landscape::by_name("fleeting_peaks").unwrap();
        let p = land.as_fleeting_peaks().unwrap().clone();
        for b in &p.bump_positions {
            let right = [b[0] + p.bump_width, b[1]];
            assert!(land.value(b) > land.value(&right), "bump {b:?}");
        }
    }

    #[test]
    fn fleeting_peaks_global_argmax_near_goal() {
        let land = Landscape::by_name("fleeting_peaks").unwrap();
        let p = land.as_fleeting_peaks().unwrap().clone();
        let grid = grid_sample(&land, 1000).unwrap();
        let (best, _) = grid.argmax();
        assert!(distance(&best, &p.goal_center) <= p.goal_width, "{best:?}");
    }

    #[test]
    fn fleeting_peaks_local_max_check_names_bump() {
        let p = FleetingPeaks {
            bump_amplitude: 0.01,
            goal_amplitude: 2.0,
            ..FleetingPeaks::default()
        };
        let err = Landscape::from_shape(Shape::FleetingPeaks(p)).unwrap_err();
        assert_eq!(err.field(), Some("bump_positions[0]"));
        let err = make_fleeting_peaks(0.5, vec![], 0.3, 0.03, vec![0.9, 0.5], 0.2, 0.1).unwrap_err();
        assert_eq!(err.field(), Some("goal_amplitude"));
    }

    #[test]
    fn gap_and_cliff_examples() {
        let gap = Landscape::by_name("gradient_gap").unwrap();
        let cliff = Landscape::by_name("gradient_cliff").unwrap();
        let g = gap.as_gap().unwrap().clone();
        let mid = (g.gap_left + g.gap_right) / 2.0;
        assert_eq!(gap.value(&[mid, g.path_y]), 0.0);
        assert_eq!(cliff.value(&[g.gap_right + 0.1, g.path_y]), 0.0);
        let delta = 0.01;
        assert!(gap.value(&[g.gap_right + delta, g.path_y]) > gap.value(&[g.gap_left - delta, g.path_y]));
        assert_eq!(gap.value(&[0.2, g.path_y + g.path_half_width + 0.01]), 0.0);
        for bad in [(0.0, 0.5), (0.5, 0.4), (0.3, 1.0)] {
            assert_eq!(
                make_gradient_gap(1.0, bad.0, bad.1, 0.2, false).unwrap_err().field(),
                Some("gap_left")
            );
        }
    }

    #[test]
    fn grid_corners_match_pointwise() {
        let land = Landscape::by_name("donut").unwrap();
        let grid = grid_sample(&land, 2).unwrap();
        assert_eq!(grid.values.len(), 4);
        let corners = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        for (v, c) in grid.values.iter().zip(corners) {
            assert_eq!(*v, land.evaluate(&pv(&c)).unwrap());
        }
        assert!(grid_sample(&land, 1).is_err());
    }

    #[test]
    fn grid_of_zero_constant_sums_to_zero() {
        let land = make_constant(0.0, 2).unwrap();
        let grid = grid_sample(&land, 17).unwrap();
        assert_eq!(grid.values.iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn grid_argmax_approaches_hole_circle() {
        let land = Landscape::by_name("donut").unwrap();
        let d = land.as_donut().unwrap().clone();
        let err = |res| {
            let (p, _) = grid_sample(&land, res).unwrap().argmax();
            (distance(&p, &d.center) - d.hole_radius).abs()
        };
        let coarse = err(100);
        let fine = err(1000);
        assert!(fine <= coarse, "{fine} > {coarse}");
        assert!(fine < 1.5e-3);
    }

    #[test]
    fn grid_csv_layout() {
        let land = Landscape::by_name("gradient_gap").unwrap();
        let csv = grid_sample(&land, 3).unwrap().to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "x,y,fitness");
        assert_eq!(lines.len(), 10);
        // y-outer, x-inner
        assert!(lines[2].starts_with(&format!("{},{}", fmt_real(0.5), fmt_real(0.0))));
    }

    #[test]
    fn suite_is_finite_at_resolution_2048() {
        for land in Landscape::suite() {
            let grid = grid_sample(&land, 2048).unwrap();
            assert!(grid.values.iter().all(|v| v.is_finite()), "{}", land.name());
        }
    }

    #[test]
    fn landscape_toml_round_trips_and_rejects_unknown_keys() {
        for land in Landscape::suite() {
            let text = land.to_toml();
            let back: Landscape = toml::from_str(&text).unwrap();
            assert_eq!(back, land);
        }
        let err = toml::from_str::<Landscape>("name = \"donut\"\nsprad = 0.3\n").unwrap_err();
        assert!(err.to_string().contains("sprad"), "{err}");
        let err = toml::from_str::<Landscape>("name = \"donut\"\nspread = -1.0\n").unwrap_err();
        assert!(err.to_string().contains("spread"), "{err}");
        let ok: Landscape = toml::from_str("name = \"donut\"\nhole_radius = 0.12\n").unwrap();
        assert_eq!(ok.as_donut().unwrap().hole_radius, 0.12);
        assert!(landscape_manifest().contains("gradient_cliff"));
    }

    fn suite_point() -> impl Strategy<Value = (usize, f64, f64)> {
        (0usize..5, -0.5f64..1.5, -0.5f64..1.5)
    }

    proptest! {
        #[test]
        fn evaluation_is_deterministic((i, x, y) in suite_point()) {
            let land = &Landscape::suite()[i];
            let a = land.value(&[x, y]);
            let b = land.value(&[x, y]);
            prop_assert_eq!(a.to_bits(), b.to_bits());
            prop_assert!(a.is_finite());
        }

        #[test]
        fn donut_is_flat_inside_hole(r in 0.0f64..0.0999, t in 0.0f64..6.3) {
            let land = Landscape::by_name("donut").unwrap();
            prop_assert_eq!(land.value(&[0.5 + r * t.cos(), 0.5 + r * t.sin()]), 0.0);
        }

        #[test]
        fn narrowing_path_increases_along_centerline(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            prop_assume!(a < b);
            let land = Landscape::by_name("narrowing_path").unwrap();
            prop_assert!(land.value(&[a, 0.5]) < land.value(&[b, 0.5]));
        }

        #[test]
        fn gap_and_cliff_agree_before_far_side(x in -0.5f64..0.65, y in -0.5f64..1.5) {
            let gap = Landscape::by_name("gradient_gap").unwrap();
            let cliff = Landscape::by_name("gradient_cliff").unwrap();
            prop_assert_eq!(gap.value(&[x, y]).to_bits(), cliff.value(&[x, y]).to_bits());
        }
    }
}
