//! Least-squares calibration models.
//!
//! Motion calibration maps a desired speed (cm/s or deg/s) to the PWM level
//! that produces it with a quadratic; the range sensor maps raw readings to
//! centimeters with a line. Both are fitted by ordinary least squares.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Published forward model: PWM = -0.0264 S^2 + 5.4266 S - 35.889.
pub const FORWARD_COEFFICIENTS: [f64; 3] = [-0.0264, 5.4266, -35.889];
/// Published right-turn model: PWM = 0.001 w^2 + 0.095 w + 92.3.
pub const ANGULAR_COEFFICIENTS: [f64; 3] = [0.001, 0.095, 92.3];
/// Published range sensor model: actual = 1.0759 * reading + 1.0158.
pub const RANGE_SLOPE: f64 = 1.0759;
pub const RANGE_INTERCEPT: f64 = 1.0158;

pub const LINEAR_DOMAIN: (f64, f64) = (10.0, 100.0);
pub const ANGULAR_DOMAIN: (f64, f64) = (30.0, 300.0);
pub const PWM_RANGE: (f64, f64) = (0.0, 255.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("sample points are degenerate: {0}")]
    Degenerate(&'static str),
    #[error("sample point ({x}, {y}) is not finite")]
    NonFinite { x: f64, y: f64 },
    #[error("input {value} is outside the model domain [{lo}, {hi}]")]
    OutsideDomain { value: f64, lo: f64, hi: f64 },
    #[error("pwm {pwm} is outside the model image [{lo}, {hi}] over its domain")]
    OutsideImage { pwm: f64, lo: f64, hi: f64 },
    #[error("no root of the model lies inside its domain for pwm {0}")]
    NoRootInDomain(f64),
    #[error("speed must be positive, got {0}")]
    NonPositiveSpeed(f64),
    #[error("distance must be non-negative, got {0}")]
    NegativeDistance(f64),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("calibration file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub x: f64,
    pub y: f64,
}

impl SamplePoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

impl From<(f64, f64)> for SamplePoint {
    fn from((x, y): (f64, f64)) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub rss: f64,
    pub r_squared: f64,
    pub samples: usize,
}

/// `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinModel {
    pub slope: f64,
    pub intercept: f64,
}

impl LinModel {
    pub fn new(slope: f64, intercept: f64) -> Result<Self, CalibrationError> {
        if !slope.is_finite() || !intercept.is_finite() {
            return Err(CalibrationError::InvalidModel(format!(
                "non-finite line ({slope}, {intercept})"
            )));
        }
        Ok(Self { slope, intercept })
    }

    pub fn reference_range_sensor() -> Self {
        Self { slope: RANGE_SLOPE, intercept: RANGE_INTERCEPT }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }

    /// Solves `y = slope * x + intercept` for `x`.
    pub fn invert(&self, y: f64) -> f64 {
        (y - self.intercept) / self.slope
    }
}

/// `y = a x^2 + b x + c`, valid on `domain`, with outputs clamped to
/// `output_clamp`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolyModel {
    pub coefficients: [f64; 3],
    pub domain: (f64, f64),
    pub output_clamp: (f64, f64),
}

impl PolyModel {
    pub fn new(
        coefficients: [f64; 3],
        domain: (f64, f64),
        output_clamp: (f64, f64),
    ) -> Result<Self, CalibrationError> {
        let model = Self { coefficients, domain, output_clamp };
        model.check()?;
        Ok(model)
    }

    pub fn reference_forward() -> Self {
        Self { coefficients: FORWARD_COEFFICIENTS, domain: LINEAR_DOMAIN, output_clamp: PWM_RANGE }
    }

    pub fn reference_angular() -> Self {
        Self { coefficients: ANGULAR_COEFFICIENTS, domain: ANGULAR_DOMAIN, output_clamp: PWM_RANGE }
    }

    pub fn check(&self) -> Result<(), CalibrationError> {
        let (lo, hi) = self.domain;
        let (clo, chi) = self.output_clamp;
        if self.coefficients.iter().any(|c| !c.is_finite()) {
            return Err(CalibrationError::InvalidModel("non-finite coefficient".into()));
        }
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(CalibrationError::InvalidModel(format!("empty domain [{lo}, {hi}]")));
        }
        if !(clo.is_finite() && chi.is_finite() && clo <= chi) {
            return Err(CalibrationError::InvalidModel(format!("empty clamp [{clo}, {chi}]")));
        }
        // The inverse picks the unique root in the domain, so the quadratic
        // must not turn over inside it.
        let [a, b, _] = self.coefficients;
        if a != 0.0 {
            let vertex = -b / (2.0 * a);
            if vertex > lo && vertex < hi {
                return Err(CalibrationError::InvalidModel(format!(
                    "quadratic turns over at {vertex} inside the domain [{lo}, {hi}]"
                )));
            }
        } else if b == 0.0 {
            return Err(CalibrationError::InvalidModel("constant model has no inverse".into()));
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> f64 {
        let [a, b, c] = self.coefficients;
        (a * x + b) * x + c
    }

    pub fn in_domain(&self, x: f64) -> bool {
        x >= self.domain.0 && x <= self.domain.1
    }

    /// Unrounded, unclamped output; errors outside the domain.
    pub fn eval_checked(&self, x: f64) -> Result<f64, CalibrationError> {
        if !self.in_domain(x) {
            return Err(CalibrationError::OutsideDomain { value: x, lo: self.domain.0, hi: self.domain.1 });
        }
        Ok(self.eval(x))
    }

    /// Image of the domain under the (monotone) polynomial, as (low, high).
    pub fn image(&self) -> (f64, f64) {
        let a = self.eval(self.domain.0);
        let b = self.eval(self.domain.1);
        (a.min(b), a.max(b))
    }
}

fn check_points(points: &[SamplePoint], needed: usize) -> Result<(), CalibrationError> {
    if points.len() < needed {
        return Err(CalibrationError::TooFewPoints { needed, got: points.len() });
    }
    if let Some(p) = points.iter().find(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(CalibrationError::NonFinite { x: p.x, y: p.y });
    }
    Ok(())
}

fn diagnostics(points: &[SamplePoint], predict: impl Fn(f64) -> f64) -> FitDiagnostics {
    let n = points.len() as f64;
    let mean_y = points.iter().map(|p| p.y).sum::<f64>() / n;
    let rss: f64 = points.iter().map(|p| (p.y - predict(p.x)).powi(2)).sum();
    let tss: f64 = points.iter().map(|p| (p.y - mean_y).powi(2)).sum();
    let r_squared = if tss > 0.0 {
        (1.0 - rss / tss).min(1.0)
    } else if rss <= f64::EPSILON {
        1.0
    } else {
        0.0
    };
    FitDiagnostics { rss, r_squared, samples: points.len() }
}

/// Ordinary least-squares line through `points`.
pub fn fit_linear(points: &[SamplePoint]) -> Result<(LinModel, FitDiagnostics), CalibrationError> {
    check_points(points, 2)?;
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.x).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.y).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for p in points {
        let dx = p.x - mean_x;
        sxx += dx * dx;
        sxy += dx * (p.y - mean_y);
    }
    if sxx == 0.0 {
        return Err(CalibrationError::Degenerate("all x values are equal"));
    }
    let slope = sxy / sxx;
    let model = LinModel { slope, intercept: mean_y - slope * mean_x };
    let diag = diagnostics(points, |x| model.eval(x));
    Ok((model, diag))
}

/// Ordinary least-squares quadratic through `points`.
///
/// The fit is done on centered and scaled abscissae (which keeps the normal
/// equations well conditioned for PWM-sized inputs) and mapped back to raw
/// coefficients. The returned model's domain is the sample range and its
/// clamp is the PWM range; callers override either as needed.
pub fn fit_poly2(points: &[SamplePoint]) -> Result<(PolyModel, FitDiagnostics), CalibrationError> {
    check_points(points, 3)?;
    let mut xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < 3 {
        return Err(CalibrationError::Degenerate("fewer than three distinct x values"));
    }
    let lo = xs[0];
    let hi = xs[xs.len() - 1];
    let center = 0.5 * (lo + hi);
    let scale = 0.5 * (hi - lo);

    // Normal equations in t = (x - center) / scale, basis (1, t, t^2).
    let mut ata = [[0.0f64; 3]; 3];
    let mut aty = [0.0f64; 3];
    for p in points {
        let t = (p.x - center) / scale;
        let basis = [1.0, t, t * t];
        for i in 0..3 {
            for j in 0..3 {
                ata[i][j] += basis[i] * basis[j];
            }
            aty[i] += basis[i] * p.y;
        }
    }
    let [g0, g1, g2] = solve3(ata, aty)
        .ok_or(CalibrationError::Degenerate("normal equations are singular"))?;

    // y = g0 + g1 t + g2 t^2 with t = (x - center) / scale.
    let s2 = scale * scale;
    let a = g2 / s2;
    let b = g1 / scale - 2.0 * g2 * center / s2;
    let c = g0 - g1 * center / scale + g2 * center * center / s2;

    let model = PolyModel { coefficients: [a, b, c], domain: (lo, hi), output_clamp: PWM_RANGE };
    let diag = diagnostics(points, |x| {
        let t = (x - center) / scale;
        g0 + t * (g1 + t * g2)
    });
    Ok((model, diag))
}

/// Gaussian elimination with partial pivoting.
fn solve3(mut m: [[f64; 3]; 3], mut v: [f64; 3]) -> Option<[f64; 3]> {
    let norm = m.iter().flatten().fold(0.0f64, |acc, x| acc.max(x.abs()));
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() <= norm * 1e-13 {
            return None;
        }
        m.swap(col, pivot);
        v.swap(col, pivot);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            v[row] -= f * v[col];
        }
    }
    let mut out = [0.0; 3];
    for row in (0..3).rev() {
        let tail: f64 = (row + 1..3).map(|k| m[row][k] * out[k]).sum();
        out[row] = (v[row] - tail) / m[row][row];
    }
    Some(out)
}

/// Speed from a distance-vs-time series: the slope of its least-squares line.
pub fn estimate_speed(series: &[SamplePoint]) -> Result<f64, CalibrationError> {
    fit_linear(series).map(|(m, _)| m.slope)
}

/// Unrounded PWM for `speed`, before clamping.
pub fn speed_to_pwm_unrounded(model: &PolyModel, speed: f64) -> Result<f64, CalibrationError> {
    model.eval_checked(speed)
}

/// PWM count for `speed`: evaluate, round half-up, clamp.
pub fn speed_to_pwm(model: &PolyModel, speed: f64) -> Result<u8, CalibrationError> {
    let raw = model.eval_checked(speed)?;
    let rounded = (raw + 0.5).floor();
    let (lo, hi) = model.output_clamp;
    let clamped = rounded.clamp(lo.max(PWM_RANGE.0), hi.min(PWM_RANGE.1));
    Ok(clamped as u8)
}

/// Inverse of the speed model: the speed inside the domain that yields `pwm`.
pub fn pwm_to_speed(model: &PolyModel, pwm: f64) -> Result<f64, CalibrationError> {
    let (img_lo, img_hi) = model.image();
    let slack = 1e-9 * img_hi.abs().max(1.0);
    if !(pwm >= img_lo - slack && pwm <= img_hi + slack) {
        return Err(CalibrationError::OutsideImage { pwm, lo: img_lo, hi: img_hi });
    }
    let [a, b, c] = model.coefficients;
    let c = c - pwm;
    let roots: Vec<f64> = if a == 0.0 {
        vec![-c / b]
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return Err(CalibrationError::NoRootInDomain(pwm));
        }
        // Cancellation-free pair of roots.
        let q = -0.5 * (b + b.signum() * disc.sqrt());
        let mut r = vec![q / a];
        if q != 0.0 {
            r.push(c / q);
        }
        r
    };
    let (lo, hi) = model.domain;
    let tol = 1e-9 * hi.abs().max(1.0);
    roots
        .into_iter()
        .filter(|r| *r >= lo - tol && *r <= hi + tol)
        .map(|r| {
            // Snap roots within rounding distance onto the domain edges.
            if (r - lo).abs() <= tol {
                lo
            } else if (r - hi).abs() <= tol {
                hi
            } else {
                r.clamp(lo, hi)
            }
        })
        .next()
        .ok_or(CalibrationError::NoRootInDomain(pwm))
}

/// Seconds the motors stay on to cover `distance` at `speed`.
pub fn duration_for_distance(distance: f64, speed: f64) -> Result<f64, CalibrationError> {
    if !(speed > 0.0) {
        return Err(CalibrationError::NonPositiveSpeed(speed));
    }
    if !(distance >= 0.0) {
        return Err(CalibrationError::NegativeDistance(distance));
    }
    Ok(distance / speed)
}

/// Seconds the motors stay on to rotate `angle` degrees at `angular_speed`.
pub fn duration_for_angle(angle: f64, angular_speed: f64) -> Result<f64, CalibrationError> {
    duration_for_distance(angle, angular_speed)
}

/// Reads `x,y` samples from CSV with a header row.
pub fn read_samples_csv<R: Read>(reader: R) -> Result<Vec<SamplePoint>, CalibrationError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize::<SamplePoint>() {
        out.push(row.map_err(|e| CalibrationError::Io(e.to_string()))?);
    }
    Ok(out)
}

/// The named models used by the drivetrain and the range sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    pub forward: PolyModel,
    pub backward: PolyModel,
    pub left: PolyModel,
    pub right: PolyModel,
    pub range_sensor: LinModel,
}

impl Default for CalibrationSet {
    /// Published models. Backward and left mirror forward and right, since
    /// their coefficients were never published.
    fn default() -> Self {
        Self {
            forward: PolyModel::reference_forward(),
            backward: PolyModel::reference_forward(),
            left: PolyModel::reference_angular(),
            right: PolyModel::reference_angular(),
            range_sensor: LinModel::reference_range_sensor(),
        }
    }
}

impl CalibrationSet {
    pub fn load(path: &Path) -> Result<Self, CalibrationError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CalibrationError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Parses a calibration file. Missing models fall back to the defaults.
    pub fn from_json(text: &str) -> Result<Self, CalibrationError> {
        #[derive(Deserialize)]
        struct Partial {
            forward: Option<PolyModel>,
            backward: Option<PolyModel>,
            left: Option<PolyModel>,
            right: Option<PolyModel>,
            range_sensor: Option<LinModel>,
        }
        let p: Partial = serde_json::from_str(text).map_err(|e| CalibrationError::Io(e.to_string()))?;
        let d = Self::default();
        let set = Self {
            forward: p.forward.unwrap_or(d.forward),
            backward: p.backward.unwrap_or(d.backward),
            left: p.left.unwrap_or(d.left),
            right: p.right.unwrap_or(d.right),
            range_sensor: p.range_sensor.unwrap_or(d.range_sensor),
        };
        set.check()?;
        Ok(set)
    }

    pub fn check(&self) -> Result<(), CalibrationError> {
        for (name, m) in self.poly_models() {
            m.check().map_err(|e| CalibrationError::InvalidModel(format!("{name}: {e}")))?;
        }
        LinModel::new(self.range_sensor.slope, self.range_sensor.intercept)?;
        Ok(())
    }

    pub fn poly_models(&self) -> BTreeMap<&'static str, &PolyModel> {
        BTreeMap::from([
            ("forward", &self.forward),
            ("backward", &self.backward),
            ("left", &self.left),
            ("right", &self.right),
        ])
    }

    pub fn poly_model_mut(&mut self, name: &str) -> Option<&mut PolyModel> {
        match name {
            "forward" => Some(&mut self.forward),
            "backward" => Some(&mut self.backward),
            "left" => Some(&mut self.left),
            "right" => Some(&mut self.right),
            _ => None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CalibrationError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CalibrationError::Io(e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| CalibrationError::Io(format!("{}: {e}", path.display())))
    }
}
